use proptest::prelude::*;
use qbench_core::backtest::{run_backtest_masks, BacktestConfig, BacktestResult, LotMode};
use qbench_core::fixture::{random_bars, weekdays};
use qbench_core::kpi::{self, kpi_via_dsl, Kpi, KpiReport};
use qbench_core::market::Bar;
use qbench_core::Date;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    bars: Vec<Bar>,
    buy: Vec<bool>,
    sell: Vec<bool>,
    capital: f64,
}

fn case(seed: u64, days: usize, p: f64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = weekdays(Date::new(2021, 3, 1).unwrap(), days);
    let bars = random_bars(&mut rng, "T", "000002.SZ", &dates, 0.025);
    let buy = (0..days).map(|_| rng.gen_bool(p)).collect();
    let sell = (0..days).map(|_| rng.gen_bool(p)).collect();
    let capital = rng.gen_range(5_000.0..500_000.0);
    Case { bars, buy, sell, capital }
}

fn run(c: &Case, mode: LotMode) -> BacktestResult {
    run_backtest_masks(&c.bars, &c.buy, &c.sell, c.capital, &BacktestConfig { lot_mode: mode, fee_rate: 0.0 }).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn protocol_invariants(seed in any::<u64>(), days in 1usize..80, p in 0.05f64..0.6, min_lot in any::<bool>()) {
        let c = case(seed, days, p);
        let mode = if min_lot { LotMode::MinLot } else { LotMode::RoundLot };
        let r = run(&c, mode);
        let curve = &r.curve;
        prop_assert_eq!(curve.pv.len(), days + 1);
        prop_assert_eq!(curve.pv[0], c.capital);
        for i in 0..curve.pv.len() {
            prop_assert!(curve.cash[i] >= 0.0);
            prop_assert!(curve.position[i] >= 0.0);
            if mode == LotMode::RoundLot {
                prop_assert_eq!(curve.position[i] % 100.0, 0.0);
            } else {
                prop_assert!(curve.position[i] == 0.0 || curve.position[i] >= 100.0);
            }
        }
        for (t, w) in curve.pv.windows(2).enumerate() {
            if curve.position[t] == 0.0 && curve.position[t + 1] == 0.0 {
                prop_assert_eq!(w[0], w[1]);
            }
        }
        let mut last_sell = None;
        for tr in &r.trades {
            prop_assert!(tr.buy_day < tr.sell_day);
            if let Some(s) = last_sell {
                prop_assert!(tr.buy_day > s);
            }
            prop_assert!(c.buy[tr.buy_day]);
            prop_assert!(c.sell[tr.sell_day] || tr.sell_day == days - 1);
            last_sell = Some(tr.sell_day);
        }
        prop_assert_eq!(r.state.position, 0.0);
        let pnl: f64 = r.trades.iter().map(|t| t.pnl).sum();
        let end = *curve.pv.last().unwrap();
        prop_assert!((pnl - (end - c.capital)).abs() <= 1e-6 * c.capital);
        prop_assert_eq!(&r, &run(&c, mode));
    }

    #[test]
    fn report_ranges(seed in any::<u64>(), days in 2usize..120) {
        let c = case(seed, days, 0.3);
        let k = KpiReport::compute(&run(&c, LotMode::RoundLot));
        if let Some(m) = k.max_drawdown { prop_assert!((0.0..=1.0).contains(&m)); }
        if let Some(w) = k.win_rate { prop_assert!((0.0..=100.0).contains(&w)); }
        if let Some(v) = k.volatility { prop_assert!(v >= 0.0); }
    }

    #[test]
    fn scale_invariance(pv in prop::collection::vec(50.0f64..150.0, 3..60), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = pv.iter().map(|v| v * c).collect();
        let pairs = [
            (kpi::max_drawdown(&pv), kpi::max_drawdown(&scaled)),
            (kpi::volatility(&pv), kpi::volatility(&scaled)),
            (kpi::annual_sharpe(&pv), kpi::annual_sharpe(&scaled)),
            (kpi::calmar(&pv), kpi::calmar(&scaled)),
        ];
        for (a, b) in pairs {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0)),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }
        let pnl: Vec<f64> = pv.iter().map(|v| v - 100.0).collect();
        let spnl: Vec<f64> = pnl.iter().map(|v| v * c).collect();
        prop_assert_eq!(kpi::win_rate(&pnl), kpi::win_rate(&spnl));
        match (kpi::profit_loss_ratio(&pnl), kpi::profit_loss_ratio(&spnl)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0)),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }
}

#[test]
fn native_kpis_match_short_codes() {
    for seed in 0..60 {
        let c = case(seed, 30 + (seed as usize * 7) % 200, 0.2);
        let r = run(&c, LotMode::RoundLot);
        for k in Kpi::ALL {
            match (k.compute(&r), kpi_via_dsl(k, &r)) {
                (Some(a), Some(b)) => assert!(rel_close(a, b, 1e-9), "{k} seed {seed}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b, "{k} seed {seed}"),
            }
        }
    }
}

#[test]
fn annualized_volatility_is_scaled() {
    let pv = [100.0, 101.0, 99.0, 102.0];
    let d = kpi::volatility(&pv).unwrap();
    assert!(rel_close(kpi::annualized_volatility(&pv).unwrap(), d * 252f64.sqrt(), 1e-15));
}
