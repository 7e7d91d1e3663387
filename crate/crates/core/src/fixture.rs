//! Synthetic market data for tests, demos and benchmarks.
//!
//! Prices follow a geometric random walk with slowly switching drift regimes,
//! so that trend and mean-reversion rules both fire now and then. Volumes are
//! log-normal with occasional spikes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::date::Date;
use crate::market::{Bar, Exchange, MarketStore, OhlcvTable};
use crate::math::{cos, exp, ln, round, sqrt};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    /// Tickers per exchange, in [`Exchange::ALL`] order.
    pub tickers: [usize; 3],
    pub days: usize,
    pub start: Date,
    /// Daily return standard deviation.
    pub volatility: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            tickers: [10, 20, 20],
            days: 500,
            start: Date::new(2021, 1, 4).expect("valid date"),
            volatility: 0.02,
        }
    }
}

/// Standard normal draw (Box-Muller).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    sqrt(-2.0 * ln(u1)) * cos(core::f64::consts::TAU * u2)
}

fn cents(x: f64) -> f64 {
    round(x * 100.0) / 100.0
}

/// The next `n` weekdays starting at `start` (inclusive).
pub fn weekdays(start: Date, n: usize) -> Vec<Date> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if d.weekday() <= 5 {
            out.push(d);
        }
        d = d.add_days(1).expect("date in range");
    }
    out
}

/// One ticker's history.
pub fn random_bars(rng: &mut impl Rng, name: &str, code: &str, dates: &[Date], volatility: f64) -> Vec<Bar> {
    let mut out = Vec::with_capacity(dates.len());
    let mut prev_close = cents(rng.gen_range(5.0..80.0));
    let mut drift = 0.0;
    let base_volume = rng.gen_range(1.0e5..5.0e6);
    for &date in dates {
        if rng.gen_bool(0.03) {
            drift = normal(rng) * volatility * 0.3;
        }
        let gap = normal(rng) * volatility * 0.25;
        let open = cents(prev_close * exp(gap)).max(0.01);
        let body = drift + normal(rng) * volatility;
        let close = cents(open * exp(body)).max(0.01);
        let wick = |rng: &mut dyn rand::RngCore| cents(open.max(close) * (normal(rng).abs() * volatility * 0.4));
        let high = open.max(close) + wick(rng);
        let low = (open.min(close) - wick(rng)).max(0.01).min(open.min(close));
        let spike = if rng.gen_bool(0.05) { rng.gen_range(2.0..4.0) } else { 1.0 };
        let volume = round(base_volume * exp(normal(rng) * 0.35) * spike);
        let amount = round(volume * (open + close) / 2.0);
        let pct = (close / prev_close - 1.0) * 100.0;
        out.push(Bar {
            name: String::from(name),
            stock_code: String::from(code),
            trade_date: date,
            opening_price: open,
            closing_price: close,
            highest_price: high,
            lowest_price: low,
            volume_traded: volume,
            amount_traded: amount,
            percentage_change: round(pct * 1e4) / 1e4,
        });
        prev_close = close;
    }
    out
}

fn suffix(e: Exchange) -> &'static str {
    match e {
        Exchange::Beijing => "BJ",
        Exchange::Shenzhen => "SZ",
        Exchange::Shanghai => "SH",
    }
}

/// A full store: every ticker of every exchange shares one calendar.
pub fn generate_store(cfg: &FixtureConfig) -> MarketStore {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dates = weekdays(cfg.start, cfg.days);
    let mut store = MarketStore::new();
    for (e, &count) in Exchange::ALL.iter().zip(&cfg.tickers) {
        let mut bars = Vec::new();
        for i in 0..count {
            let code = format!("{:06}.{}", 1 + i, suffix(*e));
            let name = format!("{} Corp {:03}", suffix(*e), 1 + i);
            bars.extend(random_bars(&mut rng, &name, &code, &dates, cfg.volatility));
        }
        store.insert(OhlcvTable::from_bars(*e, bars).expect("generated bars are valid"));
    }
    store
}
