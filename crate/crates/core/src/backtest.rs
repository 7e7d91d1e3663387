//! Long-only daily simulation.
//!
//! One position at a time. Entries fill at the open, exits at the close, a
//! position is never closed on the day it was opened, and whatever is still
//! held on the last day is liquidated at that day's close.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::market::Bar;
use crate::math::floor;
use crate::signals::{fuse_masks, SignalError, StrategySpec};

pub const LOT_SIZE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LotMode {
    /// Quantities are multiples of 100 shares.
    #[default]
    RoundLot,
    /// Any quantity of at least 100 shares.
    MinLot,
}

impl LotMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LotMode::RoundLot => "round_lot",
            LotMode::MinLot => "min_lot",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "round_lot" => Some(LotMode::RoundLot),
            "min_lot" => Some(LotMode::MinLot),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BacktestConfig {
    pub lot_mode: LotMode,
    /// Proportional cost charged on each leg. Zero for benchmark tasks.
    pub fee_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTrip {
    pub buy_day: usize,
    pub buy_price: f64,
    pub sell_day: usize,
    pub sell_price: f64,
    pub quantity: f64,
    pub pnl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioState {
    pub cash: f64,
    pub position: f64,
    pub entry_price: Option<f64>,
    pub day: usize,
}

/// Daily marks with the Day-0 anchor at index 0; every vector has `days + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EquityCurve {
    pub pv: Vec<f64>,
    pub cash: Vec<f64>,
    pub position: Vec<f64>,
    /// Close used for each mark. Index 0 repeats the first close; it is multiplied by a zero position.
    pub close: Vec<f64>,
}

impl EquityCurve {
    /// `r_t = (pv_t - pv_{t-1}) / pv_{t-1}` for `t >= 1`.
    pub fn returns(&self) -> Vec<f64> {
        self.pv.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect()
    }

    pub fn days(&self) -> usize {
        self.pv.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub curve: EquityCurve,
    pub trades: Vec<RoundTrip>,
    pub state: PortfolioState,
    pub initial_capital: f64,
}

impl BacktestResult {
    pub fn pnl(&self) -> Vec<f64> {
        self.trades.iter().map(|t| t.pnl).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BacktestError {
    #[error("no bars to simulate")]
    EmptyBars,
    #[error("initial capital must be positive and finite")]
    Capital,
    #[error("signal mask has {got} days, bars have {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Removes the last day from a buy set, since a position opened then could only close T+0.
pub fn suppress_final_day_entries(buy_dates: &BTreeSet<usize>, last_day: usize) -> BTreeSet<usize> {
    let mut out = buy_dates.clone();
    out.remove(&last_day);
    out
}

/// Shares affordable at `price` with `cash`, or 0 below the minimum lot.
pub fn order_quantity(cash: f64, price: f64, fee_rate: f64, mode: LotMode) -> f64 {
    if !(price > 0.0) || !(cash > 0.0) {
        return 0.0;
    }
    let unit = price * (1.0 + fee_rate);
    let mut q = match mode {
        LotMode::RoundLot => LOT_SIZE * floor(cash / (LOT_SIZE * unit)),
        LotMode::MinLot => floor(cash / unit),
    };
    let step = if mode == LotMode::RoundLot { LOT_SIZE } else { 1.0 };
    while q > 0.0 && q * unit > cash {
        q -= step;
    }
    if q < LOT_SIZE {
        0.0
    } else {
        q
    }
}

/// Runs the protocol over explicit trigger sets.
pub fn run_backtest(
    bars: &[Bar],
    buy_dates: &BTreeSet<usize>,
    sell_dates: &BTreeSet<usize>,
    initial_capital: f64,
    config: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    simulate(bars, |d| buy_dates.contains(&d), |d| sell_dates.contains(&d), initial_capital, config)
}

/// Runs the protocol over per-day masks.
pub fn run_backtest_masks(
    bars: &[Bar],
    buy: &[bool],
    sell: &[bool],
    initial_capital: f64,
    config: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    for m in [buy, sell] {
        if m.len() != bars.len() {
            return Err(BacktestError::MaskLength { expected: bars.len(), got: m.len() });
        }
    }
    simulate(bars, |d| buy[d], |d| sell[d], initial_capital, config)
}

/// Fuses a strategy's signals and runs it with the strategy's capital.
pub fn run_strategy(spec: &StrategySpec, bars: &[Bar], config: &BacktestConfig) -> Result<BacktestResult, BacktestError> {
    if bars.is_empty() {
        return Err(BacktestError::EmptyBars);
    }
    let (buy, sell) = fuse_masks(spec, bars)?;
    run_backtest_masks(bars, &buy, &sell, spec.initial_capital, config)
}

fn simulate(
    bars: &[Bar],
    is_buy: impl Fn(usize) -> bool,
    is_sell: impl Fn(usize) -> bool,
    initial_capital: f64,
    config: &BacktestConfig,
) -> Result<BacktestResult, BacktestError> {
    if bars.is_empty() {
        return Err(BacktestError::EmptyBars);
    }
    if !(initial_capital > 0.0 && initial_capital.is_finite()) {
        return Err(BacktestError::Capital);
    }
    let n = bars.len();
    let last = n - 1;
    let fee = config.fee_rate;
    let mut cash = initial_capital;
    let mut position = 0.0;
    let mut entry: Option<(usize, f64, f64)> = None;
    let mut trades = Vec::new();
    let mut curve = EquityCurve {
        pv: vec![initial_capital],
        cash: vec![initial_capital],
        position: vec![0.0],
        close: vec![bars[0].closing_price],
    };
    curve.pv.reserve(n);

    for (day, bar) in bars.iter().enumerate() {
        match entry {
            None if day != last && is_buy(day) => {
                let q = order_quantity(cash, bar.opening_price, fee, config.lot_mode);
                if q > 0.0 {
                    let cost = q * bar.opening_price * (1.0 + fee);
                    cash -= cost;
                    position = q;
                    entry = Some((day, bar.opening_price, cost));
                }
            }
            Some((buy_day, buy_price, cost)) if day > buy_day && (is_sell(day) || day == last) => {
                let proceeds = position * bar.closing_price * (1.0 - fee);
                cash += proceeds;
                trades.push(RoundTrip {
                    buy_day,
                    buy_price,
                    sell_day: day,
                    sell_price: bar.closing_price,
                    quantity: position,
                    pnl: proceeds - cost,
                });
                position = 0.0;
                entry = None;
            }
            _ => {}
        }
        curve.pv.push(cash + position * bar.closing_price);
        curve.cash.push(cash);
        curve.position.push(position);
        curve.close.push(bar.closing_price);
    }

    let state = PortfolioState { cash, position, entry_price: entry.map(|e| e.1), day: last };
    Ok(BacktestResult { curve, trades, state, initial_capital })
}
