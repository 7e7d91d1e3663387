//! The seven performance metrics.
//!
//! Each metric is computed natively here and also has a short code in
//! `data/kpis.psv`; [`kpi_env`] builds the environment under which the short
//! code reproduces the native value. `None` marks an undefined metric.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::backtest::BacktestResult;
use crate::dsl::{parse, reduce, Env, Expr, Series, Symbol};
use crate::math::{finite, pow, sqrt};

pub const TRADING_DAYS: f64 = 252.0;
pub const RF_DAILY: f64 = 0.0001;

pub const KPI_TABLE: &str = include_str!("../data/kpis.psv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kpi {
    Return,
    Mdd,
    Vol,
    Sharpe,
    Wr,
    Pl,
    Calmar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }
}

impl Kpi {
    pub const ALL: [Kpi; 7] = [Kpi::Return, Kpi::Mdd, Kpi::Vol, Kpi::Sharpe, Kpi::Wr, Kpi::Pl, Kpi::Calmar];

    /// Table abbreviation, e.g. `P/L`.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Kpi::Return => "Return",
            Kpi::Mdd => "MDD",
            Kpi::Vol => "Vol",
            Kpi::Sharpe => "Sharpe",
            Kpi::Wr => "WR",
            Kpi::Pl => "P/L",
            Kpi::Calmar => "Calmar",
        }
    }

    /// Serialization key.
    pub fn key(self) -> &'static str {
        match self {
            Kpi::Return => "return",
            Kpi::Mdd => "mdd",
            Kpi::Vol => "vol",
            Kpi::Sharpe => "sharpe",
            Kpi::Wr => "wr",
            Kpi::Pl => "pl",
            Kpi::Calmar => "calmar",
        }
    }

    fn row(self) -> [&'static str; 4] {
        let line = KPI_TABLE
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .find(|l| l.split('|').next() == Some(self.abbreviation()))
            .expect("every KPI has a table row");
        let mut parts = line.splitn(4, '|');
        core::array::from_fn(|_| parts.next().unwrap_or("").trim())
    }

    pub fn full_name(self) -> &'static str {
        self.row()[1]
    }

    pub fn short_code(self) -> &'static str {
        self.row()[3]
    }

    pub fn expr(self) -> Expr {
        parse(self.short_code()).expect("shipped KPI codes parse")
    }

    pub fn direction(self) -> Direction {
        match self.row()[2] {
            "minimize" => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }

    pub fn value(self, report: &KpiReport) -> Option<f64> {
        match self {
            Kpi::Return => report.return_ratio,
            Kpi::Mdd => report.max_drawdown,
            Kpi::Vol => report.volatility,
            Kpi::Sharpe => report.annual_sharpe,
            Kpi::Wr => report.win_rate,
            Kpi::Pl => report.profit_loss_ratio,
            Kpi::Calmar => report.calmar,
        }
    }

    /// Native computation of this metric alone.
    pub fn compute(self, r: &BacktestResult) -> Option<f64> {
        let pv = &r.curve.pv;
        match self {
            Kpi::Return => return_ratio(r),
            Kpi::Mdd => max_drawdown(pv),
            Kpi::Vol => volatility(pv),
            Kpi::Sharpe => annual_sharpe(pv),
            Kpi::Wr => win_rate(&r.pnl()),
            Kpi::Pl => profit_loss_ratio(&r.pnl()),
            Kpi::Calmar => calmar(pv),
        }
    }
}

impl fmt::Display for Kpi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownKpi(pub String);

impl fmt::Display for UnknownKpi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown KPI `{}`", self.0)
    }
}

impl FromStr for Kpi {
    type Err = UnknownKpi;

    /// Accepts the abbreviation, the key or the full name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Kpi::ALL
            .into_iter()
            .find(|k| {
                k.abbreviation().eq_ignore_ascii_case(s) || k.key().eq_ignore_ascii_case(s) || k.full_name().eq_ignore_ascii_case(s)
            })
            .ok_or_else(|| UnknownKpi(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KpiReport {
    pub return_ratio: Option<f64>,
    pub max_drawdown: Option<f64>,
    pub volatility: Option<f64>,
    pub annual_sharpe: Option<f64>,
    /// Percent.
    pub win_rate: Option<f64>,
    pub profit_loss_ratio: Option<f64>,
    pub calmar: Option<f64>,
}

impl KpiReport {
    pub fn compute(r: &BacktestResult) -> Self {
        let pv = &r.curve.pv;
        let pnl = r.pnl();
        Self {
            return_ratio: return_ratio(r),
            max_drawdown: max_drawdown(pv),
            volatility: volatility(pv),
            annual_sharpe: annual_sharpe(pv),
            win_rate: win_rate(&pnl),
            profit_loss_ratio: profit_loss_ratio(&pnl),
            calmar: calmar(pv),
        }
    }
}

pub fn return_ratio(r: &BacktestResult) -> Option<f64> {
    let close = *r.curve.close.last()?;
    finite((r.state.cash + r.state.position * close) / r.initial_capital - 1.0)
}

/// Largest peak-to-trough loss as a fraction of the peak.
pub fn max_drawdown(pv: &[f64]) -> Option<f64> {
    let mut peak = *pv.first()?;
    let mut worst = 0.0f64;
    for &v in pv {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    finite(worst)
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    finite(sqrt(ss / (xs.len() as f64 - 1.0)))
}

/// Sample standard deviation of daily returns, not annualized.
pub fn volatility(pv: &[f64]) -> Option<f64> {
    let r: Option<Vec<f64>> = pv.windows(2).map(|w| finite(w[1] / w[0] - 1.0)).collect();
    sample_std(&r?)
}

/// [`volatility`] scaled by the square root of 252.
pub fn annualized_volatility(pv: &[f64]) -> Option<f64> {
    volatility(pv).map(|v| v * sqrt(TRADING_DAYS))
}

pub fn annual_sharpe(pv: &[f64]) -> Option<f64> {
    let r: Option<Vec<f64>> = pv.windows(2).map(|w| finite((w[1] - w[0]) / w[0])).collect();
    let r = r?;
    let sd = sample_std(&r)?;
    if sd == 0.0 {
        return None;
    }
    finite((mean(&r)? - RF_DAILY) / sd * sqrt(TRADING_DAYS))
}

/// Percent of round trips with positive pnl.
pub fn win_rate(pnl: &[f64]) -> Option<f64> {
    if pnl.is_empty() {
        return None;
    }
    let wins = pnl.iter().filter(|p| **p > 0.0).count() as f64;
    finite(wins / pnl.len() as f64 * 100.0)
}

/// Average win over average loss.
pub fn profit_loss_ratio(pnl: &[f64]) -> Option<f64> {
    let (mut won, mut lost, mut n_win, mut n_loss) = (0.0, 0.0, 0usize, 0usize);
    for &p in pnl {
        if p > 0.0 {
            won += p;
            n_win += 1;
        } else if p < 0.0 {
            lost += p;
            n_loss += 1;
        }
    }
    if n_win == 0 || n_loss == 0 {
        return None;
    }
    finite((won / lost.abs()) * (n_loss as f64 / n_win as f64))
}

/// Annualized growth over maximum drawdown; the exponent counts every mark, Day-0 included.
pub fn calmar(pv: &[f64]) -> Option<f64> {
    calmar_over(pv, pv.len())
}

/// [`calmar`] with the exponent counting trading days only, Day-0 excluded.
pub fn calmar_excluding_anchor(pv: &[f64]) -> Option<f64> {
    calmar_over(pv, pv.len().checked_sub(1).filter(|n| *n > 0)?)
}

fn calmar_over(pv: &[f64], marks: usize) -> Option<f64> {
    let first = *pv.first()?;
    let last = *pv.last()?;
    let mdd = max_drawdown(pv)?;
    if mdd == 0.0 {
        return None;
    }
    let growth = pow(last / first, TRADING_DAYS / marks as f64) - 1.0;
    finite(growth / mdd)
}

/// Bindings for evaluating a KPI short code against a backtest.
///
/// Daily terminals (`PV`, `CASH`, `POSITION`, `CLOSE`) span the Day-0 anchor
/// plus every day; `PNL` spans the round trips; the `*_FINAL` and
/// `INITIAL_CAPITAL` terminals are scalars.
pub fn kpi_env(kpi: Kpi, r: &BacktestResult) -> Env {
    if matches!(kpi, Kpi::Wr | Kpi::Pl) {
        let pnl = r.pnl();
        let mut env = Env::new(pnl.len());
        env.bind(Symbol::Pnl, Series::from_values(pnl)).expect("length matches");
        return env;
    }
    let c = &r.curve;
    let mut env = Env::new(c.pv.len());
    for (s, v) in [(Symbol::Pv, &c.pv), (Symbol::Cash, &c.cash), (Symbol::Position, &c.position), (Symbol::Close, &c.close)] {
        env.bind(s, Series::from_values(v.iter().copied())).expect("curve vectors share a length");
    }
    env.bind_scalar(Symbol::InitialCapital, r.initial_capital);
    env.bind_scalar(Symbol::CashFinal, r.state.cash);
    env.bind_scalar(Symbol::PositionFinal, r.state.position);
    env
}

/// Evaluates the metric's short code; evaluation failures read as undefined.
pub fn kpi_via_dsl(kpi: Kpi, r: &BacktestResult) -> Option<f64> {
    reduce(&kpi.expr(), &kpi_env(kpi, r)).ok()
}
