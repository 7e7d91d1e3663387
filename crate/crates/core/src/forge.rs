//! Seeded synthesis of benchmark tasks.
//!
//! Every task is produced from its own RNG stream, derived from the master
//! seed, the family and the task ordinal, so any task can be regenerated in
//! isolation and in any order. A draw that fails a quality filter is retried
//! from the same stream up to [`ForgeConfig::max_attempts`] times.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backtest::{run_strategy, BacktestConfig, BacktestError, LotMode};
use crate::date::Date;
use crate::kpi::{Direction, Kpi};
use crate::market::{render_sql, slice_bars, Bar, Column, Exchange, MarketStore, QuerySpec};
use crate::signals::{AtomicSignal, Side, SignalError, SignalLibrary, StrategySpec, MAX_ATOMS_PER_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    MetricsCalculation,
    TickerSelection,
    ParameterConfirmation,
    StrategySelection,
}

impl Family {
    pub const ALL: [Family; 4] =
        [Family::MetricsCalculation, Family::TickerSelection, Family::ParameterConfirmation, Family::StrategySelection];

    pub fn code(self) -> &'static str {
        match self {
            Family::MetricsCalculation => "mc",
            Family::TickerSelection => "ts",
            Family::ParameterConfirmation => "pc",
            Family::StrategySelection => "ss",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::MetricsCalculation => "metrics_calculation",
            Family::TickerSelection => "ticker_selection",
            Family::ParameterConfirmation => "parameter_confirmation",
            Family::StrategySelection => "strategy_selection",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }

    pub fn is_selection(self) -> bool {
        self != Family::MetricsCalculation
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL.into_iter().find(|f| f.code() == s || f.name() == s).ok_or_else(|| format!("unknown family `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rejection {
    SparseTrades,
    UndefinedKpi,
    InsufficientHistory,
    Tie,
    AllUndefined,
    DegenerateGrid,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::SparseTrades => "sparse_trades",
            Rejection::UndefinedKpi => "undefined_kpi",
            Rejection::InsufficientHistory => "insufficient_history",
            Rejection::Tie => "tie",
            Rejection::AllUndefined => "all_undefined",
            Rejection::DegenerateGrid => "degenerate_grid",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeConfig {
    /// Sampling weights per exchange in [`Exchange::ALL`] order; `None` means proportional to table row counts.
    pub exchange_weights: Option<[f64; 3]>,
    /// Fewest completed round trips for a backtest to count.
    pub min_trades: usize,
    pub min_window_days: usize,
    pub max_window_days: usize,
    pub initial_capital: f64,
    pub lot_mode: LotMode,
    pub ticker_candidates: (usize, usize),
    pub strategy_candidates: (usize, usize),
    pub max_attempts: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            exchange_weights: None,
            min_trades: 2,
            min_window_days: 252,
            max_window_days: 504,
            initial_capital: 100_000.0,
            lot_mode: LotMode::RoundLot,
            ticker_candidates: (3, 5),
            strategy_candidates: (2, 3),
            max_attempts: 64,
        }
    }
}

impl ForgeConfig {
    pub fn backtest(&self) -> BacktestConfig {
        BacktestConfig { lot_mode: self.lot_mode, fee_rate: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Ticker(String),
    Threshold(f64),
    Label(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gold {
    Value(f64),
    Choice(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub id: String,
    pub family: Family,
    pub exchange: Exchange,
    /// The traded ticker, or every candidate ticker for ticker selection.
    pub tickers: Vec<String>,
    pub date_from: Date,
    pub date_to: Date,
    /// One strategy, or one per label for strategy selection. For parameter
    /// confirmation this is the base strategy; variants replace the target atom's threshold.
    pub strategies: Vec<StrategySpec>,
    /// `"<factor id>/<side>"` of the varied atom (parameter confirmation only).
    pub target_atom: Option<String>,
    pub kpi: Kpi,
    pub candidates: Vec<Candidate>,
    /// KPI value per candidate, aligned with `candidates`.
    pub candidate_values: Vec<f64>,
    pub gold: Gold,
    pub gold_indicators: Vec<String>,
    pub gold_sql: String,
    pub seed: u64,
}

impl TaskInstance {
    /// Strategy run for candidate `i`.
    pub fn candidate_strategy(&self, i: usize) -> StrategySpec {
        match (self.family, &self.candidates[i]) {
            (Family::StrategySelection, _) => self.strategies[i].clone(),
            (Family::ParameterConfirmation, Candidate::Threshold(t)) => {
                vary_threshold(&self.strategies[0], self.target_atom.as_deref().unwrap_or(""), *t)
            }
            _ => self.strategies[0].clone(),
        }
    }

    /// Ticker traded by candidate `i`.
    pub fn candidate_ticker(&self, i: usize) -> &str {
        match &self.candidates[i] {
            Candidate::Ticker(t) => t,
            _ => &self.tickers[0],
        }
    }
}

/// Copy of `spec` with the threshold of atom `atom_id` replaced.
pub fn vary_threshold(spec: &StrategySpec, atom_id: &str, threshold: f64) -> StrategySpec {
    let swap = |atoms: &[AtomicSignal]| -> Vec<AtomicSignal> {
        atoms.iter().map(|a| if a.id() == atom_id { a.with_threshold(threshold) } else { a.clone() }).collect()
    };
    StrategySpec { buy_atoms: swap(&spec.buy_atoms), sell_atoms: swap(&spec.sell_atoms), initial_capital: spec.initial_capital }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the RNG stream for one task.
pub fn task_seed(master_seed: u64, family: Family, ordinal: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ family.tag()) ^ ordinal)
}

pub fn task_id(family: Family, ordinal: u64) -> String {
    format!("{}-{:06}", family.code(), ordinal)
}

/// Index of the best value under `direction`. Fewer than two values, or a
/// tie for best, cannot yield a unique label.
pub fn argbest(values: &[f64], direction: Direction) -> Result<usize, Rejection> {
    if values.len() < 2 {
        return Err(Rejection::AllUndefined);
    }
    let mut best = 0;
    for i in 1..values.len() {
        if direction.better(values[i], values[best]) {
            best = i;
        }
    }
    if values.iter().enumerate().any(|(i, v)| i != best && *v == values[best]) {
        return Err(Rejection::Tie);
    }
    Ok(best)
}

/// Shared inputs of every synthesis call.
#[derive(Debug, Clone, Copy)]
pub struct Forge<'a> {
    pub store: &'a MarketStore,
    pub library: &'a SignalLibrary,
    pub config: &'a ForgeConfig,
}

/// Outcome of scoring one candidate.
fn score(forge: &Forge<'_>, spec: &StrategySpec, bars: &[Bar], kpi: Kpi) -> Result<f64, Rejection> {
    if bars.len() < forge.config.min_window_days {
        return Err(Rejection::InsufficientHistory);
    }
    let r = match run_strategy(spec, bars, &forge.config.backtest()) {
        Ok(r) => r,
        Err(BacktestError::Signal(SignalError::InsufficientHistory { .. })) => return Err(Rejection::InsufficientHistory),
        Err(_) => return Err(Rejection::UndefinedKpi),
    };
    if r.trades.len() < forge.config.min_trades {
        return Err(Rejection::SparseTrades);
    }
    kpi.compute(&r).ok_or(Rejection::UndefinedKpi)
}

struct Draw<'a> {
    exchange: Exchange,
    ticker: &'a str,
    bars: &'a [Bar],
}

impl<'a> Forge<'a> {
    pub fn new(store: &'a MarketStore, library: &'a SignalLibrary, config: &'a ForgeConfig) -> Self {
        Self { store, library, config }
    }

    fn pick_exchange(&self, rng: &mut impl Rng) -> Option<Exchange> {
        let weights: Vec<(Exchange, f64)> = Exchange::ALL
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                let t = self.store.table(*e)?;
                if t.is_empty() {
                    return None;
                }
                let w = match self.config.exchange_weights {
                    Some(w) => w[i],
                    None => t.row_count() as f64,
                };
                (w > 0.0).then_some((*e, w))
            })
            .collect();
        let total: f64 = weights.iter().map(|w| w.1).sum();
        if weights.is_empty() || !(total > 0.0) {
            return None;
        }
        let mut x = rng.gen_range(0.0..total);
        for (e, w) in &weights {
            if x < *w {
                return Some(*e);
            }
            x -= w;
        }
        weights.last().map(|w| w.0)
    }

    fn eligible_tickers(&self, exchange: Exchange) -> Vec<&'a str> {
        let Some(t) = self.store.table(exchange) else { return Vec::new() };
        t.tickers().filter(|k| t.series(k).is_some_and(|s| s.len() >= self.config.min_window_days)).collect()
    }

    /// Exchange, ticker and a contiguous window of at least the minimum length.
    fn draw_window(&self, rng: &mut impl Rng) -> Result<Draw<'a>, Rejection> {
        let exchange = self.pick_exchange(rng).ok_or(Rejection::InsufficientHistory)?;
        let tickers = self.eligible_tickers(exchange);
        let ticker = *tickers.choose(rng).ok_or(Rejection::InsufficientHistory)?;
        let series = self.store.table(exchange).and_then(|t| t.series(ticker)).ok_or(Rejection::InsufficientHistory)?;
        let min = self.config.min_window_days.max(1);
        let max = self.config.max_window_days.max(min).min(series.len());
        if max < min {
            return Err(Rejection::InsufficientHistory);
        }
        let len = rng.gen_range(min..=max);
        let start = rng.gen_range(0..=series.len() - len);
        Ok(Draw { exchange, ticker, bars: &series[start..start + len] })
    }

    fn draw_atoms(&self, rng: &mut impl Rng, side: Side) -> Vec<AtomicSignal> {
        let pool: Vec<&AtomicSignal> = self.library.side(side).collect();
        let k = rng.gen_range(1..=MAX_ATOMS_PER_SIDE.min(pool.len()));
        pool.choose_multiple(rng, k).map(|a| (*a).clone()).collect()
    }

    fn draw_strategy(&self, rng: &mut impl Rng) -> StrategySpec {
        let buy_atoms = self.draw_atoms(rng, Side::Buy);
        let sell_atoms = self.draw_atoms(rng, Side::Sell);
        StrategySpec { buy_atoms, sell_atoms, initial_capital: self.config.initial_capital }
    }

    fn draw_kpi(rng: &mut impl Rng) -> Kpi {
        *Kpi::ALL.choose(rng).expect("non-empty")
    }

    /// One draw of a metrics-calculation task.
    pub fn try_metrics(&self, rng: &mut impl Rng) -> Result<TaskParts, Rejection> {
        let d = self.draw_window(rng)?;
        let spec = self.draw_strategy(rng);
        let kpi = Self::draw_kpi(rng);
        let value = score(self, &spec, d.bars, kpi)?;
        Ok(TaskParts::single(&d, spec, kpi, Gold::Value(value), Vec::new(), Vec::new()))
    }

    /// One draw of a ticker-selection task.
    pub fn try_ticker_selection(&self, rng: &mut impl Rng) -> Result<TaskParts, Rejection> {
        let d = self.draw_window(rng)?;
        let (lo, hi) = self.config.ticker_candidates;
        let mut pool: Vec<&str> = self.eligible_tickers(d.exchange).into_iter().filter(|t| *t != d.ticker).collect();
        let n = rng.gen_range(lo.max(2)..=hi.max(lo.max(2)));
        if pool.len() + 1 < n {
            return Err(Rejection::InsufficientHistory);
        }
        pool.shuffle(rng);
        let mut chosen: Vec<&str> = pool.into_iter().take(n - 1).collect();
        chosen.push(d.ticker);
        chosen.sort_unstable();
        let spec = self.draw_strategy(rng);
        let kpi = Self::draw_kpi(rng);
        let (from, to) = (d.bars[0].trade_date, d.bars[d.bars.len() - 1].trade_date);
        let table = self.store.table(d.exchange).ok_or(Rejection::InsufficientHistory)?;
        let mut candidates = Vec::new();
        let mut values = Vec::new();
        for t in chosen {
            let bars = table.series(t).map(|s| slice_bars(s, from, to)).unwrap_or(&[]);
            if let Ok(v) = score(self, &spec, bars, kpi) {
                candidates.push(Candidate::Ticker(t.to_string()));
                values.push(v);
            }
        }
        let best = argbest(&values, kpi.direction())?;
        let tickers = candidates.iter().map(|c| if let Candidate::Ticker(t) = c { t.clone() } else { String::new() }).collect();
        let mut parts = TaskParts::single(&d, spec, kpi, Gold::Choice(best), candidates, values);
        parts.tickers = tickers;
        Ok(parts)
    }

    /// One draw of a parameter-confirmation task.
    pub fn try_parameter_confirmation(&self, rng: &mut impl Rng) -> Result<TaskParts, Rejection> {
        let d = self.draw_window(rng)?;
        let spec = self.draw_strategy(rng);
        let kpi = Self::draw_kpi(rng);
        let atoms: Vec<&AtomicSignal> = spec.atoms().collect();
        let target = atoms.choose(rng).map(|a| (*a).clone()).expect("strategy has atoms");
        let grid: Vec<f64> = {
            let mut g = target.grid.clone();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        };
        if grid.len() < 2 {
            return Err(Rejection::DegenerateGrid);
        }
        let id = target.id();
        let mut candidates = Vec::new();
        let mut values = Vec::new();
        for t in grid {
            if let Ok(v) = score(self, &vary_threshold(&spec, &id, t), d.bars, kpi) {
                candidates.push(Candidate::Threshold(t));
                values.push(v);
            }
        }
        let best = argbest(&values, kpi.direction())?;
        let mut parts = TaskParts::single(&d, spec, kpi, Gold::Choice(best), candidates, values);
        parts.target_atom = Some(id);
        Ok(parts)
    }

    /// One draw of a strategy-selection task.
    pub fn try_strategy_selection(&self, rng: &mut impl Rng) -> Result<TaskParts, Rejection> {
        let d = self.draw_window(rng)?;
        let (lo, hi) = self.config.strategy_candidates;
        let k = rng.gen_range(lo.max(2)..=hi.max(lo.max(2)));
        let specs: Vec<StrategySpec> = (0..k).map(|_| self.draw_strategy(rng)).collect();
        let kpi = Self::draw_kpi(rng);
        let mut candidates = Vec::new();
        let mut values = Vec::new();
        let mut kept = Vec::new();
        for spec in specs {
            if let Ok(v) = score(self, &spec, d.bars, kpi) {
                candidates.push(Candidate::Label(label(kept.len())));
                values.push(v);
                kept.push(spec);
            }
        }
        let best = argbest(&values, kpi.direction())?;
        let mut parts = TaskParts::single(&d, kept[0].clone(), kpi, Gold::Choice(best), candidates, values);
        parts.strategies = kept;
        Ok(parts)
    }

    fn try_family(&self, family: Family, rng: &mut impl Rng) -> Result<TaskParts, Rejection> {
        match family {
            Family::MetricsCalculation => self.try_metrics(rng),
            Family::TickerSelection => self.try_ticker_selection(rng),
            Family::ParameterConfirmation => self.try_parameter_confirmation(rng),
            Family::StrategySelection => self.try_strategy_selection(rng),
        }
    }

    /// Synthesizes task `ordinal` of `family`, retrying rejected draws on the task's own stream.
    pub fn synth(&self, family: Family, master_seed: u64, ordinal: u64) -> Result<TaskInstance, Rejection> {
        let seed = task_seed(master_seed, family, ordinal);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last = Rejection::InsufficientHistory;
        for _ in 0..self.config.max_attempts.max(1) {
            match self.try_family(family, &mut rng) {
                Ok(parts) => return Ok(parts.finish(task_id(family, ordinal), family, seed)),
                Err(r) => last = r,
            }
        }
        Err(last)
    }

    /// Tasks of one family in ordinal order, skipping ordinals that stay rejected.
    /// Gives up after `count * 4 + 16` ordinals.
    pub fn synth_family(&self, family: Family, master_seed: u64, count: usize) -> Vec<TaskInstance> {
        let mut out = Vec::with_capacity(count);
        let limit = (count as u64) * 4 + 16;
        let mut ordinal = 0;
        while out.len() < count && ordinal < limit {
            if let Ok(t) = self.synth(family, master_seed, ordinal) {
                out.push(t);
            }
            ordinal += 1;
        }
        out
    }
}

/// Label of strategy candidate `i`: `A`, `B`, `C`, ...
pub fn label(i: usize) -> String {
    let c = (b'A' + (i % 26) as u8) as char;
    c.to_string()
}

/// A task before its id and seed are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParts {
    exchange: Exchange,
    tickers: Vec<String>,
    date_from: Date,
    date_to: Date,
    strategies: Vec<StrategySpec>,
    target_atom: Option<String>,
    kpi: Kpi,
    candidates: Vec<Candidate>,
    candidate_values: Vec<f64>,
    gold: Gold,
}

impl TaskParts {
    fn single(d: &Draw<'_>, spec: StrategySpec, kpi: Kpi, gold: Gold, candidates: Vec<Candidate>, values: Vec<f64>) -> Self {
        Self {
            exchange: d.exchange,
            tickers: alloc::vec![d.ticker.to_string()],
            date_from: d.bars[0].trade_date,
            date_to: d.bars[d.bars.len() - 1].trade_date,
            strategies: alloc::vec![spec],
            target_atom: None,
            kpi,
            candidates,
            candidate_values: values,
            gold,
        }
    }

    fn finish(self, id: String, family: Family, seed: u64) -> TaskInstance {
        let mut t = TaskInstance {
            id,
            family,
            exchange: self.exchange,
            tickers: self.tickers,
            date_from: self.date_from,
            date_to: self.date_to,
            strategies: self.strategies,
            target_atom: self.target_atom,
            kpi: self.kpi,
            candidates: self.candidates,
            candidate_values: self.candidate_values,
            gold: self.gold,
            gold_indicators: Vec::new(),
            gold_sql: String::new(),
            seed,
        };
        t.gold_indicators = gold_indicators(&t);
        t.gold_sql = annotate_sql(&t);
        t
    }
}

/// Full names of every factor in the task's strategies plus the KPI, sorted.
pub fn gold_indicators(task: &TaskInstance) -> Vec<String> {
    let mut names: BTreeSet<String> = BTreeSet::new();
    for s in &task.strategies {
        for f in s.factors() {
            names.insert(f.full_name.clone());
        }
    }
    names.insert(task.kpi.full_name().to_string());
    names.into_iter().collect()
}

/// Columns a task reads: identity and execution prices plus every atom's inputs.
pub fn required_columns(task: &TaskInstance) -> Vec<Column> {
    let mut cols: BTreeSet<Column> =
        [Column::Name, Column::TradeDate, Column::OpeningPrice, Column::ClosingPrice].into_iter().collect();
    for s in &task.strategies {
        for a in s.atoms() {
            cols.extend(a.columns());
        }
    }
    cols.into_iter().collect()
}

/// Minimal query fetching the data a task needs.
pub fn annotate_sql(task: &TaskInstance) -> String {
    render_sql(&query_spec(task))
}

pub fn query_spec(task: &TaskInstance) -> QuerySpec {
    QuerySpec {
        exchange: task.exchange,
        tickers: task.tickers.iter().cloned().collect(),
        date_from: task.date_from,
        date_to: task.date_to,
        columns: required_columns(task),
    }
}
