//! Deterministic backtesting kernel.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO. It contains:
//!
//! - [`market`]: daily OHLCV bars, per-exchange tables and the restricted SQL
//!   dialect used to address data slices.
//! - [`dsl`]: the factor / KPI short-code expression language (lexer, parser,
//!   canonical renderer and series evaluator).
//! - [`signals`]: the factor library, the atomic signal catalog and trigger-date
//!   fusion.
//! - [`backtest`]: the long-only, alternating, no-T+0 daily execution protocol.
//! - [`kpi`]: the seven performance indicators.
//! - [`forge`]: seeded synthesis of the four task families with gold labels.
//! - [`harness`]: answer grading, SQL execution accuracy and BM25 indicator
//!   matching.
//!
//! File formats, CSV ingest and the command line live in the `qbench` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backtest;
pub mod date;
pub mod dsl;
pub mod fixture;
pub mod forge;
pub mod harness;
pub mod kpi;
pub mod market;
pub mod math;
pub mod signals;

pub use backtest::{run_backtest, BacktestConfig, BacktestResult, EquityCurve, LotMode, RoundTrip};
pub use date::Date;
pub use dsl::{Expr, Series};
pub use kpi::{Kpi, KpiReport};
pub use market::{Bar, Column, Exchange, MarketStore, OhlcvTable, QuerySpec};
pub use signals::{AtomicSignal, FactorDef, Side, StrategySpec};
