//! Daily OHLCV storage.
//!
//! A [`MarketStore`] holds one [`OhlcvTable`] per exchange. Each table groups
//! bars by ticker name and keeps every ticker's series strictly ordered by
//! trading date. Tables are immutable once built.

mod sql;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::date::Date;

pub use sql::{execute_sql, parse_sql, render_sql, ParsedQuery, QueryResult, QuerySpec, SqlError, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Exchange {
    Beijing,
    Shenzhen,
    Shanghai,
}

impl Exchange {
    pub const ALL: [Exchange; 3] = [Exchange::Beijing, Exchange::Shenzhen, Exchange::Shanghai];

    /// Table name used in SQL.
    pub fn table_name(self) -> &'static str {
        match self {
            Exchange::Beijing => "beijing_stock_exchange",
            Exchange::Shenzhen => "shenzhen_stock_exchange",
            Exchange::Shanghai => "shanghai_stock_exchange",
        }
    }

    pub fn from_table_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.table_name() == name)
    }
}

impl fmt::Display for Exchange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.table_name())
    }
}

impl FromStr for Exchange {
    type Err = MarketError;

    /// Accepts the table name or the short forms `beijing`, `shenzhen`, `shanghai`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(e) = Self::from_table_name(s) {
            return Ok(e);
        }
        match s {
            "beijing" | "bj" => Ok(Exchange::Beijing),
            "shenzhen" | "sz" => Ok(Exchange::Shenzhen),
            "shanghai" | "sh" => Ok(Exchange::Shanghai),
            _ => Err(MarketError::UnknownExchange(s.into())),
        }
    }
}

/// Schema columns, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Column {
    Name,
    StockCode,
    TradeDate,
    OpeningPrice,
    ClosingPrice,
    HighestPrice,
    LowestPrice,
    VolumeTraded,
    AmountTraded,
    PercentageChange,
}

impl Column {
    pub const ALL: [Column; 10] = [
        Column::Name,
        Column::StockCode,
        Column::TradeDate,
        Column::OpeningPrice,
        Column::ClosingPrice,
        Column::HighestPrice,
        Column::LowestPrice,
        Column::VolumeTraded,
        Column::AmountTraded,
        Column::PercentageChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Column::Name => "name",
            Column::StockCode => "stock_code",
            Column::TradeDate => "trade_date",
            Column::OpeningPrice => "opening_price",
            Column::ClosingPrice => "closing_price",
            Column::HighestPrice => "highest_price",
            Column::LowestPrice => "lowest_price",
            Column::VolumeTraded => "volume_traded",
            Column::AmountTraded => "amount_traded",
            Column::PercentageChange => "percentage_change",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == name)
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, Column::Name | Column::StockCode | Column::TradeDate)
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One trading day for one ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub name: String,
    pub stock_code: String,
    pub trade_date: Date,
    pub opening_price: f64,
    pub closing_price: f64,
    pub highest_price: f64,
    pub lowest_price: f64,
    pub volume_traded: f64,
    pub amount_traded: f64,
    /// Percent, so `1.5` means +1.5%.
    pub percentage_change: f64,
}

impl Bar {
    pub fn numeric(&self, column: Column) -> Option<f64> {
        Some(match column {
            Column::OpeningPrice => self.opening_price,
            Column::ClosingPrice => self.closing_price,
            Column::HighestPrice => self.highest_price,
            Column::LowestPrice => self.lowest_price,
            Column::VolumeTraded => self.volume_traded,
            Column::AmountTraded => self.amount_traded,
            Column::PercentageChange => self.percentage_change,
            Column::Name | Column::StockCode | Column::TradeDate => return None,
        })
    }

    pub fn value(&self, column: Column) -> Value {
        match column {
            Column::Name => Value::Text(self.name.clone()),
            Column::StockCode => Value::Text(self.stock_code.clone()),
            Column::TradeDate => Value::Date(self.trade_date),
            c => Value::Number(self.numeric(c).unwrap_or(f64::NAN)),
        }
    }

    /// Checks the price/volume invariants. `row` is only used for the error.
    pub fn validate(&self, row: usize) -> Result<(), TableError> {
        for column in Column::ALL {
            // percentage_change may legitimately be negative
            if column == Column::PercentageChange {
                if !self.percentage_change.is_finite() {
                    return Err(TableError::InvalidValue { row, column });
                }
                continue;
            }
            if let Some(v) = self.numeric(column) {
                if !v.is_finite() || v < 0.0 {
                    return Err(TableError::InvalidValue { row, column });
                }
            }
        }
        let lo = self.opening_price.min(self.closing_price);
        let hi = self.opening_price.max(self.closing_price);
        if !(self.lowest_price <= lo && hi <= self.highest_price) {
            return Err(TableError::OhlcOrderViolation { row });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("row {row}: low <= min(open, close) <= max(open, close) <= high does not hold")]
    OhlcOrderViolation { row: usize },
    #[error("row {row}: {column} must be finite and non-negative")]
    InvalidValue { row: usize, column: Column },
    #[error("duplicate trade_date {date} for ticker `{ticker}`")]
    DuplicateDate { ticker: String, date: Date },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("unknown ticker `{0}`")]
    UnknownTicker(String),
    #[error("unknown exchange `{0}`")]
    UnknownExchange(String),
}

/// A row that could not be admitted into a table.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub row: usize,
    pub error: TableError,
}

/// Bars of one exchange, grouped by ticker name and sorted by date.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvTable {
    exchange: Exchange,
    series: BTreeMap<String, Vec<Bar>>,
}

impl OhlcvTable {
    pub fn empty(exchange: Exchange) -> Self {
        Self { exchange, series: BTreeMap::new() }
    }

    /// Builds a table, failing on the first invalid row. Row numbers are
    /// 1-based positions in `bars`.
    pub fn from_bars(exchange: Exchange, bars: Vec<Bar>) -> Result<Self, TableError> {
        for (i, bar) in bars.iter().enumerate() {
            bar.validate(i + 1)?;
        }
        let (table, rejected) = Self::assemble(exchange, bars.into_iter().enumerate().map(|(i, b)| (i + 1, b)));
        match rejected.into_iter().next() {
            Some(r) => Err(r.error),
            None => Ok(table),
        }
    }

    /// Builds a table from `(row, bar)` pairs, dropping invalid rows and reporting
    /// them. For duplicate dates the first occurrence in row order is kept.
    pub fn from_rows_lenient(
        exchange: Exchange,
        rows: impl IntoIterator<Item = (usize, Bar)>,
    ) -> (Self, Vec<Rejection>) {
        let mut rejected = Vec::new();
        let valid: Vec<(usize, Bar)> = rows
            .into_iter()
            .filter(|(row, bar)| match bar.validate(*row) {
                Ok(()) => true,
                Err(error) => {
                    rejected.push(Rejection { row: *row, error });
                    false
                }
            })
            .collect();
        let (table, dups) = Self::assemble(exchange, valid);
        rejected.extend(dups);
        rejected.sort_by_key(|r| r.row);
        (table, rejected)
    }

    fn assemble(exchange: Exchange, rows: impl IntoIterator<Item = (usize, Bar)>) -> (Self, Vec<Rejection>) {
        let mut grouped: BTreeMap<String, Vec<(usize, Bar)>> = BTreeMap::new();
        for (row, bar) in rows {
            grouped.entry(bar.name.clone()).or_default().push((row, bar));
        }
        let mut rejected = Vec::new();
        let mut series = BTreeMap::new();
        for (ticker, mut rows) in grouped {
            // stable by row, so the earliest row of a duplicate pair comes first
            rows.sort_by(|a, b| a.1.trade_date.cmp(&b.1.trade_date).then(a.0.cmp(&b.0)));
            let mut bars: Vec<Bar> = Vec::with_capacity(rows.len());
            for (row, bar) in rows {
                if bars.last().is_some_and(|prev| prev.trade_date == bar.trade_date) {
                    rejected.push(Rejection {
                        row,
                        error: TableError::DuplicateDate { ticker: ticker.clone(), date: bar.trade_date },
                    });
                    continue;
                }
                bars.push(bar);
            }
            series.insert(ticker, bars);
        }
        rejected.sort_by_key(|r| r.row);
        (Self { exchange, series }, rejected)
    }

    pub fn exchange(&self) -> Exchange {
        self.exchange
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn ticker_count(&self) -> usize {
        self.series.len()
    }

    pub fn row_count(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// The full, date-ordered series of a ticker.
    pub fn series(&self, ticker: &str) -> Option<&[Bar]> {
        self.series.get(ticker).map(Vec::as_slice)
    }

    /// All bars of `ticker` with `date_from <= trade_date <= date_to`.
    pub fn slice(&self, ticker: &str, date_from: Date, date_to: Date) -> Result<&[Bar], MarketError> {
        let bars = self.series(ticker).ok_or_else(|| MarketError::UnknownTicker(ticker.into()))?;
        Ok(slice_bars(bars, date_from, date_to))
    }

    /// All bars in (ticker, date) order.
    pub fn rows(&self) -> impl Iterator<Item = &Bar> {
        self.series.values().flatten()
    }
}

/// Date-range slice of an ordered series (inclusive bounds).
pub fn slice_bars(bars: &[Bar], date_from: Date, date_to: Date) -> &[Bar] {
    if date_to < date_from {
        return &bars[..0];
    }
    let start = bars.partition_point(|b| b.trade_date < date_from);
    let end = bars.partition_point(|b| b.trade_date <= date_to);
    &bars[start..end.max(start)]
}

/// One table per exchange. Missing exchanges behave as empty tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarketStore {
    tables: BTreeMap<Exchange, OhlcvTable>,
}

impl MarketStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: OhlcvTable) {
        self.tables.insert(table.exchange(), table);
    }

    pub fn with_table(mut self, table: OhlcvTable) -> Self {
        self.insert(table);
        self
    }

    pub fn table(&self, exchange: Exchange) -> Option<&OhlcvTable> {
        self.tables.get(&exchange)
    }

    pub fn tables(&self) -> impl Iterator<Item = &OhlcvTable> {
        self.tables.values()
    }

    pub fn row_count(&self) -> usize {
        self.tables.values().map(OhlcvTable::row_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.values().all(OhlcvTable::is_empty)
    }
}
