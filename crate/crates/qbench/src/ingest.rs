//! CSV reading and writing of exchange tables.
//!
//! A file holds one exchange table. The header must name all ten schema
//! columns, in any order; further columns are ignored. A data directory holds
//! one `<table name>.csv` per exchange, e.g. `shanghai_stock_exchange.csv`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use qbench_core::market::{Rejection, TableError};
use qbench_core::{Bar, Column, Date, Exchange, MarketStore, OhlcvTable};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header lacks column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: cannot parse {column} value `{value}`")]
    UnparsableValue { row: usize, column: Column, value: String },
    #[error("row {row}: lowest/highest price do not bracket open and close")]
    OhlcOrderViolation { row: usize },
    #[error("row {row}: {column} must be finite and non-negative")]
    InvalidValue { row: usize, column: Column },
    #[error("duplicate trade date {date} for `{ticker}`")]
    DuplicateDate { ticker: String, date: Date },
    #[error("no exchange table files in {0}")]
    EmptyDirectory(PathBuf),
    #[error("cannot tell the exchange of {0}; pass it explicitly")]
    UnknownExchange(PathBuf),
}

impl From<TableError> for IngestError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::OhlcOrderViolation { row } => IngestError::OhlcOrderViolation { row },
            TableError::InvalidValue { row, column } => IngestError::InvalidValue { row, column },
            TableError::DuplicateDate { ticker, date } => IngestError::DuplicateDate { ticker, date },
        }
    }
}

/// A row that did not make it into the table, in lenient mode.
#[derive(Debug)]
pub struct Rejected {
    pub row: usize,
    pub error: IngestError,
}

/// Result of a lenient ingest.
#[derive(Debug)]
pub struct Ingested {
    pub table: OhlcvTable,
    pub rejected: Vec<Rejected>,
}

fn column_indices(headers: &csv::StringRecord) -> Result<[usize; 10], IngestError> {
    let mut idx = [0usize; 10];
    for (slot, col) in idx.iter_mut().zip(Column::ALL) {
        *slot = headers.iter().position(|h| h.trim() == col.as_str()).ok_or(IngestError::MissingColumn(col.as_str()))?;
    }
    Ok(idx)
}

fn parse_record(rec: &csv::StringRecord, idx: &[usize; 10], row: usize) -> Result<Bar, IngestError> {
    let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
    let num = |i: usize| -> Result<f64, IngestError> {
        let s = field(i);
        s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| IngestError::UnparsableValue {
            row,
            column: Column::ALL[i],
            value: s.to_string(),
        })
    };
    let date = field(2).parse::<Date>().map_err(|_| IngestError::UnparsableValue {
        row,
        column: Column::TradeDate,
        value: field(2).to_string(),
    })?;
    Ok(Bar {
        name: field(0).to_string(),
        stock_code: field(1).to_string(),
        trade_date: date,
        opening_price: num(3)?,
        closing_price: num(4)?,
        highest_price: num(5)?,
        lowest_price: num(6)?,
        volume_traded: num(7)?,
        amount_traded: num(8)?,
        percentage_change: num(9)?,
    })
}

fn records<R: Read>(reader: R) -> Result<(csv::Reader<R>, [usize; 10]), IngestError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let idx = column_indices(r.headers()?)?;
    Ok((r, idx))
}

/// Reads a table, failing on the first bad row. Rows are numbered from 1 after the header.
pub fn read_table<R: Read>(reader: R, exchange: Exchange) -> Result<OhlcvTable, IngestError> {
    let (mut r, idx) = records(reader)?;
    let mut bars = Vec::new();
    for (i, rec) in r.records().enumerate() {
        bars.push(parse_record(&rec?, &idx, i + 1)?);
    }
    Ok(OhlcvTable::from_bars(exchange, bars)?)
}

/// Reads a table, skipping bad rows and reporting each with its reason.
pub fn read_table_lenient<R: Read>(reader: R, exchange: Exchange) -> Result<Ingested, IngestError> {
    let (mut r, idx) = records(reader)?;
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        match rec.map_err(IngestError::from).and_then(|rec| parse_record(&rec, &idx, row)) {
            Ok(bar) => rows.push((row, bar)),
            Err(error) => rejected.push(Rejected { row, error }),
        }
    }
    let (table, more) = OhlcvTable::from_rows_lenient(exchange, rows);
    rejected.extend(more.into_iter().map(|Rejection { row, error }| Rejected { row, error: error.into() }));
    rejected.sort_by_key(|r| r.row);
    Ok(Ingested { table, rejected })
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Exchange named by a file stem such as `shenzhen_stock_exchange`.
pub fn exchange_of(path: &Path) -> Option<Exchange> {
    path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok())
}

pub fn ingest_csv(path: &Path, exchange: Exchange) -> Result<OhlcvTable, IngestError> {
    read_table(open(path)?, exchange)
}

pub fn ingest_csv_lenient(path: &Path, exchange: Exchange) -> Result<Ingested, IngestError> {
    read_table_lenient(open(path)?, exchange)
}

pub fn table_path(dir: &Path, exchange: Exchange) -> PathBuf {
    dir.join(format!("{}.csv", exchange.table_name()))
}

/// Loads every exchange table present in `dir`.
pub fn load_dir(dir: &Path) -> Result<MarketStore, IngestError> {
    let mut store = MarketStore::new();
    for e in Exchange::ALL {
        let p = table_path(dir, e);
        if p.exists() {
            store.insert(ingest_csv(&p, e)?);
        }
    }
    if store.tables().next().is_none() {
        return Err(IngestError::EmptyDirectory(dir.to_path_buf()));
    }
    Ok(store)
}

/// Writes rows in schema column order with round-trip float formatting.
pub fn write_table<W: Write>(table: &OhlcvTable, writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(Column::ALL.iter().map(|c| c.as_str()))?;
    for b in table.rows() {
        w.write_record([
            b.name.clone(),
            b.stock_code.clone(),
            b.trade_date.to_string(),
            b.opening_price.to_string(),
            b.closing_price.to_string(),
            b.highest_price.to_string(),
            b.lowest_price.to_string(),
            b.volume_traded.to_string(),
            b.amount_traded.to_string(),
            b.percentage_change.to_string(),
        ])?;
    }
    w.flush().map_err(|source| IngestError::Io { path: PathBuf::from("<output>"), source })?;
    Ok(())
}

/// Writes one `<table name>.csv` per table into `dir`.
pub fn write_dir(store: &MarketStore, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    for t in store.tables() {
        let p = table_path(dir, t.exchange());
        let f = File::create(&p).map_err(|source| IngestError::Io { path: p.clone(), source })?;
        write_table(t, std::io::BufWriter::new(f))?;
    }
    Ok(())
}
