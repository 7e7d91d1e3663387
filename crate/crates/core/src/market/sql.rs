//! The restricted SQL dialect.
//!
//! ```text
//! query     := SELECT column ("," column)* FROM table WHERE condition (AND condition)* [";"]
//! condition := "name" IN "(" string ("," string)* ")"
//!            | "name" "=" string
//!            | "trade_date" BETWEEN string AND string
//! string    := "'" ( char | "''" )* "'"
//! ```
//!
//! Exactly one `name` condition and one `trade_date` condition are required, in
//! either order. Keywords are case-insensitive; identifiers are lowercase. The
//! canonical rendering produced by [`render_sql`] is
//!
//! ```text
//! SELECT c1, c2 FROM <table> WHERE name IN ('t1','t2') AND trade_date BETWEEN 'YYYY-MM-DD' AND 'YYYY-MM-DD'
//! ```
//!
//! with tickers in lexicographic order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Write;

use thiserror::Error;

use super::{slice_bars, Column, Exchange, MarketStore};
use crate::date::Date;

/// The structured form of a dialect query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub exchange: Exchange,
    pub tickers: BTreeSet<String>,
    pub date_from: Date,
    pub date_to: Date,
    pub columns: Vec<Column>,
}

impl QuerySpec {
    pub fn validate(&self) -> Result<(), SqlError> {
        if self.columns.is_empty() {
            return Err(SqlError::Invalid("no columns selected".into()));
        }
        if self.tickers.is_empty() {
            return Err(SqlError::Invalid("no tickers".into()));
        }
        if self.date_from > self.date_to {
            return Err(SqlError::Invalid("date_from is after date_to".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(*c) {
                return Err(SqlError::DuplicateColumn(c.as_str().into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SqlError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` selected twice")]
    DuplicateColumn(String),
    #[error("invalid query: {0}")]
    Invalid(String),
}

impl SqlError {
    pub fn is_parse_error(&self) -> bool {
        matches!(self, SqlError::Parse { .. })
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for ch in s.chars() {
        if ch == '\'' {
            out.push('\'');
        }
        out.push(ch);
    }
    out.push('\'');
    out
}

pub fn render_sql(spec: &QuerySpec) -> String {
    let mut out = String::from("SELECT ");
    for (i, c) in spec.columns.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(c.as_str());
    }
    let _ = write!(out, " FROM {} WHERE name IN (", spec.exchange.table_name());
    for (i, t) in spec.tickers.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&quote(t));
    }
    let _ = write!(out, ") AND trade_date BETWEEN '{}' AND '{}'", spec.date_from, spec.date_to);
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Comma,
    LParen,
    RParen,
    Eq,
    Semi,
}

fn lex(sql: &str) -> Result<Vec<(usize, Tok)>, SqlError> {
    let mut out = Vec::new();
    let bytes: Vec<(usize, char)> = sql.char_indices().collect();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, ch) = bytes[i];
        match ch {
            c if c.is_whitespace() => i += 1,
            ',' => {
                out.push((pos, Tok::Comma));
                i += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1;
            }
            '=' => {
                out.push((pos, Tok::Eq));
                i += 1;
            }
            ';' => {
                out.push((pos, Tok::Semi));
                i += 1;
            }
            '\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => {
                            return Err(SqlError::Parse { position: pos, message: "unterminated string".into() })
                        }
                        Some((_, '\'')) if matches!(bytes.get(i + 1), Some((_, '\''))) => {
                            s.push('\'');
                            i += 2;
                        }
                        Some((_, '\'')) => {
                            i += 1;
                            break;
                        }
                        Some((_, c)) => {
                            s.push(*c);
                            i += 1;
                        }
                    }
                }
                out.push((pos, Tok::Str(s)));
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].1.is_ascii_alphanumeric() || bytes[i].1 == '_') {
                    i += 1;
                }
                let word: String = bytes[start..i].iter().map(|(_, c)| *c).collect();
                out.push((pos, Tok::Word(word)));
            }
            other => {
                return Err(SqlError::Parse { position: pos, message: format!("unexpected character `{other}`") })
            }
        }
    }
    Ok(out)
}

/// A syntactically valid query whose identifiers are not yet resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuery {
    pub columns: Vec<String>,
    pub table: String,
    pub tickers: Vec<String>,
    pub date_from: Date,
    pub date_to: Date,
}

impl ParsedQuery {
    /// Resolves table and column names. Reversed date bounds are kept as-is and
    /// select nothing, as in SQL.
    pub fn resolve(&self) -> Result<QuerySpec, SqlError> {
        let exchange =
            Exchange::from_table_name(&self.table).ok_or_else(|| SqlError::UnknownTable(self.table.clone()))?;
        let mut columns = Vec::with_capacity(self.columns.len());
        for name in &self.columns {
            let c = Column::from_name(name).ok_or_else(|| SqlError::UnknownColumn(name.clone()))?;
            if columns.contains(&c) {
                return Err(SqlError::DuplicateColumn(name.clone()));
            }
            columns.push(c);
        }
        Ok(QuerySpec {
            exchange,
            tickers: self.tickers.iter().cloned().collect(),
            date_from: self.date_from,
            date_to: self.date_to,
            columns,
        })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn error<T>(&self, message: impl Into<String>) -> Result<T, SqlError> {
        let position = self.toks.get(self.pos).map_or(self.len, |t| t.0);
        Err(SqlError::Parse { position, message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        match self.peek() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.error(format!("expected {kw}")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek() {
            Some(Tok::Word(w)) if !is_reserved(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => self.error("expected identifier"),
        }
    }

    fn string(&mut self) -> Result<String, SqlError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error("expected string literal"),
        }
    }

    fn date(&mut self) -> Result<Date, SqlError> {
        let at = self.pos;
        let s = self.string()?;
        s.parse().or_else(|_| {
            self.pos = at;
            self.error(format!("invalid date literal '{s}'"))
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SqlError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }
}

fn is_reserved(word: &str) -> bool {
    ["select", "from", "where", "and", "in", "between"].iter().any(|k| word.eq_ignore_ascii_case(k))
}

pub fn parse_sql(sql: &str) -> Result<ParsedQuery, SqlError> {
    let mut p = Parser { toks: lex(sql)?, pos: 0, len: sql.len() };
    p.keyword("select")?;
    let mut columns = vec![p.ident()?];
    while p.peek() == Some(&Tok::Comma) {
        p.bump();
        columns.push(p.ident()?);
    }
    p.keyword("from")?;
    let table = p.ident()?;
    p.keyword("where")?;

    let mut tickers: Option<Vec<String>> = None;
    let mut range: Option<(Date, Date)> = None;
    loop {
        let field = p.ident()?;
        match field.as_str() {
            "name" => {
                if tickers.is_some() {
                    return p.error("duplicate name condition");
                }
                if p.peek() == Some(&Tok::Eq) {
                    p.bump();
                    tickers = Some(vec![p.string()?]);
                } else {
                    p.keyword("in")?;
                    p.expect(Tok::LParen, "(")?;
                    let mut list = vec![p.string()?];
                    while p.peek() == Some(&Tok::Comma) {
                        p.bump();
                        list.push(p.string()?);
                    }
                    p.expect(Tok::RParen, ")")?;
                    tickers = Some(list);
                }
            }
            "trade_date" => {
                if range.is_some() {
                    return p.error("duplicate trade_date condition");
                }
                p.keyword("between")?;
                let from = p.date()?;
                p.keyword("and")?;
                let to = p.date()?;
                range = Some((from, to));
            }
            _ => {
                p.pos -= 1;
                return p.error("expected `name` or `trade_date` condition");
            }
        }
        if p.at_keyword("and") {
            p.bump();
            continue;
        }
        break;
    }
    if p.peek() == Some(&Tok::Semi) {
        p.bump();
    }
    if p.peek().is_some() {
        return p.error("unexpected trailing input");
    }
    let Some(tickers) = tickers else { return p.error("missing name condition") };
    let Some((date_from, date_to)) = range else { return p.error("missing trade_date condition") };
    Ok(ParsedQuery { columns, table, tickers, date_from, date_to })
}

/// A cell of a query result.
#[derive(Debug, Clone)]
pub enum Value {
    Text(String),
    Date(Date),
    Number(f64),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Text(_) => 0,
            Value::Date(_) => 1,
            Value::Number(_) => 2,
        }
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (Value::Number(a), Value::Number(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl core::fmt::Display for Value {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{d}"),
            Value::Number(x) => write!(f, "{x}"),
        }
    }
}

/// Projected rows. Comparison via [`QueryResult::multiset_eq`] ignores row order
/// and aligns columns by name.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl QueryResult {
    /// Executed successfully but selected no rows.
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn canonical_rows(&self, order: &[Column]) -> Option<Vec<Vec<Value>>> {
        let idx: Option<Vec<usize>> =
            order.iter().map(|c| self.columns.iter().position(|x| x == c)).collect();
        let idx = idx?;
        let mut rows: Vec<Vec<Value>> =
            self.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
        rows.sort();
        Some(rows)
    }

    pub fn multiset_eq(&self, other: &Self) -> bool {
        let mut a = self.columns.clone();
        let mut b = other.columns.clone();
        a.sort();
        b.sort();
        if a != b || self.rows.len() != other.rows.len() {
            return false;
        }
        match (self.canonical_rows(&a), other.canonical_rows(&a)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }
}

/// Runs a resolved query against the store.
pub fn execute_spec(spec: &QuerySpec, store: &MarketStore) -> QueryResult {
    let mut rows = Vec::new();
    if let Some(table) = store.table(spec.exchange) {
        for ticker in &spec.tickers {
            let Some(series) = table.series(ticker) else { continue };
            for bar in slice_bars(series, spec.date_from, spec.date_to) {
                rows.push(spec.columns.iter().map(|c| bar.value(*c)).collect());
            }
        }
    }
    QueryResult { columns: spec.columns.clone(), rows }
}

pub fn execute_sql(sql: &str, store: &MarketStore) -> Result<QueryResult, SqlError> {
    let spec = parse_sql(sql)?.resolve()?;
    Ok(execute_spec(&spec, store))
}

impl core::fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&render_sql(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::tests::bar;
    use crate::market::OhlcvTable;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn d(s: &str) -> Date {
        s.parse().unwrap()
    }

    fn ping_an() -> QuerySpec {
        QuerySpec {
            exchange: Exchange::Shenzhen,
            tickers: ["Ping An Bank".to_string()].into_iter().collect(),
            date_from: d("2019-01-15"),
            date_to: d("2020-03-20"),
            columns: vec![Column::OpeningPrice, Column::ClosingPrice],
        }
    }

    #[test]
    fn renders_canonical_form() {
        assert_eq!(
            render_sql(&ping_an()),
            "SELECT opening_price, closing_price FROM shenzhen_stock_exchange WHERE name IN ('Ping An Bank') \
             AND trade_date BETWEEN '2019-01-15' AND '2020-03-20'"
        );
        let mut two = ping_an();
        two.tickers.insert("China Merchants Bank".into());
        two.tickers.insert("O'Brien".into());
        assert!(render_sql(&two).contains("name IN ('China Merchants Bank','O''Brien','Ping An Bank')"));
        assert_eq!(parse_sql(&render_sql(&two)).unwrap().resolve().unwrap(), two);
    }

    #[test]
    fn minimal_query() {
        let spec = QuerySpec {
            exchange: Exchange::Beijing,
            tickers: ["X".to_string()].into_iter().collect(),
            date_from: d("2021-06-01"),
            date_to: d("2021-06-01"),
            columns: vec![Column::ClosingPrice],
        };
        let sql = render_sql(&spec);
        assert_eq!(
            sql,
            "SELECT closing_price FROM beijing_stock_exchange WHERE name IN ('X') \
             AND trade_date BETWEEN '2021-06-01' AND '2021-06-01'"
        );
        assert_eq!(parse_sql(&sql).unwrap().resolve().unwrap(), spec);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "",
            "SELEC name FROM t WHERE name IN ('a') AND trade_date BETWEEN '2020-01-01' AND '2020-01-02'",
            "SELECT FROM shenzhen_stock_exchange",
            "SELECT name FROM shenzhen_stock_exchange WHERE name IN ('a')",
            "SELECT name FROM shenzhen_stock_exchange WHERE name IN ('a' AND trade_date BETWEEN '2020-01-01' AND '2020-01-02'",
            "SELECT name FROM shenzhen_stock_exchange WHERE name IN ('a') AND trade_date BETWEEN '2020-13-01' AND '2020-01-02'",
            "SELECT name FROM shenzhen_stock_exchange WHERE name IN ('a') AND trade_date BETWEEN '2020-01-01' AND '2020-01-02' ORDER BY name",
            "SELECT name FROM shenzhen_stock_exchange WHERE name IN ('a) AND trade_date BETWEEN '2020-01-01' AND '2020-01-02'",
        ] {
            let err = parse_sql(bad).unwrap_err();
            assert!(err.is_parse_error(), "{bad}: {err:?}");
        }
    }

    #[test]
    fn resolution_errors() {
        let q = parse_sql("select name from nyse where name = 'a' and trade_date between '2020-01-01' and '2020-01-02'")
            .unwrap();
        assert_eq!(q.resolve(), Err(SqlError::UnknownTable("nyse".into())));
        let q = parse_sql(
            "SELECT price FROM shanghai_stock_exchange WHERE name IN ('a') AND trade_date BETWEEN '2020-01-01' AND '2020-01-02'",
        )
        .unwrap();
        assert_eq!(q.resolve(), Err(SqlError::UnknownColumn("price".into())));
    }

    fn fixture_store() -> MarketStore {
        let rows = vec![
            bar("A", "2020-01-02", 1.0, 1.5),
            bar("A", "2020-01-03", 2.0, 2.5),
            bar("A", "2020-01-06", 3.0, 3.5),
            bar("A", "2020-01-07", 4.0, 4.5),
            bar("B", "2020-01-03", 5.0, 5.5),
        ];
        MarketStore::new().with_table(OhlcvTable::from_bars(Exchange::Shenzhen, rows).unwrap())
    }

    #[test]
    fn executes_range_filter() {
        let store = fixture_store();
        let sql = "SELECT trade_date, opening_price FROM shenzhen_stock_exchange \
                   WHERE trade_date BETWEEN '2020-01-03' AND '2020-01-07' AND name IN ('A')";
        let res = execute_sql(sql, &store).unwrap();
        // brute force over the fixture rows
        let table = store.table(Exchange::Shenzhen).unwrap();
        let expected: Vec<Vec<Value>> = table
            .rows()
            .filter(|b| b.name == "A" && b.trade_date >= d("2020-01-03") && b.trade_date <= d("2020-01-07"))
            .map(|b| vec![Value::Date(b.trade_date), Value::Number(b.opening_price)])
            .collect();
        assert_eq!(res.rows, expected);
        assert_eq!(res.rows.len(), 3);
    }

    #[test]
    fn column_order_and_whitespace_ignored() {
        let store = fixture_store();
        let a = execute_sql(
            "SELECT opening_price, closing_price FROM shenzhen_stock_exchange WHERE name IN ('A','B') AND trade_date BETWEEN '2020-01-01' AND '2020-01-31'",
            &store,
        )
        .unwrap();
        let b = execute_sql(
            "select   closing_price ,opening_price\nfrom shenzhen_stock_exchange where name in ('B', 'A')\n and trade_date between '2020-01-01' and '2020-01-31';",
            &store,
        )
        .unwrap();
        assert!(a.multiset_eq(&b));
        let c = execute_sql(
            "SELECT closing_price FROM shenzhen_stock_exchange WHERE name IN ('A','B') AND trade_date BETWEEN '2020-01-01' AND '2020-01-31'",
            &store,
        )
        .unwrap();
        assert!(!a.multiset_eq(&c));
    }

    #[test]
    fn empty_result_is_not_an_error() {
        let store = fixture_store();
        let res = execute_sql(
            "SELECT name FROM shenzhen_stock_exchange WHERE name = 'Z' AND trade_date BETWEEN '2020-01-01' AND '2020-01-31'",
            &store,
        )
        .unwrap();
        assert!(res.is_empty());
        let res = execute_sql(
            "SELECT name FROM beijing_stock_exchange WHERE name = 'A' AND trade_date BETWEEN '2020-01-31' AND '2020-01-01'",
            &store,
        )
        .unwrap();
        assert!(res.is_empty());
    }

    fn arb_spec() -> impl Strategy<Value = QuerySpec> {
        (
            0usize..3,
            proptest::collection::btree_set("[A-Za-z' ]{1,12}", 1..4),
            0i64..4000,
            0i64..400,
            proptest::sample::subsequence(Column::ALL.to_vec(), 1..=10),
            any::<u64>(),
        )
            .prop_map(|(ex, tickers, start, span, mut columns, shuffle)| {
                let base = Date::new(2015, 1, 1).unwrap();
                let mut s = shuffle;
                for i in (1..columns.len()).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    columns.swap(i, (s >> 33) as usize % (i + 1));
                }
                QuerySpec {
                    exchange: Exchange::ALL[ex],
                    tickers,
                    date_from: base.add_days(start).unwrap(),
                    date_to: base.add_days(start + span).unwrap(),
                    columns,
                }
            })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(spec in arb_spec()) {
            let sql = render_sql(&spec);
            prop_assert_eq!(parse_sql(&sql).unwrap().resolve().unwrap(), spec);
        }
    }
}
