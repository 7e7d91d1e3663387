//! JSON, JSONL and CSV records exchanged by the command line.
//!
//! Every record carries `format_version`. Floats are written in scientific
//! notation with 17 significant digits, so output is byte-stable and parses
//! back to the identical `f64`. Non-finite values are written as `null`.

use std::io::{BufRead, Write};

use qbench_core::forge::{Candidate, Family, Gold, TaskInstance};
use qbench_core::harness::{Answer, Prediction, ScoreReport, TaskOutcome};
use qbench_core::signals::{SignalLibrary, StrategySpec};
use qbench_core::{AtomicSignal, Date, Exchange, Kpi};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A float that serializes with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Option::<f64>::deserialize(d).map(|v| F17(v.unwrap_or(f64::NAN)))
    }
}

fn opt(v: Option<f64>) -> Option<F17> {
    v.map(F17)
}

/// An atom as written in task and strategy files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AtomRecord {
    pub id: String,
    pub factor: String,
    pub side: String,
    pub rule: String,
    pub comparator: String,
    pub threshold: F17,
}

impl AtomRecord {
    pub fn from_atom(a: &AtomicSignal) -> Self {
        Self {
            id: a.id(),
            factor: a.factor.id.clone(),
            side: a.side.as_str().into(),
            rule: a.rule.as_str().into(),
            comparator: a.comparator.as_str().into(),
            threshold: F17(a.threshold),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StrategyRecord {
    pub initial_capital: F17,
    pub buy: Vec<AtomRecord>,
    pub sell: Vec<AtomRecord>,
}

impl StrategyRecord {
    pub fn from_spec(s: &StrategySpec) -> Self {
        Self {
            initial_capital: F17(s.initial_capital),
            buy: s.buy_atoms.iter().map(AtomRecord::from_atom).collect(),
            sell: s.sell_atoms.iter().map(AtomRecord::from_atom).collect(),
        }
    }
}

fn resolve_atom(lib: &SignalLibrary, id: &str, threshold: Option<f64>) -> Result<AtomicSignal, String> {
    let atom = lib.atom(id).ok_or_else(|| format!("unknown atom `{id}`"))?;
    Ok(match threshold {
        Some(t) => atom.with_threshold(t),
        None => atom.clone(),
    })
}

/// Strategy input for `signals` and `backtest`. Atoms are an id string or `{"id", "threshold"}`.
#[derive(Debug, Clone, Deserialize)]
pub struct StrategyInput {
    #[serde(default)]
    pub initial_capital: Option<f64>,
    pub buy: Vec<AtomInput>,
    pub sell: Vec<AtomInput>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AtomInput {
    Id(String),
    Spec { id: String, threshold: Option<f64> },
}

impl StrategyInput {
    pub fn resolve(&self, lib: &SignalLibrary, default_capital: f64) -> Result<StrategySpec, String> {
        let side = |atoms: &[AtomInput]| -> Result<Vec<AtomicSignal>, String> {
            atoms
                .iter()
                .map(|a| match a {
                    AtomInput::Id(id) => resolve_atom(lib, id, None),
                    AtomInput::Spec { id, threshold } => resolve_atom(lib, id, *threshold),
                })
                .collect()
        };
        let spec = StrategySpec {
            buy_atoms: side(&self.buy)?,
            sell_atoms: side(&self.sell)?,
            initial_capital: self.initial_capital.unwrap_or(default_capital),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

/// A candidate answer: a ticker or label string, or a threshold.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CandidateRecord {
    Number(F17),
    Text(String),
}

/// One line of a task JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskRecord {
    pub format_version: u32,
    pub id: String,
    pub family: String,
    pub exchange: String,
    pub tickers: Vec<String>,
    pub date_from: String,
    pub date_to: String,
    pub strategies: Vec<StrategyRecord>,
    pub target_atom: Option<String>,
    pub kpi: String,
    pub candidates: Vec<CandidateRecord>,
    pub candidate_values: Vec<F17>,
    /// The KPI value for metrics tasks, else the winning candidate as in `candidates`.
    pub gold_answer: CandidateRecord,
    /// Index into `candidates`; `null` for metrics tasks.
    pub gold_choice: Option<usize>,
    pub gold_indicators: Vec<String>,
    pub gold_sql: String,
    pub seed: u64,
}

fn candidate_record(c: &Candidate) -> CandidateRecord {
    match c {
        Candidate::Ticker(t) | Candidate::Label(t) => CandidateRecord::Text(t.clone()),
        Candidate::Threshold(v) => CandidateRecord::Number(F17(*v)),
    }
}

impl TaskRecord {
    pub fn from_task(t: &TaskInstance) -> Self {
        let (gold_answer, gold_choice) = match t.gold {
            Gold::Value(v) => (CandidateRecord::Number(F17(v)), None),
            Gold::Choice(i) => (candidate_record(&t.candidates[i]), Some(i)),
        };
        Self {
            format_version: FORMAT_VERSION,
            id: t.id.clone(),
            family: t.family.code().into(),
            exchange: t.exchange.table_name().into(),
            tickers: t.tickers.clone(),
            date_from: t.date_from.to_string(),
            date_to: t.date_to.to_string(),
            strategies: t.strategies.iter().map(StrategyRecord::from_spec).collect(),
            target_atom: t.target_atom.clone(),
            kpi: t.kpi.abbreviation().into(),
            candidates: t.candidates.iter().map(candidate_record).collect(),
            candidate_values: t.candidate_values.iter().copied().map(F17).collect(),
            gold_answer,
            gold_choice,
            gold_indicators: t.gold_indicators.clone(),
            gold_sql: t.gold_sql.clone(),
            seed: t.seed,
        }
    }

    pub fn to_task(&self, lib: &SignalLibrary) -> Result<TaskInstance, String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!("unsupported format_version {}", self.format_version));
        }
        let family: Family = self.family.parse()?;
        let exchange: Exchange = self.exchange.parse().map_err(|e: qbench_core::market::MarketError| e.to_string())?;
        let date = |s: &str| s.parse::<Date>().map_err(|_| format!("bad date `{s}`"));
        let strategies = self
            .strategies
            .iter()
            .map(|s| {
                let side = |atoms: &[AtomRecord]| -> Result<Vec<AtomicSignal>, String> {
                    atoms.iter().map(|a| resolve_atom(lib, &a.id, Some(a.threshold.0))).collect()
                };
                Ok(StrategySpec {
                    buy_atoms: side(&s.buy)?,
                    sell_atoms: side(&s.sell)?,
                    initial_capital: s.initial_capital.0,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let candidates = self
            .candidates
            .iter()
            .map(|c| match (family, c) {
                (Family::TickerSelection, CandidateRecord::Text(t)) => Ok(Candidate::Ticker(t.clone())),
                (Family::StrategySelection, CandidateRecord::Text(t)) => Ok(Candidate::Label(t.clone())),
                (Family::ParameterConfirmation, CandidateRecord::Number(v)) => Ok(Candidate::Threshold(v.0)),
                _ => Err(format!("candidate {c:?} does not fit family {}", family.code())),
            })
            .collect::<Result<Vec<_>, String>>()?;
        let gold = match (family, self.gold_choice, &self.gold_answer) {
            (Family::MetricsCalculation, None, CandidateRecord::Number(v)) => Gold::Value(v.0),
            (f, Some(i), _) if f.is_selection() && i < candidates.len() => Gold::Choice(i),
            _ => return Err("gold answer does not fit the family".into()),
        };
        Ok(TaskInstance {
            id: self.id.clone(),
            family,
            exchange,
            tickers: self.tickers.clone(),
            date_from: date(&self.date_from)?,
            date_to: date(&self.date_to)?,
            strategies,
            target_atom: self.target_atom.clone(),
            kpi: self.kpi.parse().map_err(|e: qbench_core::kpi::UnknownKpi| e.to_string())?,
            candidates,
            candidate_values: self.candidate_values.iter().map(|v| v.0).collect(),
            gold,
            gold_indicators: self.gold_indicators.clone(),
            gold_sql: self.gold_sql.clone(),
            seed: self.seed,
        })
    }
}

/// One line of a predictions JSONL file.
///
/// `answer` is a number for metrics tasks, a ticker or label for ticker and
/// strategy selection, and a threshold for parameter confirmation. A `choice`
/// index into the task's candidates takes precedence over `answer`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct PredictionRecord {
    #[serde(default = "version")]
    pub format_version: u32,
    pub task_id: String,
    #[serde(default)]
    pub answer: Option<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice: Option<usize>,
    #[serde(default)]
    pub indicators: Vec<String>,
    #[serde(default)]
    pub sql: Option<String>,
}

fn version() -> u32 {
    FORMAT_VERSION
}

impl PredictionRecord {
    /// The task's own gold answer, indicators and query.
    pub fn gold(t: &TaskInstance) -> Self {
        let r = TaskRecord::from_task(t);
        Self {
            format_version: FORMAT_VERSION,
            task_id: t.id.clone(),
            answer: Some(r.gold_answer),
            choice: None,
            indicators: t.gold_indicators.clone(),
            sql: Some(t.gold_sql.clone()),
        }
    }

    /// Resolves the answer against a task. Answers matching no candidate grade as missing.
    pub fn to_prediction(&self, task: &TaskInstance) -> Prediction {
        let answer = match (task.family, self.choice, &self.answer) {
            (f, Some(i), _) if f.is_selection() => Answer::Choice(i),
            (Family::MetricsCalculation, _, Some(CandidateRecord::Number(v))) => Answer::Value(v.0),
            (_, _, Some(a)) => task
                .candidates
                .iter()
                .position(|c| match (c, a) {
                    (Candidate::Ticker(x) | Candidate::Label(x), CandidateRecord::Text(y)) => x.trim() == y.trim(),
                    (Candidate::Threshold(x), CandidateRecord::Number(y)) => x == &y.0,
                    _ => false,
                })
                .map_or(Answer::Missing, Answer::Choice),
            _ => Answer::Missing,
        };
        Prediction { task_id: self.task_id.clone(), answer, indicators: self.indicators.clone(), sql: self.sql.clone() }
    }
}

/// Reads JSONL, skipping blank lines. Line numbers in errors are 1-based.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FormatError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<(), FormatError> {
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| FormatError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tasks<W: Write>(tasks: &[TaskInstance], w: W) -> Result<(), FormatError> {
    let recs: Vec<TaskRecord> = tasks.iter().map(TaskRecord::from_task).collect();
    write_jsonl(&recs, w)
}

pub fn read_tasks<R: BufRead>(r: R, lib: &SignalLibrary) -> Result<Vec<TaskInstance>, FormatError> {
    let recs: Vec<TaskRecord> = read_jsonl(r)?;
    recs.iter()
        .enumerate()
        .map(|(i, rec)| rec.to_task(lib).map_err(|message| FormatError::Invalid { line: i + 1, message }))
        .collect()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportRecord {
    pub format_version: u32,
    pub tasks: usize,
    pub mc: Option<F17>,
    pub ts: Option<F17>,
    pub pc: Option<F17>,
    pub ss: Option<F17>,
    pub oa: Option<F17>,
    pub oa_macro: Option<F17>,
    pub ecr: Option<F17>,
    pub ea: Option<F17>,
    pub indicator_accuracy: Option<F17>,
    pub indicator_precision: Option<F17>,
    pub indicator_recall: Option<F17>,
    pub indicator_f1: Option<F17>,
}

impl ReportRecord {
    pub fn from_report(r: &ScoreReport) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tasks: r.tasks,
            mc: opt(r.mc),
            ts: opt(r.ts),
            pc: opt(r.pc),
            ss: opt(r.ss),
            oa: opt(r.oa),
            oa_macro: opt(r.oa_macro),
            ecr: opt(r.ecr),
            ea: opt(r.ea),
            indicator_accuracy: opt(r.indicator_accuracy),
            indicator_precision: opt(r.indicator_precision),
            indicator_recall: opt(r.indicator_recall),
            indicator_f1: opt(r.indicator_f1),
        }
    }
}

/// Per-task grading rows.
pub fn write_outcomes_csv<W: Write>(outcomes: &[TaskOutcome], w: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "format_version",
        "task_id",
        "family",
        "correct",
        "indicator_exact",
        "indicator_precision",
        "indicator_recall",
        "indicator_f1",
        "sql_executable",
        "sql_ea",
    ])?;
    for o in outcomes {
        w.write_record([
            FORMAT_VERSION.to_string(),
            o.task_id.clone(),
            o.family.code().to_string(),
            o.correct.to_string(),
            o.indicators.exact.to_string(),
            format!("{:.16e}", o.indicators.precision),
            format!("{:.16e}", o.indicators.recall),
            format!("{:.16e}", o.indicators.f1),
            o.sql.executable.to_string(),
            o.sql.ea.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// KPI name as written in JSON.
pub fn kpi_name(k: Kpi) -> &'static str {
    k.abbreviation()
}
