//! Grading of predictions against synthesized tasks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::forge::{Family, Gold, TaskInstance};
use crate::market::{execute_sql, MarketStore, SqlError};
use crate::math::ln;

/// Metric answers must land strictly closer than this to the gold value.
pub const METRIC_TOLERANCE: f64 = 1e-3;

pub fn grade_metric(pred: f64, gold: f64) -> bool {
    (pred - gold).abs() < METRIC_TOLERANCE
}

pub fn grade_choice(pred: Option<usize>, gold: usize, candidates: usize) -> bool {
    matches!(pred, Some(p) if p < candidates && p == gold)
}

/// Lowercased, trimmed, inner whitespace collapsed to one space.
pub fn normalize_indicator(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for word in name.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalScore {
    pub exact: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn score_retrieval<P: AsRef<str>, G: AsRef<str>>(pred: &[P], gold: &[G]) -> RetrievalScore {
    let p: BTreeSet<String> = pred.iter().map(|s| normalize_indicator(s.as_ref())).collect();
    let g: BTreeSet<String> = gold.iter().map(|s| normalize_indicator(s.as_ref())).collect();
    if p.is_empty() && g.is_empty() {
        return RetrievalScore { exact: true, precision: 100.0, recall: 100.0, f1: 100.0 };
    }
    let hit = p.intersection(&g).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { hit / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { hit / g.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    RetrievalScore { exact: p == g, precision: precision * 100.0, recall: recall * 100.0, f1: f1 * 100.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqlScore {
    pub executable: bool,
    pub ea: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("gold query of {task} failed: {source}")]
    GoldSql { task: String, source: SqlError },
    #[error("no task with id `{0}`")]
    UnknownTask(String),
}

/// Executability of the predicted query and result-set agreement with the gold query.
pub fn score_sql(pred: Option<&str>, gold: &str, store: &MarketStore) -> Result<SqlScore, SqlError> {
    let gold = execute_sql(gold, store)?;
    let Some(pred) = pred else { return Ok(SqlScore { executable: false, ea: false }) };
    Ok(match execute_sql(pred, store) {
        Ok(r) => SqlScore { executable: true, ea: r.multiset_eq(&gold) },
        Err(_) => SqlScore { executable: false, ea: false },
    })
}

/// Lowercase alphanumeric runs, additionally split where letters meet digits.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_digit = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            let digit = c.is_ascii_digit();
            if !cur.is_empty() && digit != cur_digit {
                out.push(core::mem::take(&mut cur));
            }
            cur_digit = digit;
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;

/// BM25 index over short documents such as indicator names.
#[derive(Debug, Clone)]
pub struct Bm25 {
    docs: Vec<(String, BTreeMap<String, usize>, usize)>,
    df: BTreeMap<String, usize>,
    avgdl: f64,
}

impl Bm25 {
    pub fn new<S: AsRef<str>>(library: &[S]) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut docs = Vec::with_capacity(library.len());
        let mut total = 0usize;
        for name in library {
            let toks = tokenize(name.as_ref());
            total += toks.len();
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for t in &toks {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            docs.push((String::from(name.as_ref()), tf, toks.len()));
        }
        let avgdl = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self { docs, df, avgdl }
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ln((n - df + 0.5) / (df + 0.5) + 1.0)
    }

    /// Score of every document for the distinct terms of `query`.
    pub fn scores(&self, query: &str) -> Vec<(String, f64)> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        self.docs
            .iter()
            .map(|(name, tf, dl)| {
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * *dl as f64 / self.avgdl);
                let s = terms
                    .iter()
                    .filter_map(|t| tf.get(t).map(|f| (t, *f as f64)))
                    .map(|(t, f)| self.idf(t) * f * (BM25_K1 + 1.0) / (f + norm))
                    .sum();
                (name.clone(), s)
            })
            .collect()
    }

    /// Names with a positive score, best first, ties in lexicographic order.
    pub fn rank(&self, query: &str, top_k: usize) -> Vec<String> {
        let mut s: Vec<(String, f64)> = self.scores(query).into_iter().filter(|(_, v)| *v > 0.0).collect();
        s.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        s.into_iter().take(top_k).map(|(n, _)| n).collect()
    }
}

/// Maps extracted keywords to the closest library names.
pub fn bm25_match<K: AsRef<str>, S: AsRef<str>>(keywords: &[K], library: &[S], top_k: usize) -> Vec<String> {
    if keywords.is_empty() {
        return Vec::new();
    }
    let query: Vec<&str> = keywords.iter().map(|k| k.as_ref()).collect();
    Bm25::new(library).rank(&query.join(" "), top_k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Answer {
    Value(f64),
    Choice(usize),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub task_id: String,
    pub answer: Answer,
    pub indicators: Vec<String>,
    pub sql: Option<String>,
}

impl Prediction {
    /// The task's own gold answer, indicators and query.
    pub fn gold(task: &TaskInstance) -> Self {
        Self {
            task_id: task.id.clone(),
            answer: match task.gold {
                Gold::Value(v) => Answer::Value(v),
                Gold::Choice(i) => Answer::Choice(i),
            },
            indicators: task.gold_indicators.clone(),
            sql: Some(task.gold_sql.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: String,
    pub family: Family,
    pub correct: bool,
    pub indicators: RetrievalScore,
    pub sql: SqlScore,
}

pub fn grade_task(task: &TaskInstance, pred: &Prediction, store: &MarketStore) -> Result<TaskOutcome, HarnessError> {
    let correct = match (task.gold, pred.answer) {
        (Gold::Value(g), Answer::Value(p)) => grade_metric(p, g),
        (Gold::Choice(g), Answer::Choice(p)) => grade_choice(Some(p), g, task.candidates.len()),
        _ => false,
    };
    let sql = score_sql(pred.sql.as_deref(), &task.gold_sql, store)
        .map_err(|source| HarnessError::GoldSql { task: task.id.clone(), source })?;
    Ok(TaskOutcome {
        task_id: task.id.clone(),
        family: task.family,
        correct,
        indicators: score_retrieval(&pred.indicators, &task.gold_indicators),
        sql,
    })
}

/// Grades every task; tasks without a prediction count as wrong on every axis.
pub fn grade_all(tasks: &[TaskInstance], preds: &[Prediction], store: &MarketStore) -> Result<Vec<TaskOutcome>, HarnessError> {
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.task_id.as_str(), p)).collect();
    tasks
        .iter()
        .map(|t| {
            let missing = Prediction { task_id: t.id.clone(), answer: Answer::Missing, indicators: Vec::new(), sql: None };
            grade_task(t, by_id.get(t.id.as_str()).copied().unwrap_or(&missing), store)
        })
        .collect()
}

/// Aggregate scores in percent; `None` where no task contributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub tasks: usize,
    pub mc: Option<f64>,
    pub ts: Option<f64>,
    pub pc: Option<f64>,
    pub ss: Option<f64>,
    /// Accuracy over all tasks.
    pub oa: Option<f64>,
    /// Mean of the per-family accuracies.
    pub oa_macro: Option<f64>,
    pub ecr: Option<f64>,
    pub ea: Option<f64>,
    pub indicator_accuracy: Option<f64>,
    pub indicator_precision: Option<f64>,
    pub indicator_recall: Option<f64>,
    pub indicator_f1: Option<f64>,
}

fn percent(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64 * 100.0)
}

fn average(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl ScoreReport {
    pub fn from_outcomes(outcomes: &[TaskOutcome]) -> Self {
        let n = outcomes.len();
        let fam = |f: Family| {
            let xs: Vec<&TaskOutcome> = outcomes.iter().filter(|o| o.family == f).collect();
            percent(xs.iter().filter(|o| o.correct).count(), xs.len())
        };
        let per: Vec<Option<f64>> = Family::ALL.iter().map(|f| fam(*f)).collect();
        Self {
            tasks: n,
            mc: per[0],
            ts: per[1],
            pc: per[2],
            ss: per[3],
            oa: percent(outcomes.iter().filter(|o| o.correct).count(), n),
            oa_macro: average(per.iter().flatten().copied()),
            ecr: percent(outcomes.iter().filter(|o| o.sql.executable).count(), n),
            ea: percent(outcomes.iter().filter(|o| o.sql.ea).count(), n),
            indicator_accuracy: percent(outcomes.iter().filter(|o| o.indicators.exact).count(), n),
            indicator_precision: average(outcomes.iter().map(|o| o.indicators.precision)),
            indicator_recall: average(outcomes.iter().map(|o| o.indicators.recall)),
            indicator_f1: average(outcomes.iter().map(|o| o.indicators.f1)),
        }
    }
}
