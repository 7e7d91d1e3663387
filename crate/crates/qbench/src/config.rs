//! Flat `key = value` configuration.
//!
//! Lines starting with `#` are comments. Unknown keys are errors. Flags given
//! on the command line are applied after the file, through [`Config::set`].

use std::fmt::Write as _;
use std::path::PathBuf;

use qbench_core::forge::{Family, ForgeConfig};
use qbench_core::LotMode;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Directory holding `<exchange table>.csv` files.
    pub data_dir: PathBuf,
    /// Output file for `synth`.
    pub out: PathBuf,
    pub seed: u64,
    pub families: Vec<Family>,
    /// Tasks per family, aligned with `families`.
    pub counts: Vec<usize>,
    /// 0 means the available parallelism.
    pub workers: usize,
    pub forge: ForgeConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out: PathBuf::from("tasks.jsonl"),
            seed: 0,
            families: Family::ALL.to_vec(),
            counts: vec![250; 4],
            workers: 0,
            forge: ForgeConfig::default(),
        }
    }
}

/// Keys in the order [`Config::render`] writes them.
pub const KEYS: [&str; 16] = [
    "data_dir",
    "out",
    "seed",
    "families",
    "counts",
    "workers",
    "exchange_weights",
    "min_trades",
    "min_window_days",
    "max_window_days",
    "initial_capital",
    "lot_mode",
    "ticker_candidates",
    "strategy_candidates",
    "max_attempts",
    "format_version",
];

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn range(key: &str, value: &str) -> Result<(usize, usize), ConfigError> {
    let (a, b) = value.split_once('-').unwrap_or((value, value));
    let r = (num(key, a.trim())?, num(key, b.trim())?);
    if r.0 > r.1 || r.0 == 0 {
        return Err(bad(key, value, "need 1 <= lo <= hi"));
    }
    Ok(r)
}

fn list<T>(value: &str, f: impl Fn(&str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|s| s.trim()).filter(|s| !s.is_empty()).map(f).collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            c.set(k.trim(), v.trim())?;
        }
        c.check()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let f = &mut self.forge;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "families" => self.families = list(value, |s| s.parse::<Family>().map_err(|e| bad(key, s, e)))?,
            "counts" => self.counts = list(value, |s| num(key, s))?,
            "workers" => self.workers = num(key, value)?,
            "exchange_weights" => {
                f.exchange_weights = if value == "proportional" {
                    None
                } else {
                    let w: Vec<f64> = list(value, |s| num(key, s))?;
                    let w: [f64; 3] = w.try_into().map_err(|_| bad(key, value, "need three weights"))?;
                    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                        return Err(bad(key, value, "weights must be non-negative with a positive sum"));
                    }
                    Some(w)
                }
            }
            "min_trades" => f.min_trades = num(key, value)?,
            "min_window_days" => f.min_window_days = num(key, value)?,
            "max_window_days" => f.max_window_days = num(key, value)?,
            "initial_capital" => {
                let v: f64 = num(key, value)?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(bad(key, value, "must be positive"));
                }
                f.initial_capital = v;
            }
            "lot_mode" => f.lot_mode = LotMode::from_name(value).ok_or_else(|| bad(key, value, "round_lot or min_lot"))?,
            "ticker_candidates" => f.ticker_candidates = range(key, value)?,
            "strategy_candidates" => f.strategy_candidates = range(key, value)?,
            "max_attempts" => f.max_attempts = num(key, value)?,
            "format_version" => {
                if value != "1" {
                    return Err(bad(key, value, "only version 1 is supported"));
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Cross-field checks.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.families.len() != self.counts.len() {
            return Err(bad("counts", &self.counts.len().to_string(), "need one count per family"));
        }
        let f = &self.forge;
        if f.min_window_days == 0 || f.min_window_days > f.max_window_days {
            return Err(bad("min_window_days", &f.min_window_days.to_string(), "need 1 <= min <= max_window_days"));
        }
        if f.ticker_candidates.0 < 2 || f.strategy_candidates.0 < 2 {
            return Err(bad("ticker_candidates", "", "selection tasks need at least 2 candidates"));
        }
        Ok(())
    }

    /// Writes every key. `parse(render(c)) == c` for any valid config.
    pub fn render(&self) -> String {
        let f = &self.forge;
        let join = |xs: Vec<String>| xs.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("data_dir", self.data_dir.display().to_string());
        kv("out", self.out.display().to_string());
        kv("seed", self.seed.to_string());
        kv("families", join(self.families.iter().map(|f| f.code().to_string()).collect()));
        kv("counts", join(self.counts.iter().map(|c| c.to_string()).collect()));
        kv("workers", self.workers.to_string());
        kv(
            "exchange_weights",
            match f.exchange_weights {
                None => "proportional".into(),
                Some(w) => join(w.iter().map(|x| x.to_string()).collect()),
            },
        );
        kv("min_trades", f.min_trades.to_string());
        kv("min_window_days", f.min_window_days.to_string());
        kv("max_window_days", f.max_window_days.to_string());
        kv("initial_capital", f.initial_capital.to_string());
        kv("lot_mode", f.lot_mode.as_str().into());
        kv("ticker_candidates", format!("{}-{}", f.ticker_candidates.0, f.ticker_candidates.1));
        kv("strategy_candidates", format!("{}-{}", f.strategy_candidates.0, f.strategy_candidates.1));
        kv("max_attempts", f.max_attempts.to_string());
        kv("format_version", "1".into());
        s
    }

    /// Worker threads to use.
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}
