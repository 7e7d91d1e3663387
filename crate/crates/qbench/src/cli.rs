//! The `qbench` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qbench_core::backtest::run_strategy;
use qbench_core::dsl::{evaluate, parse, Env};
use qbench_core::forge::{Family, Forge};
use qbench_core::harness::{grade_all, ScoreReport};
use qbench_core::market::slice_bars;
use qbench_core::signals::{fuse, SignalLibrary};
use qbench_core::{Bar, Date, Exchange, Kpi, KpiReport, MarketStore};
use serde_json::json;

use crate::config::Config;
use crate::formats::{self, PredictionRecord, ReportRecord, StrategyInput, F17, FORMAT_VERSION};
use crate::ingest;
use crate::parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qbench", version, about = "Backtesting kernel and quantitative reasoning benchmark tools")]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub show_config: bool,
    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Override a config key, e.g. `--set min_trades=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate exchange CSV files and optionally write them back normalized.
    Ingest(IngestArgs),
    /// Evaluate a short-code expression over one ticker.
    EvalExpr(EvalArgs),
    /// Print the fused buy and sell trigger dates of a strategy.
    Signals(StrategyArgs),
    /// Backtest a strategy on one ticker and report its KPIs.
    Backtest(BacktestArgs),
    /// Synthesize a task dataset as JSONL.
    Synth(SynthArgs),
    /// Grade predictions against a task dataset.
    Grade(GradeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV files or data directories.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Exchange for files whose name is not a table name.
    #[arg(long)]
    pub exchange: Option<String>,
    /// Skip bad rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Write the ingested tables into this directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct Source {
    /// A single exchange CSV file.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// A data directory (default: `data_dir` from the config).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Exchange of `--csv` when its name is not a table name.
    #[arg(long)]
    pub exchange: Option<String>,
    /// Ticker name as it appears in the `name` column.
    #[arg(long)]
    pub ticker: String,
    /// First trade date, inclusive.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub from: Option<String>,
    /// Last trade date, inclusive.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub to: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Short-code expression, e.g. `SMA(CLOSE,5)`.
    #[arg(long)]
    pub expr: String,
    #[command(flatten)]
    pub source: Source,
}

#[derive(Debug, Args)]
pub struct StrategyArgs {
    /// Strategy JSON, inline or a file path.
    #[arg(long)]
    pub strategy: String,
    #[command(flatten)]
    pub source: Source,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Initial capital; overrides the strategy and the config.
    #[arg(long)]
    pub capital: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Data directory (default: `data_dir` from the config).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Comma-separated family codes: mc, ts, pc, ss.
    #[arg(long)]
    pub families: Option<String>,
    /// Comma-separated task counts, one per family.
    #[arg(long)]
    pub counts: Option<String>,
    /// Master seed; each task derives its own seed from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSONL file (default: `out` from the config).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write each task's gold answer as a predictions file.
    #[arg(long, value_name = "FILE")]
    pub gold_preds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    /// Task JSONL file.
    #[arg(long, value_name = "FILE")]
    pub tasks: PathBuf,
    /// Predictions JSONL file.
    #[arg(long, value_name = "FILE")]
    pub preds: PathBuf,
    /// Data directory for executing predicted SQL (default: `data_dir`).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Write the score report JSON here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Write per-task results as CSV here.
    #[arg(long, value_name = "FILE")]
    pub report_csv: Option<PathBuf>,
}

/// A failure, sorted by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

type Outcome = Result<(), Failure>;

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nUsage: qbench [OPTIONS] <COMMAND>\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Data(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_DATA
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Config::parse(&text).map_err(usage)?
        }
        None => Config::default(),
    };
    for s in &cli.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    let mut cfg = load_config(&cli)?;
    if let Some(Command::Synth(a)) = &cli.command {
        apply_synth_flags(&mut cfg, a)?;
    }
    cfg.check().map_err(usage)?;
    if cli.show_config {
        write!(out, "{}", cfg.render()).map_err(data)?;
        return Ok(());
    }
    let json = cli.json;
    match cli.command {
        None => Err(usage("no command given")),
        Some(Command::Ingest(a)) => cmd_ingest(&a, json, out),
        Some(Command::EvalExpr(a)) => cmd_eval(&a, &cfg, json, out),
        Some(Command::Signals(a)) => cmd_signals(&a, &cfg, json, out),
        Some(Command::Backtest(a)) => cmd_backtest(&a, &cfg, json, out),
        Some(Command::Synth(a)) => cmd_synth(&a, &cfg, json, out),
        Some(Command::Grade(a)) => cmd_grade(&a, &cfg, json, out),
    }
}

fn apply_synth_flags(cfg: &mut Config, a: &SynthArgs) -> Outcome {
    let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(usage);
    if let Some(d) = &a.data {
        set("data_dir", d.display().to_string())?;
    }
    if let Some(f) = &a.families {
        set("families", f.clone())?;
    }
    if let Some(c) = &a.counts {
        set("counts", c.clone())?;
    }
    if let Some(s) = a.seed {
        set("seed", s.to_string())?;
    }
    if let Some(o) = &a.out {
        set("out", o.display().to_string())?;
    }
    // one count for several families applies to each
    if cfg.counts.len() == 1 && cfg.families.len() > 1 {
        cfg.counts = vec![cfg.counts[0]; cfg.families.len()];
    }
    Ok(())
}

fn exchange_arg(s: &Option<String>) -> Result<Option<Exchange>, Failure> {
    s.as_deref().map(|e| e.parse::<Exchange>().map_err(usage)).transpose()
}

fn emit_json(out: &mut dyn Write, v: &impl serde::Serialize) -> Outcome {
    serde_json::to_writer(&mut *out, v).map_err(data)?;
    writeln!(out).map_err(data)
}

fn cmd_ingest(a: &IngestArgs, json: bool, out: &mut dyn Write) -> Outcome {
    let forced = exchange_arg(&a.exchange)?;
    let mut store = MarketStore::new();
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for p in &a.paths {
        if p.is_dir() {
            for e in Exchange::ALL {
                let f = ingest::table_path(p, e);
                if f.exists() {
                    files.push((f, e));
                }
            }
        } else {
            let e = forced.or_else(|| ingest::exchange_of(p)).ok_or_else(|| data(ingest::IngestError::UnknownExchange(p.clone())))?;
            files.push((p.clone(), e));
        }
    }
    if files.is_empty() {
        return Err(data("no exchange table files found"));
    }
    for (path, e) in files {
        let (table, rejected) = if a.lenient {
            let r = ingest::ingest_csv_lenient(&path, e).map_err(data)?;
            (r.table, r.rejected)
        } else {
            (ingest::ingest_csv(&path, e).map_err(data)?, Vec::new())
        };
        reports.push(json!({
            "path": path.display().to_string(),
            "exchange": e.table_name(),
            "tickers": table.ticker_count(),
            "rows": table.row_count(),
            "rejected": rejected.iter().map(|r| json!({"row": r.row, "error": r.error.to_string()})).collect::<Vec<_>>(),
        }));
        store.insert(table);
    }
    if let Some(dir) = &a.out {
        ingest::write_dir(&store, dir).map_err(data)?;
    }
    if json {
        emit_json(out, &json!({"format_version": FORMAT_VERSION, "tables": reports}))
    } else {
        for r in &reports {
            writeln!(out, "{}: {} tickers, {} rows, {} rejected", r["exchange"].as_str().unwrap_or(""), r["tickers"], r["rows"], r["rejected"].as_array().map_or(0, Vec::len))
                .map_err(data)?;
            for rej in r["rejected"].as_array().into_iter().flatten() {
                writeln!(out, "  row {}: {}", rej["row"], rej["error"].as_str().unwrap_or("")).map_err(data)?;
            }
        }
        Ok(())
    }
}

fn load_store(data_dir: &Path) -> Result<MarketStore, Failure> {
    ingest::load_dir(data_dir).map_err(data)
}

fn parse_date(s: &Option<String>) -> Result<Option<Date>, Failure> {
    s.as_deref().map(|d| d.parse::<Date>().map_err(|_| usage(format!("bad date `{d}`")))).transpose()
}

/// Bars of the requested ticker and date range.
fn source_bars(src: &Source, cfg: &Config) -> Result<Vec<Bar>, Failure> {
    let store = match &src.csv {
        Some(p) => {
            let e = exchange_arg(&src.exchange)?
                .or_else(|| ingest::exchange_of(p))
                .ok_or_else(|| data(ingest::IngestError::UnknownExchange(p.clone())))?;
            MarketStore::new().with_table(ingest::ingest_csv(p, e).map_err(data)?)
        }
        None => load_store(src.data.as_deref().unwrap_or(&cfg.data_dir))?,
    };
    let series = store
        .tables()
        .find_map(|t| t.series(&src.ticker))
        .ok_or_else(|| data(format!("unknown ticker `{}`", src.ticker)))?;
    let from = parse_date(&src.from)?.unwrap_or(Date::new(1, 1, 1).expect("valid date"));
    let to = parse_date(&src.to)?.unwrap_or(Date::new(9999, 12, 31).expect("valid date"));
    let bars = slice_bars(series, from, to).to_vec();
    if bars.is_empty() {
        return Err(data("no bars in the requested date range"));
    }
    Ok(bars)
}

fn cmd_eval(a: &EvalArgs, cfg: &Config, json: bool, out: &mut dyn Write) -> Outcome {
    let expr = parse(&a.expr).map_err(usage)?;
    let bars = source_bars(&a.source, cfg)?;
    let series = evaluate(&expr, &Env::from_bars(&bars)).map_err(data)?.into_inner();
    if json {
        let dates: Vec<String> = bars.iter().map(|b| b.trade_date.to_string()).collect();
        let values: Vec<Option<F17>> = series.iter().map(|v| v.map(F17)).collect();
        return emit_json(
            out,
            &json!({"format_version": FORMAT_VERSION, "expr": expr.to_string(), "ticker": a.source.ticker, "dates": dates, "values": values}),
        );
    }
    // CSV; an undefined day has an empty value field
    writeln!(out, "trade_date,value").map_err(data)?;
    for (b, v) in bars.iter().zip(&series) {
        match v {
            Some(v) => writeln!(out, "{},{v}", b.trade_date),
            None => writeln!(out, "{},", b.trade_date),
        }
        .map_err(data)?;
    }
    Ok(())
}

fn read_strategy(s: &str, lib: &SignalLibrary, capital: f64) -> Result<qbench_core::StrategySpec, Failure> {
    let text = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        std::fs::read_to_string(s).map_err(|e| usage(format!("{s}: {e}")))?
    };
    let input: StrategyInput = serde_json::from_str(&text).map_err(|e| usage(format!("strategy: {e}")))?;
    input.resolve(lib, capital).map_err(usage)
}

fn cmd_signals(a: &StrategyArgs, cfg: &Config, json: bool, out: &mut dyn Write) -> Outcome {
    let lib = SignalLibrary::builtin();
    let spec = read_strategy(&a.strategy, &lib, cfg.forge.initial_capital)?;
    let bars = source_bars(&a.source, cfg)?;
    let (buy, sell) = fuse(&spec, &bars).map_err(data)?;
    let dates = |s: &std::collections::BTreeSet<usize>| s.iter().map(|&i| bars[i].trade_date.to_string()).collect::<Vec<_>>();
    if json {
        return emit_json(
            out,
            &json!({"format_version": FORMAT_VERSION, "ticker": a.source.ticker, "buy": dates(&buy), "sell": dates(&sell)}),
        );
    }
    writeln!(out, "side,trade_date").map_err(data)?;
    for (side, set) in [("buy", &buy), ("sell", &sell)] {
        for d in dates(set) {
            writeln!(out, "{side},{d}").map_err(data)?;
        }
    }
    Ok(())
}

fn cmd_backtest(a: &BacktestArgs, cfg: &Config, json: bool, out: &mut dyn Write) -> Outcome {
    let lib = SignalLibrary::builtin();
    let mut spec = read_strategy(&a.strategy.strategy, &lib, cfg.forge.initial_capital)?;
    if let Some(c) = a.capital {
        if !(c.is_finite() && c > 0.0) {
            return Err(usage("--capital must be positive"));
        }
        spec.initial_capital = c;
    }
    let bars = source_bars(&a.strategy.source, cfg)?;
    let r = run_strategy(&spec, &bars, &cfg.forge.backtest()).map_err(data)?;
    let report = KpiReport::compute(&r);
    let date = |i: usize| bars[i].trade_date.to_string();
    if json {
        let trades: Vec<_> = r
            .trades
            .iter()
            .map(|t| {
                json!({
                    "buy_date": date(t.buy_day), "buy_price": F17(t.buy_price),
                    "sell_date": date(t.sell_day), "sell_price": F17(t.sell_price),
                    "quantity": F17(t.quantity), "pnl": F17(t.pnl),
                })
            })
            .collect();
        let kpis: serde_json::Map<String, serde_json::Value> = Kpi::ALL
            .iter()
            .map(|k| (formats::kpi_name(*k).to_string(), serde_json::to_value(k.value(&report).map(F17)).unwrap_or_default()))
            .collect();
        let pv: Vec<F17> = r.curve.pv.iter().copied().map(F17).collect();
        return emit_json(
            out,
            &json!({
                "format_version": FORMAT_VERSION, "ticker": a.strategy.source.ticker,
                "initial_capital": F17(spec.initial_capital), "trades": trades, "pv": pv, "kpis": kpis,
            }),
        );
    }
    writeln!(out, "{} round trips", r.trades.len()).map_err(data)?;
    for t in &r.trades {
        writeln!(out, "  buy {} @ {}  sell {} @ {}  qty {}  pnl {:.2}", date(t.buy_day), t.buy_price, date(t.sell_day), t.sell_price, t.quantity, t.pnl)
            .map_err(data)?;
    }
    for k in Kpi::ALL {
        match k.value(&report) {
            Some(v) => writeln!(out, "{:<7} {v:.6}", k.abbreviation()),
            None => writeln!(out, "{:<7} undefined", k.abbreviation()),
        }
        .map_err(data)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn cmd_synth(a: &SynthArgs, cfg: &Config, json: bool, out: &mut dyn Write) -> Outcome {
    let store = load_store(&cfg.data_dir)?;
    let lib = SignalLibrary::builtin();
    let forge = Forge::new(&store, &lib, &cfg.forge);
    let plan: Vec<(Family, usize)> = cfg.families.iter().copied().zip(cfg.counts.iter().copied()).collect();
    let tasks = parallel::synth_dataset(&forge, &plan, cfg.seed, cfg.worker_count()).map_err(data)?;
    formats::write_tasks(&tasks, create(&cfg.out)?).map_err(data)?;
    if let Some(p) = &a.gold_preds {
        let preds: Vec<PredictionRecord> = tasks.iter().map(PredictionRecord::gold).collect();
        formats::write_jsonl(&preds, create(p)?).map_err(data)?;
    }
    let per: Vec<(String, usize)> =
        plan.iter().map(|(f, _)| (f.code().to_string(), tasks.iter().filter(|t| t.family == *f).count())).collect();
    if json {
        let counts: serde_json::Map<String, serde_json::Value> = per.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        return emit_json(
            out,
            &json!({"format_version": FORMAT_VERSION, "out": cfg.out.display().to_string(), "seed": cfg.seed, "tasks": tasks.len(), "families": counts}),
        );
    }
    writeln!(out, "wrote {} tasks to {}", tasks.len(), cfg.out.display()).map_err(data)?;
    for ((f, want), (_, got)) in plan.iter().zip(&per) {
        writeln!(out, "  {}: {got}/{want}", f.code()).map_err(data)?;
    }
    Ok(())
}

fn cmd_grade(a: &GradeArgs, cfg: &Config, json: bool, out: &mut dyn Write) -> Outcome {
    let lib = SignalLibrary::builtin();
    let tasks = formats::read_tasks(open(&a.tasks)?, &lib).map_err(data)?;
    let preds: Vec<PredictionRecord> = formats::read_jsonl(open(&a.preds)?).map_err(data)?;
    let store = load_store(a.data.as_deref().unwrap_or(&cfg.data_dir))?;
    let by_id: std::collections::HashMap<&str, &qbench_core::forge::TaskInstance> =
        tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let resolved: Vec<_> =
        preds.iter().filter_map(|p| by_id.get(p.task_id.as_str()).map(|t| p.to_prediction(t))).collect();
    let outcomes = grade_all(&tasks, &resolved, &store).map_err(data)?;
    let report = ScoreReport::from_outcomes(&outcomes);
    let record = ReportRecord::from_report(&report);
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        serde_json::to_writer(&mut w, &record).map_err(data)?;
        writeln!(w).map_err(data)?;
    }
    if let Some(p) = &a.report_csv {
        formats::write_outcomes_csv(&outcomes, create(p)?).map_err(data)?;
    }
    if json {
        return emit_json(out, &record);
    }
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    writeln!(out, "tasks {}", report.tasks).map_err(data)?;
    for (k, v) in [
        ("MC", report.mc),
        ("TS", report.ts),
        ("PC", report.pc),
        ("SS", report.ss),
        ("OA", report.oa),
        ("ECR", report.ecr),
        ("EA", report.ea),
        ("IndAcc", report.indicator_accuracy),
        ("IndP", report.indicator_precision),
        ("IndR", report.indicator_recall),
        ("IndF1", report.indicator_f1),
    ] {
        writeln!(out, "{k:<7} {}", pct(v)).map_err(data)?;
    }
    Ok(())
}
