//! Series evaluation.
//!
//! Conventions for the functions whose definition is a choice:
//!
//! | function            | convention                                                     |
//! |---------------------|----------------------------------------------------------------|
//! | `DELAY(x,n)`        | shift forward `n` days, first `n` outputs undefined            |
//! | `SMA/SUM(x,n)`      | exactly `n` most recent values, no partial windows             |
//! | `EMA(x,n)`          | `y = a*x + (1-a)*y_prev`, `a = 2/(n+1)`, seeded with first `x` |
//! | `STD/VAR`           | sample statistics, denominator `n-1`                           |
//! | `SKEW(x,n)`         | adjusted Fisher-Pearson (bias corrected)                       |
//! | `MAX/MIN`           | two args elementwise, one arg full-series reduction            |
//! | `IF(c,a,b)`         | `c != 0` selects `a`; only the selected branch must be defined |
//! | `a > b`, `a < b`    | `1` or `0`                                                     |
//! | window `N`          | the whole series, i.e. the one-argument reduction              |
//!
//! A rolling output is undefined unless every value in its window is defined.
//! Any non-finite arithmetic result (division by zero included) is undefined.
//! `EMA` outputs are undefined where their input is undefined and the
//! recursion restarts from the next defined input.
//!
//! Full-series reductions skip undefined entries and broadcast their result to
//! every index, so scalar arithmetic over reductions is ordinary series
//! arithmetic; [`reduce`] reads the final index.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use thiserror::Error;

use super::ast::{BinOp, Expr, Func, Symbol, UnaryOp};
use super::parser::window_literal;
use crate::market::Bar;
use crate::math::{finite, pow, sqrt};

/// Sample-variance denominator offset.
pub const VARIANCE_DDOF: f64 = 1.0;

/// EMA smoothing factor for span `n`.
pub fn ema_alpha(n: usize) -> f64 {
    2.0 / (n as f64 + 1.0)
}

/// Date-aligned values; `None` marks an undefined entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series(pub Vec<Option<f64>>);

impl Series {
    pub fn constant(value: f64, len: usize) -> Self {
        Series(vec![finite(value); len])
    }

    pub fn undefined(len: usize) -> Self {
        Series(vec![None; len])
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        Series(values.into_iter().map(finite).collect())
    }

    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flatten().copied()
    }

    pub fn into_inner(self) -> Vec<Option<f64>> {
        self.0
    }
}

impl Deref for Series {
    type Target = [Option<f64>];

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl From<Vec<Option<f64>>> for Series {
    fn from(v: Vec<Option<f64>>) -> Self {
        Series(v)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("symbol {0} is not bound")]
    UnboundSymbol(Symbol),
    #[error("series for {symbol} has length {got}, expected {expected}")]
    LengthMismatch { symbol: Symbol, expected: usize, got: usize },
    #[error("{0} over a series with no defined entries")]
    EmptyReduction(Func),
    #[error("expression is undefined at the final index")]
    UndefinedResult,
    #[error("malformed expression: {0}")]
    Malformed(&'static str),
}

/// Symbol bindings; all series share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    len: usize,
    bindings: BTreeMap<Symbol, Series>,
}

impl Env {
    pub fn new(len: usize) -> Self {
        Self { len, bindings: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bind(&mut self, symbol: Symbol, series: impl Into<Series>) -> Result<(), EvalError> {
        let series = series.into();
        if series.len() != self.len {
            return Err(EvalError::LengthMismatch { symbol, expected: self.len, got: series.len() });
        }
        self.bindings.insert(symbol, series);
        Ok(())
    }

    pub fn with(mut self, symbol: Symbol, series: impl Into<Series>) -> Result<Self, EvalError> {
        self.bind(symbol, series)?;
        Ok(self)
    }

    /// Binds a scalar by broadcasting it.
    pub fn bind_scalar(&mut self, symbol: Symbol, value: f64) {
        self.bindings.insert(symbol, Series::constant(value, self.len));
    }

    pub fn get(&self, symbol: Symbol) -> Option<&Series> {
        self.bindings.get(&symbol)
    }

    /// Binds the bar terminals. `PERCENTAGE_CHANGE` is bound as a fraction
    /// (the stored percent divided by 100).
    pub fn from_bars(bars: &[Bar]) -> Self {
        let col = |f: fn(&Bar) -> f64| Series::from_values(bars.iter().map(f));
        let mut env = Env::new(bars.len());
        let entries = [
            (Symbol::Open, col(|b| b.opening_price)),
            (Symbol::High, col(|b| b.highest_price)),
            (Symbol::Low, col(|b| b.lowest_price)),
            (Symbol::Close, col(|b| b.closing_price)),
            (Symbol::Volume, col(|b| b.volume_traded)),
            (Symbol::Amount, col(|b| b.amount_traded)),
            (Symbol::PercentageChange, col(|b| b.percentage_change / 100.0)),
        ];
        for (s, series) in entries {
            env.bindings.insert(s, series);
        }
        env
    }
}

/// Full-series and per-window statistics over defined values.
pub(crate) mod kernel {
    use super::*;

    /// Exact constancy; the rounded mean of equal values need not equal them.
    fn is_constant(xs: &[f64]) -> bool {
        xs.iter().all(|x| *x == xs[0])
    }

    pub fn sum(xs: &[f64]) -> f64 {
        xs.iter().sum()
    }

    pub fn mean(xs: &[f64]) -> Option<f64> {
        if xs.is_empty() {
            return None;
        }
        finite(sum(xs) / xs.len() as f64)
    }

    pub fn var(xs: &[f64]) -> Option<f64> {
        let n = xs.len() as f64;
        if n - VARIANCE_DDOF <= 0.0 {
            return None;
        }
        if is_constant(xs) {
            return Some(0.0);
        }
        let m = mean(xs)?;
        let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
        finite(ss / (n - VARIANCE_DDOF))
    }

    pub fn std(xs: &[f64]) -> Option<f64> {
        var(xs).map(sqrt)
    }

    pub fn skew(xs: &[f64]) -> Option<f64> {
        let n = xs.len() as f64;
        if xs.len() < 3 || is_constant(xs) {
            return None;
        }
        let m = mean(xs)?;
        let (mut m2, mut m3) = (0.0, 0.0);
        for x in xs {
            let d = x - m;
            m2 += d * d;
            m3 += d * d * d;
        }
        m2 /= n;
        m3 /= n;
        if m2 == 0.0 {
            return None;
        }
        finite(m3 / pow(m2, 1.5) * sqrt(n * (n - 1.0)) / (n - 2.0))
    }

    /// OLS slope against abscissa `0..n`.
    pub fn slope(xs: &[f64]) -> Option<f64> {
        let n = xs.len();
        if n < 2 {
            return None;
        }
        let xbar = (n as f64 - 1.0) / 2.0;
        let ybar = mean(xs)?;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in xs.iter().enumerate() {
            let dx = i as f64 - xbar;
            sxy += dx * (y - ybar);
            sxx += dx * dx;
        }
        finite(sxy / sxx)
    }

    pub fn max(xs: &[f64]) -> Option<f64> {
        xs.iter().copied().reduce(f64::max)
    }

    pub fn min(xs: &[f64]) -> Option<f64> {
        xs.iter().copied().reduce(f64::min)
    }
}

type Kernel = fn(&[f64]) -> Option<f64>;

fn rolling(x: &Series, n: usize, k: Kernel) -> Series {
    let mut out = vec![None; x.len()];
    if n == 0 {
        return Series(out);
    }
    let mut buf: Vec<f64> = Vec::with_capacity(n);
    // count of consecutive defined values ending at t
    let mut run = 0usize;
    for t in 0..x.len() {
        run = if x[t].is_some() { run + 1 } else { 0 };
        if run >= n {
            buf.clear();
            buf.extend(x[t + 1 - n..=t].iter().map(|v| v.unwrap_or(f64::NAN)));
            out[t] = k(&buf);
        }
    }
    Series(out)
}

fn reduction(func: Func, x: &Series, k: Kernel) -> Result<Series, EvalError> {
    let values: Vec<f64> = x.defined().collect();
    if values.is_empty() {
        return Err(EvalError::EmptyReduction(func));
    }
    Ok(Series(vec![k(&values); x.len()]))
}

fn delay(x: &Series, n: usize) -> Series {
    let len = x.len();
    let mut out = vec![None; len];
    for t in n..len {
        out[t] = x[t - n];
    }
    Series(out)
}

fn ema(x: &Series, n: usize) -> Series {
    let a = ema_alpha(n);
    let mut out = vec![None; x.len()];
    let mut state: Option<f64> = None;
    for (t, v) in x.iter().enumerate() {
        match v {
            Some(v) => {
                let y = match state {
                    Some(prev) => a * v + (1.0 - a) * prev,
                    None => *v,
                };
                state = finite(y);
                out[t] = state;
            }
            None => state = None,
        }
    }
    Series(out)
}

fn cummax(x: &Series) -> Series {
    let mut best: Option<f64> = None;
    Series(
        x.iter()
            .map(|v| {
                let v = (*v)?;
                let m = best.map_or(v, |b| b.max(v));
                best = Some(m);
                Some(m)
            })
            .collect(),
    )
}

fn map1(x: &Series, f: impl Fn(f64) -> f64) -> Series {
    Series(x.iter().map(|v| v.and_then(|v| finite(f(v)))).collect())
}

fn map2(a: &Series, b: &Series, f: impl Fn(f64, f64) -> Option<f64>) -> Series {
    Series(a.iter().zip(b.iter()).map(|(x, y)| f((*x)?, (*y)?).and_then(finite)).collect())
}

fn binop(op: BinOp, x: f64, y: f64) -> Option<f64> {
    match op {
        BinOp::Add => Some(x + y),
        BinOp::Sub => Some(x - y),
        BinOp::Mul => Some(x * y),
        BinOp::Div if y == 0.0 => None,
        BinOp::Div => Some(x / y),
        BinOp::Pow => Some(pow(x, y)),
        BinOp::Gt => Some(if x > y { 1.0 } else { 0.0 }),
        BinOp::Lt => Some(if x < y { 1.0 } else { 0.0 }),
    }
}

enum Window {
    Days(usize),
    Full,
}

fn window_arg(func: Func, e: &Expr) -> Result<Window, EvalError> {
    match e {
        Expr::FullWindow if func.accepts_full_window() => Ok(Window::Full),
        Expr::Number(x) => window_literal(*x, func.min_window())
            .map(Window::Days)
            .ok_or(EvalError::Malformed("window must be an integer literal")),
        _ => Err(EvalError::Malformed("window must be an integer literal")),
    }
}

/// Evaluates `expr` to a series of `env.len()` entries.
pub fn evaluate(expr: &Expr, env: &Env) -> Result<Series, EvalError> {
    let len = env.len;
    match expr {
        Expr::Number(x) => Ok(Series::constant(*x, len)),
        Expr::Terminal(s) => env.get(*s).cloned().ok_or(EvalError::UnboundSymbol(*s)),
        Expr::FullWindow => Err(EvalError::Malformed("`N` outside a window argument")),
        Expr::Unary(UnaryOp::Neg, e) => Ok(map1(&evaluate(e, env)?, |v| -v)),
        Expr::Binary(op, l, r) => {
            let (a, b) = (evaluate(l, env)?, evaluate(r, env)?);
            Ok(map2(&a, &b, |x, y| binop(*op, x, y)))
        }
        Expr::Call(func, args) => call(*func, args, env),
    }
}

fn call(func: Func, args: &[Expr], env: &Env) -> Result<Series, EvalError> {
    if !func.arities().contains(&args.len()) {
        return Err(EvalError::Malformed("wrong number of arguments"));
    }
    let x = evaluate(&args[0], env)?;
    let windowed = |k: Kernel| -> Result<Series, EvalError> {
        match args.get(1).map(|w| window_arg(func, w)).transpose()? {
            Some(Window::Days(n)) => Ok(rolling(&x, n, k)),
            Some(Window::Full) | None => reduction(func, &x, k),
        }
    };
    match func {
        Func::Delay => match window_arg(func, &args[1])? {
            Window::Days(n) => Ok(delay(&x, n)),
            Window::Full => Err(EvalError::Malformed("DELAY needs a literal window")),
        },
        Func::Ema => match window_arg(func, &args[1])? {
            Window::Days(n) => Ok(ema(&x, n)),
            Window::Full => Err(EvalError::Malformed("EMA needs a literal window")),
        },
        Func::LinearregSlope => match window_arg(func, &args[1])? {
            Window::Days(n) => Ok(rolling(&x, n, kernel::slope)),
            Window::Full => Err(EvalError::Malformed("LINEARREG_SLOPE needs a literal window")),
        },
        Func::Sma => windowed(kernel::mean),
        Func::Std => windowed(kernel::std),
        Func::Var => windowed(kernel::var),
        Func::Skew => windowed(kernel::skew),
        Func::Sum => windowed(|xs| finite(kernel::sum(xs))),
        Func::Max | Func::Min if args.len() == 2 => {
            let y = evaluate(&args[1], env)?;
            let pick = if func == Func::Max { f64::max } else { f64::min };
            Ok(map2(&x, &y, |a, b| Some(pick(a, b))))
        }
        Func::Max => reduction(func, &x, kernel::max),
        Func::Min => reduction(func, &x, kernel::min),
        Func::Mean => reduction(func, &x, kernel::mean),
        Func::First => reduction(func, &x, |xs| xs.first().copied()),
        Func::Last => reduction(func, &x, |xs| xs.last().copied()),
        Func::Count => Ok(Series::constant(x.defined().count() as f64, x.len())),
        Func::Cummax => Ok(cummax(&x)),
        Func::Abs => Ok(map1(&x, f64::abs)),
        Func::Sign => Ok(map1(&x, |v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })),
        Func::Sqrt => Ok(Series(x.iter().map(|v| v.filter(|v| *v >= 0.0).map(sqrt)).collect())),
        Func::Pow => {
            let y = evaluate(&args[1], env)?;
            Ok(map2(&x, &y, |a, b| Some(pow(a, b))))
        }
        Func::If => {
            let a = evaluate(&args[1], env)?;
            let b = evaluate(&args[2], env)?;
            Ok(Series(
                x.iter()
                    .enumerate()
                    .map(|(t, c)| match c {
                        Some(c) if *c != 0.0 => a[t],
                        Some(_) => b[t],
                        None => None,
                    })
                    .collect(),
            ))
        }
    }
}

/// Evaluates a KPI-style expression to one number: the value at the final index.
pub fn reduce(expr: &Expr, env: &Env) -> Result<f64, EvalError> {
    let s = evaluate(expr, env)?;
    match s.last() {
        None => Err(EvalError::EmptyReduction(Func::Last)),
        Some(None) => Err(EvalError::UndefinedResult),
        Some(Some(v)) => Ok(*v),
    }
}
