//! Reference implementations written from the definitions, sharing no code
//! with the engine beyond the parser and the data types.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use qbench::core::dsl::{BinOp, Expr, Func, Symbol, UnaryOp};
use qbench::core::signals::{AtomicSignal, Comparator, RuleKind, StrategySpec};
use qbench::core::{Bar, Kpi};

/// Failure of a full-series reduction over nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Empty;

fn fin(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// One flattened expression node.
enum Node {
    Num(f64),
    Term(Symbol),
    Neg(usize),
    Bin(BinOp, usize, usize),
    /// Function, argument nodes, literal window (if any), full window flag.
    Call(Func, Vec<usize>, Option<usize>, bool),
}

/// Pointwise evaluator: the value at day `t` is computed straight from the
/// definition of each function over the values its arguments take on the
/// days it covers. Sub-results are memoized per (node, day).
pub struct Naive<'a> {
    nodes: Vec<Node>,
    root: usize,
    len: usize,
    terms: &'a HashMap<Symbol, Vec<Option<f64>>>,
    memo: Vec<Vec<Option<Result<Option<f64>, Empty>>>>,
}

impl<'a> Naive<'a> {
    pub fn new(expr: &Expr, terms: &'a HashMap<Symbol, Vec<Option<f64>>>, len: usize) -> Self {
        let mut nodes = Vec::new();
        let root = flatten(expr, &mut nodes);
        let memo = nodes.iter().map(|_| vec![None; len]).collect();
        Self { nodes, root, len, terms, memo }
    }

    /// Every node is evaluated on every day, so a failing reduction anywhere
    /// in the tree fails the whole expression, as with eager evaluation.
    pub fn series(&mut self) -> Result<Vec<Option<f64>>, Empty> {
        for node in 0..self.nodes.len() {
            for t in 0..self.len {
                self.at(node, t)?;
            }
        }
        (0..self.len).map(|t| self.at(self.root, t)).collect()
    }

    fn at(&mut self, node: usize, t: usize) -> Result<Option<f64>, Empty> {
        if let Some(v) = self.memo[node][t] {
            return v;
        }
        let v = self.compute(node, t);
        self.memo[node][t] = Some(v);
        v
    }

    fn column(&mut self, node: usize) -> Result<Vec<Option<f64>>, Empty> {
        (0..self.len).map(|t| self.at(node, t)).collect()
    }

    fn window(&mut self, node: usize, t: usize, n: usize) -> Result<Option<Vec<f64>>, Empty> {
        if n == 0 || t + 1 < n {
            return Ok(None);
        }
        let mut w = Vec::with_capacity(n);
        for s in t + 1 - n..=t {
            match self.at(node, s)? {
                Some(v) => w.push(v),
                None => return Ok(None),
            }
        }
        Ok(Some(w))
    }

    fn defined(&mut self, node: usize) -> Result<Vec<f64>, Empty> {
        Ok(self.column(node)?.into_iter().flatten().collect())
    }

    fn compute(&mut self, node: usize, t: usize) -> Result<Option<f64>, Empty> {
        let (func, args, n, full) = match &self.nodes[node] {
            Node::Num(x) => return Ok(fin(*x)),
            Node::Term(s) => return Ok(self.terms[s][t]),
            Node::Neg(a) => {
                let a = *a;
                return Ok(self.at(a, t)?.map(|v| -v));
            }
            Node::Bin(op, l, r) => {
                let (op, l, r) = (*op, *l, *r);
                let (Some(x), Some(y)) = (self.at(l, t)?, self.at(r, t)?) else { return Ok(None) };
                return Ok(match op {
                    BinOp::Add => fin(x + y),
                    BinOp::Sub => fin(x - y),
                    BinOp::Mul => fin(x * y),
                    BinOp::Div => (y != 0.0).then(|| x / y).and_then(fin),
                    BinOp::Pow => fin(x.powf(y)),
                    BinOp::Gt => Some(if x > y { 1.0 } else { 0.0 }),
                    BinOp::Lt => Some(if x < y { 1.0 } else { 0.0 }),
                });
            }
            Node::Call(f, args, n, full) => (*f, args.clone(), *n, *full),
        };
        let x = args[0];
        let stat = |f: Func, w: &[f64]| -> Option<f64> {
            match f {
                Func::Sma | Func::Mean => mean(w),
                Func::Sum => fin(w.iter().sum()),
                Func::Var => var(w),
                Func::Std => var(w).map(f64::sqrt),
                Func::Skew => skew(w),
                Func::LinearregSlope => slope(w),
                Func::Max => w.iter().copied().reduce(f64::max),
                Func::Min => w.iter().copied().reduce(f64::min),
                Func::First => w.first().copied(),
                Func::Last => w.last().copied(),
                _ => unreachable!(),
            }
        };
        Ok(match func {
            Func::Delay => {
                let n = n.expect("literal");
                if t >= n {
                    self.at(x, t - n)?
                } else {
                    None
                }
            }
            Func::Ema => self.ema(node, x, t, n.expect("literal"))?,
            Func::Sma | Func::Sum | Func::Var | Func::Std | Func::Skew | Func::LinearregSlope if !full && n.is_some() => {
                self.window(x, t, n.unwrap())?.and_then(|w| stat(func, &w))
            }
            Func::Max | Func::Min if args.len() == 2 => {
                let (Some(a), Some(b)) = (self.at(x, t)?, self.at(args[1], t)?) else { return Ok(None) };
                Some(if func == Func::Max { a.max(b) } else { a.min(b) })
            }
            Func::Sma
            | Func::Sum
            | Func::Var
            | Func::Std
            | Func::Skew
            | Func::LinearregSlope
            | Func::Max
            | Func::Min
            | Func::Mean
            | Func::First
            | Func::Last => {
                let d = self.defined(x)?;
                if d.is_empty() {
                    return Err(Empty);
                }
                stat(func, &d)
            }
            Func::Count => Some(self.defined(x)?.len() as f64),
            Func::Cummax => match self.at(x, t)? {
                None => None,
                Some(_) => {
                    let mut best = f64::NEG_INFINITY;
                    for s in 0..=t {
                        if let Some(v) = self.at(x, s)? {
                            best = best.max(v);
                        }
                    }
                    Some(best)
                }
            },
            Func::Abs => self.at(x, t)?.map(f64::abs),
            Func::Sign => self.at(x, t)?.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
            Func::Sqrt => self.at(x, t)?.filter(|v| *v >= 0.0).map(f64::sqrt),
            Func::Pow => {
                let (Some(a), Some(b)) = (self.at(x, t)?, self.at(args[1], t)?) else { return Ok(None) };
                fin(a.powf(b))
            }
            Func::If => match self.at(x, t)? {
                None => None,
                Some(c) if c != 0.0 => self.at(args[1], t)?,
                Some(_) => self.at(args[2], t)?,
            },
        })
    }

    /// `y_t = a x_t + (1 - a) y_{t-1}`, seeded with `x` on the first day of
    /// each run of defined inputs.
    fn ema(&mut self, node: usize, x: usize, t: usize, n: usize) -> Result<Option<f64>, Empty> {
        let Some(v) = self.at(x, t)? else { return Ok(None) };
        let prev = if t > 0 { self.at(node, t - 1)? } else { None };
        let a = 2.0 / (n as f64 + 1.0);
        Ok(fin(match prev {
            Some(p) => a * v + (1.0 - a) * p,
            None => v,
        }))
    }
}

fn flatten(e: &Expr, nodes: &mut Vec<Node>) -> usize {
    let node = match e {
        Expr::Number(x) => Node::Num(*x),
        Expr::Terminal(s) => Node::Term(*s),
        Expr::FullWindow => panic!("N outside a window"),
        Expr::Unary(UnaryOp::Neg, a) => Node::Neg(flatten(a, nodes)),
        Expr::Binary(op, l, r) => {
            let l = flatten(l, nodes);
            let r = flatten(r, nodes);
            Node::Bin(*op, l, r)
        }
        Expr::Call(f, args) => {
            let windowed = matches!(
                f,
                Func::Delay | Func::Sma | Func::Ema | Func::Std | Func::Var | Func::Sum | Func::Skew | Func::LinearregSlope
            ) && args.len() == 2;
            if windowed {
                let x = flatten(&args[0], nodes);
                let (n, full) = match &args[1] {
                    Expr::FullWindow => (None, true),
                    Expr::Number(v) => (Some(*v as usize), false),
                    other => panic!("window {other:?}"),
                };
                Node::Call(*f, vec![x], n, full)
            } else {
                let ids = args.iter().map(|a| flatten(a, nodes)).collect();
                Node::Call(*f, ids, None, false)
            }
        }
    };
    nodes.push(node);
    nodes.len() - 1
}

pub fn mean(w: &[f64]) -> Option<f64> {
    if w.is_empty() {
        None
    } else {
        fin(w.iter().sum::<f64>() / w.len() as f64)
    }
}

fn constant(w: &[f64]) -> bool {
    w.windows(2).all(|p| p[0] == p[1])
}

/// Sample variance, exactly zero for a constant window.
pub fn var(w: &[f64]) -> Option<f64> {
    if w.len() < 2 {
        return None;
    }
    if constant(w) {
        return Some(0.0);
    }
    let m = mean(w)?;
    fin(w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (w.len() - 1) as f64)
}

pub fn skew(w: &[f64]) -> Option<f64> {
    let n = w.len() as f64;
    if w.len() < 3 || constant(w) {
        return None;
    }
    let m = mean(w)?;
    let m2 = w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = w.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return None;
    }
    fin((n * (n - 1.0)).sqrt() / (n - 2.0) * m3 / m2.powf(1.5))
}

pub fn slope(w: &[f64]) -> Option<f64> {
    let n = w.len();
    if n < 2 {
        return None;
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let (xm, ym) = (mean(&xs)?, mean(w)?);
    let num: f64 = xs.iter().zip(w).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    fin(num / den)
}

/// Terminal bindings of a bar series (percentage change as a fraction).
pub fn bar_terms(bars: &[Bar]) -> HashMap<Symbol, Vec<Option<f64>>> {
    let col = |f: fn(&Bar) -> f64| bars.iter().map(|b| fin(f(b))).collect::<Vec<_>>();
    HashMap::from([
        (Symbol::Open, col(|b| b.opening_price)),
        (Symbol::High, col(|b| b.highest_price)),
        (Symbol::Low, col(|b| b.lowest_price)),
        (Symbol::Close, col(|b| b.closing_price)),
        (Symbol::Volume, col(|b| b.volume_traded)),
        (Symbol::Amount, col(|b| b.amount_traded)),
        (Symbol::PercentageChange, col(|b| b.percentage_change / 100.0)),
    ])
}

pub fn naive_factor(expr: &Expr, bars: &[Bar]) -> Vec<Option<f64>> {
    let terms = bar_terms(bars);
    Naive::new(expr, &terms, bars.len()).series().expect("factor codes use no reductions")
}

/// Trigger days of one atom given its factor values.
pub fn naive_mask(atom: &AtomicSignal, factor: &[Option<f64>], bars: &[Bar]) -> Vec<bool> {
    let cmp = |a: f64, b: f64| match atom.comparator {
        Comparator::Greater => a > b,
        Comparator::Less => a < b,
    };
    (0..bars.len())
        .map(|t| match factor[t] {
            None => false,
            Some(f) => match atom.rule {
                RuleKind::Value => cmp(f, atom.threshold),
                RuleKind::OpenVsLevel => cmp(bars[t].opening_price, atom.threshold * f),
                RuleKind::LevelVsPrevClose => t >= 1 && cmp(f, atom.threshold * bars[t - 1].closing_price),
            },
        })
        .collect()
}

/// A completed round trip of the reference simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub buy_day: usize,
    pub sell_day: usize,
    pub shares: f64,
    pub pnl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveRun {
    /// Day-0 anchor followed by one mark per day.
    pub pv: Vec<f64>,
    pub trips: Vec<Trip>,
    pub capital: f64,
    pub final_cash: f64,
    pub final_shares: f64,
    pub final_close: f64,
}

/// Long-only, one position at a time, whole 100-share lots bought at the open
/// with all available cash, sold at the close of a later sell day, and closed
/// out at the last close. No entry on the last day.
pub fn naive_simulate(bars: &[Bar], buys: &BTreeSet<usize>, sells: &BTreeSet<usize>, capital: f64) -> NaiveRun {
    let mut cash = capital;
    let mut shares = 0.0;
    let mut open: Option<(usize, f64)> = None;
    let mut pv = vec![capital];
    let mut trips = Vec::new();
    let last = bars.len() - 1;
    for (day, bar) in bars.iter().enumerate() {
        if let Some((bought, cost)) = open {
            if day > bought && (sells.contains(&day) || day == last) {
                let proceeds = shares * bar.closing_price;
                cash += proceeds;
                trips.push(Trip { buy_day: bought, sell_day: day, shares, pnl: proceeds - cost });
                shares = 0.0;
                open = None;
            }
        } else if buys.contains(&day) && day < last && bar.opening_price > 0.0 {
            let mut lots = (cash / (100.0 * bar.opening_price)).floor();
            while lots > 0.0 && lots * 100.0 * bar.opening_price > cash {
                lots -= 1.0;
            }
            if lots >= 1.0 {
                shares = lots * 100.0;
                let cost = shares * bar.opening_price;
                cash -= cost;
                open = Some((day, cost));
            }
        }
        pv.push(cash + shares * bar.closing_price);
    }
    NaiveRun { pv, trips, capital, final_cash: cash, final_shares: shares, final_close: bars[last].closing_price }
}

/// KPI of a reference run, from the written definitions.
pub fn naive_kpi(k: Kpi, r: &NaiveRun) -> Option<f64> {
    let pv = &r.pv;
    let growth: Vec<f64> = pv.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let rets: Vec<f64> = pv.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
    let pnl: Vec<f64> = r.trips.iter().map(|t| t.pnl).collect();
    let mdd = {
        let mut peak = f64::NEG_INFINITY;
        let mut worst = 0.0f64;
        for v in pv {
            peak = peak.max(*v);
            worst = worst.max((peak - v) / peak);
        }
        worst
    };
    let out = match k {
        Kpi::Return => (r.final_cash + r.final_shares * r.final_close) / r.capital - 1.0,
        Kpi::Mdd => mdd,
        Kpi::Vol => var(&growth)?.sqrt(),
        Kpi::Sharpe => {
            let sd = var(&rets)?.sqrt();
            if sd == 0.0 {
                return None;
            }
            (mean(&rets)? - 0.0001) / sd * 252f64.sqrt()
        }
        Kpi::Wr => {
            if pnl.is_empty() {
                return None;
            }
            100.0 * pnl.iter().filter(|p| **p > 0.0).count() as f64 / pnl.len() as f64
        }
        Kpi::Pl => {
            let wins: Vec<f64> = pnl.iter().copied().filter(|p| *p > 0.0).collect();
            let losses: Vec<f64> = pnl.iter().copied().filter(|p| *p < 0.0).collect();
            if wins.is_empty() || losses.is_empty() {
                return None;
            }
            mean(&wins)? / mean(&losses)?.abs()
        }
        Kpi::Calmar => {
            if mdd == 0.0 {
                return None;
            }
            ((pv[pv.len() - 1] / pv[0]).powf(252.0 / pv.len() as f64) - 1.0) / mdd
        }
    };
    fin(out)
}

/// Runs a strategy end to end with the reference components.
pub fn naive_strategy(spec: &StrategySpec, bars: &[Bar], cache: &mut HashMap<String, Vec<Option<f64>>>) -> Option<NaiveRun> {
    let side = |atoms: &[AtomicSignal], cache: &mut HashMap<String, Vec<Option<f64>>>| -> Option<BTreeSet<usize>> {
        let mut days: BTreeSet<usize> = (0..bars.len()).collect();
        for a in atoms {
            let f = cache.entry(a.factor.id.clone()).or_insert_with(|| naive_factor(&a.factor.expr, bars)).clone();
            if f.iter().all(Option::is_none) {
                return None;
            }
            let m = naive_mask(a, &f, bars);
            days.retain(|d| m[*d]);
        }
        Some(days)
    };
    let buys = side(&spec.buy_atoms, cache)?;
    let sells = side(&spec.sell_atoms, cache)?;
    Some(naive_simulate(bars, &buys, &sells, spec.initial_capital))
}

/// Relative agreement with a floor for exact zeros.
pub fn rel_eq(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn opt_rel_eq(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => rel_eq(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}
