use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::market::Column;

/// Named inputs of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Open,
    High,
    Low,
    Close,
    Volume,
    Amount,
    PercentageChange,
    Pv,
    Cash,
    Position,
    Pnl,
    InitialCapital,
    CashFinal,
    PositionFinal,
}

impl Symbol {
    pub const ALL: [Symbol; 14] = [
        Symbol::Open,
        Symbol::High,
        Symbol::Low,
        Symbol::Close,
        Symbol::Volume,
        Symbol::Amount,
        Symbol::PercentageChange,
        Symbol::Pv,
        Symbol::Cash,
        Symbol::Position,
        Symbol::Pnl,
        Symbol::InitialCapital,
        Symbol::CashFinal,
        Symbol::PositionFinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Symbol::Open => "OPEN",
            Symbol::High => "HIGH",
            Symbol::Low => "LOW",
            Symbol::Close => "CLOSE",
            Symbol::Volume => "VOLUME",
            Symbol::Amount => "AMOUNT",
            Symbol::PercentageChange => "PERCENTAGE_CHANGE",
            Symbol::Pv => "PV",
            Symbol::Cash => "CASH",
            Symbol::Position => "POSITION",
            Symbol::Pnl => "PNL",
            Symbol::InitialCapital => "INITIAL_CAPITAL",
            Symbol::CashFinal => "CASH_FINAL",
            Symbol::PositionFinal => "POSITION_FINAL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.as_str() == name)
    }

    /// The market column a bar terminal reads, if any.
    pub fn column(self) -> Option<Column> {
        Some(match self {
            Symbol::Open => Column::OpeningPrice,
            Symbol::High => Column::HighestPrice,
            Symbol::Low => Column::LowestPrice,
            Symbol::Close => Column::ClosingPrice,
            Symbol::Volume => Column::VolumeTraded,
            Symbol::Amount => Column::AmountTraded,
            Symbol::PercentageChange => Column::PercentageChange,
            _ => return None,
        })
    }

    /// Symbols that denote a single number rather than a daily series.
    pub fn is_scalar(self) -> bool {
        matches!(self, Symbol::InitialCapital | Symbol::CashFinal | Symbol::PositionFinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Delay,
    Sma,
    Ema,
    Std,
    Var,
    Skew,
    Max,
    Min,
    Abs,
    Sum,
    If,
    Sign,
    Sqrt,
    Pow,
    LinearregSlope,
    Cummax,
    Mean,
    Count,
    First,
    Last,
}

impl Func {
    pub const ALL: [Func; 20] = [
        Func::Delay,
        Func::Sma,
        Func::Ema,
        Func::Std,
        Func::Var,
        Func::Skew,
        Func::Max,
        Func::Min,
        Func::Abs,
        Func::Sum,
        Func::If,
        Func::Sign,
        Func::Sqrt,
        Func::Pow,
        Func::LinearregSlope,
        Func::Cummax,
        Func::Mean,
        Func::Count,
        Func::First,
        Func::Last,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Func::Delay => "DELAY",
            Func::Sma => "SMA",
            Func::Ema => "EMA",
            Func::Std => "STD",
            Func::Var => "VAR",
            Func::Skew => "SKEW",
            Func::Max => "MAX",
            Func::Min => "MIN",
            Func::Abs => "ABS",
            Func::Sum => "SUM",
            Func::If => "IF",
            Func::Sign => "SIGN",
            Func::Sqrt => "SQRT",
            Func::Pow => "POW",
            Func::LinearregSlope => "LINEARREG_SLOPE",
            Func::Cummax => "CUMMAX",
            Func::Mean => "MEAN",
            Func::Count => "COUNT",
            Func::First => "FIRST",
            Func::Last => "LAST",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == name)
    }

    /// Accepted argument counts.
    pub fn arities(self) -> &'static [usize] {
        match self {
            Func::Delay | Func::Sma | Func::Ema | Func::Pow | Func::LinearregSlope | Func::Skew => &[2],
            Func::Std | Func::Var | Func::Sum | Func::Max | Func::Min => &[1, 2],
            Func::If => &[3],
            Func::Abs | Func::Sign | Func::Sqrt | Func::Cummax | Func::Mean | Func::Count | Func::First | Func::Last => {
                &[1]
            }
        }
    }

    /// Whether the second argument is a window length.
    pub fn has_window(self) -> bool {
        matches!(
            self,
            Func::Delay | Func::Sma | Func::Ema | Func::Std | Func::Var | Func::Sum | Func::Skew | Func::LinearregSlope
        )
    }

    /// Whether the window may be `N`, the whole calculation window.
    pub fn accepts_full_window(self) -> bool {
        matches!(self, Func::Sma | Func::Std | Func::Var | Func::Sum | Func::Skew)
    }

    /// Smallest admissible literal window.
    pub fn min_window(self) -> usize {
        if self == Func::Delay {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Gt,
    Lt,
}

impl BinOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "**",
            BinOp::Gt => ">",
            BinOp::Lt => "<",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Gt | BinOp::Lt => PREC_CMP,
            BinOp::Add | BinOp::Sub => PREC_ADD,
            BinOp::Mul | BinOp::Div => PREC_MUL,
            BinOp::Pow => PREC_POW,
        }
    }
}

const PREC_CMP: u8 = 1;
const PREC_ADD: u8 = 2;
const PREC_MUL: u8 = 3;
const PREC_UNARY: u8 = 4;
const PREC_POW: u8 = 5;
const PREC_ATOM: u8 = 6;

/// Abstract syntax tree of a short code.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Terminal(Symbol),
    Number(f64),
    /// `N`: the full calculation window, valid only as a window argument.
    FullWindow,
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn call(f: Func, args: impl IntoIterator<Item = Expr>) -> Self {
        Expr::Call(f, args.into_iter().collect())
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Self {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(..) => PREC_UNARY,
            _ => PREC_ATOM,
        }
    }

    /// Every terminal symbol the expression reads.
    pub fn terminals(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Terminal(s) = e {
                out.insert(*s);
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary(_, e) => e.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            Expr::Terminal(_) | Expr::Number(_) | Expr::FullWindow => {}
        }
    }

    /// True when the value does not vary by day: every series terminal sits
    /// under a full-series reduction.
    pub fn is_scalar(&self) -> bool {
        match self {
            Expr::Number(_) | Expr::FullWindow => true,
            Expr::Terminal(s) => s.is_scalar(),
            Expr::Unary(_, e) => e.is_scalar(),
            Expr::Binary(_, l, r) => l.is_scalar() && r.is_scalar(),
            Expr::Call(f, args) => {
                let reduction = match f {
                    Func::Mean | Func::Count | Func::First | Func::Last => true,
                    Func::Max | Func::Min | Func::Std | Func::Var | Func::Sum => args.len() == 1,
                    _ => false,
                } || (f.accepts_full_window() && matches!(args.get(1), Some(Expr::FullWindow)));
                reduction || args.iter().all(Expr::is_scalar)
            }
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn paren(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Canonical form: no whitespace, minimal parentheses. Re-parses to an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Terminal(s) => f.write_str(s.as_str()),
            Expr::Number(x) => write!(f, "{x}"),
            Expr::FullWindow => f.write_str("N"),
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                paren(f, e, e.precedence() < PREC_UNARY)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                if *op == BinOp::Pow {
                    paren(f, l, l.precedence() < PREC_ATOM)?;
                    f.write_str(op.as_str())?;
                    paren(f, r, r.precedence() < PREC_UNARY)
                } else {
                    paren(f, l, l.precedence() < p)?;
                    f.write_str(op.as_str())?;
                    paren(f, r, r.precedence() <= p)
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{func}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
