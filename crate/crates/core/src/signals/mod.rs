//! Factor library, atomic signals and strategy fusion.

pub mod catalog;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::dsl::{evaluate, Env, EvalError, Expr, Series, Symbol};
use crate::market::{Bar, Column};
use crate::math::binomial;

pub use catalog::CatalogError;

/// Maximum atoms per side of a strategy.
pub const MAX_ATOMS_PER_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which sides a factor may serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorSide {
    Buy,
    Sell,
    Both,
}

impl FactorSide {
    pub fn allows(self, side: Side) -> bool {
        matches!((self, side), (FactorSide::Both, _) | (FactorSide::Buy, Side::Buy) | (FactorSide::Sell, Side::Sell))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FactorSide::Buy => "buy",
            FactorSide::Sell => "sell",
            FactorSide::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDef {
    pub id: String,
    pub full_name: String,
    pub short_code: String,
    pub side: FactorSide,
    pub expr: Expr,
}

impl FactorDef {
    pub fn evaluate(&self, bars: &[Bar]) -> Result<Series, EvalError> {
        evaluate(&self.expr, &Env::from_bars(bars))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Greater,
    Less,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Greater => lhs > rhs,
            Comparator::Less => lhs < rhs,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Greater => "gt",
            Comparator::Less => "lt",
        }
    }
}

/// How the threshold enters an atom's condition on day `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// `factor_t ⋈ threshold`
    Value,
    /// `OPEN_t ⋈ threshold · factor_t`
    OpenVsLevel,
    /// `factor_t ⋈ threshold · CLOSE_{t-1}`
    LevelVsPrevClose,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Value => "value",
            RuleKind::OpenVsLevel => "open_vs_level",
            RuleKind::LevelVsPrevClose => "level_vs_prev_close",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A thresholded rule on one factor that yields trigger dates for one side.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSignal {
    pub factor: Arc<FactorDef>,
    pub side: Side,
    pub rule: RuleKind,
    pub comparator: Comparator,
    pub threshold: f64,
    /// Candidate thresholds for parameter-confirmation tasks.
    pub grid: Vec<f64>,
    /// Day-t bar fields the rule may read. Everything else comes from `t-1` or earlier.
    pub declared: Vec<Symbol>,
}

impl AtomicSignal {
    /// `"<factor id>/<side>"`, unique within a catalog.
    pub fn id(&self) -> String {
        format!("{}/{}", self.factor.id, self.side)
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self { threshold, ..self.clone() }
    }

    /// Every bar terminal read by the factor or the rule.
    pub fn terminals(&self) -> BTreeSet<Symbol> {
        let mut t = self.factor.expr.terminals();
        t.extend(self.declared.iter().copied());
        match self.rule {
            RuleKind::Value => {}
            RuleKind::OpenVsLevel => {
                t.insert(Symbol::Open);
            }
            RuleKind::LevelVsPrevClose => {
                t.insert(Symbol::Close);
            }
        }
        t
    }

    /// Bar columns read by this atom, in schema order.
    pub fn columns(&self) -> BTreeSet<Column> {
        self.terminals().into_iter().filter_map(Symbol::column).collect()
    }

    /// Per-day trigger mask from a precomputed factor series.
    pub fn mask_from_factor(&self, factor: &[Option<f64>], bars: &[Bar]) -> Vec<bool> {
        let thr = self.threshold;
        (0..bars.len())
            .map(|t| {
                let Some(f) = factor.get(t).copied().flatten() else { return false };
                match self.rule {
                    RuleKind::Value => self.comparator.holds(f, thr),
                    RuleKind::OpenVsLevel => self.comparator.holds(bars[t].opening_price, thr * f),
                    RuleKind::LevelVsPrevClose => {
                        t > 0 && self.comparator.holds(f, thr * bars[t - 1].closing_price)
                    }
                }
            })
            .collect()
    }

    /// Per-day trigger mask.
    pub fn mask(&self, bars: &[Bar]) -> Result<Vec<bool>, SignalError> {
        let factor = self.factor.evaluate(bars)?;
        if factor.defined().next().is_none() {
            return Err(SignalError::InsufficientHistory { atom: self.id(), days: bars.len() });
        }
        Ok(self.mask_from_factor(&factor, bars))
    }
}

/// Day indices where the atom fires. Days inside the factor warm-up never fire.
pub fn trigger_dates(atom: &AtomicSignal, bars: &[Bar]) -> Result<BTreeSet<usize>, SignalError> {
    Ok(indices(&atom.mask(bars)?))
}

fn indices(mask: &[bool]) -> BTreeSet<usize> {
    mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("{atom}: factor undefined on every one of {days} days")]
    InsufficientHistory { atom: String, days: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{side} side must hold 1 to 4 atoms, got {got}")]
    AtomCount { side: Side, got: usize },
    #[error("duplicate atom `{0}`")]
    DuplicateAtom(String),
    #[error("atom `{atom}` listed on the {side} side")]
    WrongSide { atom: String, side: Side },
    #[error("initial capital must be positive")]
    Capital,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpec {
    pub buy_atoms: Vec<AtomicSignal>,
    pub sell_atoms: Vec<AtomicSignal>,
    pub initial_capital: f64,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        for (side, atoms) in [(Side::Buy, &self.buy_atoms), (Side::Sell, &self.sell_atoms)] {
            if atoms.is_empty() || atoms.len() > MAX_ATOMS_PER_SIDE {
                return Err(SignalError::AtomCount { side, got: atoms.len() });
            }
            let mut seen = BTreeSet::new();
            for a in atoms {
                if a.side != side {
                    return Err(SignalError::WrongSide { atom: a.id(), side });
                }
                if !seen.insert(a.id()) {
                    return Err(SignalError::DuplicateAtom(a.id()));
                }
            }
        }
        if !(self.initial_capital > 0.0 && self.initial_capital.is_finite()) {
            return Err(SignalError::Capital);
        }
        Ok(())
    }

    pub fn atoms(&self) -> impl Iterator<Item = &AtomicSignal> {
        self.buy_atoms.iter().chain(&self.sell_atoms)
    }

    /// Distinct factors used by either side, in first-use order.
    pub fn factors(&self) -> Vec<&FactorDef> {
        let mut out: Vec<&FactorDef> = Vec::new();
        for a in self.atoms() {
            if !out.iter().any(|f| f.id == a.factor.id) {
                out.push(&a.factor);
            }
        }
        out
    }
}

/// Buy and sell trigger sets: the intersection of each side's atoms.
pub fn fuse(spec: &StrategySpec, bars: &[Bar]) -> Result<(BTreeSet<usize>, BTreeSet<usize>), SignalError> {
    let (b, s) = fuse_masks(spec, bars)?;
    Ok((indices(&b), indices(&s)))
}

/// Mask form of [`fuse`].
pub fn fuse_masks(spec: &StrategySpec, bars: &[Bar]) -> Result<(Vec<bool>, Vec<bool>), SignalError> {
    let side = |atoms: &[AtomicSignal]| -> Result<Vec<bool>, SignalError> {
        let mut acc = alloc::vec![true; bars.len()];
        for a in atoms {
            for (x, m) in acc.iter_mut().zip(a.mask(bars)?) {
                *x &= m;
            }
        }
        Ok(acc)
    };
    Ok((side(&spec.buy_atoms)?, side(&spec.sell_atoms)?))
}

/// Number of non-empty strategies of at most `max_pick` atoms from a pool.
pub fn count_strategies(pool_size: u64, max_pick: u64) -> u128 {
    (1..=max_pick.min(pool_size)).map(|k| binomial(pool_size, k)).sum()
}

/// The shipped factors and atoms.
#[derive(Debug, Clone)]
pub struct SignalLibrary {
    factors: Vec<Arc<FactorDef>>,
    atoms: Vec<AtomicSignal>,
}

impl SignalLibrary {
    pub fn from_text(factor_table: &str, atom_catalog: &str) -> Result<Self, CatalogError> {
        let factors = catalog::parse_factors(factor_table)?;
        let atoms = catalog::parse_atoms(atom_catalog, &factors)?;
        Ok(Self { factors, atoms })
    }

    /// The built-in tables.
    pub fn builtin() -> Self {
        Self::from_text(catalog::FACTOR_TABLE, catalog::ATOM_CATALOG).expect("shipped catalog is valid")
    }

    pub fn factors(&self) -> &[Arc<FactorDef>] {
        &self.factors
    }

    pub fn factor(&self, id: &str) -> Option<&Arc<FactorDef>> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn atoms(&self) -> &[AtomicSignal] {
        &self.atoms
    }

    pub fn side(&self, side: Side) -> impl Iterator<Item = &AtomicSignal> {
        self.atoms.iter().filter(move |a| a.side == side)
    }

    /// Looks up an atom by `"<factor id>/<side>"`.
    pub fn atom(&self, id: &str) -> Option<&AtomicSignal> {
        self.atoms.iter().find(|a| a.id() == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::tests::bar;
    use alloc::string::ToString;
    use alloc::vec;

    fn lib() -> SignalLibrary {
        SignalLibrary::builtin()
    }

    fn flat(n: usize) -> Vec<Bar> {
        (0..n)
            .map(|i| {
                let d = crate::Date::new(2024, 1, 1).unwrap().add_days(i as i64).unwrap().to_string();
                bar("T", &d, 10.0, 10.0)
            })
            .collect()
    }

    #[test]
    fn census() {
        let l = lib();
        assert_eq!(l.factors().len(), 43);
        let count = |s| l.factors().iter().filter(|f| f.side == s).count();
        assert_eq!((count(FactorSide::Both), count(FactorSide::Buy), count(FactorSide::Sell)), (37, 2, 4));
        assert_eq!(l.side(Side::Buy).count(), 39);
        assert_eq!(l.side(Side::Sell).count(), 41);
    }

    #[test]
    fn strategy_counts() {
        assert_eq!(count_strategies(39, 4), 92_170);
        assert_eq!(count_strategies(41, 4), 112_791);
        assert_eq!(count_strategies(17, 1), 17);
    }

    #[test]
    fn open_above_ma5() {
        let atom = lib().atom("MA 5/buy").unwrap().with_threshold(1.0);
        let mut bars = flat(6);
        bars[5].opening_price = 11.0;
        bars[5].highest_price = 11.0;
        assert_eq!(trigger_dates(&atom, &bars).unwrap(), BTreeSet::from([5]));
        bars[5].opening_price = 9.0;
        bars[5].lowest_price = 9.0;
        assert!(trigger_dates(&atom, &bars).unwrap().is_empty());
    }

    #[test]
    fn amount_spike_sell() {
        let atom = lib().atom("Amount MA 6/sell").unwrap().with_threshold(2.0);
        let mut bars = flat(9);
        for b in &mut bars {
            b.amount_traded = 100.0;
        }
        bars[7].amount_traded = 300.0;
        assert_eq!(trigger_dates(&atom, &bars).unwrap(), BTreeSet::from([8]));
    }

    #[test]
    fn constant_series_never_exceeds() {
        let l = lib();
        let bars = flat(40);
        for id in ["MA 5/buy", "MA 5/sell", "BIAS 5/sell", "ROC 6/buy"] {
            assert!(trigger_dates(l.atom(id).unwrap(), &bars).unwrap().is_empty(), "{id}");
        }
    }

    #[test]
    fn insufficient_history() {
        let atom = lib().atom("MA 60/buy").unwrap().clone();
        assert!(matches!(trigger_dates(&atom, &flat(30)), Err(SignalError::InsufficientHistory { .. })));
    }

    #[test]
    fn fuse_intersects() {
        let l = lib();
        let mut bars = flat(30);
        for (i, b) in bars.iter_mut().enumerate() {
            b.opening_price = 10.0 + (i % 3) as f64;
            b.highest_price = b.opening_price;
        }
        let a = l.atom("MA 5/buy").unwrap().clone();
        let b = l.atom("EMA 5/buy").unwrap().clone();
        let s = l.atom("MA 5/sell").unwrap().clone();
        let single = StrategySpec { buy_atoms: vec![a.clone()], sell_atoms: vec![s.clone()], initial_capital: 1e5 };
        let (buy, _) = fuse(&single, &bars).unwrap();
        assert_eq!(buy, trigger_dates(&a, &bars).unwrap());
        let pair = StrategySpec { buy_atoms: vec![a.clone(), b.clone()], ..single.clone() };
        let (buy2, _) = fuse(&pair, &bars).unwrap();
        let expected: BTreeSet<usize> =
            trigger_dates(&a, &bars).unwrap().intersection(&trigger_dates(&b, &bars).unwrap()).copied().collect();
        assert_eq!(buy2, expected);
        assert!(buy2.is_subset(&buy));
    }

    #[test]
    fn spec_validation() {
        let l = lib();
        let a = l.atom("MA 5/buy").unwrap().clone();
        let s = l.atom("MA 5/sell").unwrap().clone();
        let ok = StrategySpec { buy_atoms: vec![a.clone()], sell_atoms: vec![s.clone()], initial_capital: 1e5 };
        assert!(ok.validate().is_ok());
        let dup = StrategySpec { buy_atoms: vec![a.clone(), a.clone()], ..ok.clone() };
        assert!(matches!(dup.validate(), Err(SignalError::DuplicateAtom(_))));
        let wrong = StrategySpec { buy_atoms: vec![s.clone()], ..ok.clone() };
        assert!(matches!(wrong.validate(), Err(SignalError::WrongSide { .. })));
        let empty = StrategySpec { sell_atoms: vec![], ..ok.clone() };
        assert!(matches!(empty.validate(), Err(SignalError::AtomCount { side: Side::Sell, got: 0 })));
        assert_eq!(ok.factors().len(), 1);
    }

    #[test]
    fn catalog_errors() {
        let f = "X|x|buy|CLOSE\n";
        assert!(matches!(
            SignalLibrary::from_text(f, "X|sell|value|gt|1|1|-\n"),
            Err(CatalogError::SideMismatch { line: 1, .. })
        ));
        assert!(matches!(
            SignalLibrary::from_text(f, "X|buy|open_vs_level|gt|1|1|-\n"),
            Err(CatalogError::UndeclaredOpen { .. })
        ));
        assert!(matches!(SignalLibrary::from_text(f, "Y|buy|value|gt|1|1|-\n"), Err(CatalogError::UnknownFactor { .. })));
        assert!(matches!(SignalLibrary::from_text("X|x|buy|CLOSE+\n", ""), Err(CatalogError::ShortCode { .. })));
        assert!(matches!(SignalLibrary::from_text(f, "X|buy|value|ge|1|1|-\n"), Err(CatalogError::InvalidField { .. })));
    }

    #[test]
    fn atom_columns() {
        let l = lib();
        let cols: Vec<Column> = l.atom("MA 5/buy").unwrap().columns().into_iter().collect();
        assert_eq!(cols, vec![Column::OpeningPrice, Column::ClosingPrice]);
        let cols: Vec<Column> = l.atom("Amount MA 6/sell").unwrap().columns().into_iter().collect();
        assert_eq!(cols, vec![Column::AmountTraded]);
    }
}
