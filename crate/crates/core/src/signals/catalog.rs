//! Loading of the shipped factor table and atom catalog.
//!
//! Both files are `|`-separated with `#` comment lines. The factor table:
//! `id|full_name|side|short_code`. The atom catalog:
//! `factor|side|rule|comparator|threshold|grid|declared_day_t_fields`, where the
//! grid is comma-separated and `-` stands for no declared fields.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use super::{AtomicSignal, Comparator, FactorDef, FactorSide, RuleKind, Side};
use crate::dsl::{parse, ParseError, Symbol};

pub const FACTOR_TABLE: &str = include_str!("../../data/factors.psv");
pub const ATOM_CATALOG: &str = include_str!("../../data/atoms.psv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("line {line}: expected {expected} fields, got {got}")]
    FieldCount { line: usize, expected: usize, got: usize },
    #[error("line {line}: invalid {field} `{value}`")]
    InvalidField { line: usize, field: &'static str, value: String },
    #[error("line {line}: short code does not parse: {source}")]
    ShortCode { line: usize, source: ParseError },
    #[error("line {line}: unknown factor `{factor}`")]
    UnknownFactor { line: usize, factor: String },
    #[error("line {line}: duplicate entry `{id}`")]
    Duplicate { line: usize, id: String },
    #[error("line {line}: {side} atom on a factor restricted to the other side")]
    SideMismatch { line: usize, side: Side },
    #[error("line {line}: rule {rule} requires OPEN among the declared fields")]
    UndeclaredOpen { line: usize, rule: RuleKind },
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n, l.split('|').map(str::trim).collect()))
}

fn fields(line: usize, parts: &[&str], expected: usize) -> Result<(), CatalogError> {
    if parts.len() == expected {
        Ok(())
    } else {
        Err(CatalogError::FieldCount { line, expected, got: parts.len() })
    }
}

fn invalid(line: usize, field: &'static str, value: &str) -> CatalogError {
    CatalogError::InvalidField { line, field, value: value.to_string() }
}

/// Parses a factor table.
pub fn parse_factors(text: &str) -> Result<Vec<Arc<FactorDef>>, CatalogError> {
    let mut out: Vec<Arc<FactorDef>> = Vec::new();
    for (line, parts) in records(text) {
        fields(line, &parts, 4)?;
        let side = match parts[2] {
            "buy" => FactorSide::Buy,
            "sell" => FactorSide::Sell,
            "both" => FactorSide::Both,
            other => return Err(invalid(line, "side", other)),
        };
        let expr = parse(parts[3]).map_err(|source| CatalogError::ShortCode { line, source })?;
        if out.iter().any(|f| f.id == parts[0]) {
            return Err(CatalogError::Duplicate { line, id: parts[0].to_string() });
        }
        out.push(Arc::new(FactorDef {
            id: parts[0].to_string(),
            full_name: parts[1].to_string(),
            short_code: parts[3].to_string(),
            side,
            expr,
        }));
    }
    Ok(out)
}

/// Parses an atom catalog against a factor list.
pub fn parse_atoms(text: &str, factors: &[Arc<FactorDef>]) -> Result<Vec<AtomicSignal>, CatalogError> {
    let mut out: Vec<AtomicSignal> = Vec::new();
    for (line, parts) in records(text) {
        fields(line, &parts, 7)?;
        let factor = factors
            .iter()
            .find(|f| f.id == parts[0])
            .cloned()
            .ok_or_else(|| CatalogError::UnknownFactor { line, factor: parts[0].to_string() })?;
        let side = match parts[1] {
            "buy" => Side::Buy,
            "sell" => Side::Sell,
            other => return Err(invalid(line, "side", other)),
        };
        if !factor.side.allows(side) {
            return Err(CatalogError::SideMismatch { line, side });
        }
        let rule = match parts[2] {
            "value" => RuleKind::Value,
            "open_vs_level" => RuleKind::OpenVsLevel,
            "level_vs_prev_close" => RuleKind::LevelVsPrevClose,
            other => return Err(invalid(line, "rule", other)),
        };
        let comparator = match parts[3] {
            "gt" => Comparator::Greater,
            "lt" => Comparator::Less,
            other => return Err(invalid(line, "comparator", other)),
        };
        let number = |s: &str, field| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| invalid(line, field, s));
        let threshold = number(parts[4], "threshold")?;
        let grid = parts[5].split(',').map(|s| number(s.trim(), "grid")).collect::<Result<Vec<_>, _>>()?;
        let mut declared = Vec::new();
        if parts[6] != "-" {
            for name in parts[6].split(',') {
                let s = Symbol::from_name(name.trim()).filter(|s| s.column().is_some());
                declared.push(s.ok_or_else(|| invalid(line, "declared field", name))?);
            }
        }
        if rule == RuleKind::OpenVsLevel && !declared.contains(&Symbol::Open) {
            return Err(CatalogError::UndeclaredOpen { line, rule });
        }
        let atom = AtomicSignal { factor, side, rule, comparator, threshold, grid, declared };
        if out.iter().any(|a| a.id() == atom.id()) {
            return Err(CatalogError::Duplicate { line, id: atom.id() });
        }
        out.push(atom);
    }
    Ok(out)
}
