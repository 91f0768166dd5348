//! The sixteen real-valued binary logic operations and their derivatives.
//!
//! Each gate is the probabilistic (product t-norm) relaxation of one of the
//! sixteen two-input boolean functions. At the boolean corners every
//! polynomial reproduces its truth table exactly, and gate `id` and gate
//! `15 - id` are complements: `z(id) + z(15 - id) = 1` on the whole square.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GATE_COUNT: usize = 16;

/// Tolerance for gate inputs grazing the unit interval.
pub const INPUT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GateId(u8);

impl GateId {
    pub const FALSE: GateId = GateId(0);
    pub const AND: GateId = GateId(1);
    pub const A_AND_NOT_B: GateId = GateId(2);
    pub const A: GateId = GateId(3);
    pub const NOT_A_AND_B: GateId = GateId(4);
    pub const B: GateId = GateId(5);
    pub const XOR: GateId = GateId(6);
    pub const OR: GateId = GateId(7);
    pub const NOR: GateId = GateId(8);
    pub const XNOR: GateId = GateId(9);
    pub const NOT_B: GateId = GateId(10);
    pub const B_IMPLIES_A: GateId = GateId(11);
    pub const NOT_A: GateId = GateId(12);
    pub const A_IMPLIES_B: GateId = GateId(13);
    pub const NAND: GateId = GateId(14);
    pub const TRUE: GateId = GateId(15);

    pub fn new(id: i64) -> Result<Self> {
        if (0..GATE_COUNT as i64).contains(&id) {
            Ok(GateId(id as u8))
        } else {
            Err(Error::UnknownGateId(id))
        }
    }

    pub fn all() -> impl Iterator<Item = GateId> {
        (0..GATE_COUNT as u8).map(GateId)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The gate computing the real-valued complement of this one.
    pub fn complement(self) -> GateId {
        GateId(15 - self.0)
    }

    pub fn descriptor(self) -> &'static GateDescriptor {
        &GATE_TABLE[self.index()]
    }

    /// Boolean semantics from the truth table.
    pub fn apply_bool(self, a: bool, b: bool) -> bool {
        self.descriptor().truth_corners[(a as usize) << 1 | b as usize]
    }

    /// Looks a gate up by its text-format name (case-insensitive).
    pub fn from_name(name: &str) -> Option<GateId> {
        GATE_TABLE
            .iter()
            .find(|d| d.name.eq_ignore_ascii_case(name) || d.symbol == name)
            .map(|d| d.id)
    }
}

impl TryFrom<u8> for GateId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        GateId::new(v as i64)
    }
}

impl From<GateId> for u8 {
    fn from(g: GateId) -> u8 {
        g.0
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.descriptor().name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateDescriptor {
    pub id: GateId,
    /// ASCII name used by the formula text format.
    pub name: &'static str,
    pub symbol: &'static str,
    pub polynomial: &'static str,
    /// Outputs for inputs (a, b) = 00, 01, 10, 11.
    pub truth_corners: [bool; 4],
}

const fn desc(
    id: u8,
    name: &'static str,
    symbol: &'static str,
    polynomial: &'static str,
    corners: [u8; 4],
) -> GateDescriptor {
    GateDescriptor {
        id: GateId(id),
        name,
        symbol,
        polynomial,
        truth_corners: [corners[0] == 1, corners[1] == 1, corners[2] == 1, corners[3] == 1],
    }
}

static GATE_TABLE: [GateDescriptor; GATE_COUNT] = [
    desc(0, "FALSE", "False", "0", [0, 0, 0, 0]),
    desc(1, "AND", "A ∧ B", "A·B", [0, 0, 0, 1]),
    desc(2, "NIMPLY", "¬(A ⇒ B)", "A − AB", [0, 0, 1, 0]),
    desc(3, "A", "A", "A", [0, 0, 1, 1]),
    desc(4, "NRIMPLY", "¬(A ⇐ B)", "B − AB", [0, 1, 0, 0]),
    desc(5, "B", "B", "B", [0, 1, 0, 1]),
    desc(6, "XOR", "A ⊕ B", "A + B − 2AB", [0, 1, 1, 0]),
    desc(7, "OR", "A ∨ B", "A + B − AB", [0, 1, 1, 1]),
    desc(8, "NOR", "¬(A ∨ B)", "1 − (A + B − AB)", [1, 0, 0, 0]),
    desc(9, "XNOR", "¬(A ⊕ B)", "1 − (A + B − 2AB)", [1, 0, 0, 1]),
    desc(10, "NOTB", "¬B", "1 − B", [1, 0, 1, 0]),
    desc(11, "RIMPLY", "A ⇐ B", "1 − B + AB", [1, 0, 1, 1]),
    desc(12, "NOTA", "¬A", "1 − A", [1, 1, 0, 0]),
    desc(13, "IMPLY", "A ⇒ B", "1 − A + AB", [1, 1, 0, 1]),
    desc(14, "NAND", "¬(A ∧ B)", "1 − AB", [1, 1, 1, 0]),
    desc(15, "TRUE", "True", "1", [1, 1, 1, 1]),
];

/// All sixteen gate descriptors, ordered by id.
pub fn gate_table() -> &'static [GateDescriptor; GATE_COUNT] {
    &GATE_TABLE
}

fn check_unit(a: f64, b: f64) -> Result<()> {
    let ok = |v: f64| (-INPUT_TOLERANCE..=1.0 + INPUT_TOLERANCE).contains(&v);
    if ok(a) && ok(b) {
        Ok(())
    } else {
        Err(Error::InputOutOfRange { a, b })
    }
}

/// Evaluates gate `id` at `(a, b)`. Inputs grazing the interval within
/// [`INPUT_TOLERANCE`] are accepted as-is.
pub fn gate_eval(id: GateId, a: f64, b: f64) -> Result<f64> {
    check_unit(a, b)?;
    Ok(eval_unchecked(id, a, b))
}

/// Partial derivatives `(∂z/∂a, ∂z/∂b)` of gate `id` at `(a, b)`.
pub fn gate_grad(id: GateId, a: f64, b: f64) -> Result<(f64, f64)> {
    check_unit(a, b)?;
    Ok(grad_unchecked(id, a, b))
}

#[inline]
pub(crate) fn eval_unchecked(id: GateId, a: f64, b: f64) -> f64 {
    let ab = a * b;
    match id.0 {
        0 => 0.0,
        1 => ab,
        2 => a - ab,
        3 => a,
        4 => b - ab,
        5 => b,
        6 => a + b - 2.0 * ab,
        7 => a + b - ab,
        8 => 1.0 - (a + b - ab),
        9 => 1.0 - (a + b - 2.0 * ab),
        10 => 1.0 - b,
        11 => 1.0 - b + ab,
        12 => 1.0 - a,
        13 => 1.0 - a + ab,
        14 => 1.0 - ab,
        15 => 1.0,
        _ => unreachable!("GateId is validated on construction"),
    }
}

#[inline]
pub(crate) fn grad_unchecked(id: GateId, a: f64, b: f64) -> (f64, f64) {
    match id.0 {
        0 | 15 => (0.0, 0.0),
        1 => (b, a),
        2 => (1.0 - b, -a),
        3 => (1.0, 0.0),
        4 => (-b, 1.0 - a),
        5 => (0.0, 1.0),
        6 => (1.0 - 2.0 * b, 1.0 - 2.0 * a),
        7 => (1.0 - b, 1.0 - a),
        8 => (b - 1.0, a - 1.0),
        9 => (2.0 * b - 1.0, 2.0 * a - 1.0),
        10 => (0.0, -1.0),
        11 => (b, a - 1.0),
        12 => (-1.0, 0.0),
        13 => (b - 1.0, a),
        14 => (-b, -a),
        _ => unreachable!("GateId is validated on construction"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetName {
    Full16,
    Simple8,
    Custom,
}

/// An ordered, duplicate-free selection of gates available to a logic layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSubset {
    ids: Vec<GateId>,
    name: SubsetName,
}

const SIMPLE8: [u8; 8] = [0, 1, 3, 5, 7, 10, 12, 15];

impl GateSubset {
    pub fn full16() -> Self {
        Self {
            ids: GateId::all().collect(),
            name: SubsetName::Full16,
        }
    }

    /// FALSE, AND, A, B, OR, NOT B, NOT A, TRUE.
    pub fn simple8() -> Self {
        Self {
            ids: SIMPLE8.iter().map(|&i| GateId(i)).collect(),
            name: SubsetName::Simple8,
        }
    }

    pub fn custom(ids: &[i64]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySubset);
        }
        let mut seen = [false; GATE_COUNT];
        let mut out = Vec::with_capacity(ids.len());
        for &raw in ids {
            let id = GateId::new(raw)?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::DuplicateGateId(id.0));
            }
            out.push(id);
        }
        Ok(Self {
            ids: out,
            name: SubsetName::Custom,
        })
    }

    /// Parses `full16`, `simple8`, or a comma-separated id list.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "full16" => Ok(Self::full16()),
            "simple8" => Ok(Self::simple8()),
            other => {
                let ids = other
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<i64>()
                            .map_err(|_| Error::UnknownSubsetName(other.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::custom(&ids)
            }
        }
    }

    pub fn ids(&self) -> &[GateId] {
        &self.ids
    }

    pub fn name(&self) -> SubsetName {
        self.name
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Default for GateSubset {
    fn default() -> Self {
        Self::full16()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        assert_eq!(gate_eval(GateId::XOR, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(gate_eval(GateId::A_IMPLIES_B, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(gate_eval(GateId::FALSE, 0.3, 0.9).unwrap(), 0.0);
        assert_eq!(gate_eval(GateId::AND, 0.5, 0.5).unwrap(), 0.25);
        assert_eq!(gate_table().len(), 16);
        assert_eq!(gate_table()[9].truth_corners, [true, false, false, true]);
        assert_eq!(gate_table()[15].truth_corners, [true; 4]);
    }

    #[test]
    fn gradient_examples() {
        let (da, db) = gate_grad(GateId::XOR, 0.3, 0.7).unwrap();
        assert!((da + 0.4).abs() < 1e-12 && (db - 0.4).abs() < 1e-12);
        assert_eq!(gate_grad(GateId::FALSE, 0.2, 0.6).unwrap(), (0.0, 0.0));
        assert_eq!(gate_grad(GateId::A, 0.2, 0.6).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        assert!(matches!(
            gate_eval(GateId::AND, 1.1, 0.5),
            Err(Error::InputOutOfRange { .. })
        ));
        assert!(gate_eval(GateId::AND, -1e-3, 0.5).is_err());
        assert!(gate_grad(GateId::OR, 0.5, f64::NAN).is_err());
        // grazing values are tolerated
        assert!(gate_eval(GateId::AND, 1.0 + 1e-10, -1e-10).is_ok());
    }

    #[test]
    fn subsets() {
        let s = GateSubset::parse("simple8").unwrap();
        let ids: Vec<u8> = s.ids().iter().map(|&g| g.into()).collect();
        assert_eq!(ids, vec![0, 1, 3, 5, 7, 10, 12, 15]);
        assert_eq!(GateSubset::parse("full16").unwrap().len(), 16);
        assert!(matches!(GateSubset::custom(&[]), Err(Error::EmptySubset)));
        assert!(matches!(
            GateSubset::custom(&[1, 16]),
            Err(Error::UnknownGateId(16))
        ));
        assert!(matches!(
            GateSubset::custom(&[1, 2, 1]),
            Err(Error::DuplicateGateId(1))
        ));
        assert_eq!(GateSubset::parse("6, 9").unwrap().name(), SubsetName::Custom);
    }

    #[test]
    fn names_resolve() {
        for d in gate_table() {
            assert_eq!(GateId::from_name(d.name), Some(d.id));
            assert_eq!(GateId::from_name(&d.name.to_lowercase()), Some(d.id));
        }
        assert_eq!(GateId::from_name("A ⊕ B"), Some(GateId::XOR));
        assert_eq!(GateId::from_name("MAYBE"), None);
    }

    #[test]
    fn boolean_semantics_match_polynomials() {
        for g in GateId::all() {
            for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
                let z = eval_unchecked(g, a as u8 as f64, b as u8 as f64);
                assert_eq!(z == 1.0, g.apply_bool(a, b));
            }
        }
    }
}
