//! Boolean formulas over concepts and their prefix text format.
//!
//! The text format is functional prefix notation over the gate names of
//! [`gate_table`](crate::gates::gate_table) plus unary `NOT`, e.g.
//! `AND(NOT(XOR(c1,c2)),c3)`. Bare identifiers are concept names.

use std::fmt;

use crate::error::{Error, Result};
use crate::gates::GateId;

/// Exhaustive equivalence checks enumerate at most `2^20` assignments.
pub const MAX_EQUIVALENCE_CONCEPTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Formula {
    Concept(usize),
    Not(Box<Formula>),
    Binary(GateId, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn concept(index: usize) -> Self {
        Formula::Concept(index)
    }

    pub fn negate(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn binary(gate: GateId, left: Formula, right: Formula) -> Self {
        Formula::Binary(gate, Box::new(left), Box::new(right))
    }

    pub fn eval(&self, assignment: &[bool]) -> Result<bool> {
        Ok(match self {
            Formula::Concept(i) => *assignment.get(*i).ok_or(Error::IndexOutOfRange {
                index: *i,
                len: assignment.len(),
            })?,
            Formula::Not(f) => !f.eval(assignment)?,
            Formula::Binary(g, l, r) => g.apply_bool(l.eval(assignment)?, r.eval(assignment)?),
        })
    }

    /// Real-valued evaluation with the gate polynomials.
    pub fn eval_fuzzy(&self, values: &[f64]) -> Result<f64> {
        Ok(match self {
            Formula::Concept(i) => *values.get(*i).ok_or(Error::IndexOutOfRange {
                index: *i,
                len: values.len(),
            })?,
            Formula::Not(f) => 1.0 - f.eval_fuzzy(values)?,
            Formula::Binary(g, l, r) => {
                crate::gates::gate_eval(*g, l.eval_fuzzy(values)?, r.eval_fuzzy(values)?)?
            }
        })
    }

    /// Largest concept index referenced.
    pub fn max_concept(&self) -> usize {
        match self {
            Formula::Concept(i) => *i,
            Formula::Not(f) => f.max_concept(),
            Formula::Binary(_, l, r) => l.max_concept().max(r.max_concept()),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Concept(_) => 1,
            Formula::Not(f) => 1 + f.depth(),
            Formula::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Rewrites projection gates (`A`, `B`, `NOTA`, `NOTB`) and double
    /// negations. The result is truth-table equivalent to `self`.
    pub fn simplify(self) -> Formula {
        match self {
            Formula::Concept(_) => self,
            Formula::Not(f) => match f.simplify() {
                Formula::Not(inner) => *inner,
                other => Formula::negate(other),
            },
            Formula::Binary(g, l, r) => {
                let (l, r) = (l.simplify(), r.simplify());
                match g {
                    GateId::A => l,
                    GateId::B => r,
                    GateId::NOT_A => Formula::negate(l).simplify(),
                    GateId::NOT_B => Formula::negate(r).simplify(),
                    _ => Formula::binary(g, l, r),
                }
            }
        }
    }

    /// Renders in the prefix text format; concepts without a name print as
    /// `c<index+1>`.
    pub fn render(&self, names: &[String]) -> String {
        match self {
            Formula::Concept(i) => names
                .get(*i)
                .cloned()
                .unwrap_or_else(|| format!("c{}", i + 1)),
            Formula::Not(f) => format!("NOT({})", f.render(names)),
            Formula::Binary(g, l, r) => format!("{g}({},{})", l.render(names), r.render(names)),
        }
    }

    /// Parses the prefix format, resolving identifiers against `names`.
    pub fn parse(text: &str, names: &[String]) -> Result<Formula> {
        Self::parse_with(text, &|ident| names.iter().position(|n| n == ident))
    }

    pub fn parse_with(text: &str, resolve: &dyn Fn(&str) -> Option<usize>) -> Result<Formula> {
        let mut p = Parser {
            src: text,
            pos: 0,
            resolve,
        };
        let f = p.expr()?;
        p.skip_ws();
        if p.pos != text.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(f)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    resolve: &'a dyn Fn(&str) -> Option<usize>,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::FormulaSyntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<&str> {
        self.skip_ws();
        let start = self.pos;
        let len = self.src[start..]
            .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-' || c == '.'))
            .unwrap_or(self.src.len() - start);
        if len == 0 {
            return Err(self.error("expected identifier"));
        }
        self.pos += len;
        Ok(&self.src[start..start + len])
    }

    fn expr(&mut self) -> Result<Formula> {
        let start = self.pos;
        let ident = self.ident()?.to_string();
        if self.peek() != Some('(') {
            return (self.resolve)(&ident).map(Formula::Concept).ok_or(Error::FormulaSyntax {
                offset: start,
                message: format!("unknown concept `{ident}`"),
            });
        }
        self.expect('(')?;
        let first = self.expr()?;
        if ident.eq_ignore_ascii_case("NOT") {
            self.expect(')')?;
            return Ok(Formula::negate(first));
        }
        let gate = GateId::from_name(&ident).ok_or(Error::FormulaSyntax {
            offset: start,
            message: format!("unknown connective `{ident}`"),
        })?;
        self.expect(',')?;
        let second = self.expr()?;
        self.expect(')')?;
        Ok(Formula::binary(gate, first, second))
    }
}

fn assignment(bits: u32, k: usize) -> Vec<bool> {
    (0..k).map(|j| (bits >> (k - 1 - j)) & 1 == 1).collect()
}

/// All `2^k` assignments in counting order, first concept most significant.
pub fn all_assignments(k: usize) -> Result<impl Iterator<Item = Vec<bool>>> {
    if k > MAX_EQUIVALENCE_CONCEPTS {
        return Err(Error::TooManyConcepts(k));
    }
    Ok((0..1u32 << k).map(move |bits| assignment(bits, k)))
}

/// True iff both formulas agree on every assignment of `k` concepts.
pub fn formula_equivalent(f1: &Formula, f2: &Formula, k: usize) -> Result<bool> {
    for a in all_assignments(k)? {
        if f1.eval(&a)? != f2.eval(&a)? {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn satisfying_assignments(f: &Formula, k: usize) -> Result<Vec<Vec<bool>>> {
    let mut out = Vec::new();
    for a in all_assignments(k)? {
        if f.eval(&a)? {
            out.push(a);
        }
    }
    Ok(out)
}

/// A named class defined by a formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicClassSpec {
    pub class_name: String,
    pub formula: Formula,
}

/// A parsed rules file: concept names plus one spec per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub concept_names: Vec<String>,
    pub specs: Vec<LogicClassSpec>,
}

impl RuleSet {
    /// Parses a rules file.
    ///
    /// ```text
    /// # comment
    /// @concepts sphere, cone, cube
    /// xor_class: XOR(sphere, cone)
    /// ```
    ///
    /// Without an `@concepts` line, identifiers must be `c1`, `c2`, ... and
    /// the concept count is the largest suffix used.
    pub fn parse(text: &str) -> Result<RuleSet> {
        let mut names: Option<Vec<String>> = None;
        let mut raw = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@concepts") {
                names = Some(
                    rest.split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect(),
                );
                continue;
            }
            let (name, body) = line.split_once(':').ok_or(Error::FormulaSyntax {
                offset: 0,
                message: format!("line {}: expected `class_name: FORMULA`", lineno + 1),
            })?;
            raw.push((name.trim().to_string(), body.trim().to_string()));
        }
        let resolve_numbered = |ident: &str| -> Option<usize> {
            ident
                .strip_prefix('c')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| n - 1)
        };
        let mut specs = Vec::with_capacity(raw.len());
        for (class_name, body) in raw {
            let formula = match &names {
                Some(n) => Formula::parse(&body, n)?,
                None => Formula::parse_with(&body, &resolve_numbered)?,
            };
            specs.push(LogicClassSpec {
                class_name,
                formula,
            });
        }
        let concept_names = names.unwrap_or_else(|| {
            let k = specs.iter().map(|s| s.formula.max_concept() + 1).max().unwrap_or(0);
            default_concept_names(k)
        });
        Ok(RuleSet {
            concept_names,
            specs,
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!("@concepts {}\n", self.concept_names.join(", "));
        for s in &self.specs {
            out.push_str(&format!(
                "{}: {}\n",
                s.class_name,
                s.formula.render(&self.concept_names)
            ));
        }
        out
    }
}

/// `c1`, `c2`, ..., `ck`.
pub fn default_concept_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("c{i}")).collect()
}

/// The three CLEVR-Logic class rules over `c1, c2, c3`.
pub fn clevr_logic_rules() -> RuleSet {
    RuleSet::parse(
        "xor: XOR(c1,c2)\n\
         xnor_and_c3: AND(NOT(XOR(c1,c2)),c3)\n\
         xnor_and_not_c3: AND(NOT(XOR(c1,c2)),NOT(c3))\n",
    )
    .expect("built-in rules parse")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(i: usize) -> Formula {
        Formula::concept(i)
    }

    #[test]
    fn eval_examples() {
        let xor = Formula::binary(GateId::XOR, c(0), c(1));
        assert!(!xor.eval(&[true, true]).unwrap());
        assert!(Formula::negate(c(0)).eval(&[false, true]).unwrap());
        let rule = Formula::binary(GateId::AND, Formula::negate(xor.clone()), c(2));
        assert!(rule.eval(&[true, true, true]).unwrap());
        assert!(matches!(
            rule.eval(&[true, true]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn equivalence_examples() {
        let xor = Formula::binary(GateId::XOR, c(0), c(1));
        let dnf = Formula::binary(
            GateId::OR,
            Formula::binary(GateId::AND, c(0), Formula::negate(c(1))),
            Formula::binary(GateId::AND, Formula::negate(c(0)), c(1)),
        );
        assert!(formula_equivalent(&xor, &dnf, 2).unwrap());
        assert!(!formula_equivalent(&c(0), &c(1), 2).unwrap());
        assert!(formula_equivalent(&dnf, &dnf, 2).unwrap());
        assert!(matches!(
            formula_equivalent(&xor, &xor, 21),
            Err(Error::TooManyConcepts(21))
        ));
    }

    #[test]
    fn parse_and_render() {
        let names = default_concept_names(3);
        let f = Formula::parse("AND(NOT(XOR(c1, c2)), c3)", &names).unwrap();
        assert_eq!(f.render(&names), "AND(NOT(XOR(c1,c2)),c3)");
        assert_eq!(Formula::parse(&f.render(&names), &names).unwrap(), f);
        assert!(Formula::parse("XOR(c1)", &names).is_err());
        assert!(Formula::parse("XOR(c1,c9)", &names).is_err());
        assert!(Formula::parse("FOO(c1,c2)", &names).is_err());
        assert!(Formula::parse("c1 c2", &names).is_err());
        // every connective name parses
        for d in crate::gates::gate_table() {
            let text = format!("{}(c1,c2)", d.name);
            assert_eq!(
                Formula::parse(&text, &names).unwrap(),
                Formula::binary(d.id, c(0), c(1))
            );
        }
    }

    #[test]
    fn simplify_preserves_semantics() {
        let f = Formula::binary(
            GateId::NOT_A,
            Formula::binary(GateId::B, c(2), Formula::negate(Formula::negate(c(0)))),
            c(1),
        );
        let s = f.clone().simplify();
        assert_eq!(s, Formula::negate(c(0)));
        assert!(formula_equivalent(&f, &s, 3).unwrap());
    }

    #[test]
    fn rules_file() {
        let rules = clevr_logic_rules();
        assert_eq!(rules.concept_names, default_concept_names(3));
        assert_eq!(rules.specs.len(), 3);
        let sizes: Vec<usize> = rules
            .specs
            .iter()
            .map(|s| satisfying_assignments(&s.formula, 3).unwrap().len())
            .collect();
        assert_eq!(sizes, vec![4, 2, 2]);
        assert_eq!(RuleSet::parse(&rules.render()).unwrap(), rules);

        let named = RuleSet::parse("@concepts sphere cone\nx: XOR(sphere,cone)\n").unwrap();
        assert_eq!(named.concept_names, vec!["sphere", "cone"]);
        assert!(RuleSet::parse("x XOR(c1,c2)").is_err());
    }
}
