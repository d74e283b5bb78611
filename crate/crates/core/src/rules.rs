//! Background-knowledge rules and their translation into parameter ties.
//!
//! Rule files hold one rule per line:
//!
//! ```text
//! # comment
//! symmetric     R
//! antisymmetric R
//! inverse       R1 R2
//! equivalence   R1 R2
//! ```

use std::fmt;
use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Direction, Slot, TieEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Symmetric,
    Antisymmetric,
    Inverse,
    Equivalence,
}

impl RuleKind {
    fn keyword(self) -> &'static str {
        match self {
            RuleKind::Symmetric => "symmetric",
            RuleKind::Antisymmetric => "antisymmetric",
            RuleKind::Inverse => "inverse",
            RuleKind::Equivalence => "equivalence",
        }
    }

    fn arity(self) -> usize {
        match self {
            RuleKind::Symmetric | RuleKind::Antisymmetric => 1,
            RuleKind::Inverse | RuleKind::Equivalence => 2,
        }
    }
}

/// A rule over relation names. Unary rules have `second == None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub kind: RuleKind,
    pub first: String,
    pub second: Option<String>,
}

impl Rule {
    pub fn symmetric(r: &str) -> Self {
        Rule {
            kind: RuleKind::Symmetric,
            first: r.into(),
            second: None,
        }
    }

    pub fn antisymmetric(r: &str) -> Self {
        Rule {
            kind: RuleKind::Antisymmetric,
            first: r.into(),
            second: None,
        }
    }

    pub fn inverse(r1: &str, r2: &str) -> Self {
        Rule {
            kind: RuleKind::Inverse,
            first: r1.into(),
            second: Some(r2.into()),
        }
    }

    pub fn equivalence(r1: &str, r2: &str) -> Self {
        Rule {
            kind: RuleKind::Equivalence,
            first: r1.into(),
            second: Some(r2.into()),
        }
    }

    /// Resolves relation names to ids.
    pub fn bind(&self, vocab: &Vocabulary) -> Result<BoundRule> {
        let lookup = |name: &str| {
            vocab.relation_id(name).ok_or_else(|| Error::UnknownName {
                kind: "relation",
                name: name.to_owned(),
            })
        };
        let first = lookup(&self.first)?;
        let second = match &self.second {
            Some(s) => lookup(s)?,
            None => first,
        };
        Ok(BoundRule {
            kind: self.kind,
            first,
            second,
        })
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind.keyword(), self.first)?;
        if let Some(s) = &self.second {
            write!(f, " {s}")?;
        }
        Ok(())
    }
}

/// A rule with relation ids. For unary rules `first == second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundRule {
    pub kind: RuleKind,
    pub first: usize,
    pub second: usize,
}

pub fn parse_rules_str(text: &str, path: &Path) -> Result<Vec<Rule>> {
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let mut words = line.split_whitespace();
        let keyword = words.next().unwrap_or_default();
        let args: Vec<&str> = words.collect();
        let kind = match keyword {
            "symmetric" => RuleKind::Symmetric,
            "antisymmetric" => RuleKind::Antisymmetric,
            "inverse" => RuleKind::Inverse,
            "equivalence" => RuleKind::Equivalence,
            other => return Err(err(format!("unknown rule keyword `{other}`"))),
        };
        if args.len() != kind.arity() {
            return Err(err(format!(
                "`{keyword}` takes {} relation(s), found {}",
                kind.arity(),
                args.len()
            )));
        }
        rules.push(Rule {
            kind,
            first: args[0].to_owned(),
            second: args.get(1).map(|s| (*s).to_owned()),
        });
    }
    Ok(rules)
}

pub fn parse_rules(path: &Path) -> Result<Vec<Rule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rules_str(&text, path)
}

/// Parameter ties: each entry makes `target` read as `sign * canonical`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TieSpec {
    pub entries: Vec<TieEntry>,
}

impl TieSpec {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn fwd(relation: usize) -> Slot {
    Slot {
        relation,
        dir: Direction::Forward,
    }
}

fn inv(relation: usize) -> Slot {
    Slot {
        relation,
        dir: Direction::Inverse,
    }
}

/// Translates rules into ties on the relation vectors.
///
/// * symmetric r: `v_inv(r) = v(r)`
/// * antisymmetric r: `v_inv(r) = -v(r)`
/// * inverse r1 r2: `v_inv(r1) = v(r2)` and `v_inv(r2) = v(r1)`
/// * equivalence r1 r2: `v(r2) = v(r1)` and `v_inv(r2) = v_inv(r1)`
///
/// Two rules that tie the same slot differently are a conflict, as is any
/// set of ties that forms a cycle.
pub fn ties_from_rules(rules: &[Rule], vocab: &Vocabulary) -> Result<TieSpec> {
    let mut entries: Vec<(TieEntry, usize)> = Vec::new();
    for (idx, rule) in rules.iter().enumerate() {
        let b = rule.bind(vocab)?;
        let new: Vec<TieEntry> = match b.kind {
            RuleKind::Symmetric => vec![TieEntry::new(inv(b.first), fwd(b.first), 1)],
            RuleKind::Antisymmetric => vec![TieEntry::new(inv(b.first), fwd(b.first), -1)],
            RuleKind::Inverse => vec![
                TieEntry::new(inv(b.first), fwd(b.second), 1),
                TieEntry::new(inv(b.second), fwd(b.first), 1),
            ],
            RuleKind::Equivalence if b.first == b.second => vec![],
            RuleKind::Equivalence => vec![
                TieEntry::new(fwd(b.second), fwd(b.first), 1),
                TieEntry::new(inv(b.second), inv(b.first), 1),
            ],
        };
        for entry in new {
            match entries.iter().find(|(e, _)| e.target == entry.target) {
                Some((existing, _)) if *existing == entry => {}
                Some((_, other)) => {
                    return Err(Error::RuleConflict {
                        first: rules[*other].to_string(),
                        second: rule.to_string(),
                    })
                }
                None => entries.push((entry, idx)),
            }
        }
    }

    // Reject cycles: every chain of targets must end at an untied slot.
    for (start, rule_idx) in &entries {
        let mut current = start.canonical;
        let mut hops = 0;
        while let Some((next, _)) = entries.iter().find(|(e, _)| e.target == current) {
            current = next.canonical;
            hops += 1;
            if hops > entries.len() {
                return Err(Error::Rule(format!(
                    "cyclic ties involving `{}`",
                    rules[*rule_idx]
                )));
            }
        }
    }

    Ok(TieSpec {
        entries: entries.into_iter().map(|(e, _)| e).collect(),
    })
}
