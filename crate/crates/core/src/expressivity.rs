//! Explicit SimplE embeddings that reproduce an arbitrary ground truth.
//!
//! Two constructions are provided. The grid construction uses `d = |E|·|R|`
//! and gives every (head, relation) pair its own coordinate. The incremental
//! construction uses `d = γ + 1` where `γ` is the number of true triples: one
//! base coordinate makes every score negative, then each true triple gets a
//! private coordinate that lifts its score to exactly `+1`.
//!
//! Both constructions leave the inverse relation vectors at zero, so the
//! SimplE score is half the forward term and has the same sign.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::model::{ModelKind, ModelParams, Slot};

/// A truth value for every one of the `|R|·|E|²` triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    num_entities: usize,
    num_relations: usize,
    truth: Vec<bool>,
}

impl GroundTruth {
    /// All triples false.
    pub fn empty(num_entities: usize, num_relations: usize) -> Self {
        GroundTruth {
            num_entities,
            num_relations,
            truth: vec![false; num_relations * num_entities * num_entities],
        }
    }

    pub fn from_triples(
        num_entities: usize,
        num_relations: usize,
        facts: &[Triple],
    ) -> Result<Self> {
        let mut gt = Self::empty(num_entities, num_relations);
        for t in facts {
            gt.set(t, true)?;
        }
        Ok(gt)
    }

    /// Each triple is true independently with probability `density`.
    pub fn random<R: Rng + ?Sized>(
        num_entities: usize,
        num_relations: usize,
        density: f64,
        rng: &mut R,
    ) -> Self {
        let mut gt = Self::empty(num_entities, num_relations);
        for v in &mut gt.truth {
            *v = rng.gen_bool(density);
        }
        gt
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Number of true triples.
    pub fn gamma(&self) -> usize {
        self.truth.iter().filter(|&&v| v).count()
    }

    fn index(&self, t: &Triple) -> Result<usize> {
        for (what, id, size) in [
            ("entity", t.head, self.num_entities),
            ("relation", t.relation, self.num_relations),
            ("entity", t.tail, self.num_entities),
        ] {
            if id >= size {
                return Err(Error::Index { what, id, size });
            }
        }
        Ok((t.relation * self.num_entities + t.head) * self.num_entities + t.tail)
    }

    fn triple_at(&self, idx: usize) -> Triple {
        let e = self.num_entities;
        Triple::new(idx / e % e, idx / (e * e), idx % e)
    }

    pub fn is_true(&self, t: &Triple) -> bool {
        self.index(t).map(|i| self.truth[i]).unwrap_or(false)
    }

    pub fn set(&mut self, t: &Triple, value: bool) -> Result<()> {
        let i = self.index(t)?;
        self.truth[i] = value;
        Ok(())
    }

    /// Every triple in `(relation, head, tail)` order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        (0..self.truth.len()).map(|i| self.triple_at(i))
    }

    /// True triples in `(relation, head, tail)` order.
    pub fn facts(&self) -> Vec<Triple> {
        self.truth
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| self.triple_at(i))
            .collect()
    }

    /// Parses `|E| |R|` followed by one `h r t` line per true triple.
    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let numbers = |line: usize, l: &str, n: usize| -> Result<Vec<usize>> {
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.len() != n {
                return Err(err(
                    line,
                    format!("expected {n} integers, found {}", parts.len()),
                ));
            }
            parts
                .iter()
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| err(line, format!("`{p}` is not a non-negative integer")))
                })
                .collect()
        };

        let (first_line, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing `|E| |R|` header".into()))?;
        let dims = numbers(first_line, header, 2)?;
        let mut gt = Self::empty(dims[0], dims[1]);
        for (line, l) in lines {
            let ids = numbers(line, l, 3)?;
            gt.set(&Triple::new(ids[0], ids[1], ids[2]), true)
                .map_err(|e| err(line, e.to_string()))?;
        }
        Ok(gt)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.num_entities, self.num_relations)?;
        for t in self.facts() {
            writeln!(f, "{} {} {}", t.head, t.relation, t.tail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    Grid,
    Incremental,
    /// Whichever of the two needs fewer dimensions.
    Min,
}

impl FromStr for Construction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Construction::Grid),
            "incremental" => Ok(Construction::Incremental),
            "min" => Ok(Construction::Min),
            _ => Err(Error::Config(format!(
                "unknown construction `{s}` (expected grid, incremental or min)"
            ))),
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Construction::Grid => "grid",
            Construction::Incremental => "incremental",
            Construction::Min => "min",
        })
    }
}

/// Coordinate `j·|E| + i` belongs to head `e_i` under relation `r_j`; the tail
/// vector of `e_k` stores `±1` there depending on the truth of `(e_i, r_j, e_k)`.
pub fn construct_grid(gt: &GroundTruth) -> ModelParams {
    let (ne, nr) = (gt.num_entities, gt.num_relations);
    let dim = (ne * nr).max(1);
    let mut params = ModelParams::zeros(ModelKind::SimplE, ne, nr, dim);
    for i in 0..ne {
        let h = params.head_row_mut(i);
        for (n, x) in h.iter_mut().enumerate().take(ne * nr) {
            *x = if n % ne == i { 1.0 } else { 0.0 };
        }
    }
    for j in 0..nr {
        let v = params.relation_row_mut(Slot::forward(j));
        for (n, x) in v.iter_mut().enumerate().take(ne * nr) {
            *x = if n / ne == j { 1.0 } else { 0.0 };
        }
    }
    for k in 0..ne {
        for j in 0..nr {
            for i in 0..ne {
                let value = if gt.is_true(&Triple::new(i, j, k)) {
                    1.0
                } else {
                    -1.0
                };
                params.tail_row_mut(k)[j * ne + i] = value;
            }
        }
    }
    params
}

/// Builds the `γ + 1` construction, calling `on_step(n, params)` after the
/// `n`-th true triple has been placed (`n = 0` is the all-negative base).
///
/// The parameters passed to `on_step` already have the final dimension; the
/// coordinates of facts not yet placed are still zero.
pub fn construct_incremental_with<F>(gt: &GroundTruth, mut on_step: F) -> ModelParams
where
    F: FnMut(usize, &ModelParams),
{
    let (ne, nr) = (gt.num_entities, gt.num_relations);
    let facts = gt.facts();
    let dim = facts.len() + 1;
    let mut params = ModelParams::zeros(ModelKind::SimplE, ne, nr, dim);
    for e in 0..ne {
        params.head_row_mut(e)[0] = 1.0;
        params.tail_row_mut(e)[0] = 1.0;
    }
    for r in 0..nr {
        params.relation_row_mut(Slot::forward(r))[0] = -1.0;
    }
    on_step(0, &params);

    for (n, fact) in facts.iter().enumerate() {
        let coord = n + 1;
        let q = params.forward_term(fact);
        params.head_row_mut(fact.head)[coord] = 1.0;
        params.relation_row_mut(Slot::forward(fact.relation))[coord] = 1.0;
        params.tail_row_mut(fact.tail)[coord] = 1.0 - q;
        on_step(coord, &params);
    }
    params
}

pub fn construct_incremental(gt: &GroundTruth) -> ModelParams {
    construct_incremental_with(gt, |_, _| {})
}

/// Returns the construction actually used together with its parameters.
pub fn construct(gt: &GroundTruth, how: Construction) -> (Construction, ModelParams) {
    match how {
        Construction::Grid => (how, construct_grid(gt)),
        Construction::Incremental => (how, construct_incremental(gt)),
        Construction::Min => {
            if gt.num_entities * gt.num_relations <= gt.gamma() + 1 {
                (Construction::Grid, construct_grid(gt))
            } else {
                (Construction::Incremental, construct_incremental(gt))
            }
        }
    }
}

pub fn construct_min(gt: &GroundTruth) -> ModelParams {
    construct(gt, Construction::Min).1
}

/// Checks every triple: true ones must score `> 0`, false ones `< 0`.
/// Returns the pass flag and the violating triples in `(r, h, t)` order.
pub fn verify<S: Scorer + ?Sized>(scorer: &S, gt: &GroundTruth) -> (bool, Vec<Triple>) {
    let violations: Vec<Triple> = (0..gt.truth.len())
        .into_par_iter()
        .filter_map(|i| {
            let t = gt.triple_at(i);
            let s = scorer.score(&t);
            let ok = if gt.truth[i] { s > 0.0 } else { s < 0.0 };
            (!ok).then_some(t)
        })
        .collect();
    (violations.is_empty(), violations)
}
