//! Entity-ranking evaluation: raw and filtered MRR, hit@k.
//!
//! For a test triple `(h, r, t)` every entity is tried in the head slot (and
//! separately the tail slot). The rank of the true triple is
//! `1 + #{strictly higher} + ½·#{other candidates with an equal score}`,
//! so a constant scorer lands in the middle instead of at rank 1. Filtered
//! ranking drops candidates that are known facts, except the test triple.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Triple, TripleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// Anything that scores triples over a fixed entity set.
pub trait Scorer: Sync {
    fn num_entities(&self) -> usize;
    fn score(&self, triple: &Triple) -> f64;
}

impl Scorer for ModelParams {
    fn num_entities(&self) -> usize {
        ModelParams::num_entities(self)
    }

    fn score(&self, triple: &Triple) -> f64 {
        ModelParams::score(self, triple)
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F> {
    pub num_entities: usize,
    pub f: F,
}

impl<F: Fn(&Triple) -> f64 + Sync> Scorer for FnScorer<F> {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn score(&self, triple: &Triple) -> f64 {
        (self.f)(triple)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntitySlot {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMode {
    Raw,
    Filtered,
}

fn replace(triple: &Triple, slot: EntitySlot, e: usize) -> Triple {
    match slot {
        EntitySlot::Head => Triple::new(e, triple.relation, triple.tail),
        EntitySlot::Tail => Triple::new(triple.head, triple.relation, e),
    }
}

/// Raw and filtered rank of `triple` for one slot, from a single scoring pass.
fn rank_both<S: Scorer + ?Sized>(
    scorer: &S,
    triple: &Triple,
    slot: EntitySlot,
    filter: &TripleSet,
) -> (f64, f64) {
    let target = match slot {
        EntitySlot::Head => triple.head,
        EntitySlot::Tail => triple.tail,
    };
    let target_score = scorer.score(triple);
    let (mut raw_gt, mut raw_eq, mut f_gt, mut f_eq) = (0usize, 0usize, 0usize, 0usize);
    for e in 0..scorer.num_entities() {
        if e == target {
            continue;
        }
        let candidate = replace(triple, slot, e);
        let s = scorer.score(&candidate);
        let (gt, eq) = (s > target_score, s == target_score);
        if !(gt || eq) {
            continue;
        }
        raw_gt += gt as usize;
        raw_eq += eq as usize;
        if !filter.contains(&candidate) {
            f_gt += gt as usize;
            f_eq += eq as usize;
        }
    }
    let rank = |gt: usize, eq: usize| 1.0 + gt as f64 + 0.5 * eq as f64;
    (rank(raw_gt, raw_eq), rank(f_gt, f_eq))
}

/// Rank of `triple` among all replacements of one entity slot.
pub fn rank_entity<S: Scorer + ?Sized>(
    scorer: &S,
    triple: &Triple,
    slot: EntitySlot,
    mode: RankMode,
    filter: &TripleSet,
) -> f64 {
    let (raw, filtered) = rank_both(scorer, triple, slot, filter);
    match mode {
        RankMode::Raw => raw,
        RankMode::Filtered => filtered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankPair {
    pub head: f64,
    pub tail: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripleRanks {
    pub triple: Triple,
    pub raw: RankPair,
    pub filtered: RankPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mrr_raw: f64,
    pub mrr_filtered: f64,
    /// Filtered hit@k over head and tail ranking events.
    pub hits: BTreeMap<usize, f64>,
    pub n_test: usize,
    pub per_triple: Vec<TripleRanks>,
}

/// Order-independent sum: adds values in sorted order.
fn canonical_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// Ranks every test triple in both slots and both modes.
///
/// Triples are ranked in parallel on the current rayon pool; aggregation is
/// order independent, so reports are identical for any thread count or any
/// permutation of `test`.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    test: &[Triple],
    filter: &TripleSet,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("cannot evaluate an empty test set".into()));
    }
    let per_triple: Vec<TripleRanks> = test
        .par_iter()
        .map(|t| {
            let (hr, hf) = rank_both(scorer, t, EntitySlot::Head, filter);
            let (tr, tf) = rank_both(scorer, t, EntitySlot::Tail, filter);
            TripleRanks {
                triple: *t,
                raw: RankPair { head: hr, tail: tr },
                filtered: RankPair { head: hf, tail: tf },
            }
        })
        .collect();
    Ok(summarize(per_triple))
}

/// Builds a report from per-triple ranks.
pub fn summarize(per_triple: Vec<TripleRanks>) -> EvalReport {
    let events = 2.0 * per_triple.len() as f64;
    let reciprocal = |pick: fn(&TripleRanks) -> RankPair| {
        canonical_sum(
            per_triple
                .iter()
                .flat_map(|r| {
                    let p = pick(r);
                    [1.0 / p.head, 1.0 / p.tail]
                })
                .collect(),
        ) / events
    };
    let mrr_raw = reciprocal(|r| r.raw);
    let mrr_filtered = reciprocal(|r| r.filtered);
    let hits = HITS_AT
        .iter()
        .map(|&k| {
            let count = per_triple
                .iter()
                .map(|r| {
                    (r.filtered.head <= k as f64) as usize + (r.filtered.tail <= k as f64) as usize
                })
                .sum::<usize>();
            (k, count as f64 / events)
        })
        .collect();
    EvalReport {
        mrr_raw,
        mrr_filtered,
        hits,
        n_test: per_triple.len(),
        per_triple,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let hits: serde_json::Map<String, serde_json::Value> = self
            .hits
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::from(*v)))
            .collect();
        serde_json::json!({
            "mrr_raw": self.mrr_raw,
            "mrr_filtered": self.mrr_filtered,
            "hits": hits,
            "n_test": self.n_test,
        })
    }

    /// Writes `head,relation,tail,rank_head_raw,rank_tail_raw,rank_head_filtered,rank_tail_filtered`.
    ///
    /// Entities and relations are written by name when a vocabulary is given.
    pub fn write_per_triple_csv(&self, path: &Path, vocab: Option<&Vocabulary>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            out,
            "head,relation,tail,rank_head_raw,rank_tail_raw,rank_head_filtered,rank_tail_filtered"
        )
        .map_err(io)?;
        for r in &self.per_triple {
            let t = r.triple;
            let (h, rel, tl) = match vocab {
                Some(v) => (
                    csv_field(v.entity_name(t.head).unwrap_or("?")),
                    csv_field(v.relation_name(t.relation).unwrap_or("?")),
                    csv_field(v.entity_name(t.tail).unwrap_or("?")),
                ),
                None => (
                    t.head.to_string(),
                    t.relation.to_string(),
                    t.tail.to_string(),
                ),
            };
            writeln!(
                out,
                "{h},{rel},{tl},{},{},{},{}",
                r.raw.head, r.raw.tail, r.filtered.head, r.filtered.tail
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>10}", "triples", self.n_test)?;
        writeln!(f, "{:<14}{:>10.4}", "MRR (filter)", self.mrr_filtered)?;
        writeln!(f, "{:<14}{:>10.4}", "MRR (raw)", self.mrr_raw)?;
        for (k, v) in &self.hits {
            writeln!(f, "{:<14}{:>10.4}", format!("hit@{k}"), v)?;
        }
        Ok(())
    }
}
