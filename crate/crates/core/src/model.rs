//! Parameter storage with relation tying, and the scoring functions.
//!
//! Every model keeps four matrices: entity head vectors, entity tail vectors,
//! forward relation vectors and inverse relation vectors. How they are read
//! depends on [`ModelKind`]:
//!
//! | kind        | head   | tail        | rel fwd | rel inv    |
//! |-------------|--------|-------------|---------|------------|
//! | SimplE      | `h_e`  | `t_e`       | `v_r`   | `v_{r^-1}` |
//! | SimplE-ignr | `h_e`  | `t_e`       | `v_r`   | `v_{r^-1}` |
//! | CP          | `h_e`  | `t_e`       | `v_r`   | unused     |
//! | DistMult    | `v_e`  | alias head  | `v_r`   | unused     |
//! | ComplEx     | `re_e` | `im_e`      | `re_r`  | `im_r`     |
//!
//! Relation rows are addressed through a tie table: a tied slot resolves to
//! a canonical storage row and a sign, so tied equalities hold exactly.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::rules::TieSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "simple")]
    SimplE,
    #[serde(rename = "simple-ignr")]
    SimplEIgnr,
    #[serde(rename = "cp")]
    Cp,
    #[serde(rename = "distmult")]
    DistMult,
    #[serde(rename = "complex")]
    ComplEx,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::SimplE,
        ModelKind::SimplEIgnr,
        ModelKind::Cp,
        ModelKind::DistMult,
        ModelKind::ComplEx,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SimplE => "simple",
            ModelKind::SimplEIgnr => "simple-ignr",
            ModelKind::Cp => "cp",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
        }
    }

    /// DistMult keeps one vector per entity.
    pub fn has_tail_matrix(self) -> bool {
        self != ModelKind::DistMult
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "fwd")]
    Forward,
    #[serde(rename = "inv")]
    Inverse,
}

/// One of the two relation vectors of a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub relation: usize,
    pub dir: Direction,
}

impl Slot {
    pub fn forward(relation: usize) -> Self {
        Slot {
            relation,
            dir: Direction::Forward,
        }
    }

    pub fn inverse(relation: usize) -> Self {
        Slot {
            relation,
            dir: Direction::Inverse,
        }
    }
}

/// `target` reads as `sign * canonical`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TieEntry {
    pub target: Slot,
    pub canonical: Slot,
    pub sign: i8,
}

impl TieEntry {
    pub fn new(target: Slot, canonical: Slot, sign: i8) -> Self {
        TieEntry {
            target,
            canonical,
            sign,
        }
    }
}

/// Which entity matrix a trilinear factor reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EntityMatrix {
    Head,
    Tail,
}

/// Address of one storage row of a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKey {
    Head(usize),
    Tail(usize),
    /// Relation storage row: forward rows `0..|R|`, inverse rows `|R|..2|R|`.
    Relation(usize),
}

/// `weight * <a, rel(slot), c>`, one summand of a score.
///
/// Terms sharing a `group` are summed before the loss is applied.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    pub a: (EntityMatrix, usize),
    pub slot: usize,
    pub c: (EntityMatrix, usize),
    pub weight: f64,
    pub group: u8,
}

pub(crate) struct Terms {
    items: [Term; 4],
    len: usize,
}

impl Terms {
    fn new(list: &[Term]) -> Self {
        let mut items = [list[0]; 4];
        items[..list.len()].copy_from_slice(list);
        Terms {
            items,
            len: list.len(),
        }
    }

    pub fn as_slice(&self) -> &[Term] {
        &self.items[..self.len]
    }
}

/// `Σ_j a[j]·b[j]·c[j]` without length checks.
///
/// The outer factors are multiplied first so that swapping `a` and `c`
/// gives a bit-identical result.
#[inline]
pub(crate) fn dot3(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| (x * z) * y).sum()
}

/// The trilinear product `Σ_j a[j]·b[j]·c[j]`.
pub fn trilinear(a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    if b.len() != a.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if c.len() != a.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: c.len(),
        });
    }
    Ok(dot3(a, b, c))
}

/// Embedding parameters for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    head: Vec<f64>,
    tail: Vec<f64>,
    /// `2·|R|` rows: forward vectors, then inverse vectors.
    rel: Vec<f64>,
    ties: Vec<TieEntry>,
    /// Per slot index: (storage slot index, sign).
    resolved: Vec<(usize, f64)>,
}

impl ModelParams {
    pub fn zeros(kind: ModelKind, num_entities: usize, num_relations: usize, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let tail_len = if kind.has_tail_matrix() {
            num_entities * dim
        } else {
            0
        };
        ModelParams {
            kind,
            dim,
            num_entities,
            num_relations,
            head: vec![0.0; num_entities * dim],
            tail: vec![0.0; tail_len],
            rel: vec![0.0; 2 * num_relations * dim],
            ties: Vec::new(),
            resolved: (0..2 * num_relations).map(|s| (s, 1.0)).collect(),
        }
    }

    /// Uniform initialisation on `[-sqrt(6/d), sqrt(6/d)]` from the `init` stream.
    pub fn init(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let mut params = Self::zeros(kind, num_entities, num_relations, dim);
        let bound = (6.0 / dim as f64).sqrt();
        let mut rng = rng::stream(seed, Stream::Init);
        for x in params
            .head
            .iter_mut()
            .chain(params.tail.iter_mut())
            .chain(params.rel.iter_mut())
        {
            *x = rng.gen_range(-bound..=bound);
        }
        params
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_raw(
        kind: ModelKind,
        dim: usize,
        num_entities: usize,
        num_relations: usize,
        head: Vec<f64>,
        tail: Vec<f64>,
        rel_fwd: Vec<f64>,
        rel_inv: Vec<f64>,
    ) -> Self {
        let mut params = Self::zeros(kind, num_entities, num_relations, dim);
        params.head = head;
        params.tail = tail;
        params.rel = rel_fwd;
        params.rel.extend(rel_inv);
        params
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn head_matrix(&self) -> &[f64] {
        &self.head
    }

    /// Tail matrix as stored. Empty for DistMult, whose tail reads alias head.
    pub fn tail_matrix(&self) -> &[f64] {
        &self.tail
    }

    pub fn rel_fwd_matrix(&self) -> &[f64] {
        &self.rel[..self.num_relations * self.dim]
    }

    pub fn rel_inv_matrix(&self) -> &[f64] {
        &self.rel[self.num_relations * self.dim..]
    }

    pub fn head_row(&self, e: usize) -> &[f64] {
        &self.head[e * self.dim..(e + 1) * self.dim]
    }

    pub fn tail_row(&self, e: usize) -> &[f64] {
        if self.kind.has_tail_matrix() {
            &self.tail[e * self.dim..(e + 1) * self.dim]
        } else {
            self.head_row(e)
        }
    }

    pub fn head_row_mut(&mut self, e: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.head[e * d..(e + 1) * d]
    }

    pub fn tail_row_mut(&mut self, e: usize) -> &mut [f64] {
        let d = self.dim;
        if self.kind.has_tail_matrix() {
            &mut self.tail[e * d..(e + 1) * d]
        } else {
            &mut self.head[e * d..(e + 1) * d]
        }
    }

    pub(crate) fn entity_row(&self, m: EntityMatrix, e: usize) -> &[f64] {
        match m {
            EntityMatrix::Head => self.head_row(e),
            EntityMatrix::Tail => self.tail_row(e),
        }
    }

    pub(crate) fn slot_index(&self, slot: Slot) -> usize {
        match slot.dir {
            Direction::Forward => slot.relation,
            Direction::Inverse => self.num_relations + slot.relation,
        }
    }

    pub(crate) fn slot_of_index(&self, idx: usize) -> Slot {
        if idx < self.num_relations {
            Slot::forward(idx)
        } else {
            Slot::inverse(idx - self.num_relations)
        }
    }

    /// Storage row for a slot index, ignoring ties.
    pub(crate) fn storage_row(&self, idx: usize) -> &[f64] {
        &self.rel[idx * self.dim..(idx + 1) * self.dim]
    }

    pub(crate) fn storage_row_mut(&mut self, idx: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.rel[idx * d..(idx + 1) * d]
    }

    /// Storage row an entity factor reads from. DistMult tails alias heads.
    pub(crate) fn entity_key(&self, m: EntityMatrix, e: usize) -> RowKey {
        match m {
            EntityMatrix::Tail if self.kind.has_tail_matrix() => RowKey::Tail(e),
            _ => RowKey::Head(e),
        }
    }

    pub fn row(&self, key: RowKey) -> &[f64] {
        match key {
            RowKey::Head(e) => self.head_row(e),
            RowKey::Tail(e) => &self.tail[e * self.dim..(e + 1) * self.dim],
            RowKey::Relation(i) => self.storage_row(i),
        }
    }

    pub fn row_mut(&mut self, key: RowKey) -> &mut [f64] {
        let d = self.dim;
        match key {
            RowKey::Head(e) => &mut self.head[e * d..(e + 1) * d],
            RowKey::Tail(e) => &mut self.tail[e * d..(e + 1) * d],
            RowKey::Relation(i) => &mut self.rel[i * d..(i + 1) * d],
        }
    }

    /// Canonical storage index and sign for a slot index.
    #[inline]
    pub(crate) fn resolve_index(&self, idx: usize) -> (usize, f64) {
        self.resolved[idx]
    }

    /// Reads a relation vector through the tie table: `(row, sign)`.
    pub fn relation(&self, slot: Slot) -> (&[f64], f64) {
        let (canon, sign) = self.resolved[self.slot_index(slot)];
        (self.storage_row(canon), sign)
    }

    /// Signed copy of a relation vector as seen by the scorers.
    pub fn relation_vector(&self, slot: Slot) -> Vec<f64> {
        let (row, sign) = self.relation(slot);
        row.iter().map(|x| sign * x).collect()
    }

    /// Direct write access to a slot's own storage row. Writes to a tied slot
    /// have no effect on scores; write the canonical slot instead.
    pub fn relation_row_mut(&mut self, slot: Slot) -> &mut [f64] {
        let idx = self.slot_index(slot);
        self.storage_row_mut(idx)
    }

    /// True if the slot reads from another slot's storage.
    pub fn is_tied(&self, slot: Slot) -> bool {
        let idx = self.slot_index(slot);
        self.resolved[idx].0 != idx
    }

    pub fn ties(&self) -> &[TieEntry] {
        &self.ties
    }

    /// Installs a tie specification, replacing any previous ties.
    ///
    /// Tied storage rows are zeroed; they are never read again.
    pub fn apply_ties(&mut self, spec: &TieSpec) -> Result<()> {
        let n_slots = 2 * self.num_relations;
        let mut direct: Vec<Option<(usize, f64)>> = vec![None; n_slots];
        for entry in &spec.entries {
            for s in [entry.target, entry.canonical] {
                if s.relation >= self.num_relations {
                    return Err(Error::Index {
                        what: "relation",
                        id: s.relation,
                        size: self.num_relations,
                    });
                }
            }
            if entry.sign != 1 && entry.sign != -1 {
                return Err(Error::Rule(format!(
                    "tie sign must be ±1, got {}",
                    entry.sign
                )));
            }
            let t = self.slot_index(entry.target);
            if direct[t].is_some() {
                return Err(Error::Rule(format!("slot {:?} tied twice", entry.target)));
            }
            direct[t] = Some((self.slot_index(entry.canonical), f64::from(entry.sign)));
        }

        let mut resolved = Vec::with_capacity(n_slots);
        for start in 0..n_slots {
            let (mut idx, mut sign) = (start, 1.0);
            let mut hops = 0;
            while let Some((next, s)) = direct[idx] {
                idx = next;
                sign *= s;
                hops += 1;
                if hops > n_slots {
                    return Err(Error::Rule("cyclic tie specification".into()));
                }
            }
            resolved.push((idx, sign));
        }

        self.resolved = resolved;
        self.ties = spec.entries.clone();
        for idx in 0..n_slots {
            if self.resolved[idx].0 != idx {
                self.storage_row_mut(idx).fill(0.0);
            }
        }
        Ok(())
    }

    /// Resolved tie for a slot: the canonical slot and the sign.
    pub fn resolved_slot(&self, slot: Slot) -> (Slot, i8) {
        let (canon, sign) = self.resolved[self.slot_index(slot)];
        (self.slot_of_index(canon), sign as i8)
    }

    pub(crate) fn check_triple(&self, t: &Triple) -> Result<()> {
        if t.head >= self.num_entities {
            return Err(Error::Index {
                what: "entity",
                id: t.head,
                size: self.num_entities,
            });
        }
        if t.tail >= self.num_entities {
            return Err(Error::Index {
                what: "entity",
                id: t.tail,
                size: self.num_entities,
            });
        }
        if t.relation >= self.num_relations {
            return Err(Error::Index {
                what: "relation",
                id: t.relation,
                size: self.num_relations,
            });
        }
        Ok(())
    }

    /// `<h_head, v_r, t_tail>`.
    #[inline]
    pub(crate) fn forward_term(&self, t: &Triple) -> f64 {
        let (v, s) = self.relation(Slot::forward(t.relation));
        s * dot3(self.head_row(t.head), v, self.tail_row(t.tail))
    }

    /// `<h_tail, v_{r^-1}, t_head>`.
    #[inline]
    pub(crate) fn inverse_term(&self, t: &Triple) -> f64 {
        let (v, s) = self.relation(Slot::inverse(t.relation));
        s * dot3(self.head_row(t.tail), v, self.tail_row(t.head))
    }

    /// Test-time score for this model's kind. Panics on out-of-range ids;
    /// use [`ModelParams::try_score`] for checked access.
    #[inline]
    pub fn score(&self, t: &Triple) -> f64 {
        match self.kind {
            ModelKind::SimplE => 0.5 * (self.forward_term(t) + self.inverse_term(t)),
            ModelKind::SimplEIgnr | ModelKind::Cp => self.forward_term(t),
            ModelKind::DistMult => {
                let (v, s) = self.relation(Slot::forward(t.relation));
                s * dot3(self.head_row(t.head), v, self.head_row(t.tail))
            }
            ModelKind::ComplEx => complex_terms(self, t),
        }
    }

    pub fn try_score(&self, t: &Triple) -> Result<f64> {
        self.check_triple(t)?;
        Ok(self.score(t))
    }

    /// Trilinear terms making up the training objective for one triple.
    pub(crate) fn training_terms(&self, t: &Triple) -> Terms {
        use EntityMatrix::{Head, Tail};
        let fwd = t.relation;
        let inv = self.num_relations + t.relation;
        let term = |a, slot, c, weight, group| Term {
            a,
            slot,
            c,
            weight,
            group,
        };
        let (h, tl) = (t.head, t.tail);
        match self.kind {
            ModelKind::SimplE => Terms::new(&[
                term((Head, h), fwd, (Tail, tl), 0.5, 0),
                term((Head, tl), inv, (Tail, h), 0.5, 0),
            ]),
            ModelKind::SimplEIgnr => Terms::new(&[
                term((Head, h), fwd, (Tail, tl), 1.0, 0),
                term((Head, tl), inv, (Tail, h), 1.0, 1),
            ]),
            ModelKind::Cp => Terms::new(&[term((Head, h), fwd, (Tail, tl), 1.0, 0)]),
            ModelKind::DistMult => Terms::new(&[term((Head, h), fwd, (Head, tl), 1.0, 0)]),
            ModelKind::ComplEx => Terms::new(&[
                term((Head, h), fwd, (Head, tl), 1.0, 0),
                term((Head, h), inv, (Tail, tl), 1.0, 0),
                term((Tail, h), fwd, (Tail, tl), 1.0, 0),
                term((Tail, h), inv, (Head, tl), -1.0, 0),
            ]),
        }
    }

    /// Value of one training term, including the tie sign.
    #[inline]
    pub(crate) fn term_value(&self, term: &Term) -> f64 {
        let (canon, sign) = self.resolved[term.slot];
        term.weight
            * sign
            * dot3(
                self.entity_row(term.a.0, term.a.1),
                self.storage_row(canon),
                self.entity_row(term.c.0, term.c.1),
            )
    }
}

fn complex_terms(p: &ModelParams, t: &Triple) -> f64 {
    let (re_r, sr) = p.relation(Slot::forward(t.relation));
    let (im_r, si) = p.relation(Slot::inverse(t.relation));
    let (re_h, im_h) = (p.head_row(t.head), p.tail_row(t.head));
    let (re_t, im_t) = (p.head_row(t.tail), p.tail_row(t.tail));
    sr * dot3(re_h, re_r, re_t) + si * dot3(re_h, im_r, im_t) + sr * dot3(im_h, re_r, im_t)
        - si * dot3(im_h, im_r, re_t)
}

/// CP score `<h_head, v_r, t_tail>`.
pub fn score_cp(params: &ModelParams, triple: &Triple) -> Result<f64> {
    params.check_triple(triple)?;
    Ok(params.forward_term(triple))
}

/// SimplE score: mean of the CP scores of `(h, r, t)` and `(t, r^-1, h)`.
pub fn score_simple(params: &ModelParams, triple: &Triple) -> Result<f64> {
    params.check_triple(triple)?;
    Ok(0.5 * (params.forward_term(triple) + params.inverse_term(triple)))
}

/// Test-time SimplE-ignr score: the forward CP term only.
pub fn score_simple_ignr(params: &ModelParams, triple: &Triple) -> Result<f64> {
    score_cp(params, triple)
}

/// DistMult score `<v_head, v_r, v_tail>` using the head matrix for both entities.
pub fn score_distmult(params: &ModelParams, triple: &Triple) -> Result<f64> {
    params.check_triple(triple)?;
    let (v, s) = params.relation(Slot::forward(triple.relation));
    Ok(s * dot3(
        params.head_row(triple.head),
        v,
        params.head_row(triple.tail),
    ))
}

/// ComplEx score, written as the real expansion
/// `<re_h,re_r,re_t> + <re_h,im_r,im_t> + <im_h,re_r,im_t> - <im_h,im_r,re_t>`.
pub fn score_complex(params: &ModelParams, triple: &Triple) -> Result<f64> {
    params.check_triple(triple)?;
    Ok(complex_terms(params, triple))
}

/// The single-vector entity embedding used by the bilinear view:
/// `[h_e; t_e]` for SimplE/CP, `[re_e; im_e]` for ComplEx, `v_e` for DistMult.
pub fn bilinear_entity_vector(params: &ModelParams, e: usize, kind: ModelKind) -> Result<Vec<f64>> {
    if e >= params.num_entities {
        return Err(Error::Index {
            what: "entity",
            id: e,
            size: params.num_entities,
        });
    }
    Ok(match kind {
        ModelKind::DistMult => params.head_row(e).to_vec(),
        ModelKind::SimplE | ModelKind::Cp | ModelKind::ComplEx => {
            let mut v = params.head_row(e).to_vec();
            v.extend_from_slice(params.tail_row(e));
            v
        }
        ModelKind::SimplEIgnr => return Err(Error::UnsupportedKind(kind)),
    })
}

/// The relation matrix `M_r` of the bilinear form `v_h^T M_r v_t`.
///
/// * DistMult: `d×d`, `diag(v_r)`.
/// * ComplEx: `2d×2d` over `[re; im]`, blocks `[[diag re_r, diag im_r], [-diag im_r, diag re_r]]`.
/// * CP: `2d×2d` over `[h; t]`, `diag(v_r)` in the upper-right block only.
/// * SimplE: as CP plus `diag(v_{r^-1})` in the lower-left block.
///
/// The SimplE form sums both CP terms, so it equals twice the averaged score.
pub fn build_bilinear_matrix(
    params: &ModelParams,
    r: usize,
    kind: ModelKind,
) -> Result<DMatrix<f64>> {
    if r >= params.num_relations {
        return Err(Error::Index {
            what: "relation",
            id: r,
            size: params.num_relations,
        });
    }
    let d = params.dim;
    let fwd = params.relation_vector(Slot::forward(r));
    let inv = params.relation_vector(Slot::inverse(r));
    let m = match kind {
        ModelKind::DistMult => DMatrix::from_diagonal(&DVector::from_vec(fwd)),
        ModelKind::Cp | ModelKind::SimplE => {
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            for j in 0..d {
                m[(j, d + j)] = fwd[j];
                if kind == ModelKind::SimplE {
                    m[(d + j, j)] = inv[j];
                }
            }
            m
        }
        ModelKind::ComplEx => {
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            for j in 0..d {
                m[(j, j)] = fwd[j];
                m[(d + j, d + j)] = fwd[j];
                m[(j, d + j)] = inv[j];
                m[(d + j, j)] = -inv[j];
            }
            m
        }
        ModelKind::SimplEIgnr => return Err(Error::UnsupportedKind(kind)),
    };
    Ok(m)
}

/// `v_h^T M v_t`.
pub fn bilinear_score(m: &DMatrix<f64>, v_head: &[f64], v_tail: &[f64]) -> Result<f64> {
    if v_head.len() != m.nrows() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            actual: v_head.len(),
        });
    }
    if v_tail.len() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.ncols(),
            actual: v_tail.len(),
        });
    }
    let h = DVector::from_column_slice(v_head);
    let t = DVector::from_column_slice(v_tail);
    Ok(h.dot(&(m * t)))
}
