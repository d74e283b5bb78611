//! Negative sampling, the regularised logistic loss, analytic gradients,
//! AdaGrad, and the mini-batch training loop with validation-based model
//! selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Triple};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{ModelKind, ModelParams, RowKey};
use crate::rng::{self, Stream};
use crate::rules::TieSpec;

/// Hyperparameters. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub neg_ratio: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            lambda: 0.03,
            batch_size: 100,
            neg_ratio: 1,
            max_epochs: 1000,
            eval_every: 50,
            seed: 0,
            model_kind: ModelKind::SimplE,
            dim: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.neg_ratio == 0 {
            return fail("neg_ratio must be positive");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        Ok(())
    }
}

/// Triples with `+1` / `-1` labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelledBatch {
    pub triples: Vec<Triple>,
    pub labels: Vec<i8>,
}

impl LabelledBatch {
    pub fn single(triple: Triple, label: i8) -> Self {
        LabelledBatch {
            triples: vec![triple],
            labels: vec![label],
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = (&Triple, f64)> {
        self.triples
            .iter()
            .zip(self.labels.iter().map(|&l| f64::from(l)))
    }
}

/// Replaces the head or the tail (each with probability ½) by a uniformly
/// drawn different entity. Accidentally-true corruptions are not filtered.
pub fn corrupt<R: Rng + ?Sized>(
    positive: &Triple,
    num_entities: usize,
    rng: &mut R,
) -> Result<Triple> {
    if num_entities < 2 {
        return Err(Error::TooFewEntities);
    }
    let other = |rng: &mut R, current: usize| {
        let e = rng.gen_range(0..num_entities - 1);
        if e >= current {
            e + 1
        } else {
            e
        }
    };
    let mut t = *positive;
    if rng.gen::<bool>() {
        t.head = other(rng, t.head);
    } else {
        t.tail = other(rng, t.tail);
    }
    Ok(t)
}

/// Each positive followed by `neg_ratio` corruptions of it.
pub fn make_batch<R: Rng + ?Sized>(
    positives: &[Triple],
    neg_ratio: usize,
    rng: &mut R,
    num_entities: usize,
) -> Result<LabelledBatch> {
    let mut batch = LabelledBatch {
        triples: Vec::with_capacity(positives.len() * (1 + neg_ratio)),
        labels: Vec::with_capacity(positives.len() * (1 + neg_ratio)),
    };
    for p in positives {
        batch.triples.push(*p);
        batch.labels.push(1);
        for _ in 0..neg_ratio {
            batch.triples.push(corrupt(p, num_entities, rng)?);
            batch.labels.push(-1);
        }
    }
    Ok(batch)
}

/// `log(1 + e^x)`, returning `x` itself once `x > 30`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Canonical storage rows read by the batch. These are the rows the L2
/// penalty applies to, once each.
pub fn touched_rows(params: &ModelParams, batch: &LabelledBatch) -> BTreeSet<RowKey> {
    let mut rows = BTreeSet::new();
    for t in &batch.triples {
        for term in params.training_terms(t).as_slice() {
            rows.insert(params.entity_key(term.a.0, term.a.1));
            rows.insert(params.entity_key(term.c.0, term.c.1));
            rows.insert(RowKey::Relation(params.resolve_index(term.slot).0));
        }
    }
    rows
}

fn l2_penalty(params: &ModelParams, rows: &BTreeSet<RowKey>) -> f64 {
    rows.iter()
        .map(|&k| params.row(k).iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// `Σ softplus(-l·φ) + λ·Σ‖row‖²` over the rows the batch touches.
///
/// SimplE-ignr pays one softplus per CP term, so both the forward and the
/// inverse score are pushed in the direction of the label.
pub fn batch_loss(params: &ModelParams, batch: &LabelledBatch, lambda: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .map(|(t, l)| match params.kind() {
            ModelKind::SimplEIgnr => {
                softplus(-l * params.forward_term(t)) + softplus(-l * params.inverse_term(t))
            }
            _ => softplus(-l * params.score(t)),
        })
        .sum();
    data + lambda * l2_penalty(params, &touched_rows(params, batch))
}

/// Sparse gradients keyed by canonical storage row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub rows: BTreeMap<RowKey, Vec<f64>>,
}

impl Gradients {
    fn row(&mut self, key: RowKey, dim: usize) -> &mut Vec<f64> {
        self.rows.entry(key).or_insert_with(|| vec![0.0; dim])
    }

    pub fn get(&self, key: RowKey) -> Option<&[f64]> {
        self.rows.get(&key).map(Vec::as_slice)
    }
}

/// Per-triple loss contribution and `∂loss/∂group-score` per term group.
fn triple_coefficients(params: &ModelParams, t: &Triple, label: f64) -> (f64, [f64; 2]) {
    let mut group_score = [0.0f64; 2];
    let mut groups = 1;
    for term in params.training_terms(t).as_slice() {
        group_score[term.group as usize] += params.term_value(term);
        groups = groups.max(term.group as usize + 1);
    }
    let mut loss = 0.0;
    let mut coef = [0.0; 2];
    for g in 0..groups {
        loss += softplus(-label * group_score[g]);
        coef[g] = -label * sigmoid(-label * group_score[g]);
    }
    (loss, coef)
}

/// Loss and analytic gradients in one pass.
///
/// Per-triple coefficients are computed in parallel; accumulation runs in
/// batch order so results do not depend on the thread count.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &LabelledBatch,
    lambda: f64,
) -> (f64, Gradients) {
    let d = params.dim();
    let coefficients: Vec<(f64, [f64; 2])> = batch
        .triples
        .par_iter()
        .zip(batch.labels.par_iter())
        .map(|(t, &l)| triple_coefficients(params, t, f64::from(l)))
        .collect();

    let mut grads = Gradients::default();
    let mut loss = 0.0;
    for (t, (triple_loss, coef)) in batch.triples.iter().zip(&coefficients) {
        loss += triple_loss;
        for term in params.training_terms(t).as_slice() {
            let (canon, sign) = params.resolve_index(term.slot);
            let scale = coef[term.group as usize] * term.weight * sign;
            let a_key = params.entity_key(term.a.0, term.a.1);
            let c_key = params.entity_key(term.c.0, term.c.1);
            let r_key = RowKey::Relation(canon);
            let (a, v, c) = (params.row(a_key), params.row(r_key), params.row(c_key));
            let ga: Vec<f64> = v.iter().zip(c).map(|(x, y)| scale * x * y).collect();
            let gv: Vec<f64> = a.iter().zip(c).map(|(x, y)| scale * x * y).collect();
            let gc: Vec<f64> = a.iter().zip(v).map(|(x, y)| scale * x * y).collect();
            for (key, g) in [(a_key, ga), (r_key, gv), (c_key, gc)] {
                for (acc, x) in grads.row(key, d).iter_mut().zip(g) {
                    *acc += x;
                }
            }
        }
    }

    let touched = touched_rows(params, batch);
    for &key in &touched {
        let row = params.row(key);
        let g = grads.row(key, d);
        for (acc, x) in g.iter_mut().zip(row) {
            *acc += 2.0 * lambda * x;
        }
    }
    loss += lambda * l2_penalty(params, &touched);
    (loss, grads)
}

pub fn batch_gradients(params: &ModelParams, batch: &LabelledBatch, lambda: f64) -> Gradients {
    loss_and_gradients(params, batch, lambda).1
}

/// AdaGrad squared-gradient accumulators, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: ModelParams,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            accumulators: ModelParams::zeros(
                params.kind(),
                params.num_entities(),
                params.num_relations(),
                params.dim(),
            ),
            epsilon: 1e-8,
        }
    }
}

/// `G += g²; x -= lr·g / (√G + ε)` for every row present in `grads`.
pub fn adagrad_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) {
    let eps = state.epsilon;
    for (&key, g) in &grads.rows {
        let acc = state.accumulators.row_mut(key);
        let x = params.row_mut(key);
        for ((xi, gi), ai) in x.iter_mut().zip(g).zip(acc.iter_mut()) {
            *ai += gi * gi;
            *xi -= lr * gi / (ai.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_filtered_mrr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid_mrr: Option<f64>,
}

impl TrainHistory {
    /// `epoch,train_loss,valid_filtered_mrr`; the MRR cell is empty on epochs
    /// without validation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "epoch,train_loss,valid_filtered_mrr").map_err(io)?;
        for r in &self.epochs {
            let mrr = r
                .valid_filtered_mrr
                .map(|m| m.to_string())
                .unwrap_or_default();
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, mrr).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Trains a model, returning the best-validation snapshot and the history.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    ties: Option<&TieSpec>,
) -> Result<(ModelParams, TrainHistory)> {
    train_with(config, data, ties, |_, _| ControlFlow::Continue(()))
}

/// [`train`] with a hook called after every epoch; returning
/// `ControlFlow::Break` stops training early.
pub fn train_with<F>(
    config: &TrainConfig,
    data: &Dataset,
    ties: Option<&TieSpec>,
    mut observer: F,
) -> Result<(ModelParams, TrainHistory)>
where
    F: FnMut(&EpochRecord, &ModelParams) -> ControlFlow<()>,
{
    config.validate()?;
    let split = &data.triples;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let num_entities = data.vocab.num_entities();
    let mut params = ModelParams::init(
        config.model_kind,
        num_entities,
        data.vocab.num_relations(),
        config.dim,
        config.seed,
    );
    if let Some(spec) = ties {
        params.apply_ties(spec)?;
    }
    let mut history = TrainHistory::default();
    if config.max_epochs == 0 {
        return Ok((params, history));
    }

    let mut state = OptimizerState::new(&params);
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut corrupt_rng = rng::stream(config.seed, Stream::Corruption);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut positives = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            positives.clear();
            positives.extend(chunk.iter().map(|&i| split.train[i]));
            let batch = make_batch(&positives, config.neg_ratio, &mut corrupt_rng, num_entities)?;
            let (loss, grads) = loss_and_gradients(&params, &batch, config.lambda);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adagrad_step(&mut params, &grads, &mut state, config.learning_rate);
            epoch_loss += loss;
        }

        let validate = !split.valid.is_empty()
            && (epoch % config.eval_every == 0 || epoch == config.max_epochs);
        let valid_filtered_mrr = if validate {
            let mrr = evaluate(&params, &split.valid, split)?.mrr_filtered;
            log::info!("epoch {epoch}: loss {epoch_loss:.4}, valid filtered MRR {mrr:.4}");
            if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
                best = Some((mrr, params.clone()));
                history.best_epoch = Some(epoch);
                history.best_valid_mrr = Some(mrr);
            }
            Some(mrr)
        } else {
            log::debug!("epoch {epoch}: loss {epoch_loss:.4}");
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            valid_filtered_mrr,
        };
        history.epochs.push(record);
        if observer(&record, &params).is_break() {
            break;
        }
    }

    Ok((best.map(|(_, p)| p).unwrap_or(params), history))
}

/// Denominator floor for [`gradient_check`]. Central differences of an O(1)
/// loss carry rounding noise near 1e-10, so partials that are exactly zero
/// would otherwise show a large relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Largest relative error `|a-n| / max(GRAD_CHECK_FLOOR, |a|+|n|)` between analytic
/// gradients and central differences of [`batch_loss`] on a one-triple batch,
/// over every parameter the triple touches.
pub fn gradient_check(
    params: &ModelParams,
    triple: &Triple,
    label: i8,
    lambda: f64,
    step: f64,
) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    let batch = LabelledBatch::single(*triple, label);
    let analytic = batch_gradients(params, &batch, lambda);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (&key, grad) in &analytic.rows {
        for (j, &a) in grad.iter().enumerate() {
            let original = probe.row(key)[j];
            probe.row_mut(key)[j] = original + step;
            let plus = batch_loss(&probe, &batch, lambda);
            probe.row_mut(key)[j] = original - step;
            let minus = batch_loss(&probe, &batch, lambda);
            probe.row_mut(key)[j] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}
