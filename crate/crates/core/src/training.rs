//! Losses, optimizers, and the minibatch training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{ConceptDataset, Split};
use crate::error::{Error, Result};
use crate::logic::stack_backward;
use crate::model::{build_model, ArchConfig, ConceptMode, DataDims, Dense, EncoderTrace, Model};
use crate::tensor::{argmax, softmax, Matrix};

/// Probability clamp used by the concept loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub bce: f64,
}

fn check_label(probs: &[f64], y: usize) -> Result<()> {
    if y >= probs.len() {
        return Err(Error::InvalidLabel {
            label: y,
            classes: probs.len(),
        });
    }
    Ok(())
}

/// `-ln probs[y]`.
pub fn cross_entropy(probs: &[f64], y: usize) -> Result<f64> {
    check_label(probs, y)?;
    Ok(-probs[y].ln())
}

/// Mean binary cross-entropy over concepts, probabilities clamped to
/// `[ε, 1-ε]`.
pub fn binary_cross_entropy(concepts: &[f64], c_true: &[f64]) -> Result<f64> {
    if concepts.len() != c_true.len() {
        return Err(Error::shape(c_true.len(), concepts.len()));
    }
    if concepts.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = concepts
        .iter()
        .zip(c_true)
        .map(|(&c, &t)| {
            let c = c.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * c.ln() + (1.0 - t) * (1.0 - c).ln())
        })
        .sum();
    Ok(sum / concepts.len() as f64)
}

fn bce_grad(concepts: &[f64], c_true: &[f64], weight: f64, out: &mut [f64]) {
    let k = concepts.len() as f64;
    for ((o, &c), &t) in out.iter_mut().zip(concepts).zip(c_true) {
        if c > BCE_EPS && c < 1.0 - BCE_EPS {
            *o += weight * (c - t) / (c * (1.0 - c)) / k;
        }
    }
}

/// `CE + α·BCE`.
pub fn loss_total(
    probs: &[f64],
    concepts: &[f64],
    y: usize,
    c_true: &[f64],
    alpha: f64,
) -> Result<LossBreakdown> {
    let ce = cross_entropy(probs, y)?;
    let bce = binary_cross_entropy(concepts, c_true)?;
    Ok(LossBreakdown {
        total: ce + alpha * bce,
        ce,
        bce,
    })
}

/// Dual-head objective `CE₁ + α·CE₂ + β·BCE`.
pub fn loss_finetune(
    probs1: &[f64],
    probs2: &[f64],
    concepts: &[f64],
    y: usize,
    c_true: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let ce1 = cross_entropy(probs1, y)?;
    let ce2 = cross_entropy(probs2, y)?;
    let bce = binary_cross_entropy(concepts, c_true)?;
    Ok(ce1 + alpha * ce2 + beta * bce)
}

/// Stable `-ln softmax(logits)[y]` and `softmax(logits) - onehot(y)`.
fn ce_from_logits(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_label(logits, y)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let probs = softmax(logits);
    let mut grad = probs.clone();
    grad[y] -= 1.0;
    Ok((lse - logits[y], grad, probs))
}

fn push_encoder(grads: &mut Vec<Vec<f64>>, enc: Vec<Dense>) {
    for d in enc {
        grads.push(d.weight.as_slice().to_vec());
        grads.push(d.bias);
    }
}

/// Loss and parameter gradients for one sample, in [`Model::params`] order.
///
/// For logic and linear models `weight_a` is the concept-loss weight α. For
/// the dual-head model `weight_a` weights the logic-head cross-entropy and
/// `weight_b` the concept loss.
pub fn sample_gradient(
    model: &Model,
    x: &[f64],
    y: usize,
    c_true: &[f64],
    weight_a: f64,
    weight_b: f64,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let enc = model.encoder();
    let trace: EncoderTrace = enc.forward_traced(x)?;
    let concepts = &trace.concepts;
    if c_true.len() != concepts.len() {
        return Err(Error::shape(concepts.len(), c_true.len()));
    }
    let bce = binary_cross_entropy(concepts, c_true)?;
    let mut grads = Vec::new();
    match model {
        Model::Logic(m) => {
            let (predicates, caches) =
                crate::logic::stack_forward(concepts, &m.layers, m.passthrough)?;
            let logits = m.head.logits(&predicates)?;
            let (ce, dlogits, _) = ce_from_logits(&logits, y)?;
            let (gw, gb, dz) = m.head.backward(&predicates, &dlogits);
            let (glogits, mut dconcepts) =
                stack_backward(&caches, &dz, concepts.len(), m.passthrough)?;
            bce_grad(concepts, c_true, weight_a, &mut dconcepts);
            push_encoder(&mut grads, enc.backward(&trace, &dconcepts));
            grads.extend(glogits.into_iter().map(|g: Matrix| g.as_slice().to_vec()));
            grads.push(gw.as_slice().to_vec());
            grads.push(gb);
            Ok((
                LossBreakdown {
                    total: ce + weight_a * bce,
                    ce,
                    bce,
                },
                grads,
            ))
        }
        Model::Vanilla(m) => {
            let units = m.head_input(concepts);
            let logits = m.head.logits(&units)?;
            let (ce, dlogits, _) = ce_from_logits(&logits, y)?;
            let (gw, gb, dunits) = m.head.backward(&units, &dlogits);
            let mut dconcepts = match m.mode {
                ConceptMode::Soft => dunits,
                // thresholding has no useful gradient
                ConceptMode::Boolean => vec![0.0; concepts.len()],
            };
            bce_grad(concepts, c_true, weight_a, &mut dconcepts);
            push_encoder(&mut grads, enc.backward(&trace, &dconcepts));
            grads.push(gw.as_slice().to_vec());
            grads.push(gb);
            Ok((
                LossBreakdown {
                    total: ce + weight_a * bce,
                    ce,
                    bce,
                },
                grads,
            ))
        }
        Model::Dual(m) => {
            let units = m.base.head_input(concepts);
            let logits1 = m.base.head.logits(&units)?;
            let (ce1, d1, _) = ce_from_logits(&logits1, y)?;
            let (gw1, gb1, dunits) = m.base.head.backward(&units, &d1);
            let mut dconcepts = match m.base.mode {
                ConceptMode::Soft => dunits,
                ConceptMode::Boolean => vec![0.0; concepts.len()],
            };

            let l = &m.logic;
            let (predicates, caches) =
                crate::logic::stack_forward(concepts, &l.layers, l.passthrough)?;
            let logits2 = l.head.logits(&predicates)?;
            let (ce2, mut d2, _) = ce_from_logits(&logits2, y)?;
            d2.iter_mut().for_each(|v| *v *= weight_a);
            let (gw2, gb2, dz) = l.head.backward(&predicates, &d2);
            let (glogits, dc2) = stack_backward(&caches, &dz, concepts.len(), l.passthrough)?;
            dconcepts.iter_mut().zip(&dc2).for_each(|(a, b)| *a += b);
            bce_grad(concepts, c_true, weight_b, &mut dconcepts);

            push_encoder(&mut grads, enc.backward(&trace, &dconcepts));
            grads.push(gw1.as_slice().to_vec());
            grads.push(gb1);
            grads.extend(glogits.into_iter().map(|g| g.as_slice().to_vec()));
            grads.push(gw2.as_slice().to_vec());
            grads.push(gb2);
            Ok((
                LossBreakdown {
                    total: ce1 + weight_a * ce2 + weight_b * bce,
                    ce: ce1 + weight_a * ce2,
                    bce,
                },
                grads,
            ))
        }
    }
}

/// Mean loss and gradient over `rows`, accumulated in row order.
pub fn batch_gradient(
    model: &Model,
    dataset: &ConceptDataset,
    rows: &[usize],
    weight_a: f64,
    weight_b: f64,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let mut total: Option<Vec<Vec<f64>>> = None;
    let mut loss = LossBreakdown::default();
    for &i in rows {
        let (l, g) = sample_gradient(
            model,
            dataset.input(i),
            dataset.label(i),
            dataset.concept_row(i),
            weight_a,
            weight_b,
        )?;
        loss.total += l.total;
        loss.ce += l.ce;
        loss.bce += l.bce;
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let n = rows.len().max(1) as f64;
    let mut grads = total.unwrap_or_else(|| model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect());
    grads.iter_mut().flatten().for_each(|g| *g /= n);
    Ok((
        LossBreakdown {
            total: loss.total / n,
            ce: loss.ce / n,
            bce: loss.bce / n,
        },
        grads,
    ))
}

/// Mean loss over `rows` without gradients.
pub fn batch_loss(
    model: &Model,
    dataset: &ConceptDataset,
    rows: &[usize],
    weight_a: f64,
    weight_b: f64,
) -> Result<LossBreakdown> {
    let mut loss = LossBreakdown::default();
    for &i in rows {
        let (x, y, t) = (dataset.input(i), dataset.label(i), dataset.concept_row(i));
        let l = match model {
            Model::Dual(m) => {
                let out = m.forward(x)?;
                let ce1 = cross_entropy(&out.probs_head1, y)?;
                let ce2 = cross_entropy(&out.probs_head2, y)?;
                let bce = binary_cross_entropy(&out.concepts, t)?;
                LossBreakdown {
                    total: ce1 + weight_a * ce2 + weight_b * bce,
                    ce: ce1 + weight_a * ce2,
                    bce,
                }
            }
            _ => {
                let c = model.concepts(x)?;
                let probs = model.probs_from_units(&model.units(&c)?)?;
                loss_total(&probs, &c, y, t, weight_a)?
            }
        };
        loss.total += l.total;
        loss.ce += l.ce;
        loss.bce += l.bce;
    }
    let n = rows.len().max(1) as f64;
    Ok(LossBreakdown {
        total: loss.total / n,
        ce: loss.ce / n,
        bce: loss.bce / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    /// SGD with momentum 0.9 and weight decay 1e-4.
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum: 0.9,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            weight_decay: 1e-4,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            weight_decay: 0.0,
            ..Self::sgd(lr)
        }
    }
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    /// Applies one update. Groups whose `mask` entry is false are left alone.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], mask: &[bool]) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        for (gi, ((_, params), grad)) in model.params_mut().into_iter().zip(grads).enumerate() {
            if !mask[gi] {
                continue;
            }
            let (m, v) = (&mut self.first[gi], &mut self.second[gi]);
            for j in 0..params.len() {
                let mut g = grad[j];
                if c.weight_decay != 0.0 && params[j].is_finite() {
                    g += c.weight_decay * params[j];
                }
                match c.kind {
                    OptimizerKind::SgdMomentum => {
                        m[j] = c.momentum * m[j] + g;
                        params[j] -= c.lr * m[j];
                    }
                    OptimizerKind::Adam => {
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                        let mh = m[j] / (1.0 - c.beta1.powi(t));
                        let vh = v[j] / (1.0 - c.beta2.powi(t));
                        params[j] -= c.lr * mh / (vh.sqrt() + c.eps);
                    }
                }
            }
        }
    }
}

fn default_batch_size() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Concept-loss weight (logic-head cross-entropy weight for dual-head).
    pub alpha: f64,
    /// Concept-loss weight of the dual-head objective.
    #[serde(default)]
    pub beta: f64,
    pub seed: u64,
    /// Whether class-head parameters are updated.
    #[serde(default = "default_true")]
    pub train_head: bool,
}

impl TrainConfig {
    /// Defaults for concept-annotated CSV data: SGD(0.001, momentum 0.9,
    /// weight decay 1e-4), batch 64, α = 0.001.
    pub fn csv_defaults(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 64,
            optimizer: OptimizerConfig::sgd(0.001),
            alpha: 0.001,
            beta: 0.0,
            seed,
            train_head: true,
        }
    }

    /// Defaults for the synthetic logic tasks: Adam(0.01), batch 64, α = 0.001.
    pub fn synthetic_defaults(epochs: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerConfig::adam(0.01),
            ..Self::csv_defaults(epochs, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidConfig("alpha and beta must be non-negative".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Concept-loss and auxiliary weights as passed to [`sample_gradient`].
    pub fn loss_weights(&self, model: &Model) -> (f64, f64) {
        match model {
            Model::Dual(_) => (self.alpha, self.beta),
            _ => (self.alpha, 0.0),
        }
    }
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub ce_loss: f64,
    pub bce_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub selected_epoch: Option<usize>,
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("records serialize") + "\n")
            .collect()
    }
}

/// Minibatch training with a fixed shuffle order derived from `config.seed`.
/// Returns the parameters of the epoch with the best validation accuracy
/// (lowest validation loss on ties), or of the last epoch without a
/// validation split.
pub fn train(
    mut model: Model,
    dataset: &ConceptDataset,
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    check_dims(&model, dataset)?;
    let start = Instant::now();
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok((model, report));
    }
    let mut train_rows = dataset.indices(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let val_rows = dataset.indices(Split::Val);
    let (wa, wb) = config.loss_weights(&model);
    let mask: Vec<bool> = model
        .params()
        .iter()
        .map(|(name, _)| config.train_head || !name.starts_with("head"))
        .collect();
    let mut opt = Optimizer::new(config.optimizer.clone(), &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, f64, usize, Model)> = None;

    for epoch in 0..config.epochs {
        train_rows.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (b, batch) in train_rows.chunks(config.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(&model, dataset, batch, wa, wb)?;
            if !loss.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let w = batch.len() as f64;
            sum.total += loss.total * w;
            sum.ce += loss.ce * w;
            sum.bce += loss.bce * w;
            opt.step(&mut model, &grads, &mask);
        }
        let n = train_rows.len() as f64;
        let train_accuracy = accuracy_on(&model, dataset, &train_rows)?;
        let (val_accuracy, val_loss) = if val_rows.is_empty() {
            (None, None)
        } else {
            (
                Some(accuracy_on(&model, dataset, &val_rows)?),
                Some(batch_loss(&model, dataset, &val_rows, wa, wb)?.total),
            )
        };
        report.epochs.push(EpochRecord {
            epoch,
            total_loss: sum.total / n,
            ce_loss: sum.ce / n,
            bce_loss: sum.bce / n,
            train_accuracy,
            val_accuracy,
            val_loss,
        });
        if let (Some(v), Some(l)) = (val_accuracy, val_loss) {
            if best.as_ref().map_or(true, |(bv, bl, _, _)| v > *bv || (v == *bv && l < *bl)) {
                best = Some((v, l, epoch, model.clone()));
            }
        }
    }
    let (model, selected) = match best {
        Some((_, _, epoch, m)) => (m, epoch),
        None => (model, config.epochs - 1),
    };
    report.selected_epoch = Some(selected);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Restart seed `r` of a run seeded with `seed`; restart 0 keeps `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub restart: usize,
    pub seed: u64,
    pub score: f64,
    pub final_loss: f64,
}

/// Builds and trains up to `restarts` independently seeded models and keeps
/// the best by selection score: the lower of soft and hardened accuracy over
/// the train and validation rows. Ties go to the lower final training loss.
/// Stops early once a restart scores 1.
pub fn train_with_restarts(
    arch: &ArchConfig,
    dataset: &ConceptDataset,
    config: &TrainConfig,
    restarts: usize,
    activations: Option<&Matrix>,
) -> Result<(Model, TrainReport, Vec<RestartOutcome>)> {
    let dims = DataDims {
        input_dim: dataset.input_dim(),
        concept_dim: dataset.concept_dim(),
        classes: dataset.class_count(),
    };
    let mut select_rows = dataset.indices(Split::Train);
    select_rows.extend(dataset.indices(Split::Val));
    let mut outcomes = Vec::new();
    let mut best: Option<(f64, f64, Model, TrainReport)> = None;
    for r in 0..restarts.max(1) {
        let seed = restart_seed(config.seed, r);
        let model = build_model(arch, dims, seed, activations)?;
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let (model, report) = train(model, dataset, &cfg)?;
        let score = selection_score(&model, dataset, &select_rows)?;
        let final_loss = report.epochs.last().map_or(f64::INFINITY, |e| e.total_loss);
        outcomes.push(RestartOutcome {
            restart: r,
            seed,
            score,
            final_loss,
        });
        log::debug!("restart {r}: selection score {score:.4}, final loss {final_loss:.6}");
        let better = best
            .as_ref()
            .map_or(true, |(s, l, _, _)| score > *s || (score == *s && final_loss < *l));
        if better {
            best = Some((score, final_loss, model, report));
        }
        if score >= 1.0 {
            break;
        }
    }
    let (_, _, model, report) = best.expect("at least one restart");
    Ok((model, report, outcomes))
}

fn selection_score(model: &Model, dataset: &ConceptDataset, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut soft = 0usize;
    let mut hard = 0usize;
    for &i in rows {
        let y = dataset.label(i);
        soft += usize::from(model.predict(dataset.input(i))? == y);
        hard += usize::from(model.predict_hardened(dataset.input(i))? == y);
    }
    Ok(soft.min(hard) as f64 / rows.len() as f64)
}

fn check_dims(model: &Model, dataset: &ConceptDataset) -> Result<()> {
    if dataset.input_dim() != model.input_dim() {
        return Err(Error::shape(
            format!("input width {}", model.input_dim()),
            dataset.input_dim(),
        ));
    }
    if dataset.concept_dim() != model.concept_dim() {
        return Err(Error::shape(
            format!("{} concepts", model.concept_dim()),
            dataset.concept_dim(),
        ));
    }
    if dataset.class_count() > model.class_count() {
        return Err(Error::shape(
            format!("at most {} classes", model.class_count()),
            dataset.class_count(),
        ));
    }
    Ok(())
}

fn accuracy_on(model: &Model, dataset: &ConceptDataset, rows: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for &i in rows {
        if model.predict(dataset.input(i))? == dataset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated rows.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean absolute difference between predicted and annotated concepts.
    pub mean_concept_error: f64,
}

/// Accuracy, per-class accuracy and concept error over `split` (all rows
/// when `None`). Argmax ties resolve to the lowest class index.
pub fn evaluate(model: &Model, dataset: &ConceptDataset, split: Option<Split>) -> Result<EvalReport> {
    check_dims(model, dataset)?;
    let rows = dataset.select(split);
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_classes = model.class_count();
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    let mut concept_err = 0.0;
    for &i in &rows {
        let c = model.concepts(dataset.input(i))?;
        let pred = argmax(&model.probs_from_units(&model.units(&c)?)?);
        let y = dataset.label(i);
        totals[y] += 1;
        if pred == y {
            hits[y] += 1;
        }
        concept_err += c
            .iter()
            .zip(dataset.concept_row(i))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / c.len() as f64;
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        rows: rows.len(),
        accuracy: correct as f64 / rows.len() as f64,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        mean_concept_error: concept_err / rows.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn loss_examples() {
        let l = loss_total(&[0.5, 0.5], &[0.5], 0, &[1.0], 1.0).unwrap();
        assert!((l.ce - LN_2).abs() < 1e-12);
        assert!((l.bce - LN_2).abs() < 1e-12);
        assert!((l.total - 2.0 * LN_2).abs() < 1e-12);
        assert!((l.total - 1.3863).abs() < 1e-4);

        let perfect = loss_total(&[1.0, 0.0], &[BCE_EPS, 1.0 - BCE_EPS], 0, &[0.0, 1.0], 0.5).unwrap();
        assert!(perfect.total.abs() < 1e-6);

        let no_alpha = loss_total(&[0.25, 0.75], &[0.9], 1, &[0.0], 0.0).unwrap();
        assert_eq!(no_alpha.total, no_alpha.ce);

        assert!(matches!(
            loss_total(&[0.5, 0.5], &[0.5], 2, &[1.0], 1.0),
            Err(Error::InvalidLabel { .. })
        ));
        assert!(matches!(
            loss_total(&[0.5, 0.5], &[0.5, 0.5], 0, &[1.0], 1.0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn finetune_loss_examples() {
        let t = loss_finetune(&[0.5, 0.5], &[0.5, 0.5], &[0.3], 0, &[1.0], 1.0, 0.0).unwrap();
        assert!((t - 2.0 * LN_2).abs() < 1e-12);
        let t = loss_finetune(&[0.25, 0.75], &[0.9, 0.1], &[0.3], 1, &[1.0], 0.0, 0.0).unwrap();
        assert!((t - cross_entropy(&[0.25, 0.75], 1).unwrap()).abs() < 1e-15);
        let t = loss_finetune(&[1.0, 0.0], &[1.0, 0.0], &[1.0 - BCE_EPS], 0, &[1.0], 0.5, 0.5).unwrap();
        assert!(t.abs() < 1e-6);
    }

    #[test]
    fn logits_ce_matches_probability_ce() {
        let logits = [0.3, -1.2, 2.5];
        let (ce, grad, probs) = ce_from_logits(&logits, 1).unwrap();
        assert!((ce - cross_entropy(&probs, 1).unwrap()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }
}
