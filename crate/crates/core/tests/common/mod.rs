//! Recipes and checks shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use std::collections::HashSet;

use logiccbm::analysis::{decision_matches, InterventionMode};
use logiccbm::datasets::{
    flip_concept_inputs, gen_clevr_logic, gen_truth_table, ClevrLogicConfig, ConceptDataset,
    FeatureRender, Split,
};
use logiccbm::formula::{clevr_logic_rules, satisfying_assignments};
use logiccbm::gates::{gate_eval, gate_grad, gate_table, GateId, GateSubset};
use logiccbm::logic::{GateMixture, LogicLayer, PairingPlan};
use logiccbm::model::{
    ArchConfig, ClassHead, Encoder, EncoderKind, EncoderSpec, HeadInit, LayerConfig, LogicCbmModel, Model,
};
use logiccbm::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use logiccbm::training::{batch_loss, sample_gradient, train_with_restarts, OptimizerConfig, TrainConfig};

pub const FD_STEP: f64 = 1e-6;
pub const GATE_FD_STEP: f64 = 1e-5;
pub const GATE_FD_TOL: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

/// Largest relative gap between analytic and central-difference gradients
/// of the single-sample loss, over every parameter.
pub fn worst_relative_fd_error(
    model: &Model,
    x: &[f64],
    y: usize,
    c_true: &[f64],
    weight_a: f64,
    weight_b: f64,
) -> (f64, String) {
    let (_, grads) = sample_gradient(model, x, y, c_true, weight_a, weight_b).unwrap();
    let k = c_true.len();
    let ds = ConceptDataset::new(
        Some(logiccbm::tensor::Matrix::from_rows(&[x.to_vec()]).unwrap()),
        logiccbm::tensor::Matrix::from_rows(&[c_true.to_vec()]).unwrap(),
        vec![y],
        vec![Split::Train],
        logiccbm::formula::default_concept_names(k),
        (0..model.class_count()).map(|c| c.to_string()).collect(),
    )
    .unwrap();
    let loss_at = |m: &Model| batch_loss(m, &ds, &[0], weight_a, weight_b).unwrap().total;
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (t, name) in names.iter().enumerate() {
        for i in 0..grads[t].len() {
            let original = probe.params()[t].1[i];
            if !original.is_finite() {
                continue;
            }
            probe.params_mut()[t].1[i] = original + FD_STEP;
            let up = loss_at(&probe);
            probe.params_mut()[t].1[i] = original - FD_STEP;
            let down = loss_at(&probe);
            probe.params_mut()[t].1[i] = original;
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = grads[t][i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: analytic {a:e}, fd {fd:e}"));
            }
        }
    }
    worst
}

/// Every satisfying assignment of every class rule appears among the
/// train and validation rows.
pub fn covers_all_assignments(ds: &ConceptDataset) -> bool {
    let rules = clevr_logic_rules();
    let seen: HashSet<Vec<bool>> = ds
        .select(None)
        .into_iter()
        .filter(|&i| ds.splits()[i] != Split::Test)
        .map(|i| ds.concept_row(i).iter().map(|&v| v == 1.0).collect())
        .collect();
    rules.specs.iter().all(|s| {
        satisfying_assignments(&s.formula, 3)
            .unwrap()
            .into_iter()
            .all(|a| seen.contains(&a))
    })
}

pub fn all_rows_accuracy(model: &Model, ds: &ConceptDataset) -> f64 {
    logiccbm::training::evaluate(model, ds, None).unwrap().accuracy
}

/// One neuron on the fixed pair of the two-input table, under a frozen
/// binary head.
pub fn xor_recipe(seed: u64) -> (Model, ConceptDataset) {
    let ds = gen_truth_table(2).unwrap();
    let mut arch = ArchConfig::logic(EncoderKind::Identity, vec![LayerConfig::explicit(vec![(0, 1)])]);
    arch.head_init = HeadInit::Binary;
    arch.head_scale = 8.0;
    let mut cfg = TrainConfig::synthetic_defaults(500, seed);
    cfg.alpha = 0.0;
    cfg.train_head = false;
    let (m, _, _) = train_with_restarts(&arch, &ds, &cfg, 32, None).unwrap();
    (m, ds)
}

pub fn parity3_arch() -> ArchConfig {
    let mut arch = ArchConfig::logic(
        EncoderKind::Identity,
        vec![LayerConfig::explicit(vec![(0, 1)]), LayerConfig::explicit(vec![(0, 3)])],
    );
    arch.passthrough = true;
    arch.logit_init_range = 1.0;
    arch
}

/// XOR of the first two concepts, then XOR with the passed-through third.
pub fn parity3_recipe(seed: u64) -> (Model, ConceptDataset) {
    let ds = gen_truth_table(3).unwrap();
    let mut cfg = TrainConfig::synthetic_defaults(500, seed);
    cfg.alpha = 0.0;
    cfg.optimizer = OptimizerConfig::adam(0.1);
    let (m, _, _) = train_with_restarts(&parity3_arch(), &ds, &cfg, 64, None).unwrap();
    (m, ds)
}

pub fn clevr_data(seed: u64, per_class: usize) -> ConceptDataset {
    let rules = clevr_logic_rules();
    let cfg = ClevrLogicConfig {
        seed,
        per_class,
        ..Default::default()
    };
    gen_clevr_logic(&rules.specs, 3, &cfg).unwrap()
}

pub fn clevr_arch() -> ArchConfig {
    ArchConfig::logic(EncoderKind::Identity, vec![LayerConfig::exhaustive()])
}

pub fn clevr_train_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::synthetic_defaults(300, seed);
    cfg.optimizer = OptimizerConfig::adam(0.1);
    cfg
}

pub fn clevr_recipe(seed: u64) -> (Model, ConceptDataset) {
    let ds = clevr_data(seed, 20);
    let (m, _, _) = train_with_restarts(&clevr_arch(), &ds, &clevr_train_config(seed), 48, None).unwrap();
    (m, ds)
}

pub fn clevr_rules_recovered(model: &Model) -> Vec<bool> {
    let rules = clevr_logic_rules();
    let logic = model.logic().unwrap();
    rules
        .specs
        .iter()
        .enumerate()
        .map(|(c, s)| decision_matches(logic, c, &s.formula).unwrap())
        .collect()
}

/// One neuron per class over every concept pair, with a frozen identity
/// head so each class is scored by its own predicate.
pub fn ablation_recipe(subset: &str, seed: u64) -> (Model, ConceptDataset) {
    let ds = clevr_data(seed, 20);
    let mut arch = clevr_arch();
    arch.gate_subset = subset.into();
    arch.head_init = HeadInit::Identity;
    arch.head_scale = 4.0;
    let mut cfg = clevr_train_config(seed);
    cfg.train_head = false;
    let (m, _, _) = train_with_restarts(&arch, &ds, &cfg, 32, None).unwrap();
    (m, ds)
}

/// Concept-level noisy CLEVR: inputs have 10% of bits flipped, the clean
/// concepts remain the ground truth.
pub fn flipped_clevr(seed: u64) -> ConceptDataset {
    flip_concept_inputs(&clevr_data(seed, 400), 0.1, seed).unwrap()
}

/// Annotation-noisy CLEVR with rendered features: 10% of concept labels
/// flipped, features drawn from the clean assignment.
pub fn featured_clevr(seed: u64) -> ConceptDataset {
    let rules = clevr_logic_rules();
    let cfg = ClevrLogicConfig {
        seed,
        per_class: 400,
        noise_flip_prob: 0.1,
        features: Some(FeatureRender {
            dims_per_concept: 4,
            noise_std: 1.5,
        }),
        ..Default::default()
    };
    gen_clevr_logic(&rules.specs, 3, &cfg).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Vanilla,
    Logic,
}

pub fn flipped_model(family: Family, ds: &ConceptDataset, seed: u64) -> Model {
    let arch = match family {
        Family::Vanilla => ArchConfig::vanilla(EncoderKind::Identity),
        Family::Logic => clevr_arch(),
    };
    train_with_restarts(&arch, ds, &clevr_train_config(seed), 8, None).unwrap().0
}

pub fn featured_model(family: Family, ds: &ConceptDataset, seed: u64) -> Model {
    let arch = match family {
        Family::Vanilla => ArchConfig::vanilla(EncoderKind::LinearSigmoid),
        Family::Logic => ArchConfig::logic(EncoderKind::LinearSigmoid, vec![LayerConfig::exhaustive()]),
    };
    let cfg = TrainConfig::synthetic_defaults(300, seed);
    train_with_restarts(&arch, ds, &cfg, 4, None).unwrap().0
}

/// Success ratios for budgets `0..=max_k` on the test split.
pub fn ratio_sweep(model: &Model, ds: &ConceptDataset, max_k: usize, seed: u64) -> Vec<Option<f64>> {
    (0..=max_k)
        .map(|k| {
            logiccbm::analysis::intervention_success_ratio(
                model,
                ds,
                Some(Split::Test),
                k,
                seed,
                InterventionMode::Uniform,
            )
            .unwrap()
            .ratio
        })
        .collect()
}

/// Whether the hardened model classifies every boolean assignment the way
/// the class rules do.
pub fn exact_on_ground_truth(model: &Model) -> bool {
    clevr_rules_recovered(model).iter().all(|&b| b)
}

/// Every gate at every corner, against the descriptor truth table: 64 cases.
pub fn corner_failures() -> Vec<String> {
    let mut failures = Vec::new();
    for d in gate_table() {
        for (i, &(a, b)) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)].iter().enumerate() {
            let expect = if d.truth_corners[i] { 1.0 } else { 0.0 };
            let got = gate_eval(d.id, a, b).unwrap();
            if got != expect {
                failures.push(format!("{} at ({a},{b}): {got} != {expect}", d.name));
            }
        }
    }
    failures
}

/// Largest absolute gap between the analytic gradient and a central
/// difference, over 100 seeded points per gate kept `GATE_FD_STEP` inside the
/// unit square.
pub fn worst_fd_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for g in GateId::all() {
        for _ in 0..100 {
            let a = rng.gen_range(GATE_FD_STEP..1.0 - GATE_FD_STEP);
            let b = rng.gen_range(GATE_FD_STEP..1.0 - GATE_FD_STEP);
            let (da, db) = gate_grad(g, a, b).unwrap();
            let fa = (gate_eval(g, a + GATE_FD_STEP, b).unwrap() - gate_eval(g, a - GATE_FD_STEP, b).unwrap())
                / (2.0 * GATE_FD_STEP);
            let fb = (gate_eval(g, a, b + GATE_FD_STEP).unwrap() - gate_eval(g, a, b - GATE_FD_STEP).unwrap())
                / (2.0 * GATE_FD_STEP);
            worst = worst.max((da - fa).abs()).max((db - fb).abs());
        }
    }
    worst
}

/// Largest violation of `gate(id) + gate(15 - id) = 1` on a 101×101 grid.
pub fn worst_complement_error() -> f64 {
    let mut worst: f64 = 0.0;
    for g in GateId::all() {
        let c = g.complement();
        assert_eq!(c.index(), 15 - g.index());
        for i in 0..=100 {
            for j in 0..=100 {
                let (a, b) = (i as f64 / 100.0, j as f64 / 100.0);
                let s = gate_eval(g, a, b).unwrap() + gate_eval(c, a, b).unwrap();
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    worst
}

pub fn identity_encoder(k: usize) -> Encoder {
    Encoder::zeros(EncoderSpec {
        kind: EncoderKind::Identity,
        input_dim: k,
        concept_dim: k,
        hidden_dims: Vec::new(),
    })
    .unwrap()
}

/// Two predicates that copy the two concepts, scored by `V = 2·I`.
pub fn copy_model() -> Model {
    let layer = LogicLayer::new(
        PairingPlan::new(vec![(0, 1), (1, 0)], 2).unwrap(),
        GateMixture::one_hot(&[GateId::A, GateId::A], GateSubset::full16()).unwrap(),
    )
    .unwrap();
    let head = ClassHead::new(Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap(), vec![0.0; 2], true).unwrap();
    Model::Logic(LogicCbmModel::new(identity_encoder(2), vec![layer], false, head, 0).unwrap())
}
