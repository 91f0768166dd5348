mod common;

use common::worst_relative_fd_error;
use logiccbm::gates::GateSubset;
use logiccbm::logic::{layer_backward, layer_forward, pair_random, GateMixture, LogicLayer};
use logiccbm::model::{build_model, ArchConfig, DataDims, EncoderKind, LayerConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;

/// Three classes, six concepts, four predicates.
fn toy_dims() -> DataDims {
    DataDims {
        input_dim: 5,
        concept_dim: 6,
        classes: 3,
    }
}

fn toy_sample(seed: u64) -> (Vec<f64>, usize, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = (0..6).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
    (x, rng.gen_range(0..3), c)
}

#[test]
fn logic_model_gradients_match_finite_differences() {
    for (seed, range) in [(0, 0.01), (1, 1.0), (2, 3.0)] {
        let mut arch = ArchConfig::logic(EncoderKind::LinearSigmoid, vec![LayerConfig::random(4)]);
        arch.logit_init_range = range;
        let model = build_model(&arch, toy_dims(), seed, None).unwrap();
        let (x, y, c) = toy_sample(seed);
        let (err, at) = worst_relative_fd_error(&model, &x, y, &c, 0.5, 0.0);
        assert!(err < REL_TOL, "seed {seed}: {err:e} at {at}");
    }
}

#[test]
fn stacked_mlp_logic_gradients_match_finite_differences() {
    let mut arch = ArchConfig::logic(
        EncoderKind::MlpSigmoid,
        vec![LayerConfig::random(4), LayerConfig::random(3)],
    );
    arch.hidden_dims = vec![7];
    arch.passthrough = true;
    arch.logit_init_range = 1.0;
    let model = build_model(&arch, toy_dims(), 5, None).unwrap();
    let (x, y, c) = toy_sample(5);
    let (err, at) = worst_relative_fd_error(&model, &x, y, &c, 0.3, 0.0);
    assert!(err < REL_TOL, "{err:e} at {at}");
}

#[test]
fn vanilla_and_dual_gradients_match_finite_differences() {
    let vanilla = build_model(&ArchConfig::vanilla(EncoderKind::LinearSigmoid), toy_dims(), 3, None).unwrap();
    let (x, y, c) = toy_sample(3);
    let (err, at) = worst_relative_fd_error(&vanilla, &x, y, &c, 0.7, 0.0);
    assert!(err < REL_TOL, "vanilla: {err:e} at {at}");

    let mut arch = ArchConfig::logic(EncoderKind::LinearSigmoid, vec![LayerConfig::random(4)]);
    arch.kind = ModelKind::Dual;
    arch.logit_init_range = 1.0;
    let dual = build_model(&arch, toy_dims(), 4, None).unwrap();
    let (x, y, c) = toy_sample(4);
    let (err, at) = worst_relative_fd_error(&dual, &x, y, &c, 0.5, 0.2);
    assert!(err < REL_TOL, "dual: {err:e} at {at}");
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let plan = pair_random(5, 6, 17).unwrap();
    let mixture = GateMixture::init_with_range(6, GateSubset::full16(), 2.0, &mut rng);
    let mut layer = LogicLayer::new(plan, mixture).unwrap();
    let input: Vec<f64> = (0..5).map(|_| rng.gen_range(0.05..0.95)).collect();
    let upstream: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |layer: &LogicLayer, input: &[f64]| -> f64 {
        let (z, _) = layer_forward(input, layer).unwrap();
        z.iter().zip(&upstream).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = layer_forward(&input, &layer).unwrap();
    let grad = layer_backward(&cache, &upstream).unwrap();
    let h = 1e-6;

    for i in 0..input.len() {
        let mut up = input.clone();
        up[i] += h;
        let mut down = input.clone();
        down[i] -= h;
        let fd = (objective(&layer, &up) - objective(&layer, &down)) / (2.0 * h);
        assert!((fd - grad.input[i]).abs() < 1e-7, "input {i}: {fd} vs {}", grad.input[i]);
    }
    let q = layer.mixture.logits().cols();
    for n in 0..6 {
        for j in 0..q {
            let original = layer.mixture.logits().row(n)[j];
            layer.mixture.logits_mut().row_mut(n)[j] = original + h;
            let up = objective(&layer, &input);
            layer.mixture.logits_mut().row_mut(n)[j] = original - h;
            let down = objective(&layer, &input);
            layer.mixture.logits_mut().row_mut(n)[j] = original;
            let fd = (up - down) / (2.0 * h);
            let a = grad.logits.row(n)[j];
            assert!((fd - a).abs() < 1e-7, "logit ({n},{j}): {fd} vs {a}");
        }
    }
}
