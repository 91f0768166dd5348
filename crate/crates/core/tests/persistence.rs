mod common;

use logiccbm::checkpoint::{self, CheckpointMeta};
use logiccbm::error::Error;
use logiccbm::model::{build_model, ArchConfig, DataDims, EncoderKind, LayerConfig, Model, ModelKind, PairingMode};
use logiccbm::training::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

/// Bit patterns of the class probabilities on 100 seeded inputs.
pub fn forward_bits(model: &Model, seed: u64) -> Vec<Vec<u64>> {
    random_inputs(100, model.input_dim(), seed)
        .iter()
        .map(|x| model.predict_proba(x).unwrap().iter().map(|p| p.to_bits()).collect())
        .collect()
}

fn archs() -> Vec<ArchConfig> {
    let logic = ArchConfig::logic(EncoderKind::LinearSigmoid, vec![LayerConfig::random(5)]);
    let mut stacked = ArchConfig::logic(
        EncoderKind::MlpSigmoid,
        vec![
            LayerConfig {
                width: 4,
                pairing: PairingMode::Correlated,
                pairs: None,
            },
            LayerConfig::random(3),
        ],
    );
    stacked.hidden_dims = vec![6];
    stacked.passthrough = true;
    let mut dual = logic.clone();
    dual.kind = ModelKind::Dual;
    vec![logic, stacked, dual, ArchConfig::vanilla(EncoderKind::LinearSigmoid)]
}

#[test]
fn round_trip_preserves_forward_outputs_bit_exactly() {
    let dims = DataDims {
        input_dim: 5,
        concept_dim: 4,
        classes: 3,
    };
    let acts = logiccbm::tensor::Matrix::from_rows(
        &random_inputs(40, 4, 1)
            .into_iter()
            .map(|r| r.into_iter().map(|v| (v > 0.0) as u8 as f64).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (i, arch) in archs().iter().enumerate() {
        let model = build_model(arch, dims, 20 + i as u64, Some(&acts)).unwrap();
        let path = dir.path().join(format!("m{i}.ckpt"));
        checkpoint::save(&path, &model, arch, &CheckpointMeta::default()).unwrap();
        let back = checkpoint::load(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(forward_bits(&back.model, 3), forward_bits(&model, 3));
    }
}

#[test]
fn identical_seed_and_config_give_identical_checkpoints() {
    let ds = common::featured_clevr(2);
    let arch = ArchConfig::logic(EncoderKind::LinearSigmoid, vec![LayerConfig::random(4)]);
    let cfg = TrainConfig::synthetic_defaults(5, 9);
    let dims = DataDims {
        input_dim: ds.input_dim(),
        concept_dim: ds.concept_dim(),
        classes: ds.class_count(),
    };
    let bytes = || {
        let model = build_model(&arch, dims, 9, None).unwrap();
        let (trained, _) = train(model, &ds, &cfg).unwrap();
        checkpoint::to_bytes(&trained, &arch, &CheckpointMeta::default()).unwrap()
    };
    assert_eq!(bytes(), bytes());
}

#[test]
fn damaged_files_are_rejected() {
    let arch = ArchConfig::vanilla(EncoderKind::LinearSigmoid);
    let dims = DataDims {
        input_dim: 3,
        concept_dim: 2,
        classes: 2,
    };
    let model = build_model(&arch, dims, 0, None).unwrap();
    let bytes = checkpoint::to_bytes(&model, &arch, &CheckpointMeta::default()).unwrap();

    let mut bumped = bytes.clone();
    bumped[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(checkpoint::from_bytes(&bumped), Err(Error::SchemaVersionMismatch { .. })));

    let truncated = &bytes[..bytes.len() / 2];
    assert!(matches!(checkpoint::from_bytes(truncated), Err(Error::CorruptChecksum(_))));

    assert!(matches!(
        checkpoint::load("/nonexistent/model.ckpt"),
        Err(Error::Io { .. })
    ));
}
