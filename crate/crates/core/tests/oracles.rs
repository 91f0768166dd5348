mod common;

use logiccbm::analysis::{
    ccg, correct_misleading_unit, intervene, intervention_success_ratio, misleading_unit,
    InterventionMode,
};
use logiccbm::datasets::{ConceptDataset, Split};
use common::copy_model;
use logiccbm::tensor::Matrix;

const CCG_TOL: f64 = 1e-6;

fn softmax_first(a: f64, b: f64) -> f64 {
    1.0 / (1.0 + (b - a).exp())
}

#[test]
fn ccg_hand_example() {
    let model = copy_model();
    let ds = ConceptDataset::new(
        Some(Matrix::from_rows(&[[0.1, 0.9]]).unwrap()),
        Matrix::from_rows(&[[1.0, 1.0]]).unwrap(),
        vec![0],
        vec![Split::Test],
        vec!["c1".into(), "c2".into()],
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    // logits (0.2, 1.8) before, (2, 1.8) after fixing unit 0
    let expected = softmax_first(2.0, 1.8) - softmax_first(0.2, 1.8);
    assert!((expected - 0.381_852).abs() < 1e-6);

    let report = ccg(&model, &ds, None).unwrap();
    assert_eq!(report.corrected, 1);
    assert_eq!(report.samples[0].unit, 0);
    assert!((report.ccg.unwrap() - expected).abs() < CCG_TOL);
}

#[test]
fn misleading_unit_tie_goes_low() {
    let w = Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
    assert_eq!(misleading_unit(&w, 0, 1).unwrap(), 0);
    assert_eq!(misleading_unit(&w, 1, 0).unwrap(), 0);
}

#[test]
fn correction_is_skipped_for_correct_predictions() {
    let model = copy_model();
    assert_eq!(correct_misleading_unit(&model, &[0.9, 0.1], &[1.0, 0.0], 0).unwrap(), None);
}

#[test]
fn full_intervention_on_an_exact_model_fixes_everything() {
    let (model, _) = common::clevr_recipe(1);
    assert!(common::exact_on_ground_truth(&model));
    let ds = common::flipped_clevr(1);
    let units = model.unit_count();
    let ratios = common::ratio_sweep(&model, &ds, 2 * units, 1);
    for w in ratios.windows(2) {
        assert!(w[1].unwrap() >= w[0].unwrap(), "{ratios:?}");
    }
    assert_eq!(ratios[0], Some(0.0));
    assert_eq!(*ratios.last().unwrap(), Some(1.0));
}

#[test]
fn interventions_are_nested_in_budget() {
    let (model, _) = common::clevr_recipe(1);
    let ds = common::flipped_clevr(1);
    for i in ds.indices(Split::Test).into_iter().take(20) {
        let mut previous: Vec<usize> = Vec::new();
        for k in 0..=6 {
            let out = intervene(&model, ds.input(i), ds.concept_row(i), k, 5, InterventionMode::Uniform).unwrap();
            assert_eq!(&out.units[..previous.len()], &previous[..]);
            previous = out.units;
        }
    }
}

#[test]
fn success_ratio_is_undefined_without_errors() {
    let (model, ds) = common::clevr_recipe(1);
    let r = intervention_success_ratio(&model, &ds, Some(Split::Train), 2, 0, InterventionMode::Uniform).unwrap();
    assert_eq!(r.misclassified, 0);
    assert_eq!(r.ratio, None);
}
