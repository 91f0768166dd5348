mod common;

use std::time::{Duration, Instant};

use common::{corner_failures, worst_complement_error, worst_fd_error, GATE_FD_TOL};
use logiccbm::gates::{gate_eval, gate_grad, GateId};
use proptest::prelude::*;

const RUNTIME_LIMIT: Duration = Duration::from_secs(5);

#[test]
fn corners_are_exact() {
    let failures = corner_failures();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn gradients_match_central_differences() {
    let worst = worst_fd_error();
    assert!(worst < GATE_FD_TOL, "worst fd error {worst:e}");
}

#[test]
fn complements_sum_to_one() {
    let worst = worst_complement_error();
    assert!(worst < 1e-12, "worst complement error {worst:e}");
}

#[test]
fn suite_is_fast() {
    let start = Instant::now();
    corner_failures();
    worst_fd_error();
    worst_complement_error();
    assert!(start.elapsed() < RUNTIME_LIMIT);
}

proptest! {
    #[test]
    fn outputs_stay_in_unit_interval(id in 0i64..16, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let z = gate_eval(GateId::new(id).unwrap(), a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&z));
    }

    #[test]
    fn out_of_range_inputs_are_rejected(id in 0i64..16, a in 1.0f64 + 1e-6..2.0) {
        let g = GateId::new(id).unwrap();
        prop_assert!(gate_eval(g, a, 0.5).is_err());
        prop_assert!(gate_grad(g, 0.5, -a + 1.0).is_err());
    }
}
