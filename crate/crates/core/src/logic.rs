//! The differentiable logic layer.
//!
//! Each logic neuron reads one pair of inputs `(c_a, c_b)`, evaluates every
//! gate of its subset on that pair, and outputs the largest gate value
//! weighted by the neuron's gate distribution `g = softmax(logits)`:
//!
//! ```text
//! ẑ = max_j  g_j · z_j(c_a, c_b)
//! ```
//!
//! The backward pass routes the gradient through the active (argmax) branch
//! only. Ties between branches resolve to the lowest gate id, both in the
//! forward selection and in [`harden`].

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{eval_unchecked, grad_unchecked, GateId, GateSubset, INPUT_TOLERANCE};
use crate::tensor::{softmax, Matrix};

/// Logit half-width of the near-uniform initialization.
pub const LOGIT_INIT_RANGE: f64 = 0.01;

/// Input pairs for the neurons of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pairs: Vec<(usize, usize)>,
    input_width: usize,
}

impl PairingPlan {
    pub fn new(pairs: Vec<(usize, usize)>, input_width: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidSize("a pairing plan needs at least one pair".into()));
        }
        for &(l, r) in &pairs {
            if l >= input_width || r >= input_width {
                return Err(Error::InvalidSize(format!(
                    "pair ({l}, {r}) exceeds input width {input_width}"
                )));
            }
            if l == r {
                return Err(Error::InvalidSize(format!("pair ({l}, {r}) repeats an input")));
            }
        }
        Ok(Self { pairs, input_width })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    /// Number of neurons.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Concept-pair weight matrix, one row per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct CpMatrix(Matrix);

impl CpMatrix {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidSize("CP matrix must be at least 1x1".into()));
        }
        if !weights.is_finite() {
            return Err(Error::InvalidSize("CP matrix has non-finite entries".into()));
        }
        Ok(Self(weights))
    }

    /// Entries drawn i.i.d. from U[0, 1).
    pub fn uniform(neurons: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..neurons * width).map(|_| rng.gen::<f64>()).collect();
        Self::new(Matrix::from_vec(neurons, width, data)?)
    }

    pub fn weights(&self) -> &Matrix {
        &self.0
    }
}

/// Per-neuron gate logits over a gate subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMixture {
    logits: Matrix,
    subset: GateSubset,
}

impl GateMixture {
    pub fn new(logits: Matrix, subset: GateSubset) -> Result<Self> {
        if logits.cols() != subset.len() {
            return Err(Error::shape(
                format!("{} logit columns", subset.len()),
                logits.cols(),
            ));
        }
        if logits.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidSize("gate logits must not be NaN or +inf".into()));
        }
        Ok(Self { logits, subset })
    }

    /// Near-uniform mixture: logits i.i.d. in `[-0.01, 0.01]`.
    pub fn init(neurons: usize, subset: GateSubset, rng: &mut impl Rng) -> Self {
        Self::init_with_range(neurons, subset, LOGIT_INIT_RANGE, rng)
    }

    /// Logits i.i.d. in `[-range, range]`.
    pub fn init_with_range(neurons: usize, subset: GateSubset, range: f64, rng: &mut impl Rng) -> Self {
        let q = subset.len();
        let data = (0..neurons * q).map(|_| rng.gen_range(-range..=range)).collect();
        Self {
            logits: Matrix::from_vec(neurons, q, data).expect("sized above"),
            subset,
        }
    }

    /// Every neuron puts all of its mass on `gates[i]` (other logits are -inf).
    pub fn one_hot(gates: &[GateId], subset: GateSubset) -> Result<Self> {
        let mut logits = Matrix::zeros(gates.len(), subset.len());
        for (i, g) in gates.iter().enumerate() {
            let pos = subset
                .ids()
                .iter()
                .position(|s| s == g)
                .ok_or(Error::UnknownGateId(g.index() as i64))?;
            for (j, l) in logits.row_mut(i).iter_mut().enumerate() {
                *l = if j == pos { 0.0 } else { f64::NEG_INFINITY };
            }
        }
        Self::new(logits, subset)
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Matrix {
        &mut self.logits
    }

    pub fn subset(&self) -> &GateSubset {
        &self.subset
    }

    pub fn neurons(&self) -> usize {
        self.logits.rows()
    }

    /// Gate distribution `g` of neuron `i`.
    pub fn distribution(&self, i: usize) -> Vec<f64> {
        softmax(self.logits.row(i))
    }
}

/// One layer of logic neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicLayer {
    pub plan: PairingPlan,
    pub mixture: GateMixture,
}

impl LogicLayer {
    pub fn new(plan: PairingPlan, mixture: GateMixture) -> Result<Self> {
        if plan.len() != mixture.neurons() {
            return Err(Error::shape(
                format!("{} mixture rows", plan.len()),
                mixture.neurons(),
            ));
        }
        Ok(Self { plan, mixture })
    }

    pub fn width(&self) -> usize {
        self.plan.len()
    }

    pub fn input_width(&self) -> usize {
        self.plan.input_width()
    }
}

/// Forward-pass record of a single neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrace {
    pub pair: (usize, usize),
    pub inputs: (f64, f64),
    pub distribution: Vec<f64>,
    /// Position of the active gate within the subset.
    pub active: usize,
    pub gate: GateId,
    pub gate_value: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub input_width: usize,
    pub neurons: Vec<NeuronTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub logits: Matrix,
    pub input: Vec<f64>,
}

fn clamp_input(v: f64) -> Result<f64> {
    if v.is_nan() || !(-INPUT_TOLERANCE..=1.0 + INPUT_TOLERANCE).contains(&v) {
        return Err(Error::InputOutOfRange { a: v, b: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Picks the branch maximizing `g_j · z_j`; ties go to the lowest gate id.
fn active_branch(subset: &[GateId], g: &[f64], a: f64, b: f64) -> (usize, f64, f64) {
    let mut best: Option<(usize, f64, f64)> = None;
    for (j, (&gate, &w)) in subset.iter().zip(g).enumerate() {
        let z = eval_unchecked(gate, a, b);
        let v = w * z;
        best = match best {
            Some((bj, bz, bv)) if bv > v || (bv == v && subset[bj] < gate) => Some((bj, bz, bv)),
            _ => Some((j, z, v)),
        };
    }
    best.expect("subsets are never empty")
}

pub fn layer_forward(input: &[f64], layer: &LogicLayer) -> Result<(Vec<f64>, LayerCache)> {
    if input.len() != layer.input_width() {
        return Err(Error::shape(layer.input_width(), input.len()));
    }
    let input = input.iter().map(|&v| clamp_input(v)).collect::<Result<Vec<_>>>()?;
    let subset = layer.mixture.subset().ids();
    let mut outputs = Vec::with_capacity(layer.width());
    let mut neurons = Vec::with_capacity(layer.width());
    for (i, &(ia, ib)) in layer.plan.pairs().iter().enumerate() {
        let (a, b) = (input[ia], input[ib]);
        let g = layer.mixture.distribution(i);
        let (active, gate_value, output) = active_branch(subset, &g, a, b);
        outputs.push(output);
        neurons.push(NeuronTrace {
            pair: (ia, ib),
            inputs: (a, b),
            gate: subset[active],
            distribution: g,
            active,
            gate_value,
            output,
        });
    }
    Ok((
        outputs,
        LayerCache {
            input_width: layer.input_width(),
            neurons,
        },
    ))
}

/// Reverse pass of [`layer_forward`] given `∂L/∂ẑ`.
pub fn layer_backward(cache: &LayerCache, upstream: &[f64]) -> Result<LayerGrad> {
    if upstream.len() != cache.neurons.len() {
        return Err(Error::StaleCache(format!(
            "upstream has {} entries for {} neurons",
            upstream.len(),
            cache.neurons.len()
        )));
    }
    let q = cache.neurons.first().map_or(0, |n| n.distribution.len());
    let mut logits = Matrix::zeros(cache.neurons.len(), q);
    let mut input = vec![0.0; cache.input_width];
    for (i, (n, &up)) in cache.neurons.iter().zip(upstream).enumerate() {
        if n.distribution.len() != q || n.pair.0 >= input.len() || n.pair.1 >= input.len() {
            return Err(Error::StaleCache(format!("neuron {i} does not match the cache shape")));
        }
        if up == 0.0 {
            continue;
        }
        let g_star = n.distribution[n.active];
        // d ẑ / d logit_m = z* · g*(δ_m* − g_m)
        let scale = up * n.gate_value * g_star;
        for (m, (gl, &gm)) in logits.row_mut(i).iter_mut().zip(&n.distribution).enumerate() {
            let delta = if m == n.active { 1.0 } else { 0.0 };
            *gl = scale * (delta - gm);
        }
        let (da, db) = grad_unchecked(n.gate, n.inputs.0, n.inputs.1);
        input[n.pair.0] += up * g_star * da;
        input[n.pair.1] += up * g_star * db;
    }
    Ok(LayerGrad { logits, input })
}

/// Input width each layer must have for a given concept width.
pub fn expected_input_width(
    layer_index: usize,
    prev_width: usize,
    concept_width: usize,
    passthrough: bool,
) -> usize {
    if layer_index == 0 {
        concept_width
    } else if passthrough {
        prev_width + concept_width
    } else {
        prev_width
    }
}

/// Checks the dimension chain of a stack over `concept_width` inputs.
pub fn validate_stack(layers: &[LogicLayer], concept_width: usize, passthrough: bool) -> Result<()> {
    let mut prev = concept_width;
    for (l, layer) in layers.iter().enumerate() {
        let expected = expected_input_width(l, prev, concept_width, passthrough);
        if layer.input_width() != expected {
            return Err(Error::ShapeMismatch {
                layer: Some(l),
                expected: format!("input width {expected}"),
                actual: layer.input_width().to_string(),
            });
        }
        prev = layer.width();
    }
    Ok(())
}

fn layer_input(l: usize, prev: &[f64], concepts: &[f64], passthrough: bool) -> Vec<f64> {
    if l > 0 && passthrough {
        let mut v = Vec::with_capacity(prev.len() + concepts.len());
        v.extend_from_slice(prev);
        v.extend_from_slice(concepts);
        v
    } else {
        prev.to_vec()
    }
}

/// Runs the layers in order. With `passthrough`, every layer after the first
/// sees `[previous outputs ‖ concepts]`.
pub fn stack_forward(
    concepts: &[f64],
    layers: &[LogicLayer],
    passthrough: bool,
) -> Result<(Vec<f64>, Vec<LayerCache>)> {
    validate_stack(layers, concepts.len(), passthrough)?;
    let mut current = concepts.to_vec();
    let mut caches = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let input = layer_input(l, &current, concepts, passthrough);
        let (out, cache) = layer_forward(&input, layer).map_err(|e| match e {
            Error::ShapeMismatch {
                expected, actual, ..
            } => Error::ShapeMismatch {
                layer: Some(l),
                expected,
                actual,
            },
            other => other,
        })?;
        current = out;
        caches.push(cache);
    }
    Ok((current, caches))
}

/// Reverse pass of [`stack_forward`]. Returns per-layer logit gradients and
/// the gradient with respect to the concepts.
pub fn stack_backward(
    caches: &[LayerCache],
    upstream: &[f64],
    concept_width: usize,
    passthrough: bool,
) -> Result<(Vec<Matrix>, Vec<f64>)> {
    let mut logit_grads = vec![Matrix::zeros(0, 0); caches.len()];
    let mut concept_grad = vec![0.0; concept_width];
    let mut up = upstream.to_vec();
    for l in (0..caches.len()).rev() {
        let g = layer_backward(&caches[l], &up)?;
        logit_grads[l] = g.logits;
        if l == 0 {
            for (c, v) in concept_grad.iter_mut().zip(&g.input) {
                *c += v;
            }
        } else {
            let prev = caches[l - 1].neurons.len();
            if passthrough {
                for (c, v) in concept_grad.iter_mut().zip(&g.input[prev..]) {
                    *c += v;
                }
            }
            up = g.input[..prev].to_vec();
        }
    }
    Ok((logit_grads, concept_grad))
}

/// Argmax gate per neuron; ties go to the lowest gate id.
pub fn harden(mixture: &GateMixture) -> Vec<GateId> {
    let ids = mixture.subset().ids();
    mixture
        .logits()
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] || (row[j] == row[best] && ids[j] < ids[best]) {
                    best = j;
                }
            }
            ids[best]
        })
        .collect()
}

/// Forward pass with every neuron replaced by its hardened gate (no mixture
/// weighting).
pub fn stack_forward_hard(
    concepts: &[f64],
    layers: &[LogicLayer],
    passthrough: bool,
) -> Result<Vec<Vec<f64>>> {
    validate_stack(layers, concepts.len(), passthrough)?;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut current = concepts.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let input = layer_input(l, &current, concepts, passthrough);
        let input = input.iter().map(|&v| clamp_input(v)).collect::<Result<Vec<_>>>()?;
        let gates = harden(&layer.mixture);
        current = layer
            .plan
            .pairs()
            .iter()
            .zip(&gates)
            .map(|(&(a, b), &g)| eval_unchecked(g, input[a], input[b]))
            .collect();
        outputs.push(current.clone());
    }
    Ok(outputs)
}

fn canonical(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Draws `neurons` pairs of distinct indices uniformly at random.
pub fn pair_random(input_width: usize, neurons: usize, seed: u64) -> Result<PairingPlan> {
    if input_width < 2 {
        return Err(Error::DegenerateConceptSpace(input_width));
    }
    if neurons < 1 {
        return Err(Error::InvalidSize("neuron count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..neurons)
        .map(|_| {
            let a = rng.gen_range(0..input_width);
            let mut b = rng.gen_range(0..input_width - 1);
            if b >= a {
                b += 1;
            }
            canonical(a, b)
        })
        .collect();
    PairingPlan::new(pairs, input_width)
}

/// Every unordered pair of inputs exactly once, in lexicographic order.
pub fn pair_exhaustive(input_width: usize) -> Result<PairingPlan> {
    if input_width < 2 {
        return Err(Error::DegenerateConceptSpace(input_width));
    }
    let pairs = (0..input_width)
        .flat_map(|a| (a + 1..input_width).map(move |b| (a, b)))
        .collect();
    PairingPlan::new(pairs, input_width)
}

/// Indices of the two largest values; ties go to the lower index. The
/// returned pair is in ascending index order.
pub fn argtop2(values: &[f64]) -> Result<(usize, usize)> {
    if values.len() < 2 {
        return Err(Error::DegenerateConceptSpace(values.len()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    Ok(canonical(order[0], order[1]))
}

/// Top-2 entries of every CP row.
pub fn pair_from_cp(cp: &CpMatrix) -> Result<PairingPlan> {
    let w = cp.weights();
    if w.cols() < 2 {
        return Err(Error::DegenerateConceptSpace(w.cols()));
    }
    let pairs = w.iter_rows().map(argtop2).collect::<Result<Vec<_>>>()?;
    PairingPlan::new(pairs, w.cols())
}

/// Correlated pairing: for each neuron, average the activations of a fresh
/// random subset of `samples_per_draw` rows and pair the two strongest
/// concepts of that mean.
pub fn pair_correlated(
    activations: &Matrix,
    neurons: usize,
    samples_per_draw: usize,
    seed: u64,
) -> Result<PairingPlan> {
    let (n, k) = activations.shape();
    if n == 0 {
        return Err(Error::EmptyActivations);
    }
    if k < 2 {
        return Err(Error::DegenerateConceptSpace(k));
    }
    if neurons < 1 {
        return Err(Error::InvalidSize("neuron count must be at least 1".into()));
    }
    let draw = samples_per_draw.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(neurons);
    for _ in 0..neurons {
        let mut mean = vec![0.0; k];
        for row in sample(&mut rng, n, draw).iter() {
            for (m, v) in mean.iter_mut().zip(activations.row(row)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= draw as f64);
        pairs.push(argtop2(&mean)?);
    }
    PairingPlan::new(pairs, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(gate: GateId, pair: (usize, usize), width: usize) -> LogicLayer {
        LogicLayer::new(
            PairingPlan::new(vec![pair], width).unwrap(),
            GateMixture::one_hot(&[gate], GateSubset::full16()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn random_pairing() {
        let plan = pair_random(2, 1, 99).unwrap();
        assert_eq!(plan.pairs(), &[(0, 1)]);
        assert_eq!(pair_random(4, 3, 42).unwrap(), pair_random(4, 3, 42).unwrap());
        assert!(matches!(pair_random(1, 1, 0), Err(Error::DegenerateConceptSpace(1))));
        assert!(matches!(pair_random(3, 0, 0), Err(Error::InvalidSize(_))));
        for &(a, b) in pair_random(7, 200, 5).unwrap().pairs() {
            assert!(a < b && b < 7);
        }
    }

    #[test]
    fn cp_pairing() {
        let cp = CpMatrix::new(
            Matrix::from_rows(&[[0.1, 0.9, 0.5], [0.5, 0.5, 0.1], [7.0, 7.0, 7.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(pair_from_cp(&cp).unwrap().pairs(), &[(1, 2), (0, 1), (0, 1)]);
        let narrow = CpMatrix::new(Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert!(matches!(pair_from_cp(&narrow), Err(Error::DegenerateConceptSpace(1))));
    }

    #[test]
    fn correlated_pairing() {
        let acts = Matrix::from_rows(&[[0.2, 0.9, 0.8, 0.1], [0.2, 0.9, 0.8, 0.1]]).unwrap();
        assert_eq!(pair_correlated(&acts, 1, 2, 0).unwrap().pairs(), &[(1, 2)]);
        let one = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(pair_correlated(&one, 1, 1, 0).unwrap().pairs(), &[(0, 1)]);
        let empty = Matrix::zeros(0, 3);
        assert!(matches!(pair_correlated(&empty, 1, 1, 0), Err(Error::EmptyActivations)));
    }

    #[test]
    fn exhaustive_pairing() {
        assert_eq!(
            pair_exhaustive(3).unwrap().pairs(),
            &[(0, 1), (0, 2), (1, 2)]
        );
    }

    #[test]
    fn forward_examples() {
        let (z, _) = layer_forward(&[1.0, 0.0], &single(GateId::XOR, (0, 1), 2)).unwrap();
        assert_eq!(z, vec![1.0]);

        let uniform = LogicLayer::new(
            PairingPlan::new(vec![(0, 1)], 2).unwrap(),
            GateMixture::new(Matrix::zeros(1, 16), GateSubset::full16()).unwrap(),
        )
        .unwrap();
        let (z, cache) = layer_forward(&[1.0, 1.0], &uniform).unwrap();
        assert_eq!(z, vec![1.0 / 16.0]);
        assert_eq!(cache.neurons[0].gate, GateId::AND);

        let wide = single(GateId::XOR, (0, 1), 4);
        assert!(matches!(
            layer_forward(&[0.0; 3], &wide),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            layer_forward(&[1.5, 0.0, 0.0, 0.0], &wide),
            Err(Error::InputOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_examples() {
        let layer = single(GateId::XOR, (0, 1), 2);
        let (_, cache) = layer_forward(&[0.3, 0.7], &layer).unwrap();
        let g = layer_backward(&cache, &[1.0]).unwrap();
        assert!((g.input[0] + 0.4).abs() < 1e-12);
        assert!((g.input[1] - 0.4).abs() < 1e-12);

        let g = layer_backward(&cache, &[0.0]).unwrap();
        assert!(g.input.iter().chain(g.logits.as_slice()).all(|&v| v == 0.0));
        assert!(matches!(layer_backward(&cache, &[1.0, 1.0]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn stacked_parity() {
        let l1 = single(GateId::XOR, (0, 1), 3);
        // layer 2 input: [z1, c0, c1, c2]
        let l2 = single(GateId::XOR, (0, 3), 4);
        let layers = [l1, l2];
        for r in 0..8u32 {
            let c: Vec<f64> = (0..3).map(|j| ((r >> (2 - j)) & 1) as f64).collect();
            let (z, caches) = stack_forward(&c, &layers, true).unwrap();
            assert_eq!(caches.len(), 2);
            assert_eq!(z[0], (r.count_ones() % 2) as f64);
        }
        let err = stack_forward(&[0.0; 3], &layers, false).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { layer: Some(1), .. }));
    }

    #[test]
    fn hardening() {
        let mut logits = Matrix::zeros(2, 16);
        logits[(0, 6)] = 2.0;
        let mix = GateMixture::new(logits, GateSubset::full16()).unwrap();
        assert_eq!(harden(&mix), vec![GateId::XOR, GateId::FALSE]);

        let simple = GateSubset::simple8();
        let mut logits = Matrix::zeros(1, 8);
        logits[(0, 4)] = 1.0;
        let mix = GateMixture::new(logits, simple).unwrap();
        assert_eq!(harden(&mix), vec![GateId::OR]);
    }
}
