//! Concept bottleneck models: the logic-headed model, the linear baseline,
//! and the dual-head finetuning architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::{GateId, GateSubset};
use crate::logic::{
    self, harden, pair_correlated, pair_exhaustive, pair_from_cp, pair_random, stack_forward,
    stack_forward_hard, validate_stack, CpMatrix, GateMixture, LayerCache, LogicLayer,
    PairingPlan,
};
use crate::tensor::{argmax, sigmoid, softmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Inputs are already concept probabilities.
    Identity,
    LinearSigmoid,
    /// ReLU hidden layers, logistic output.
    MlpSigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    pub concept_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
}

/// Affine map `w·x + b` with `w` stored as out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut d = Self::zeros(inputs, outputs);
        d.weight
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit..=limit));
        d
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(x);
        out.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        out
    }
}

/// Concept encoder `g: X → C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    spec: EncoderSpec,
    layers: Vec<Dense>,
}

/// Intermediate values of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Input to each dense layer.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each dense layer.
    pub pre: Vec<Vec<f64>>,
    pub concepts: Vec<f64>,
}

impl Encoder {
    pub fn zeros(spec: EncoderSpec) -> Result<Self> {
        Self::build(spec, |i, o| Dense::zeros(i, o))
    }

    pub fn init(spec: EncoderSpec, rng: &mut impl Rng) -> Result<Self> {
        Self::build(spec, |i, o| Dense::init(i, o, rng))
    }

    fn build(spec: EncoderSpec, mut make: impl FnMut(usize, usize) -> Dense) -> Result<Self> {
        if spec.concept_dim == 0 || spec.input_dim == 0 {
            return Err(Error::InvalidSize("encoder dimensions must be positive".into()));
        }
        let layers = match spec.kind {
            EncoderKind::Identity => {
                if spec.input_dim != spec.concept_dim {
                    return Err(Error::shape(
                        format!("identity encoder with input_dim = concept_dim = {}", spec.concept_dim),
                        spec.input_dim,
                    ));
                }
                Vec::new()
            }
            EncoderKind::LinearSigmoid => vec![make(spec.input_dim, spec.concept_dim)],
            EncoderKind::MlpSigmoid => {
                if spec.hidden_dims.is_empty() || spec.hidden_dims.contains(&0) {
                    return Err(Error::InvalidSize(
                        "mlp encoder needs non-empty, positive hidden_dims".into(),
                    ));
                }
                let mut dims = vec![spec.input_dim];
                dims.extend(&spec.hidden_dims);
                dims.push(spec.concept_dim);
                dims.windows(2).map(|w| make(w[0], w[1])).collect()
            }
        };
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x)?.concepts)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<EncoderTrace> {
        if x.len() != self.spec.input_dim {
            return Err(Error::shape(self.spec.input_dim, x.len()));
        }
        if self.spec.kind == EncoderKind::Identity {
            return Ok(EncoderTrace {
                inputs: Vec::new(),
                pre: Vec::new(),
                concepts: x.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, d) in self.layers.iter().enumerate() {
            let z = d.apply(&h);
            inputs.push(std::mem::take(&mut h));
            h = if i == last {
                z.iter().map(|&v| sigmoid(v).clamp(0.0, 1.0)).collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
        }
        Ok(EncoderTrace {
            inputs,
            pre,
            concepts: h,
        })
    }

    /// Weight and bias gradients of every dense layer given `∂L/∂concepts`.
    pub fn backward(&self, trace: &EncoderTrace, grad_concepts: &[f64]) -> Vec<Dense> {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|d| Dense::zeros(d.weight.cols(), d.weight.rows()))
            .collect();
        if self.layers.is_empty() {
            return grads;
        }
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = grad_concepts
            .iter()
            .zip(&trace.concepts)
            .map(|(g, c)| g * c * (1.0 - c))
            .collect();
        for i in (0..=last).rev() {
            grads[i].weight.add_outer(&delta, &trace.inputs[i], 1.0);
            grads[i].bias.copy_from_slice(&delta);
            if i > 0 {
                let back = self.layers[i].weight.t_matvec(&delta);
                delta = back
                    .iter()
                    .zip(&trace.pre[i - 1])
                    .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                    .collect();
            }
        }
        grads
    }
}

/// Linear map from head inputs (concepts or predicates) to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub use_bias: bool,
}

impl ClassHead {
    pub fn zeros(classes: usize, inputs: usize, use_bias: bool) -> Self {
        Self {
            weights: Matrix::zeros(classes, inputs),
            bias: vec![0.0; classes],
            use_bias,
        }
    }

    pub fn new(weights: Matrix, bias: Vec<f64>, use_bias: bool) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(weights.rows(), bias.len()));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidSize("class head entries must be finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            use_bias,
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, units: &[f64]) -> Result<Vec<f64>> {
        if units.len() != self.inputs() {
            return Err(Error::shape(self.inputs(), units.len()));
        }
        let mut f = self.weights.matvec(units);
        if self.use_bias {
            f.iter_mut().zip(&self.bias).for_each(|(o, b)| *o += b);
        }
        Ok(f)
    }

    /// Returns `(∂W, ∂b, ∂units)` for upstream `∂L/∂logits`.
    pub fn backward(&self, units: &[f64], grad_logits: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
        let mut gw = Matrix::zeros(self.classes(), self.inputs());
        gw.add_outer(grad_logits, units, 1.0);
        let gb = if self.use_bias {
            grad_logits.to_vec()
        } else {
            vec![0.0; self.classes()]
        };
        (gw, gb, self.weights.t_matvec(grad_logits))
    }
}

/// How a freshly built head is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Uniform in `±1/sqrt(p)`.
    #[default]
    Random,
    /// Predicate `c` scores class `c` (`p = n`): `V = s·I`.
    Identity,
    /// One predicate, two classes: class 1 when the predicate exceeds 0.5.
    Binary,
}

/// Full forward output of a logic-headed model.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicOutput {
    pub concepts: Vec<f64>,
    pub predicates: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Concept encoder, stacked logic layers, and a linear class head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicCbmModel {
    pub encoder: Encoder,
    pub layers: Vec<LogicLayer>,
    pub passthrough: bool,
    pub head: ClassHead,
    pub gate_subset: GateSubset,
    pub seed: u64,
}

impl LogicCbmModel {
    pub fn new(
        encoder: Encoder,
        layers: Vec<LogicLayer>,
        passthrough: bool,
        head: ClassHead,
        seed: u64,
    ) -> Result<Self> {
        let k = encoder.spec().concept_dim;
        if layers.is_empty() {
            return Err(Error::InvalidSize("a logic model needs at least one layer".into()));
        }
        validate_stack(&layers, k, passthrough)?;
        let p = layers.last().expect("non-empty").width();
        if head.inputs() != p {
            return Err(Error::shape(format!("head over {p} predicates"), head.inputs()));
        }
        let gate_subset = layers[0].mixture.subset().clone();
        Ok(Self {
            encoder,
            layers,
            passthrough,
            head,
            gate_subset,
            seed,
        })
    }

    pub fn concept_dim(&self) -> usize {
        self.encoder.spec().concept_dim
    }

    pub fn predicate_dim(&self) -> usize {
        self.head.inputs()
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogicOutput> {
        let concepts = self.encoder.forward(x)?;
        self.forward_from_concepts(concepts)
    }

    pub fn forward_from_concepts(&self, concepts: Vec<f64>) -> Result<LogicOutput> {
        let (predicates, _) = stack_forward(&concepts, &self.layers, self.passthrough)?;
        let logits = self.head.logits(&predicates)?;
        let probs = softmax(&logits);
        Ok(LogicOutput {
            concepts,
            predicates,
            logits,
            probs,
        })
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(LogicOutput, EncoderTrace, Vec<LayerCache>)> {
        let trace = self.encoder.forward_traced(x)?;
        let (predicates, caches) = stack_forward(&trace.concepts, &self.layers, self.passthrough)?;
        let logits = self.head.logits(&predicates)?;
        let probs = softmax(&logits);
        Ok((
            LogicOutput {
                concepts: trace.concepts.clone(),
                predicates,
                logits,
                probs,
            },
            trace,
            caches,
        ))
    }

    /// Hardened gates of every layer.
    pub fn hardened_gates(&self) -> Vec<Vec<GateId>> {
        self.layers.iter().map(|l| harden(&l.mixture)).collect()
    }

    /// Final-layer predicates with every neuron hardened to its argmax gate.
    pub fn hardened_predicates(&self, concepts: &[f64]) -> Result<Vec<f64>> {
        Ok(stack_forward_hard(concepts, &self.layers, self.passthrough)?
            .pop()
            .expect("at least one layer"))
    }

    /// Hardened value of final-layer neuron `unit` evaluated on `concepts`.
    pub fn hardened_unit(&self, unit: usize, concepts: &[f64]) -> Result<f64> {
        let predicates = self.hardened_predicates(concepts)?;
        predicates.get(unit).copied().ok_or(Error::IndexOutOfRange {
            index: unit,
            len: predicates.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptMode {
    #[default]
    Soft,
    /// Concepts are thresholded at 0.5 before the head.
    Boolean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaOutput {
    pub concepts: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// The linear concept bottleneck baseline `y = softmax(W·c + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaCbmModel {
    pub encoder: Encoder,
    pub head: ClassHead,
    pub mode: ConceptMode,
    pub seed: u64,
}

impl VanillaCbmModel {
    pub fn new(encoder: Encoder, head: ClassHead, mode: ConceptMode, seed: u64) -> Result<Self> {
        if head.inputs() != encoder.spec().concept_dim {
            return Err(Error::shape(
                format!("head over {} concepts", encoder.spec().concept_dim),
                head.inputs(),
            ));
        }
        Ok(Self {
            encoder,
            head,
            mode,
            seed,
        })
    }

    /// What the head sees for a concept vector.
    pub fn head_input(&self, concepts: &[f64]) -> Vec<f64> {
        match self.mode {
            ConceptMode::Soft => concepts.to_vec(),
            ConceptMode::Boolean => concepts
                .iter()
                .map(|&c| if c >= 0.5 { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<VanillaOutput> {
        let concepts = self.encoder.forward(x)?;
        self.forward_from_concepts(concepts)
    }

    pub fn forward_from_concepts(&self, concepts: Vec<f64>) -> Result<VanillaOutput> {
        let logits = self.head.logits(&self.head_input(&concepts))?;
        let probs = softmax(&logits);
        Ok(VanillaOutput {
            concepts,
            logits,
            probs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualOutput {
    pub concepts: Vec<f64>,
    pub probs_head1: Vec<f64>,
    pub probs_head2: Vec<f64>,
    pub predicates: Vec<f64>,
}

/// A linear CBM with an extra logic head reading the same concepts.
/// Predictions come from the logic head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualHeadModel {
    pub base: VanillaCbmModel,
    pub logic: LogicCbmModel,
}

impl DualHeadModel {
    /// `logic` must have an identity encoder over the base model's concepts;
    /// only its layers and head are used.
    pub fn new(base: VanillaCbmModel, layers: Vec<LogicLayer>, passthrough: bool, head: ClassHead) -> Result<Self> {
        let k = base.encoder.spec().concept_dim;
        let identity = Encoder::zeros(EncoderSpec {
            kind: EncoderKind::Identity,
            input_dim: k,
            concept_dim: k,
            hidden_dims: Vec::new(),
        })?;
        if head.classes() != base.head.classes() {
            return Err(Error::shape(base.head.classes(), head.classes()));
        }
        let seed = base.seed;
        let logic = LogicCbmModel::new(identity, layers, passthrough, head, seed)?;
        Ok(Self { base, logic })
    }

    pub fn forward(&self, x: &[f64]) -> Result<DualOutput> {
        let concepts = self.base.encoder.forward(x)?;
        let head1 = self.base.forward_from_concepts(concepts)?;
        let (predicates, _) = stack_forward(&head1.concepts, &self.logic.layers, self.logic.passthrough)?;
        let probs_head2 = softmax(&self.logic.head.logits(&predicates)?);
        Ok(DualOutput {
            concepts: head1.concepts,
            probs_head1: head1.probs,
            probs_head2,
            predicates,
        })
    }
}

/// Any of the three model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Logic(LogicCbmModel),
    Vanilla(VanillaCbmModel),
    Dual(DualHeadModel),
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Logic(_) => "logic",
            Model::Vanilla(_) => "vanilla",
            Model::Dual(_) => "dual",
        }
    }

    pub fn encoder(&self) -> &Encoder {
        match self {
            Model::Logic(m) => &m.encoder,
            Model::Vanilla(m) => &m.encoder,
            Model::Dual(m) => &m.base.encoder,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder().spec().input_dim
    }

    pub fn concept_dim(&self) -> usize {
        self.encoder().spec().concept_dim
    }

    pub fn class_count(&self) -> usize {
        self.operative_head().classes()
    }

    pub fn seed(&self) -> u64 {
        match self {
            Model::Logic(m) => m.seed,
            Model::Vanilla(m) => m.seed,
            Model::Dual(m) => m.base.seed,
        }
    }

    /// The head whose output is the model's prediction.
    pub fn operative_head(&self) -> &ClassHead {
        match self {
            Model::Logic(m) => &m.head,
            Model::Vanilla(m) => &m.head,
            Model::Dual(m) => &m.logic.head,
        }
    }

    /// The logic part of the model, if it has one.
    pub fn logic(&self) -> Option<&LogicCbmModel> {
        match self {
            Model::Logic(m) => Some(m),
            Model::Vanilla(_) => None,
            Model::Dual(m) => Some(&m.logic),
        }
    }

    pub fn concepts(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder().forward(x)
    }

    /// Values the operative head reads: concepts for the linear model,
    /// final-layer predicates otherwise.
    pub fn units(&self, concepts: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Vanilla(m) => Ok(m.head_input(concepts)),
            _ => {
                let l = self.logic().expect("logic model");
                Ok(stack_forward(concepts, &l.layers, l.passthrough)?.0)
            }
        }
    }

    pub fn unit_count(&self) -> usize {
        self.operative_head().inputs()
    }

    /// Ground-truth-derived value of head unit `unit`: the concept itself for
    /// the linear model, the hardened predicate over ground-truth concepts
    /// for logic models.
    pub fn unit_ground_truth(&self, unit: usize, concept_gt: &[f64]) -> Result<f64> {
        match self {
            Model::Vanilla(_) => Ok(concept_gt[unit]),
            _ => self.logic().expect("logic model").hardened_unit(unit, concept_gt),
        }
    }

    /// [`Model::unit_ground_truth`] for every unit.
    pub fn unit_ground_truths(&self, concept_gt: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Vanilla(_) => Ok(concept_gt.to_vec()),
            _ => self.logic().expect("logic model").hardened_predicates(concept_gt),
        }
    }

    pub fn probs_from_units(&self, units: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.operative_head().logits(units)?))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.concepts(x)?;
        self.probs_from_units(&self.units(&c)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    /// Prediction with every logic neuron hardened to its argmax gate; the
    /// ordinary prediction for the linear model.
    pub fn predict_hardened(&self, x: &[f64]) -> Result<usize> {
        match self.logic() {
            None => self.predict(x),
            Some(l) => {
                let z = l.hardened_predicates(&self.concepts(x)?)?;
                Ok(argmax(&self.operative_head().logits(&z)?))
            }
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn params(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        fn enc<'a>(out: &mut Vec<(String, &'a [f64])>, e: &'a Encoder) {
            for (i, d) in e.layers().iter().enumerate() {
                out.push((format!("encoder.{i}.weight"), d.weight.as_slice()));
                out.push((format!("encoder.{i}.bias"), &d.bias[..]));
            }
        }
        match self {
            Model::Logic(m) => {
                enc(&mut out, &m.encoder);
                for (l, layer) in m.layers.iter().enumerate() {
                    out.push((format!("logic.{l}.logits"), layer.mixture.logits().as_slice()));
                }
                out.push(("head.weight".into(), m.head.weights.as_slice()));
                out.push(("head.bias".into(), &m.head.bias[..]));
            }
            Model::Vanilla(m) => {
                enc(&mut out, &m.encoder);
                out.push(("head.weight".into(), m.head.weights.as_slice()));
                out.push(("head.bias".into(), &m.head.bias[..]));
            }
            Model::Dual(m) => {
                enc(&mut out, &m.base.encoder);
                out.push(("head1.weight".into(), m.base.head.weights.as_slice()));
                out.push(("head1.bias".into(), &m.base.head.bias[..]));
                for (l, layer) in m.logic.layers.iter().enumerate() {
                    out.push((format!("logic.{l}.logits"), layer.mixture.logits().as_slice()));
                }
                out.push(("head2.weight".into(), m.logic.head.weights.as_slice()));
                out.push(("head2.bias".into(), &m.logic.head.bias[..]));
            }
        }
        out
    }

    /// Mutable view of [`Model::params`], same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn enc<'a>(out: &mut Vec<(String, &'a mut [f64])>, e: &'a mut Encoder) {
            for (i, d) in e.layers_mut().iter_mut().enumerate() {
                out.push((format!("encoder.{i}.weight"), d.weight.as_mut_slice()));
                out.push((format!("encoder.{i}.bias"), &mut d.bias[..]));
            }
        }
        match self {
            Model::Logic(m) => {
                enc(&mut out, &mut m.encoder);
                for (l, layer) in m.layers.iter_mut().enumerate() {
                    out.push((format!("logic.{l}.logits"), layer.mixture.logits_mut().as_mut_slice()));
                }
                out.push(("head.weight".into(), m.head.weights.as_mut_slice()));
                out.push(("head.bias".into(), &mut m.head.bias[..]));
            }
            Model::Vanilla(m) => {
                enc(&mut out, &mut m.encoder);
                out.push(("head.weight".into(), m.head.weights.as_mut_slice()));
                out.push(("head.bias".into(), &mut m.head.bias[..]));
            }
            Model::Dual(m) => {
                enc(&mut out, &mut m.base.encoder);
                out.push(("head1.weight".into(), m.base.head.weights.as_mut_slice()));
                out.push(("head1.bias".into(), &mut m.base.head.bias[..]));
                for (l, layer) in m.logic.layers.iter_mut().enumerate() {
                    out.push((format!("logic.{l}.logits"), layer.mixture.logits_mut().as_mut_slice()));
                }
                out.push(("head2.weight".into(), m.logic.head.weights.as_mut_slice()));
                out.push(("head2.bias".into(), &mut m.logic.head.bias[..]));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Logic,
    Vanilla,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    #[default]
    Random,
    /// Top-2 of a seeded uniform CP matrix, extracted once.
    Cp,
    /// Top-2 of mean activations over random sample draws.
    Correlated,
    /// Every unordered input pair once; width is implied.
    Exhaustive,
}

/// One logic layer of an architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    /// Neuron count; ignored for exhaustive and explicit pairings.
    #[serde(default)]
    pub width: usize,
    #[serde(default)]
    pub pairing: PairingMode,
    /// Explicit input pairs, overriding `pairing`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl LayerConfig {
    pub fn random(width: usize) -> Self {
        Self {
            width,
            pairing: PairingMode::Random,
            pairs: None,
        }
    }

    pub fn explicit(pairs: Vec<(usize, usize)>) -> Self {
        Self {
            width: pairs.len(),
            pairing: PairingMode::Random,
            pairs: Some(pairs),
        }
    }

    pub fn exhaustive() -> Self {
        Self {
            width: 0,
            pairing: PairingMode::Exhaustive,
            pairs: None,
        }
    }
}

fn default_samples_per_draw() -> usize {
    32
}

fn default_head_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Everything needed to build a fresh model for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default)]
    pub kind: ModelKind,
    pub encoder: EncoderKind,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// `full16`, `simple8`, or a comma-separated id list.
    #[serde(default = "default_subset")]
    pub gate_subset: String,
    #[serde(default)]
    pub layers: Vec<LayerConfig>,
    #[serde(default)]
    pub passthrough: bool,
    #[serde(default)]
    pub head_init: HeadInit,
    #[serde(default = "default_head_scale")]
    pub head_scale: f64,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    #[serde(default)]
    pub concept_mode: ConceptMode,
    #[serde(default = "default_samples_per_draw")]
    pub samples_per_draw: usize,
    /// Gate logits start i.i.d. in `[-range, range]`.
    #[serde(default = "default_logit_init_range")]
    pub logit_init_range: f64,
}

fn default_logit_init_range() -> f64 {
    logic::LOGIT_INIT_RANGE
}

fn default_subset() -> String {
    "full16".into()
}

impl ArchConfig {
    pub fn logic(encoder: EncoderKind, layers: Vec<LayerConfig>) -> Self {
        Self {
            kind: ModelKind::Logic,
            encoder,
            hidden_dims: Vec::new(),
            gate_subset: default_subset(),
            layers,
            passthrough: false,
            head_init: HeadInit::Random,
            head_scale: 1.0,
            use_bias: true,
            concept_mode: ConceptMode::Soft,
            samples_per_draw: default_samples_per_draw(),
            logit_init_range: default_logit_init_range(),
        }
    }

    pub fn vanilla(encoder: EncoderKind) -> Self {
        Self {
            kind: ModelKind::Vanilla,
            ..Self::logic(encoder, Vec::new())
        }
    }
}

/// Dimensions of the data a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataDims {
    pub input_dim: usize,
    pub concept_dim: usize,
    pub classes: usize,
}

fn build_head(
    init: HeadInit,
    scale: f64,
    classes: usize,
    inputs: usize,
    use_bias: bool,
    rng: &mut impl Rng,
) -> Result<ClassHead> {
    let mut head = ClassHead::zeros(classes, inputs, use_bias);
    match init {
        HeadInit::Random => {
            let limit = 1.0 / (inputs as f64).sqrt();
            head.weights
                .as_mut_slice()
                .iter_mut()
                .for_each(|w| *w = rng.gen_range(-limit..=limit));
        }
        HeadInit::Identity => {
            if classes != inputs {
                return Err(Error::InvalidConfig(format!(
                    "identity head needs as many predicates as classes ({inputs} vs {classes})"
                )));
            }
            head.weights = Matrix::identity(classes);
            head.weights.as_mut_slice().iter_mut().for_each(|w| *w *= scale);
        }
        HeadInit::Binary => {
            if classes != 2 || inputs != 1 {
                return Err(Error::InvalidConfig(
                    "binary head needs one predicate and two classes".into(),
                ));
            }
            head.weights = Matrix::from_vec(2, 1, vec![-scale, scale])?;
            head.bias = vec![scale / 2.0, -scale / 2.0];
            head.use_bias = true;
        }
    }
    Ok(head)
}

/// Builds the logic layers of `arch` over `concept_dim` inputs.
/// `activations` (rows of concept values) feed correlated pairing, which is
/// only available for the first layer.
pub fn build_layers(
    arch: &ArchConfig,
    concept_dim: usize,
    activations: Option<&Matrix>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LogicLayer>> {
    let subset = GateSubset::parse(&arch.gate_subset)?;
    let mut layers: Vec<LogicLayer> = Vec::with_capacity(arch.layers.len());
    let mut prev_width = concept_dim;
    for (l, lc) in arch.layers.iter().enumerate() {
        let width = logic::expected_input_width(l, prev_width, concept_dim, arch.passthrough);
        let plan = match (&lc.pairs, lc.pairing) {
            (Some(pairs), _) => PairingPlan::new(pairs.clone(), width)?,
            (None, PairingMode::Random) => pair_random(width, lc.width, rng.gen())?,
            (None, PairingMode::Exhaustive) => pair_exhaustive(width)?,
            (None, PairingMode::Cp) => {
                pair_from_cp(&CpMatrix::uniform(lc.width.max(1), width, rng.gen())?)?
            }
            (None, PairingMode::Correlated) => {
                let acts = activations.filter(|_| l == 0).ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "correlated pairing at layer {l} needs concept activations (first layer only)"
                    ))
                })?;
                pair_correlated(acts, lc.width, arch.samples_per_draw, rng.gen())?
            }
        };
        let mixture = GateMixture::init_with_range(plan.len(), subset.clone(), arch.logit_init_range, rng);
        prev_width = plan.len();
        layers.push(LogicLayer::new(plan, mixture)?);
    }
    Ok(layers)
}

fn build_encoder(arch: &ArchConfig, dims: DataDims, rng: &mut ChaCha8Rng) -> Result<Encoder> {
    Encoder::init(
        EncoderSpec {
            kind: arch.encoder,
            input_dim: dims.input_dim,
            concept_dim: dims.concept_dim,
            hidden_dims: arch.hidden_dims.clone(),
        },
        rng,
    )
}

/// Builds a freshly initialized model; identical arguments give identical
/// parameters.
pub fn build_model(
    arch: &ArchConfig,
    dims: DataDims,
    seed: u64,
    activations: Option<&Matrix>,
) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = build_encoder(arch, dims, &mut rng)?;
    match arch.kind {
        ModelKind::Vanilla => {
            let head = build_head(
                HeadInit::Random,
                arch.head_scale,
                dims.classes,
                dims.concept_dim,
                arch.use_bias,
                &mut rng,
            )?;
            Ok(Model::Vanilla(VanillaCbmModel::new(encoder, head, arch.concept_mode, seed)?))
        }
        ModelKind::Logic | ModelKind::Dual => {
            if arch.layers.is_empty() {
                return Err(Error::InvalidConfig("logic models need at least one layer".into()));
            }
            let layers = build_layers(arch, dims.concept_dim, activations, &mut rng)?;
            let p = layers.last().expect("non-empty").width();
            let head = build_head(arch.head_init, arch.head_scale, dims.classes, p, arch.use_bias, &mut rng)?;
            if arch.kind == ModelKind::Logic {
                return Ok(Model::Logic(LogicCbmModel::new(
                    encoder,
                    layers,
                    arch.passthrough,
                    head,
                    seed,
                )?));
            }
            let base_head = build_head(
                HeadInit::Random,
                1.0,
                dims.classes,
                dims.concept_dim,
                arch.use_bias,
                &mut rng,
            )?;
            let base = VanillaCbmModel::new(encoder, base_head, arch.concept_mode, seed)?;
            Ok(Model::Dual(DualHeadModel::new(base, layers, arch.passthrough, head)?))
        }
    }
}
