//! Rule extraction and audit metrics over trained models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{ConceptDataset, Split};
use crate::error::{Error, Result};
use crate::formula::{all_assignments, Formula};
use crate::gates::GateId;
use crate::logic::{harden, stack_forward};
use crate::model::{LogicCbmModel, Model};
use crate::tensor::{argmax, softmax, Matrix};

/// Symbolic form of every final-layer neuron, with passthrough inputs
/// resolved to concepts.
pub fn unit_formulas(model: &LogicCbmModel) -> Vec<Formula> {
    let k = model.concept_dim();
    let mut prev: Vec<Formula> = (0..k).map(Formula::Concept).collect();
    for (l, layer) in model.layers.iter().enumerate() {
        let input: Vec<Formula> = if l == 0 {
            prev.clone()
        } else if model.passthrough {
            prev.iter().cloned().chain((0..k).map(Formula::Concept)).collect()
        } else {
            prev.clone()
        };
        prev = layer
            .plan
            .pairs()
            .iter()
            .zip(harden(&layer.mixture))
            .map(|(&(a, b), gate)| {
                Formula::Binary(gate, Box::new(input[a].clone()), Box::new(input[b].clone())).simplify()
            })
            .collect();
    }
    prev
}

/// Concept count up to which class rules are derived by enumeration.
pub const MAX_RULE_CONCEPTS: usize = 16;

/// Symbolic readout of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFormula {
    pub class: usize,
    /// Head weight and hardened predicate, by decreasing `|weight|`.
    pub terms: Vec<(f64, Formula)>,
    /// Boolean rule over concepts on which the hardened model predicts this
    /// class, composed from the predicate formulas. `None` above
    /// [`MAX_RULE_CONCEPTS`].
    pub rule: Option<Formula>,
}

impl ClassFormula {
    pub fn render_terms(&self, names: &[String]) -> String {
        self.terms
            .iter()
            .map(|(w, f)| format!("{w:+.4}*{}", f.render(names)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per class, the `top_w` hardened predicates with the largest head weights
/// in magnitude (ties to the lower unit index), and the class rule.
pub fn extract_formulas(model: &LogicCbmModel, top_w: usize) -> Result<Vec<ClassFormula>> {
    let units = unit_formulas(model);
    let rules = if model.concept_dim() <= MAX_RULE_CONCEPTS {
        class_rules(model, &units)?.into_iter().map(Some).collect()
    } else {
        vec![None; model.head.classes()]
    };
    let w = &model.head.weights;
    Ok(rules
        .into_iter()
        .enumerate()
        .map(|(class, rule)| {
            let row = w.row(class);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
            ClassFormula {
                class,
                terms: order
                    .into_iter()
                    .take(top_w)
                    .map(|u| (row[u], units[u].clone()))
                    .collect(),
                rule,
            }
        })
        .collect())
}

fn bool_vec(a: &[bool]) -> Vec<f64> {
    a.iter().map(|&b| f64::from(u8::from(b))).collect()
}

/// Rows of the boolean cube on which the hardened model predicts each
/// class, plus the hardened predicate truth values per row.
fn hardened_table(model: &LogicCbmModel) -> Result<(Vec<usize>, Vec<Vec<bool>>)> {
    let mut decisions = Vec::new();
    let mut predicates = Vec::new();
    for a in all_assignments(model.concept_dim())? {
        let z = model.hardened_predicates(&bool_vec(&a))?;
        decisions.push(argmax(&model.head.logits(&z)?));
        predicates.push(z.iter().map(|&v| v >= 0.5).collect());
    }
    Ok((decisions, predicates))
}

/// Shortest rule found among: one predicate, its negation, one gate over
/// two predicates, then a disjunction of predicate patterns.
fn class_rules(model: &LogicCbmModel, units: &[Formula]) -> Result<Vec<Formula>> {
    let (decisions, predicates) = hardened_table(model)?;
    let columns: Vec<Vec<bool>> = (0..units.len())
        .map(|i| predicates.iter().map(|row| row[i]).collect())
        .collect();
    let mut rules = Vec::with_capacity(model.head.classes());
    for class in 0..model.head.classes() {
        let target: Vec<bool> = decisions.iter().map(|&d| d == class).collect();
        rules.push(search_rule(&target, &columns, &predicates, units));
    }
    Ok(rules)
}

fn search_rule(target: &[bool], columns: &[Vec<bool>], rows: &[Vec<bool>], units: &[Formula]) -> Formula {
    let constant = |value: bool| {
        let gate = if value { GateId::TRUE } else { GateId::FALSE };
        Formula::Binary(gate, Box::new(Formula::Concept(0)), Box::new(Formula::Concept(0)))
    };
    if target.iter().all(|&t| t) {
        return constant(true);
    }
    if target.iter().all(|&t| !t) {
        return constant(false);
    }
    for (i, col) in columns.iter().enumerate() {
        if col.as_slice() == target {
            return units[i].clone();
        }
        if col.iter().zip(target).all(|(a, b)| a != b) {
            return Formula::Not(Box::new(units[i].clone())).simplify();
        }
    }
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            for gate in GateId::all() {
                let hit = columns[i]
                    .iter()
                    .zip(&columns[j])
                    .zip(target)
                    .all(|((&a, &b), &t)| gate.apply_bool(a, b) == t);
                if hit {
                    return Formula::Binary(gate, Box::new(units[i].clone()), Box::new(units[j].clone()))
                        .simplify();
                }
            }
        }
    }
    let mut patterns: Vec<&Vec<bool>> = rows.iter().zip(target).filter(|(_, &t)| t).map(|(r, _)| r).collect();
    patterns.sort();
    patterns.dedup();
    let literal = |i: usize, v: bool| {
        if v {
            units[i].clone()
        } else {
            Formula::Not(Box::new(units[i].clone())).simplify()
        }
    };
    let conj = |pat: &Vec<bool>| {
        (1..pat.len()).fold(literal(0, pat[0]), |acc, i| {
            Formula::Binary(GateId::AND, Box::new(acc), Box::new(literal(i, pat[i])))
        })
    };
    let mut it = patterns.into_iter();
    let first = conj(it.next().expect("target has a true row"));
    it.fold(first, |acc, pat| Formula::Binary(GateId::OR, Box::new(acc), Box::new(conj(pat))))
}

/// Boolean assignments on which the hardened model predicts `class`, in
/// enumeration order.
pub fn decision_region(model: &LogicCbmModel, class: usize) -> Result<Vec<Vec<bool>>> {
    let (decisions, _) = hardened_table(model)?;
    Ok(all_assignments(model.concept_dim())?
        .zip(decisions)
        .filter(|(_, d)| *d == class)
        .map(|(a, _)| a)
        .collect())
}

/// Whether the hardened model predicts `class` on exactly the assignments
/// satisfying `rule`.
pub fn decision_matches(model: &LogicCbmModel, class: usize, rule: &Formula) -> Result<bool> {
    let region = decision_region(model, class)?;
    let mut expected = Vec::new();
    for a in all_assignments(model.concept_dim())? {
        if rule.eval(&a)? {
            expected.push(a);
        }
    }
    Ok(region == expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `None` for classes with fewer than two usable samples.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over scored classes.
    pub mean: Option<f64>,
    pub skipped_classes: Vec<usize>,
    /// `(class, sample)` positions of all-zero activation vectors.
    pub zero_vectors: Vec<(usize, usize)>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean pairwise cosine similarity of activation vectors within each class.
/// Zero vectors are reported and excluded from every pair.
pub fn concept_alignment(groups: &[Vec<Vec<f64>>]) -> AlignmentReport {
    let mut per_class = Vec::with_capacity(groups.len());
    let mut skipped = Vec::new();
    let mut zero_vectors = Vec::new();
    for (class, rows) in groups.iter().enumerate() {
        let usable: Vec<&Vec<f64>> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                if r.iter().all(|&v| v == 0.0) {
                    zero_vectors.push((class, i));
                    None
                } else {
                    Some(r)
                }
            })
            .collect();
        if usable.len() < 2 {
            skipped.push(class);
            per_class.push(None);
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..usable.len() {
            for j in i + 1..usable.len() {
                sum += cosine(usable[i], usable[j]);
                pairs += 1;
            }
        }
        per_class.push(Some(sum / pairs as f64));
    }
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    AlignmentReport {
        per_class,
        mean,
        skipped_classes: skipped,
        zero_vectors,
    }
}

/// Concept activations of `split` grouped by true class.
pub fn activations_by_class(
    model: &Model,
    dataset: &ConceptDataset,
    split: Option<Split>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut groups = vec![Vec::new(); dataset.class_count()];
    for i in dataset.select(split) {
        groups[dataset.label(i)].push(model.concepts(dataset.input(i))?);
    }
    Ok(groups)
}

/// Which units an intervention may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    /// Any unit, uniformly at random.
    #[default]
    Uniform,
    /// Only units whose thresholded value disagrees with the ground truth.
    Mismatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionOutcome {
    pub pre: usize,
    pub post: usize,
    /// Units overwritten, in selection order.
    pub units: Vec<usize>,
    /// Set when the requested budget exceeded the available units.
    pub clamped: bool,
}

/// Units an intervention with `count` corrected concepts touches: `count`
/// concepts for the linear model, `⌈count/2⌉` predicates otherwise.
pub fn intervention_budget(model: &Model, count: usize) -> usize {
    match model {
        Model::Vanilla(_) => count,
        _ => count.div_ceil(2),
    }
}

/// Overwrites randomly chosen head units with their ground-truth-derived
/// values and re-runs the head. Budgets are nested: for a fixed seed, the
/// units chosen for a smaller count are a prefix of those for a larger one.
pub fn intervene(
    model: &Model,
    x: &[f64],
    concept_gt: &[f64],
    count: usize,
    seed: u64,
    mode: InterventionMode,
) -> Result<InterventionOutcome> {
    if concept_gt.len() != model.concept_dim() {
        return Err(Error::shape(model.concept_dim(), concept_gt.len()));
    }
    let concepts = model.concepts(x)?;
    let mut units = model.units(&concepts)?;
    let pre = argmax(&model.probs_from_units(&units)?);
    let gt = model.unit_ground_truths(concept_gt)?;

    let mut candidates: Vec<usize> = (0..units.len())
        .filter(|&u| match mode {
            InterventionMode::Uniform => true,
            InterventionMode::Mismatched => (units[u] >= 0.5) != (gt[u] >= 0.5),
        })
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let budget = intervention_budget(model, count);
    let clamped = budget > units.len();
    if clamped {
        log::warn!(
            "intervention budget {budget} exceeds {} available units; clamping",
            units.len()
        );
    }
    candidates.truncate(budget);
    for &u in &candidates {
        units[u] = gt[u];
    }
    let post = argmax(&model.probs_from_units(&units)?);
    Ok(InterventionOutcome {
        pre,
        post,
        units: candidates,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRatio {
    pub count: usize,
    pub misclassified: usize,
    pub corrected: usize,
    /// `None` when nothing was misclassified.
    pub ratio: Option<f64>,
}

/// Per-row intervention seed derived from a run seed.
pub fn row_seed(seed: u64, row: usize) -> u64 {
    seed ^ (row as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Fraction of misclassified rows of `split` whose prediction becomes
/// correct after an intervention of size `count`.
pub fn intervention_success_ratio(
    model: &Model,
    dataset: &ConceptDataset,
    split: Option<Split>,
    count: usize,
    seed: u64,
    mode: InterventionMode,
) -> Result<SuccessRatio> {
    if dataset.concept_dim() == 0 {
        return Err(Error::MissingConceptGroundTruth);
    }
    let mut misclassified = 0;
    let mut corrected = 0;
    for i in dataset.select(split) {
        let y = dataset.label(i);
        let out = intervene(model, dataset.input(i), dataset.concept_row(i), count, row_seed(seed, i), mode)?;
        if out.pre != y {
            misclassified += 1;
            if out.post == y {
                corrected += 1;
            }
        }
    }
    Ok(SuccessRatio {
        count,
        misclassified,
        corrected,
        ratio: (misclassified > 0).then(|| corrected as f64 / misclassified as f64),
    })
}

/// Unit with the largest `|W[y] - W[ŷ]|`; ties go to the lowest index.
pub fn misleading_unit(weights: &Matrix, y_true: usize, y_pred: usize) -> Result<usize> {
    if y_true == y_pred {
        return Err(Error::SameClass(y_true));
    }
    for &c in &[y_true, y_pred] {
        if c >= weights.rows() {
            return Err(Error::InvalidLabel {
                label: c,
                classes: weights.rows(),
            });
        }
    }
    let (a, b) = (weights.row(y_true), weights.row(y_pred));
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(argmax(&diffs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcgSample {
    pub row: usize,
    pub unit: usize,
    /// True-class probability before the correction.
    pub pre: f64,
    /// True-class probability after the correction.
    pub post: f64,
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcgReport {
    /// `None` when no sample was corrected.
    pub ccg: Option<f64>,
    pub corrected: usize,
    pub evaluated: usize,
    pub samples: Vec<CcgSample>,
}

/// Fixes the misleading unit of one misclassified sample. `unit_gt` gives
/// the ground-truth-derived value of each unit.
pub fn correct_misleading_unit(
    model: &Model,
    units: &[f64],
    unit_gt: &[f64],
    y_true: usize,
) -> Result<Option<(usize, f64, f64, usize)>> {
    let head = model.operative_head();
    let probs = softmax(&head.logits(units)?);
    let y_pred = argmax(&probs);
    if y_pred == y_true {
        return Ok(None);
    }
    let unit = misleading_unit(&head.weights, y_true, y_pred)?;
    let mut fixed = units.to_vec();
    fixed[unit] = unit_gt[unit];
    let post = softmax(&head.logits(&fixed)?);
    Ok(Some((unit, probs[y_true], post[y_true], argmax(&post))))
}

/// Concept correction gain over the misclassified rows of `split`.
pub fn ccg(model: &Model, dataset: &ConceptDataset, split: Option<Split>) -> Result<CcgReport> {
    if dataset.concept_dim() == 0 {
        return Err(Error::MissingConceptGroundTruth);
    }
    let mut samples = Vec::new();
    let mut evaluated = 0;
    for i in dataset.select(split) {
        evaluated += 1;
        let y = dataset.label(i);
        let units = model.units(&model.concepts(dataset.input(i))?)?;
        let gt = model.unit_ground_truths(dataset.concept_row(i))?;
        if let Some((unit, pre, post, new_pred)) = correct_misleading_unit(model, &units, &gt, y)? {
            samples.push(CcgSample {
                row: i,
                unit,
                pre,
                post,
                corrected: new_pred == y,
            });
        }
    }
    let gains: Vec<f64> = samples.iter().filter(|s| s.corrected).map(|s| s.post - s.pre).collect();
    Ok(CcgReport {
        ccg: (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64),
        corrected: gains.len(),
        evaluated,
        samples,
    })
}

/// Counts of active gates, indexed by gate id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateHistogram {
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
}

impl GateHistogram {
    fn from_counts(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        let frequencies = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        Self { counts, frequencies }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Most frequent gate; ties go to the lowest id.
    pub fn mode(&self) -> GateId {
        GateId::new(argmax(&self.frequencies) as i64).expect("histograms have 16 bins")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDistribution {
    pub global: GateHistogram,
    /// Per true class; empty unless grouping was requested.
    pub per_class: Vec<GateHistogram>,
}

/// Histogram of the input-dependent active gate (the branch maximizing
/// `g_j · z_j`) over every neuron of every layer and every row of `split`.
pub fn gate_distribution(
    model: &Model,
    dataset: &ConceptDataset,
    split: Option<Split>,
    group_by_class: bool,
) -> Result<GateDistribution> {
    let logic = model
        .logic()
        .ok_or_else(|| Error::InvalidConfig("gate distributions need a logic model".into()))?;
    let rows = dataset.select(split);
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut global = vec![0u64; 16];
    let mut per_class = vec![vec![0u64; 16]; if group_by_class { dataset.class_count() } else { 0 }];
    for i in rows {
        let concepts = model.concepts(dataset.input(i))?;
        let (_, caches) = stack_forward(&concepts, &logic.layers, logic.passthrough)?;
        for n in caches.iter().flat_map(|c| &c.neurons) {
            let g = n.gate.index();
            global[g] += 1;
            if group_by_class {
                per_class[dataset.label(i)][g] += 1;
            }
        }
    }
    Ok(GateDistribution {
        global: GateHistogram::from_counts(global),
        per_class: per_class.into_iter().map(GateHistogram::from_counts).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misleading_unit_examples() {
        let w = Matrix::from_rows(&[vec![0.2, 0.9], vec![0.8, 0.1]]).unwrap();
        assert_eq!(misleading_unit(&w, 0, 1).unwrap(), 1);
        assert_eq!(misleading_unit(&Matrix::identity(2), 0, 1).unwrap(), 0);
        assert!(matches!(misleading_unit(&w, 1, 1), Err(Error::SameClass(1))));
    }

    #[test]
    fn misleading_unit_ignores_constant_shift() {
        let w = Matrix::from_rows(&[vec![0.2, -0.9, 0.4], vec![0.8, 0.1, 0.3]]).unwrap();
        let mut shifted = w.clone();
        shifted.as_mut_slice().iter_mut().for_each(|v| *v += 3.7);
        assert_eq!(misleading_unit(&w, 0, 1).unwrap(), misleading_unit(&shifted, 0, 1).unwrap());
    }

    #[test]
    fn alignment_examples() {
        let r = concept_alignment(&[vec![vec![0.3, 0.4], vec![0.3, 0.4], vec![0.3, 0.4]]]);
        assert!((r.per_class[0].unwrap() - 1.0).abs() < 1e-12);
        let r = concept_alignment(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        assert_eq!(r.per_class[0], Some(0.0));
        let r = concept_alignment(&[vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]]);
        assert!((r.per_class[0].unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_skips_singletons_and_zero_vectors() {
        let r = concept_alignment(&[
            vec![vec![1.0, 0.0]],
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]],
        ]);
        assert_eq!(r.per_class[0], None);
        assert_eq!(r.skipped_classes, vec![0]);
        assert_eq!(r.zero_vectors, vec![(1, 0)]);
        assert!((r.mean.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_is_scale_invariant() {
        let g = vec![vec![vec![0.2, 0.7, 0.1], vec![0.9, 0.3, 0.5], vec![0.4, 0.4, 0.8]]];
        let scaled: Vec<Vec<Vec<f64>>> = g
            .iter()
            .map(|c| c.iter().map(|r| r.iter().map(|v| v * 3.5).collect()).collect())
            .collect();
        let (a, b) = (concept_alignment(&g).mean.unwrap(), concept_alignment(&scaled).mean.unwrap());
        assert!((a - b).abs() < 1e-12);
    }
}
