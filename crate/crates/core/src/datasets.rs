//! Concept-annotated datasets: truth tables, concept-level CLEVR-Logic, and
//! CSV ingestion.
//!
//! CSV layout: UTF-8, comma separated, one header row. Feature columns are
//! prefixed `x:`, concept columns `c:`, the class column is `label`, and an
//! optional `split` column holds `train`, `val` or `test`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{all_assignments, default_concept_names, LogicClassSpec};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Features, binary concepts and class labels, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDataset {
    features: Option<Matrix>,
    concepts: Matrix,
    labels: Vec<usize>,
    splits: Vec<Split>,
    feature_names: Vec<String>,
    concept_names: Vec<String>,
    class_names: Vec<String>,
}

impl ConceptDataset {
    pub fn new(
        features: Option<Matrix>,
        concepts: Matrix,
        labels: Vec<usize>,
        splits: Vec<Split>,
        concept_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = concepts.rows();
        if labels.len() != n || splits.len() != n {
            return Err(Error::shape(
                format!("{n} labels and splits"),
                format!("{} labels, {} splits", labels.len(), splits.len()),
            ));
        }
        if concept_names.len() != concepts.cols() {
            return Err(Error::shape(
                format!("{} concept names", concepts.cols()),
                concept_names.len(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidLabel {
                label: bad,
                classes: class_names.len(),
            });
        }
        for (row, values) in concepts.iter_rows().enumerate() {
            if let Some((j, v)) = values.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
                return Err(Error::NonBinaryConcept {
                    row,
                    column: concept_names[j].clone(),
                    value: v.to_string(),
                });
            }
        }
        let feature_names = match &features {
            Some(x) => {
                if x.rows() != n {
                    return Err(Error::shape(format!("{n} feature rows"), x.rows()));
                }
                (1..=x.cols()).map(|i| format!("f{i}")).collect()
            }
            None => Vec::new(),
        };
        Ok(Self {
            features,
            concepts,
            labels,
            splits,
            feature_names,
            concept_names,
            class_names,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.feature_dim() {
            return Err(Error::shape(
                format!("{} feature names", self.feature_dim()),
                names.len(),
            ));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn concept_dim(&self) -> usize {
        self.concepts.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, Matrix::cols)
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Width of the model input: features when present, concepts otherwise.
    pub fn input_dim(&self) -> usize {
        self.features.as_ref().map_or(self.concept_dim(), Matrix::cols)
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    /// Model input for row `i`.
    pub fn input(&self, i: usize) -> &[f64] {
        match &self.features {
            Some(x) => x.row(i),
            None => self.concepts.row(i),
        }
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn concepts(&self) -> &Matrix {
        &self.concepts
    }

    pub fn concept_row(&self, i: usize) -> &[f64] {
        self.concepts.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concept_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Row indices belonging to `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Rows of `split`, or every row when `split` is `None`.
    pub fn select(&self, split: Option<Split>) -> Vec<usize> {
        match split {
            Some(s) => self.indices(s),
            None => (0..self.len()).collect(),
        }
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.splits {
            c[*s as usize] += 1;
        }
        c
    }

    /// Reassigns every row to `split`.
    pub fn set_all_splits(&mut self, split: Split) {
        self.splits.iter_mut().for_each(|s| *s = split);
    }

    pub fn summary(&self) -> String {
        let [tr, va, te] = self.split_counts();
        let mut s = format!(
            "{} rows ({} train / {} val / {} test), {} features, {} concepts, {} classes",
            self.len(),
            tr,
            va,
            te,
            self.feature_dim(),
            self.concept_dim(),
            self.class_count()
        );
        if va == 0 {
            s.push_str("; validation split is empty");
        }
        s
    }
}

/// Truth table of the parity function over `arity` inputs (XOR for 2, the
/// three-input 2XOR for 3). Concepts are the inputs; there are no features.
pub fn gen_truth_table(arity: usize) -> Result<ConceptDataset> {
    if !(2..=3).contains(&arity) {
        return Err(Error::UnsupportedArity(arity));
    }
    let rows: Vec<Vec<f64>> = all_assignments(arity)?
        .map(|a| a.into_iter().map(|b| b as u8 as f64).collect())
        .collect();
    let labels = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as usize).sum::<usize>() % 2)
        .collect();
    let n = rows.len();
    ConceptDataset::new(
        None,
        Matrix::from_rows(&rows)?,
        labels,
        vec![Split::Train; n],
        default_concept_names(arity),
        vec!["0".into(), "1".into()],
    )
}

/// Fractions of each class assigned to train and val; the rest is test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
        }
    }
}

/// Synthetic stand-in for image features: each concept drives
/// `dims_per_concept` coordinates at `±1` plus Gaussian noise, rendered from
/// the assignment before any annotation flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRender {
    pub dims_per_concept: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClevrLogicConfig {
    pub per_class: usize,
    /// Probability of flipping each emitted concept bit.
    pub noise_flip_prob: f64,
    pub seed: u64,
    pub split: SplitRatios,
    pub features: Option<FeatureRender>,
}

impl Default for ClevrLogicConfig {
    fn default() -> Self {
        Self {
            per_class: 20,
            noise_flip_prob: 0.0,
            seed: 0,
            split: SplitRatios::default(),
            features: None,
        }
    }
}

/// Satisfying assignments of every spec, after checking that no assignment
/// satisfies two specs and that every spec is satisfiable.
pub fn class_partition(specs: &[LogicClassSpec], k: usize) -> Result<Vec<Vec<Vec<bool>>>> {
    let mut sets = vec![Vec::new(); specs.len()];
    for a in all_assignments(k)? {
        let mut owner: Option<usize> = None;
        for (c, spec) in specs.iter().enumerate() {
            if spec.formula.eval(&a)? {
                if let Some(prev) = owner {
                    return Err(Error::OverlappingClasses {
                        first: specs[prev].class_name.clone(),
                        second: spec.class_name.clone(),
                        witness: a.iter().map(|&b| b as u8).collect(),
                    });
                }
                owner = Some(c);
                sets[c].push(a.clone());
            }
        }
    }
    if let Some(c) = sets.iter().position(Vec::is_empty) {
        return Err(Error::UnsatisfiableClass(specs[c].class_name.clone()));
    }
    Ok(sets)
}

/// Concept-level CLEVR-Logic: for each class, `per_class` assignments drawn
/// uniformly (with replacement) from the class's satisfying set, then each
/// bit flipped independently with `noise_flip_prob`. Splits are stratified
/// per class.
pub fn gen_clevr_logic(
    specs: &[LogicClassSpec],
    k: usize,
    config: &ClevrLogicConfig,
) -> Result<ConceptDataset> {
    if !(0.0..=1.0).contains(&config.noise_flip_prob) {
        return Err(Error::InvalidConfig(format!(
            "noise_flip_prob {} outside [0, 1]",
            config.noise_flip_prob
        )));
    }
    let sets = class_partition(specs, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for (class, set) in sets.iter().enumerate() {
        let mut class_splits = stratified_splits(config.per_class, config.split);
        class_splits.shuffle(&mut rng);
        for split in class_splits {
            let a = set[rng.gen_range(0..set.len())].clone();
            let flipped: Vec<f64> = a
                .iter()
                .map(|&bit| {
                    let flip = rng.gen_bool(config.noise_flip_prob);
                    (bit ^ flip) as u8 as f64
                })
                .collect();
            clean.push(a);
            noisy.push(flipped);
            labels.push(class);
            splits.push(split);
        }
    }
    let features = match config.features {
        Some(render) => Some(render_features(&clean, render, &mut rng)?),
        None => None,
    };
    let concept_names = default_concept_names(k);
    let dataset = ConceptDataset::new(
        features,
        Matrix::from_rows(&noisy)?,
        labels,
        splits,
        concept_names.clone(),
        specs.iter().map(|s| s.class_name.clone()).collect(),
    )?;
    match config.features {
        Some(render) => {
            let names = concept_names
                .iter()
                .flat_map(|c| (1..=render.dims_per_concept).map(move |d| format!("{c}_{d}")))
                .collect();
            dataset.with_feature_names(names)
        }
        None => Ok(dataset),
    }
}

fn stratified_splits(n: usize, ratios: SplitRatios) -> Vec<Split> {
    let train = (n as f64 * ratios.train).round() as usize;
    let val = ((n as f64 * ratios.val).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    (0..n)
        .map(|i| {
            if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect()
}

fn render_features(
    assignments: &[Vec<bool>],
    render: FeatureRender,
    rng: &mut ChaCha8Rng,
) -> Result<Matrix> {
    if render.dims_per_concept == 0 || !(render.noise_std >= 0.0) {
        return Err(Error::InvalidConfig(
            "feature rendering needs dims_per_concept >= 1 and noise_std >= 0".into(),
        ));
    }
    let normal = Normal::new(0.0, render.noise_std)
        .map_err(|e| Error::InvalidConfig(format!("feature noise: {e}")))?;
    let rows: Vec<Vec<f64>> = assignments
        .iter()
        .map(|a| {
            a.iter()
                .flat_map(|&bit| {
                    let centre = if bit { 1.0 } else { -1.0 };
                    (0..render.dims_per_concept)
                        .map(|_| centre + normal.sample(&mut *rng))
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// Concept-level noisy view: the inputs become the concepts with each bit
/// flipped independently, while the concepts stay as ground truth for
/// supervision, interventions and correction.
pub fn flip_concept_inputs(
    dataset: &ConceptDataset,
    flip_prob: f64,
    seed: u64,
) -> Result<ConceptDataset> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::InvalidConfig(format!(
            "flip probability {flip_prob} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = dataset
        .concepts
        .iter_rows()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    let flip = rng.gen_bool(flip_prob);
                    if flip {
                        1.0 - v
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    ConceptDataset::new(
        Some(Matrix::from_rows(&rows)?),
        dataset.concepts.clone(),
        dataset.labels.clone(),
        dataset.splits.clone(),
        dataset.concept_names.clone(),
        dataset.class_names.clone(),
    )?
    .with_feature_names(dataset.concept_names.clone())
}

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub label_column: String,
    pub split_column: String,
    /// Seed of the 80/10/10 split used when the file has no split column.
    pub split_seed: u64,
    /// Declared class names; labels outside the list are rejected.
    pub class_names: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            split_column: "split".into(),
            split_seed: 0,
            class_names: None,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 80/10/10 split from a hash of the row index.
pub fn hashed_split(row: usize, seed: u64) -> Split {
    match splitmix64(seed ^ splitmix64(row as u64)) % 100 {
        0..=79 => Split::Train,
        80..=89 => Split::Val,
        _ => Split::Test,
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ConceptDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<ConceptDataset> {
    let parse_err = |row: usize, column: &str, message: String| Error::ParseError {
        row,
        column: column.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(0, "", e.to_string()))?
        .clone();
    let mut feature_cols = Vec::new();
    let mut concept_cols = Vec::new();
    let mut label_col = None;
    let mut split_col = None;
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if let Some(name) = h.strip_prefix("x:") {
            feature_cols.push((i, name.to_string()));
        } else if let Some(name) = h.strip_prefix("c:") {
            concept_cols.push((i, name.to_string()));
        } else if h == schema.label_column {
            label_col = Some(i);
        } else if h == schema.split_column {
            split_col = Some(i);
        } else {
            return Err(parse_err(0, h, "unrecognized column".into()));
        }
    }
    let label_col =
        label_col.ok_or_else(|| parse_err(0, &schema.label_column, "missing label column".into()))?;
    if concept_cols.is_empty() {
        return Err(parse_err(0, "c:*", "no concept columns".into()));
    }

    let mut features = Vec::new();
    let mut concepts = Vec::new();
    let mut raw_labels = Vec::new();
    let mut splits = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // header is row 0
        let row = r + 1;
        let record = record.map_err(|e| parse_err(row, "", e.to_string()))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let mut f = Vec::with_capacity(feature_cols.len());
        for (i, name) in &feature_cols {
            let v: f64 = cell(*i)
                .parse()
                .map_err(|_| parse_err(row, &format!("x:{name}"), format!("`{}` is not a number", cell(*i))))?;
            f.push(v);
        }
        let mut c = Vec::with_capacity(concept_cols.len());
        for (i, name) in &concept_cols {
            let text = cell(*i);
            match text.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 => c.push(v),
                _ => {
                    return Err(Error::NonBinaryConcept {
                        row,
                        column: format!("c:{name}"),
                        value: text.to_string(),
                    })
                }
            }
        }
        let split = match split_col {
            Some(i) => Split::parse(cell(i)).ok_or_else(|| {
                parse_err(row, &schema.split_column, format!("unknown split `{}`", cell(i)))
            })?,
            None => hashed_split(r, schema.split_seed),
        };
        features.push(f);
        concepts.push(c);
        raw_labels.push(cell(label_col).to_string());
        splits.push(split);
    }

    let class_names = match &schema.class_names {
        Some(names) => names.clone(),
        None => infer_class_names(&raw_labels),
    };
    let index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(r, l)| {
            index.get(l.as_str()).copied().ok_or(Error::UnknownLabel {
                row: r + 1,
                label: l.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = concept_cols.len();
    let concepts = if concepts.is_empty() {
        Matrix::zeros(0, k)
    } else {
        Matrix::from_rows(&concepts)?
    };
    let features = if feature_cols.is_empty() {
        None
    } else if features.is_empty() {
        Some(Matrix::zeros(0, feature_cols.len()))
    } else {
        Some(Matrix::from_rows(&features)?)
    };
    let has_features = features.is_some();
    let ds = ConceptDataset::new(
        features,
        concepts,
        labels,
        splits,
        concept_cols.into_iter().map(|(_, n)| n).collect(),
        class_names,
    )?;
    if has_features {
        ds.with_feature_names(feature_cols.into_iter().map(|(_, n)| n).collect())
    } else {
        Ok(ds)
    }
}

/// Integer labels map to themselves; other labels are indexed in order of
/// first appearance.
fn infer_class_names(raw: &[String]) -> Vec<String> {
    let ints: Option<Vec<usize>> = raw.iter().map(|l| l.parse::<usize>().ok()).collect();
    match ints {
        Some(v) if !v.is_empty() => {
            let max = *v.iter().max().expect("non-empty");
            (0..=max).map(|i| i.to_string()).collect()
        }
        _ => {
            let mut names: Vec<String> = Vec::new();
            for l in raw {
                if !names.contains(l) {
                    names.push(l.clone());
                }
            }
            names
        }
    }
}

pub fn write_csv<W: std::io::Write>(dataset: &ConceptDataset, writer: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::ParseError {
        row: 0,
        column: String::new(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = dataset
        .feature_names()
        .iter()
        .map(|n| format!("x:{n}"))
        .collect();
    header.extend(dataset.concept_names().iter().map(|n| format!("c:{n}")));
    header.push("label".into());
    header.push("split".into());
    w.write_record(&header).map_err(to_err)?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(x) = dataset.features() {
            // `{:?}` prints the shortest string that parses back to the same f64
            rec.extend(x.row(i).iter().map(|v| format!("{v:?}")));
        }
        rec.extend(dataset.concept_row(i).iter().map(|&v| (v as u8).to_string()));
        rec.push(dataset.class_names()[dataset.label(i)].clone());
        rec.push(dataset.splits()[i].to_string());
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(dataset: &ConceptDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}
