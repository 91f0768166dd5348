//! Command-line entry point.
//!
//! Every subcommand prints a short human summary on stdout and writes its
//! numbers as JSON: to `--out` when given, otherwise into the `metrics/`
//! directory of the run that owns the checkpoint, otherwise to stdout after
//! the summary.
//!
//! Exit codes: 0 on success, 1 on operational errors (files, data, models),
//! 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    activations_by_class, ccg, concept_alignment, decision_matches, extract_formulas,
    gate_distribution, intervention_success_ratio, InterventionMode,
};
use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::datasets::{
    flip_concept_inputs, gen_clevr_logic, gen_truth_table, load_csv, save_csv, ClevrLogicConfig,
    ConceptDataset, CsvSchema, FeatureRender, Split, SplitRatios,
};
use crate::error::{Error, Result};
use crate::formula::{clevr_logic_rules, formula_equivalent, RuleSet};
use crate::gates::GateId;
use crate::model::{ArchConfig, Model, ModelKind, PairingMode};
use crate::training::{evaluate, train_with_restarts, TrainConfig};

pub const OUT_ROOT_ENV: &str = "LOGICCBM_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "runs";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OPERATIONAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "logiccbm", version, about = "Logic-headed concept bottleneck models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset and write it as CSV.
    GenData(GenDataArgs),
    /// Train a model from a TOML run config.
    Train(TrainArgs),
    /// Accuracy and concept error of a checkpoint on a CSV split.
    Eval(DataArgs),
    /// Class formulas of a logic checkpoint.
    Extract(ExtractArgs),
    /// Intervention success ratio over a sweep of budgets.
    Intervene(InterveneArgs),
    /// Concept correction gain.
    Ccg(DataArgs),
    /// Concept alignment of encoder activations.
    Align(DataArgs),
    /// Histogram of active gates.
    GateDist(GateDistArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    TruthTable,
    ClevrLogic,
    /// Classes from a rules file.
    Spec,
}

/// A generated dataset; shared by `gen-data` and run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arity: Option<usize>,
    /// Rules file for `spec`, or an override of the built-in CLEVR rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<PathBuf>,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default)]
    pub noise_flip_prob: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureRender>,
    /// Flip the model inputs instead of the annotations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_inputs: Option<f64>,
}

fn default_per_class() -> usize {
    ClevrLogicConfig::default().per_class
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long)]
    arity: Option<usize>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = default_per_class())]
    per_class: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Render Gaussian features with this many coordinates per concept.
    #[arg(long)]
    feature_dims: Option<usize>,
    #[arg(long, default_value_t = 1.0, requires = "feature_dims")]
    feature_noise: f64,
    #[arg(long)]
    flip_inputs: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Where a run's data comes from: a CSV file or a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenSpec>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_split_column")]
    pub split_column: String,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

fn default_label_column() -> String {
    "label".into()
}

fn default_split_column() -> String {
    "split".into()
}

fn default_restarts() -> usize {
    1
}

/// A training run. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        match (&self.data.csv, &self.data.generate) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::InvalidConfig(
                "data needs exactly one of `csv` or `generate`".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `$LOGICCBM_OUT_ROOT/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `restarts`.
    #[arg(long)]
    restarts: Option<usize>,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value = "split")]
    split_column: String,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// JSON output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 3)]
    top_w: usize,
    /// Rules file whose classes are compared with the extracted rules.
    #[arg(long)]
    gt_spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Uniform,
    Mismatched,
}

#[derive(Debug, Args)]
struct InterveneArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Budgets to sweep, comma separated; defaults to every budget up to
    /// full intervention.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "uniform")]
    mode: ModeArg,
}

#[derive(Debug, Args)]
struct GateDistArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    by_class: bool,
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let report = serde_json::json!({
                "error": error_kind(&e),
                "message": e.to_string(),
            });
            eprintln!("error: {report}");
            EXIT_OPERATIONAL
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::ParseError { .. }
        | Error::NonBinaryConcept { .. }
        | Error::UnknownLabel { .. }
        | Error::EmptyDataset
        | Error::MissingConceptGroundTruth => "data",
        Error::FormulaSyntax { .. } => "formula",
        Error::SchemaVersionMismatch { .. } | Error::CorruptChecksum(_) => "checkpoint",
        Error::InvalidConfig(_) => "config",
        Error::NonFiniteLoss { .. } => "training",
        _ => "model",
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Intervene(a) => cmd_intervene(a),
        Command::Ccg(a) => cmd_ccg(a),
        Command::Align(a) => cmd_align(a),
        Command::GateDist(a) => cmd_gate_dist(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn load_rules(path: &Path) -> Result<RuleSet> {
    RuleSet::parse(&read_text(path)?)
}

/// Builds the dataset described by `spec`; relative paths resolve against
/// `base`.
pub fn generate(spec: &GenSpec, base: &Path) -> Result<ConceptDataset> {
    let rules_path = spec.rules.as_ref().map(|p| base.join(p));
    let dataset = match spec.kind {
        DataKind::TruthTable => {
            let arity = spec.arity.ok_or_else(|| {
                Error::InvalidConfig("truth-table data needs an arity".into())
            })?;
            gen_truth_table(arity)?
        }
        DataKind::ClevrLogic | DataKind::Spec => {
            let rules = match (&rules_path, spec.kind) {
                (Some(p), _) => load_rules(p)?,
                (None, DataKind::ClevrLogic) => clevr_logic_rules(),
                (None, _) => {
                    return Err(Error::InvalidConfig("spec data needs a rules file".into()))
                }
            };
            let config = ClevrLogicConfig {
                per_class: spec.per_class,
                noise_flip_prob: spec.noise_flip_prob,
                seed: spec.seed,
                split: SplitRatios::default(),
                features: spec.features,
            };
            gen_clevr_logic(&rules.specs, rules.concept_names.len(), &config)?
        }
    };
    match spec.flip_inputs {
        Some(p) => flip_concept_inputs(&dataset, p, spec.seed),
        None => Ok(dataset),
    }
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let spec = GenSpec {
        kind: a.kind,
        arity: a.arity,
        rules: a.rules,
        per_class: a.per_class,
        noise_flip_prob: a.noise,
        seed: a.seed,
        features: a.feature_dims.map(|d| FeatureRender {
            dims_per_concept: d,
            noise_std: a.feature_noise,
        }),
        flip_inputs: a.flip_inputs,
    };
    let dataset = generate(&spec, Path::new("."))?;
    save_csv(&dataset, &a.out)?;
    println!("wrote {}: {}", a.out.display(), dataset.summary());
    Ok(())
}

fn load_run_data(data: &DataConfig, base: &Path) -> Result<ConceptDataset> {
    match (&data.csv, &data.generate) {
        (Some(path), None) => load_csv(
            base.join(path),
            &CsvSchema {
                label_column: data.label_column.clone(),
                split_column: data.split_column.clone(),
                split_seed: data.split_seed,
                class_names: data.class_names.clone(),
            },
        ),
        (None, Some(spec)) => generate(spec, base),
        _ => Err(Error::InvalidConfig(
            "data needs exactly one of `csv` or `generate`".into(),
        )),
    }
}

fn absolutize(path: &Path, base: &Path) -> PathBuf {
    let joined = base.join(path);
    fs::canonicalize(&joined).unwrap_or(joined)
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Output directory layout of a training run.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn config_lock(&self) -> PathBuf {
        self.root.join("config.lock")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }
    pub fn train_report(&self) -> PathBuf {
        self.root.join("train_report")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn formulas(&self) -> PathBuf {
        self.root.join("formulas")
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    kind: String,
    seed: u64,
    selected_epoch: Option<usize>,
    restarts: Vec<crate::training::RestartOutcome>,
    config_digest: String,
    param_count: usize,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let base = a
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut config = RunConfig::from_toml(&read_text(&a.config)?)?;
    if let Some(seed) = a.seed {
        config.train.seed = seed;
    }
    if let Some(r) = a.restarts {
        config.restarts = r;
    }
    config.validate()?;
    let dataset = load_run_data(&config.data, &base)?;

    let name = config.name.clone().unwrap_or_else(|| {
        a.config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    });
    let out = match (&a.out, &config.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => out_root().join(&name),
    };

    // the lock file pins resolved paths, so it can be rerun from anywhere
    let mut locked = config.clone();
    locked.out_dir = None;
    if let Some(csv) = &locked.data.csv {
        locked.data.csv = Some(absolutize(csv, &base));
    }
    if let Some(gen) = locked.data.generate.as_mut() {
        if let Some(rules) = &gen.rules {
            gen.rules = Some(absolutize(rules, &base));
        }
    }
    let lock_text = locked.to_toml()?;
    let digest = checkpoint::digest_hex(lock_text.as_bytes());

    if out.exists() && !a.force {
        return Err(Error::InvalidConfig(format!(
            "output directory {} exists (pass --force to replace it)",
            out.display()
        )));
    }

    let activations = match config.arch.layers.first().map(|l| l.pairing) {
        Some(PairingMode::Correlated) => Some(dataset.concepts()),
        _ => None,
    };
    let (model, mut report, restarts) = train_with_restarts(
        &config.arch,
        &dataset,
        &config.train,
        config.restarts,
        activations,
    )?;
    report.checkpoint = Some("checkpoint".into());

    // build in a sibling staging directory, then rename into place
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = parent.join(format!(
        ".{}.staging-{}",
        out.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let layout = RunLayout { root: staging.clone() };
    let result = write_run(&layout, &config, &dataset, &model, &report, restarts, &lock_text, &digest);
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    }
    fs::rename(&staging, &out).map_err(|e| Error::io(&out, e))?;

    let test = evaluate(&model, &dataset, Some(Split::Test)).ok();
    println!("trained {} model on {}", model.kind_name(), dataset.summary());
    println!("selected epoch: {:?}", report.selected_epoch);
    if let Some(t) = test {
        println!("test accuracy: {:.4}", t.accuracy);
    }
    println!("wall clock: {:.2}s", report.wall_clock_secs);
    println!("run directory: {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_run(
    layout: &RunLayout,
    config: &RunConfig,
    dataset: &ConceptDataset,
    model: &Model,
    report: &crate::training::TrainReport,
    restarts: Vec<crate::training::RestartOutcome>,
    lock_text: &str,
    digest: &str,
) -> Result<()> {
    for dir in [layout.root.clone(), layout.metrics(), layout.formulas()] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_text(&layout.config_lock(), lock_text)?;
    let meta = CheckpointMeta {
        config_digest: digest.into(),
        concept_names: dataset.concept_names().to_vec(),
        class_names: dataset.class_names().to_vec(),
    };
    checkpoint::save(layout.checkpoint(), model, &config.arch, &meta)?;
    write_text(&layout.train_report(), &report.to_jsonl())?;

    let summary = TrainSummary {
        kind: model.kind_name().into(),
        seed: config.train.seed,
        selected_epoch: report.selected_epoch,
        restarts,
        config_digest: digest.into(),
        param_count: model.param_count(),
    };
    write_text(&layout.metrics().join("train.json"), &to_json(&summary))?;
    let mut evals = serde_json::Map::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        if let Ok(r) = evaluate(model, dataset, Some(split)) {
            evals.insert(split.as_str().into(), serde_json::to_value(r).expect("serializable"));
        }
    }
    write_text(&layout.metrics().join("eval.json"), &to_json(&evals))?;

    if let Some(logic) = model.logic() {
        let formulas = extract_formulas(logic, 3)?;
        write_text(&layout.formulas().join("formulas.json"), &to_json(&formulas))?;
        write_text(
            &layout.formulas().join("formulas.txt"),
            &render_formulas(&formulas, dataset.concept_names(), dataset.class_names()),
        )?;
    }
    Ok(())
}

fn render_formulas(
    formulas: &[crate::analysis::ClassFormula],
    concepts: &[String],
    classes: &[String],
) -> String {
    let mut out = String::new();
    for f in formulas {
        let name = classes.get(f.class).cloned().unwrap_or_else(|| f.class.to_string());
        out.push_str(&format!("{name}: {}\n", f.render_terms(concepts)));
        if let Some(rule) = &f.rule {
            out.push_str(&format!("  rule: {}\n", rule.render(concepts)));
        }
    }
    out
}

fn names_or_default(names: &[String], fallback: &[String]) -> Vec<String> {
    if names.is_empty() {
        fallback.to_vec()
    } else {
        names.to_vec()
    }
}

struct Loaded {
    ckpt: Checkpoint,
    dataset: ConceptDataset,
    split: Option<Split>,
}

fn load_for(a: &DataArgs) -> Result<Loaded> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let class_names = (!ckpt.header.class_names.is_empty()).then(|| ckpt.header.class_names.clone());
    let dataset = load_csv(
        &a.data,
        &CsvSchema {
            label_column: a.label_column.clone(),
            split_column: a.split_column.clone(),
            split_seed: a.split_seed,
            class_names,
        },
    )?;
    if dataset.input_dim() != ckpt.model.input_dim() || dataset.concept_dim() != ckpt.model.concept_dim() {
        return Err(Error::shape(
            format!(
                "inputs {} and concepts {}",
                ckpt.model.input_dim(),
                ckpt.model.concept_dim()
            ),
            format!("inputs {} and concepts {}", dataset.input_dim(), dataset.concept_dim()),
        ));
    }
    Ok(Loaded {
        ckpt,
        dataset,
        split: a.split.split(),
    })
}

/// Writes the JSON result where the command's outputs belong.
fn emit(out: Option<&Path>, checkpoint: &Path, file: &str, json: &str) -> Result<()> {
    let target = match out {
        Some(p) => Some(p.to_path_buf()),
        None => checkpoint
            .parent()
            .map(|dir| dir.join("metrics"))
            .filter(|m| m.is_dir())
            .map(|m| m.join(file)),
    };
    match target {
        Some(path) => {
            write_text(&path, json)?;
            println!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn split_label(split: Option<Split>) -> &'static str {
    split.map(Split::as_str).unwrap_or("all")
}

fn cmd_eval(a: DataArgs) -> Result<()> {
    let l = load_for(&a)?;
    let report = evaluate(&l.ckpt.model, &l.dataset, l.split)?;
    println!(
        "{} split: accuracy {:.4} over {} rows, mean concept error {:.4}",
        split_label(l.split),
        report.accuracy,
        report.rows,
        report.mean_concept_error
    );
    emit(
        a.out.as_deref(),
        &a.checkpoint,
        &format!("eval_{}.json", split_label(l.split)),
        &to_json(&report),
    )
}

#[derive(Debug, Serialize)]
struct ExtractedClass {
    class: usize,
    class_name: String,
    terms: Vec<(f64, String)>,
    rule: Option<String>,
    verdict: Option<String>,
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let logic = ckpt.model.logic().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "extract needs a logic or dual checkpoint, found {}",
            ckpt.model.kind_name()
        ))
    })?;
    let k = ckpt.model.concept_dim();
    let concepts = names_or_default(&ckpt.header.concept_names, &crate::formula::default_concept_names(k));
    let classes = names_or_default(
        &ckpt.header.class_names,
        &(0..ckpt.model.class_count()).map(|c| c.to_string()).collect::<Vec<_>>(),
    );
    let gt = match &a.gt_spec {
        Some(p) => Some(load_rules(p)?),
        None => None,
    };
    if let Some(rules) = &gt {
        if rules.specs.len() != ckpt.model.class_count() {
            return Err(Error::InvalidConfig(format!(
                "ground-truth spec has {} classes, model has {}",
                rules.specs.len(),
                ckpt.model.class_count()
            )));
        }
        if let Some(m) = rules.specs.iter().map(|s| s.formula.max_concept() + 1).max() {
            if m > k {
                return Err(Error::InvalidConfig(format!(
                    "ground-truth spec uses {m} concepts, model has {k}"
                )));
            }
        }
    }
    let formulas = extract_formulas(logic, a.top_w)?;
    let mut rows = Vec::with_capacity(formulas.len());
    for f in &formulas {
        let verdict = match &gt {
            Some(rules) => {
                let target = &rules.specs[f.class].formula;
                let equivalent = match &f.rule {
                    Some(rule) => formula_equivalent(rule, target, k)?,
                    None => decision_matches(logic, f.class, target)?,
                };
                Some(if equivalent { "EQUIVALENT" } else { "NOT EQUIVALENT" }.to_string())
            }
            None => None,
        };
        let class_name = classes[f.class].clone();
        println!("{class_name}: {}", f.render_terms(&concepts));
        if let Some(rule) = &f.rule {
            println!("  rule: {}", rule.render(&concepts));
        }
        if let Some(v) = &verdict {
            println!("  verdict: {v}");
        }
        rows.push(ExtractedClass {
            class: f.class,
            class_name,
            terms: f.terms.iter().map(|(w, t)| (*w, t.render(&concepts))).collect(),
            rule: f.rule.as_ref().map(|r| r.render(&concepts)),
            verdict,
        });
    }
    let target = match a.out.as_deref() {
        Some(p) => Some(p.to_path_buf()),
        None => a
            .checkpoint
            .parent()
            .map(|d| d.join("formulas"))
            .filter(|d| d.is_dir())
            .map(|d| d.join("extract.json")),
    };
    let json = to_json(&rows);
    match target {
        Some(p) => {
            write_text(&p, &json)?;
            println!("wrote {}", p.display());
        }
        None => print!("{json}"),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    k: usize,
    units: usize,
    misclassified: usize,
    corrected: usize,
    ratio: Option<f64>,
}

fn cmd_intervene(a: InterveneArgs) -> Result<()> {
    let l = load_for(&a.data)?;
    let model = &l.ckpt.model;
    let ks = if a.k.is_empty() {
        let max = match model {
            Model::Vanilla(_) => model.concept_dim(),
            _ => 2 * model.unit_count(),
        };
        (0..=max).collect()
    } else {
        a.k.clone()
    };
    let mode = match a.mode {
        ModeArg::Uniform => InterventionMode::Uniform,
        ModeArg::Mismatched => InterventionMode::Mismatched,
    };
    let mut rows = Vec::with_capacity(ks.len());
    println!("{:>4} {:>6} {:>9} {:>13} {:>8}", "k", "units", "corrected", "misclassified", "ratio");
    for k in ks {
        let r = intervention_success_ratio(model, &l.dataset, l.split, k, a.seed, mode)?;
        let units = crate::analysis::intervention_budget(model, k).min(model.unit_count());
        println!(
            "{:>4} {:>6} {:>9} {:>13} {:>8}",
            k,
            units,
            r.corrected,
            r.misclassified,
            r.ratio.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
        );
        rows.push(SweepRow {
            k,
            units,
            misclassified: r.misclassified,
            corrected: r.corrected,
            ratio: r.ratio,
        });
    }
    emit(a.data.out.as_deref(), &a.data.checkpoint, "intervene.json", &to_json(&rows))
}

fn cmd_ccg(a: DataArgs) -> Result<()> {
    let l = load_for(&a)?;
    let report = ccg(&l.ckpt.model, &l.dataset, l.split)?;
    match report.ccg {
        Some(v) => println!(
            "CCG {v:.6} over {} corrected rows ({} rows evaluated)",
            report.corrected, report.evaluated
        ),
        None => println!("CCG undefined: no corrected rows ({} rows evaluated)", report.evaluated),
    }
    emit(a.out.as_deref(), &a.checkpoint, "ccg.json", &to_json(&report))
}

fn cmd_align(a: DataArgs) -> Result<()> {
    let l = load_for(&a)?;
    let report = concept_alignment(&activations_by_class(&l.ckpt.model, &l.dataset, l.split)?);
    match report.mean {
        Some(m) => println!("mean concept alignment {m:.6}"),
        None => println!("concept alignment undefined: no class has two usable samples"),
    }
    emit(a.out.as_deref(), &a.checkpoint, "align.json", &to_json(&report))
}

fn cmd_gate_dist(a: GateDistArgs) -> Result<()> {
    let l = load_for(&a.data)?;
    if matches!(l.ckpt.model, Model::Vanilla(_)) || l.ckpt.header.arch.kind == ModelKind::Vanilla {
        return Err(Error::InvalidConfig("gate-dist needs a logic or dual checkpoint".into()));
    }
    let dist = gate_distribution(&l.ckpt.model, &l.dataset, l.split, a.by_class)?;
    for g in GateId::all() {
        let c = dist.global.counts[g.index()];
        if c > 0 {
            println!("{:>8} {c}", g.descriptor().name);
        }
    }
    emit(a.data.out.as_deref(), &a.data.checkpoint, "gate_dist.json", &to_json(&dist))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_rejects_unknown_keys() {
        let text = r#"
            bogus = 1
            [data]
            csv = "x.csv"
            [arch]
            encoder = "identity"
            [train]
            epochs = 1
            optimizer = { kind = "adam", lr = 0.01 }
            alpha = 0.0
            seed = 0
        "#;
        assert!(matches!(RunConfig::from_toml(text), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn run_config_round_trips() {
        let text = r#"
            name = "xor"
            restarts = 4
            [data.generate]
            kind = "truth-table"
            arity = 2
            [arch]
            encoder = "identity"
            layers = [{ pairs = [[0, 1]] }]
            head_init = "binary"
            head_scale = 8.0
            [train]
            epochs = 10
            optimizer = { kind = "adam", lr = 0.01 }
            alpha = 0.0
            seed = 3
            train_head = false
        "#;
        let config = RunConfig::from_toml(text).unwrap();
        let again = RunConfig::from_toml(&config.to_toml().unwrap()).unwrap();
        assert_eq!(config, again);
        assert_eq!(again.restarts, 4);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["logiccbm", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["logiccbm", "eval", "--checkpoint"]), EXIT_USAGE);
        let bad_split = ["logiccbm", "ccg", "--checkpoint", "a", "--data", "b", "--split", "dev"];
        assert_eq!(run(bad_split), EXIT_USAGE);
    }

    #[test]
    fn missing_files_exit_one() {
        let code = run([
            "logiccbm",
            "eval",
            "--checkpoint",
            "/nonexistent/ckpt",
            "--data",
            "/nonexistent/data.csv",
        ]);
        assert_eq!(code, EXIT_OPERATIONAL);
    }
}
