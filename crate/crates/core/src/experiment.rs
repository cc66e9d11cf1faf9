//! Run configuration and the commands behind the `fairpair` binary.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! constraint = "statistical"      # statistical | inter | intra | marginal
//! method = "pairwise"             # unconstrained | pairwise | pointwise
//! pointwise_constraint = "equal_opportunity"
//! out_dir = "out"
//!
//! [data.synth]                    # or [data.csv] with `path` and `n_groups`
//! n_queries = 40
//! items_per_query = 30
//! dim = 5
//! n_groups = 2
//! bias_strength = 1.0
//! seed = 7
//!
//! [split]
//! ratio_test = 0.2
//! ratio_valid = 0.16
//! seed = 0
//!
//! [train]                         # inner learner
//! learning_rate = 0.01
//! epochs = 30
//!
//! [fair]                          # coefficient loop
//! eta_lambda = 1.0
//! loops = 20
//!
//! [sweep]
//! scales = [0.0, 0.5, 1.0, 1.5, 2.0]
//! ```
//!
//! Every omitted key takes its default. Relative CSV and artifact paths are
//! resolved against the directory holding the config file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintKind;
use crate::dataset::{
    load_csv, save_csv, split_queries, synth_generate, write_truth_csv, Dataset, Split, SynthParams,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::model::LinearRankingModel;
use crate::reweight::{
    fair_train, pointwise_reweight_train, train_with_coefficients, write_history_csv,
    write_pointwise_history_csv, Coefficients, FairTrainConfig,
};
use crate::training::TrainConfig;

pub const MODEL_FILE: &str = "model.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Unit weights; the coefficient loop with zero iterations.
    Unconstrained,
    #[default]
    Pairwise,
    /// Label reweighting of items under a pointwise constraint.
    Pointwise,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(Method::Unconstrained),
            "pairwise" => Ok(Method::Pairwise),
            "pointwise" => Ok(Method::Pointwise),
            other => Err(Error::validation(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv { path: PathBuf, n_groups: usize },
    Synth(SynthParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio_test: f64,
    pub ratio_valid: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        // 4:1 train+valid vs test, then 4:1 train vs valid.
        Self {
            ratio_test: 0.2,
            ratio_valid: 0.16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scales: Vec<f64>,
    /// Learned coefficients; defaults to `coefficients.csv` in the output dir.
    pub coefficients: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scales: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            coefficients: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Valid,
    #[default]
    Test,
    /// The whole dataset, unsplit.
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Model to evaluate; defaults to `model.txt` in the output dir.
    pub model: Option<PathBuf>,
    pub split: EvalSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default = "default_constraint")]
    pub constraint: String,
    #[serde(default)]
    pub method: Method,
    /// Constraint of the pointwise baseline.
    #[serde(default = "default_pointwise_constraint")]
    pub pointwise_constraint: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fair: FairTrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_constraint() -> String {
    ConstraintKind::PairStatistical.name().to_string()
}

fn default_pointwise_constraint() -> String {
    ConstraintKind::PointEqualOpportunity.name().to_string()
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub constraint: Option<String>,
    pub loops: Option<usize>,
    /// Replaces the split, training and synthetic-data seeds.
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::validation(format!("invalid config: {e}")))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.constraint_kind()?;
        if !kind.is_pairwise() {
            return Err(Error::validation(format!(
                "constraint must be pairwise, got {kind}"
            )));
        }
        if !self.pointwise_kind()?.is_pointwise() {
            return Err(Error::validation(
                "pointwise_constraint must be a pointwise kind",
            ));
        }
        self.train.validate()?;
        self.fair.validate()?;
        if self.sweep.scales.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("sweep scales must be finite"));
        }
        Ok(())
    }

    /// Applies command-line overrides, then the output directory with
    /// precedence flag > `env_out` > config > `out`.
    pub fn apply(&mut self, ov: &Overrides, env_out: Option<PathBuf>) -> Result<()> {
        if let Some(m) = ov.method {
            self.method = m;
        }
        if let Some(c) = &ov.constraint {
            self.constraint = c.clone();
        }
        if let Some(t) = ov.loops {
            self.fair.loops = t;
        }
        if let Some(s) = ov.seed {
            self.split.seed = s;
            self.train.seed = s;
            if let DataSource::Synth(p) = &mut self.data {
                p.seed = s;
            }
        }
        if let Some(out) = ov.out_dir.clone().or(env_out) {
            self.out_dir = Some(out);
        }
        self.validate()
    }

    pub fn constraint_kind(&self) -> Result<ConstraintKind> {
        self.constraint.parse()
    }

    pub fn pointwise_kind(&self) -> Result<ConstraintKind> {
        self.pointwise_constraint.parse()
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.out_dir.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Csv { path, n_groups } => load_csv(self.resolve(path), *n_groups),
            DataSource::Synth(p) => Ok(synth_generate(p)?.0),
        }
    }

    pub fn load_split(&self) -> Result<Split> {
        let ds = self.load_dataset()?;
        split_queries(
            &ds,
            self.split.ratio_test,
            self.split.ratio_valid,
            self.split.seed,
        )
    }
}

/// Seed shared by the generator, the split and the inner learner in
/// [`pinned_config`].
pub const PINNED_SEED: u64 = 1;

/// The synthetic configuration the regression tests are pinned to; mirrored
/// by `configs/pinned.toml`.
pub fn pinned_config() -> RunConfig {
    RunConfig {
        data: DataSource::Synth(SynthParams {
            seed: PINNED_SEED,
            ..SynthParams::default()
        }),
        constraint: default_constraint(),
        method: Method::Pairwise,
        pointwise_constraint: default_pointwise_constraint(),
        out_dir: None,
        split: SplitConfig {
            seed: PINNED_SEED,
            ..SplitConfig::default()
        },
        train: TrainConfig {
            seed: PINNED_SEED,
            ..TrainConfig::default()
        },
        fair: FairTrainConfig::default(),
        sweep: SweepConfig::default(),
        evaluate: EvaluateConfig::default(),
        base_dir: PathBuf::new(),
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create_file(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes `dataset.csv` and the per-item truth sidecar `truth.csv`.
pub fn run_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let DataSource::Synth(params) = &cfg.data else {
        return Err(Error::validation("generate needs a [data.synth] section"));
    };
    let (ds, truth) = synth_generate(params)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let data_path = out.join(DATASET_FILE);
    let truth_path = out.join(TRUTH_FILE);
    save_csv(&ds, &data_path)?;
    write_with(&truth_path, |w| write_truth_csv(&ds, &truth, w))?;
    Ok(vec![data_path, truth_path])
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: LinearRankingModel,
    pub train: EvalReport,
    pub valid: EvalReport,
    pub test: EvalReport,
}

/// Trains with the configured method and writes the model, history,
/// coefficients and one report per split.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let kind = cfg.constraint_kind()?;
    let split = cfg.load_split()?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;

    let model = match cfg.method {
        Method::Unconstrained | Method::Pairwise => {
            let mut fair = cfg.fair.clone();
            if cfg.method == Method::Unconstrained {
                fair.loops = 0;
            }
            let run = fair_train(&split.train, &split.valid, kind, &fair, &cfg.train)?;
            write_with(&out.join(HISTORY_FILE), |w| {
                write_history_csv(&run.history, split.train.n_groups(), w)
            })?;
            write_with(&out.join(COEFFICIENTS_FILE), |w| {
                run.coefficients.write_csv(w)
            })?;
            run.model
        }
        Method::Pointwise => {
            let point_kind = cfg.pointwise_kind()?;
            let run = pointwise_reweight_train(
                &split.train,
                &split.valid,
                point_kind,
                &cfg.fair,
                &cfg.train,
            )?;
            write_with(&out.join(HISTORY_FILE), |w| {
                write_pointwise_history_csv(&run.history, split.train.n_groups(), w)
            })?;
            run.model
        }
    };
    model.save(out.join(MODEL_FILE))?;

    let mut reports = Vec::with_capacity(3);
    for (name, ds) in [
        ("train", &split.train),
        ("valid", &split.valid),
        ("test", &split.test),
    ] {
        let report = evaluate(&model, ds, kind)?;
        write_with(&out.join(format!("report_{name}.json")), |w| {
            report.write_json(w)
        })?;
        reports.push(report);
    }
    let test = reports.pop().expect("three reports");
    let valid = reports.pop().expect("three reports");
    let train = reports.pop().expect("three reports");
    Ok(TrainSummary {
        model,
        train,
        valid,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub x: f64,
    pub auc: f64,
    pub fairness: f64,
}

/// Trains once per scale `x` with coefficients `x * lambda*` and evaluates
/// on the test split; writes `sweep.csv`.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let out = cfg.out_dir();
    let coeff_path = cfg
        .sweep
        .coefficients
        .as_deref()
        .map(|p| cfg.resolve(p))
        .unwrap_or_else(|| out.join(COEFFICIENTS_FILE));
    if !coeff_path.is_file() {
        return Err(Error::validation(format!(
            "learned coefficients not found at {}; run `train --method pairwise` first",
            coeff_path.display()
        )));
    }
    let lambda_star = Coefficients::read_csv(File::open(&coeff_path)?)?;
    let kind = lambda_star.kind;
    if !kind.is_pairwise() {
        return Err(Error::validation("sweep needs pairwise coefficients"));
    }
    let split = cfg.load_split()?;
    let rows = sweep(
        &split,
        &lambda_star,
        &cfg.sweep.scales,
        &cfg.fair,
        &cfg.train,
    )?;
    fs::create_dir_all(&out)?;
    write_with(&out.join(SWEEP_FILE), |w| {
        writeln!(w, "x,auc,fairness")?;
        for r in &rows {
            writeln!(w, "{:?},{:?},{:?}", r.x, r.auc, r.fairness)?;
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Sweep core without file I/O.
pub fn sweep(
    split: &Split,
    lambda_star: &Coefficients,
    scales: &[f64],
    fair: &FairTrainConfig,
    train: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    scales
        .iter()
        .map(|&x| {
            let model = train_with_coefficients(&split.train, &lambda_star.scaled(x), fair, train)?;
            let report = evaluate(&model, &split.test, lambda_star.kind)?;
            Ok(SweepRow {
                x,
                auc: report.auc,
                fairness: report.fairness,
            })
        })
        .collect()
}

/// Evaluates a saved model on the configured split; writes `evaluation.json`.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let kind = cfg.constraint_kind()?;
    let out = cfg.out_dir();
    let model_path = cfg
        .evaluate
        .model
        .as_deref()
        .map(|p| cfg.resolve(p))
        .unwrap_or_else(|| out.join(MODEL_FILE));
    let model = LinearRankingModel::load(&model_path)?;
    let ds = match cfg.evaluate.split {
        EvalSplit::All => cfg.load_dataset()?,
        which => {
            let s = cfg.load_split()?;
            match which {
                EvalSplit::Train => s.train,
                EvalSplit::Valid => s.valid,
                _ => s.test,
            }
        }
    };
    let report = evaluate(&model, &ds, kind)?;
    fs::create_dir_all(&out)?;
    write_with(&out.join(EVALUATION_FILE), |w| report.write_json(w))?;
    Ok(report)
}
