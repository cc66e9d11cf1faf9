//! Closed-form pair weights and the coefficient-learning loop.
//!
//! For coefficients `lambda_kl` a pair with label `l` gets
//!
//! ```text
//! w(x_ij, l) = exp(sum_kl lambda_kl c_kl(x_ij, l)) / sum_l' exp(sum_kl lambda_kl c_kl(x_ij, l'))
//! ```
//!
//! Training on biased labels with these weights is equivalent to training
//! on unbiased labels under a reweighted pair distribution (see
//! [`reweighting_identity_check`]). The coefficients are found by repeatedly measuring
//! the expected bias of the current model and stepping against it.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::constraints::{
    c_pair, c_point, compute_stats_with, is_defined, item_stats, ConstraintKind, GroupStats,
    LabelSource, StatsPooling,
};
use crate::dataset::{make_pairs, Dataset, PairSet};
use crate::error::{Error, Result};
use crate::evaluation::Evaluator;
use crate::model::{LinearRankingModel, PairProbability};
use crate::training::{train_pointwise, train_weighted, TrainConfig, WeightTable};

/// Number of label values the closed-form weights are normalized over.
/// Weight tables are scaled by this so that zero coefficients reproduce the
/// unit weights of unconstrained training bit for bit.
const LABEL_COUNT: f64 = 2.0;

/// `K x K` coefficient matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    n_groups: usize,
    lambda: Vec<f64>,
    pub kind: ConstraintKind,
}

impl Coefficients {
    pub fn zeros(n_groups: usize, kind: ConstraintKind) -> Self {
        Self {
            n_groups,
            lambda: vec![0.0; n_groups * n_groups],
            kind,
        }
    }

    pub fn from_values(n_groups: usize, kind: ConstraintKind, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != n_groups * n_groups {
            return Err(Error::validation(format!(
                "{} coefficients supplied for {n_groups} groups",
                lambda.len()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("coefficients must be finite"));
        }
        Ok(Self {
            n_groups,
            lambda,
            kind,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.lambda[k * self.n_groups + l]
    }

    pub fn set(&mut self, k: usize, l: usize, value: f64) {
        self.lambda[k * self.n_groups + l] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    /// `x * lambda`, used by the coefficient sweep.
    pub fn scaled(&self, x: f64) -> Self {
        Self {
            n_groups: self.n_groups,
            lambda: self.lambda.iter().map(|v| x * v).collect(),
            kind: self.kind,
        }
    }

    /// `lambda_kl -= eta * delta_kl` on every defined entry.
    pub fn step(&mut self, delta: &DeltaMatrix, eta: f64) {
        for k in 0..self.n_groups {
            for l in 0..self.n_groups {
                if delta.is_defined(k, l) {
                    let v = self.get(k, l) - eta * delta.get(k, l);
                    self.set(k, l, v);
                }
            }
        }
    }

    /// CSV with header `kind,k,l,lambda`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,k,l,lambda")?;
        for k in 0..self.n_groups {
            for l in 0..self.n_groups {
                writeln!(w, "{},{k},{l},{:?}", self.kind.name(), self.get(k, l))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "kind,k,l,lambda" => {}
            _ => return Err(Error::parse(1, "expected header kind,k,l,lambda")),
        }
        let mut entries = Vec::new();
        let mut kind = None;
        for (n, line) in lines {
            let line_no = n as u64 + 1;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::parse(line_no, "expected 4 columns"));
            }
            let this_kind: ConstraintKind = cols[0].parse()?;
            if kind.is_some_and(|k| k != this_kind) {
                return Err(Error::parse(line_no, "mixed constraint kinds"));
            }
            kind = Some(this_kind);
            let k: usize = cols[1]
                .parse()
                .map_err(|_| Error::parse(line_no, "k is not an integer"))?;
            let l: usize = cols[2]
                .parse()
                .map_err(|_| Error::parse(line_no, "l is not an integer"))?;
            let v: f64 = cols[3]
                .parse()
                .map_err(|_| Error::parse(line_no, "lambda is not a number"))?;
            entries.push((k, l, v));
        }
        let kind = kind.ok_or_else(|| Error::validation("coefficient file has no entries"))?;
        let n = (entries.len() as f64).sqrt().round() as usize;
        if n * n != entries.len() {
            return Err(Error::validation(
                "coefficient file does not hold a square matrix",
            ));
        }
        let mut out = Coefficients::zeros(n, kind);
        let mut seen = vec![false; n * n];
        for (k, l, v) in entries {
            if k >= n || l >= n || seen[k * n + l] {
                return Err(Error::validation(format!(
                    "bad coefficient index ({k}, {l})"
                )));
            }
            seen[k * n + l] = true;
            out.set(k, l, v);
        }
        Ok(out)
    }
}

/// Expected bias per group pair; undefined entries read 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    n_groups: usize,
    delta: Vec<f64>,
    defined: Vec<bool>,
}

impl DeltaMatrix {
    pub fn new(n_groups: usize, delta: Vec<f64>, defined: Vec<bool>) -> Result<Self> {
        if delta.len() != n_groups * n_groups || defined.len() != delta.len() {
            return Err(Error::validation("delta matrix shape mismatch"));
        }
        let delta = delta
            .into_iter()
            .zip(&defined)
            .map(|(d, &ok)| if ok { d } else { 0.0 })
            .collect();
        Ok(Self {
            n_groups,
            delta,
            defined,
        })
    }

    pub fn zeros(n_groups: usize) -> Self {
        Self {
            n_groups,
            delta: vec![0.0; n_groups * n_groups],
            defined: vec![false; n_groups * n_groups],
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.delta[k * self.n_groups + l]
    }

    pub fn is_defined(&self, k: usize, l: usize) -> bool {
        self.defined[k * self.n_groups + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.delta
            .chunks(self.n_groups.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn mask_rows(&self) -> Vec<Vec<bool>> {
        self.defined
            .chunks(self.n_groups.max(1))
            .map(<[bool]>::to_vec)
            .collect()
    }
}

/// `Delta_kl = mean_ij lhat(1 | x_ij) c_kl(x_ij, 1)` using observed labels.
pub fn expected_bias(
    model: &LinearRankingModel,
    ps: &PairSet<'_>,
    stats: &GroupStats,
    kind: ConstraintKind,
) -> Result<DeltaMatrix> {
    expected_bias_with(model, ps, stats, kind, LabelSource::Observed)
}

pub fn expected_bias_with(
    model: &LinearRankingModel,
    ps: &PairSet<'_>,
    stats: &GroupStats,
    kind: ConstraintKind,
    labels: LabelSource<'_>,
) -> Result<DeltaMatrix> {
    if !kind.is_pairwise() {
        return Err(Error::validation(format!(
            "{kind} is not a pairwise constraint"
        )));
    }
    if ps.is_empty() {
        return Err(Error::validation(
            "expected bias of an empty pair set is undefined",
        ));
    }
    if let LabelSource::True(v) = labels {
        if v.len() != ps.len() {
            return Err(Error::validation(
                "true labels are not aligned with the pair set",
            ));
        }
    }
    let k_groups = ps.dataset().n_groups();
    if stats.n_groups() != k_groups {
        return Err(Error::validation(
            "statistics and pair set disagree on group count",
        ));
    }

    let l_hat: Vec<f64> = ps
        .pairs()
        .iter()
        .map(|p| {
            let (a, b) = ps.items(p);
            model
                .pair_prob(&a.features, &b.features)
                .map(PairProbability::value)
        })
        .collect::<Result<_>>()?;

    let n = ps.len() as f64;
    let mut delta = vec![0.0; k_groups * k_groups];
    let mut defined = vec![false; k_groups * k_groups];
    for k in 0..k_groups {
        for l in 0..k_groups {
            if !is_defined(kind, stats, k, l) {
                continue;
            }
            defined[k * k_groups + l] = true;
            let mut sum = 0.0;
            for (idx, p) in ps.pairs().iter().enumerate() {
                let l_true = labels.value(idx, p.label);
                if let Some(c) = c_pair(kind, stats, k, l, ps.groups(p), 1, l_true) {
                    sum += l_hat[idx] * c;
                }
            }
            delta[k * k_groups + l] = sum / n;
        }
    }
    DeltaMatrix::new(k_groups, delta, defined)
}

/// Which exponent the closed-form weights use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `sum_kl lambda_kl c_kl(x_ij, l)`; valid for every pairwise kind.
    #[default]
    General,
    /// `sum_kl lambda_kl 1[x_ij in (G_k, G_l)]` on label 1, 0 on label 0.
    Indicator,
}

fn exponent(
    coeffs: &Coefficients,
    stats: &GroupStats,
    groups: (usize, usize),
    label: u8,
    l_true: f64,
    form: WeightForm,
) -> f64 {
    let n = coeffs.n_groups();
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            let lambda = coeffs.get(k, l);
            if lambda == 0.0 {
                continue;
            }
            let term = match form {
                WeightForm::General => c_pair(coeffs.kind, stats, k, l, groups, label, l_true),
                WeightForm::Indicator => is_defined(coeffs.kind, stats, k, l)
                    .then(|| f64::from(u8::from(label == 1 && groups == (k, l)))),
            };
            if let Some(c) = term {
                s += lambda * c;
            }
        }
    }
    s
}

fn normalized_label_weight(e0: f64, e1: f64, label: u8) -> f64 {
    let m = e0.max(e1);
    let w0 = (e0 - m).exp();
    let w1 = (e1 - m).exp();
    let num = if label == 1 { w1 } else { w0 };
    num / (w0 + w1)
}

/// Closed-form weight `w(x_ij, pair_label)` of a pair whose items lie in
/// `groups`. `l_true` is the label value fed to label-dependent constraints
/// (the pair's observed label under the default proxy).
pub fn pair_weight(
    coeffs: &Coefficients,
    stats: &GroupStats,
    groups: (usize, usize),
    pair_label: u8,
    l_true: f64,
    form: WeightForm,
) -> f64 {
    let e0 = exponent(coeffs, stats, groups, 0, l_true, form);
    let e1 = exponent(coeffs, stats, groups, 1, l_true, form);
    normalized_label_weight(e0, e1, pair_label)
}

/// Weights for every pair of `ps` at its observed label, scaled by the
/// label count so zero coefficients give unit weights.
pub fn pair_weight_table(
    coeffs: &Coefficients,
    ps: &PairSet<'_>,
    stats: &GroupStats,
    form: WeightForm,
) -> Result<WeightTable> {
    let weights = ps
        .pairs()
        .iter()
        .map(|p| {
            LABEL_COUNT
                * pair_weight(
                    coeffs,
                    stats,
                    ps.groups(p),
                    p.label,
                    f64::from(p.label),
                    form,
                )
        })
        .collect();
    WeightTable::new(weights)
}

/// Set on which the expected bias drives the coefficient updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSet {
    #[default]
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairTrainConfig {
    /// Coefficient step size.
    pub eta_lambda: f64,
    /// Number of outer reweight / retrain loops.
    pub loops: usize,
    pub weight_form: WeightForm,
    pub delta_set: DeltaSet,
    /// Start each retraining from the previous model instead of zeros.
    pub warm_start: bool,
    pub stats_pooling: StatsPooling,
}

impl Default for FairTrainConfig {
    fn default() -> Self {
        Self {
            eta_lambda: 1.0,
            loops: 20,
            weight_form: WeightForm::General,
            delta_set: DeltaSet::Train,
            warm_start: false,
            stats_pooling: StatsPooling::Pooled,
        }
    }
}

impl FairTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_lambda > 0.0 && self.eta_lambda.is_finite()) {
            return Err(Error::validation("eta_lambda must be positive"));
        }
        Ok(())
    }
}

/// One row of the coefficient-learning history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub auc_train: f64,
    pub auc_eval: f64,
    pub fairness_train: f64,
    pub fairness_eval: f64,
    /// Expected bias of this iteration's model on the update set.
    pub delta: DeltaMatrix,
    /// Coefficients this iteration's model was trained with.
    pub lambda: Coefficients,
}

#[derive(Debug, Clone)]
pub struct FairTrainOutcome {
    pub model: LinearRankingModel,
    pub coefficients: Coefficients,
    pub history: Vec<IterationRecord>,
}

/// Alternates weighted training with coefficient updates.
///
/// Row 0 of the history is the unconstrained model (unit weights). Every
/// following iteration steps the coefficients against the previous
/// model's expected bias, recomputes all pair weights and retrains.
pub fn fair_train(
    train: &Dataset,
    eval_set: &Dataset,
    kind: ConstraintKind,
    cfg: &FairTrainConfig,
    inner: &TrainConfig,
) -> Result<FairTrainOutcome> {
    if !kind.is_pairwise() {
        return Err(Error::validation(format!(
            "{kind} is not a pairwise constraint"
        )));
    }
    if train.n_groups() < 2 {
        return Err(Error::validation("fair training needs at least two groups"));
    }
    if eval_set.n_groups() != train.n_groups() || eval_set.dim() != train.dim() {
        return Err(Error::validation(
            "evaluation set does not match the training set",
        ));
    }
    cfg.validate()?;
    inner.validate()?;

    let train_pairs = make_pairs(train);
    let train_stats = compute_stats_with(&train_pairs, cfg.stats_pooling, LabelSource::Observed)?;
    let eval_pairs = make_pairs(eval_set);
    let (delta_pairs, delta_stats) = match cfg.delta_set {
        DeltaSet::Train => (&train_pairs, train_stats.clone()),
        DeltaSet::Validation => {
            let stats = compute_stats_with(&eval_pairs, cfg.stats_pooling, LabelSource::Observed)?;
            (&eval_pairs, stats)
        }
    };
    let train_eval = Evaluator::new(train, kind)?;
    let eval_eval = Evaluator::new(eval_set, kind)?;

    let zeros = LinearRankingModel::zeros(train.dim());
    let mut coeffs = Coefficients::zeros(train.n_groups(), kind);
    let mut model = train_weighted(
        &train_pairs,
        &WeightTable::uniform(train_pairs.len()),
        inner,
        &zeros,
    )?;

    let mut history = Vec::with_capacity(cfg.loops + 1);
    let record = |iter: usize, model: &LinearRankingModel, coeffs: &Coefficients| {
        let delta = expected_bias(model, delta_pairs, &delta_stats, kind)?;
        let tr = train_eval.report(model)?;
        let ev = eval_eval.report(model)?;
        Ok::<_, Error>(IterationRecord {
            iter,
            auc_train: tr.auc,
            auc_eval: ev.auc,
            fairness_train: tr.fairness,
            fairness_eval: ev.fairness,
            delta,
            lambda: coeffs.clone(),
        })
    };
    history.push(record(0, &model, &coeffs)?);

    for t in 1..=cfg.loops {
        let delta = &history[t - 1].delta;
        coeffs.step(delta, cfg.eta_lambda);
        let weights = pair_weight_table(&coeffs, &train_pairs, &train_stats, cfg.weight_form)?;
        let init = if cfg.warm_start { &model } else { &zeros };
        model = train_weighted(&train_pairs, &weights, inner, init)?;
        history.push(record(t, &model, &coeffs)?);
    }

    Ok(FairTrainOutcome {
        model,
        coefficients: coeffs,
        history,
    })
}

/// Trains once with fixed coefficients, as the sweep over scaled
/// coefficients does.
pub fn train_with_coefficients(
    train: &Dataset,
    coeffs: &Coefficients,
    cfg: &FairTrainConfig,
    inner: &TrainConfig,
) -> Result<LinearRankingModel> {
    if coeffs.n_groups() != train.n_groups() {
        return Err(Error::validation(
            "coefficients do not match the dataset's group count",
        ));
    }
    let pairs = make_pairs(train);
    let stats = compute_stats_with(&pairs, cfg.stats_pooling, LabelSource::Observed)?;
    let weights = pair_weight_table(coeffs, &pairs, &stats, cfg.weight_form)?;
    train_weighted(
        &pairs,
        &weights,
        inner,
        &LinearRankingModel::zeros(train.dim()),
    )
}

/// Writes the history as CSV: `iter,auc_train,auc_eval,fairness_train,
/// fairness_eval`, then `delta_k_l` and `lambda_k_l` for every group pair.
pub fn write_history_csv<W: Write>(
    history: &[IterationRecord],
    n_groups: usize,
    mut w: W,
) -> Result<()> {
    let mut header = String::from("iter,auc_train,auc_eval,fairness_train,fairness_eval");
    for prefix in ["delta", "lambda"] {
        for k in 0..n_groups {
            for l in 0..n_groups {
                header.push_str(&format!(",{prefix}_{k}_{l}"));
            }
        }
    }
    writeln!(w, "{header}")?;
    for rec in history {
        let mut row = format!(
            "{},{:?},{:?},{:?},{:?}",
            rec.iter, rec.auc_train, rec.auc_eval, rec.fairness_train, rec.fairness_eval
        );
        for v in rec.delta.values().iter().chain(rec.lambda.values()) {
            row.push_str(&format!(",{v:?}"));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Pointwise expected bias `Delta_k = mean_x sigmoid(h(x)) c_k(x, 1)`,
/// with `None` for undefined groups.
pub fn pointwise_bias(
    model: &LinearRankingModel,
    ds: &Dataset,
    stats: &GroupStats,
    kind: ConstraintKind,
) -> Result<Vec<Option<f64>>> {
    if !kind.is_pointwise() {
        return Err(Error::validation(format!(
            "{kind} is not a pointwise constraint"
        )));
    }
    let n = ds.n_items();
    if n == 0 {
        return Err(Error::validation(
            "pointwise bias of an empty dataset is undefined",
        ));
    }
    let probs: Vec<f64> = ds
        .items()
        .map(|it| {
            model
                .score(&it.features)
                .map(|s| PairProbability::from_margin(s).value())
        })
        .collect::<Result<_>>()?;
    Ok((0..ds.n_groups())
        .map(|k| {
            is_defined(kind, stats, k, k).then(|| {
                ds.items()
                    .zip(&probs)
                    .filter_map(|(it, p)| c_point(kind, stats, k, it, 1).map(|c| p * c))
                    .sum::<f64>()
                    / n as f64
            })
        })
        .collect())
}

/// Closed-form per-item weight `w(x, label)` from pointwise coefficients.
pub fn item_weight(
    lambda: &[f64],
    stats: &GroupStats,
    kind: ConstraintKind,
    item: &crate::dataset::Item,
    label: u8,
) -> f64 {
    let exponent = |y: u8| {
        lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l != 0.0)
            .filter_map(|(k, l)| c_point(kind, stats, k, item, y).map(|c| l * c))
            .sum::<f64>()
    };
    normalized_label_weight(exponent(0), exponent(1), label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseIteration {
    pub iter: usize,
    pub delta: Vec<Option<f64>>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PointwiseOutcome {
    pub model: LinearRankingModel,
    pub lambda: Vec<f64>,
    pub history: Vec<PointwiseIteration>,
}

/// Label-reweighting baseline on items: the pointwise counterpart of
/// [`fair_train`] with a pointwise constraint and weighted logistic
/// regression as the inner learner.
pub fn pointwise_reweight_train(
    train: &Dataset,
    eval_set: &Dataset,
    kind: ConstraintKind,
    cfg: &FairTrainConfig,
    inner: &TrainConfig,
) -> Result<PointwiseOutcome> {
    if !kind.is_pointwise() {
        return Err(Error::validation(format!(
            "{kind} is not a pointwise constraint"
        )));
    }
    cfg.validate()?;
    inner.validate()?;
    let delta_ds = match cfg.delta_set {
        DeltaSet::Train => train,
        DeltaSet::Validation => eval_set,
    };
    let train_stats = item_stats(train, cfg.stats_pooling)?;
    let delta_stats = item_stats(delta_ds, cfg.stats_pooling)?;
    let k_groups = train.n_groups();
    let zeros = LinearRankingModel::zeros(train.dim());

    let mut lambda = vec![0.0; k_groups];
    let mut model = train_pointwise(train, &WeightTable::uniform(train.n_items()), inner, &zeros)?;
    let mut history = vec![PointwiseIteration {
        iter: 0,
        delta: pointwise_bias(&model, delta_ds, &delta_stats, kind)?,
        lambda: lambda.clone(),
    }];
    for t in 1..=cfg.loops {
        for (l, d) in lambda.iter_mut().zip(&history[t - 1].delta) {
            if let Some(d) = d {
                *l -= cfg.eta_lambda * d;
            }
        }
        let weights = WeightTable::new(
            train
                .items()
                .map(|it| LABEL_COUNT * item_weight(&lambda, &train_stats, kind, it, it.label))
                .collect(),
        )?;
        let init = if cfg.warm_start { &model } else { &zeros };
        model = train_pointwise(train, &weights, inner, init)?;
        history.push(PointwiseIteration {
            iter: t,
            delta: pointwise_bias(&model, delta_ds, &delta_stats, kind)?,
            lambda: lambda.clone(),
        });
    }
    Ok(PointwiseOutcome {
        model,
        lambda,
        history,
    })
}

/// Writes pointwise history: `iter`, then `delta_k` and `lambda_k` per group.
pub fn write_pointwise_history_csv<W: Write>(
    history: &[PointwiseIteration],
    n_groups: usize,
    mut w: W,
) -> Result<()> {
    let mut header = String::from("iter");
    for prefix in ["delta", "lambda"] {
        for k in 0..n_groups {
            header.push_str(&format!(",{prefix}_{k}"));
        }
    }
    writeln!(w, "{header}")?;
    for rec in history {
        let mut row = rec.iter.to_string();
        for d in &rec.delta {
            row.push_str(&format!(",{:?}", d.unwrap_or(0.0)));
        }
        for l in &rec.lambda {
            row.push_str(&format!(",{l:?}"));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Loss used by the exact-enumeration identity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLoss {
    CrossEntropy,
    SquaredError,
}

impl PairLoss {
    pub fn eval(self, l_hat: f64, label: u8) -> f64 {
        let y = f64::from(label);
        match self {
            PairLoss::CrossEntropy => -(y * l_hat.ln() + (1.0 - y) * (1.0 - l_hat).ln()),
            PairLoss::SquaredError => (l_hat - y) * (l_hat - y),
        }
    }
}

/// One feature pair of a finite instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPair {
    /// Probability mass of this feature pair.
    pub mass: f64,
    pub groups: (usize, usize),
    /// Unbiased probability of label 1.
    pub l_true: f64,
    /// Model prediction for this pair, in (0, 1).
    pub l_hat: f64,
}

/// A finite pair distribution with known unbiased labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedInstance {
    pub n_groups: usize,
    pub pairs: Vec<EnumeratedPair>,
}

/// Evaluates both sides of the reweighting identity by exact enumeration.
///
/// Biased labels are built from the unbiased ones through the inverse of
/// the closed form: `l_bias(l | x) ∝ l_true(l | x) exp(-sum lambda c(x, l))`.
/// Returns `(weighted biased objective, C * reweighted true objective)`;
/// the two agree for any coefficients and any loss.
pub fn reweighting_identity_check(
    instance: &EnumeratedInstance,
    lambda_star: &Coefficients,
    loss: PairLoss,
) -> Result<(f64, f64)> {
    if instance.pairs.is_empty() {
        return Err(Error::validation("enumerated instance has no pairs"));
    }
    if lambda_star.n_groups() != instance.n_groups {
        return Err(Error::validation(
            "coefficients do not match the instance's group count",
        ));
    }
    let total_mass: f64 = instance.pairs.iter().map(|p| p.mass).sum();
    if total_mass.is_nan() || total_mass <= 0.0 {
        return Err(Error::validation(
            "instance masses must sum to a positive value",
        ));
    }
    // Constraint statistics are taken under the unbiased labels.
    let stats = GroupStats::from_weighted(
        instance.n_groups,
        instance
            .pairs
            .iter()
            .map(|p| (p.groups.0, p.groups.1, p.l_true, p.mass)),
        std::iter::empty(),
    )?;
    let form = WeightForm::General;

    let mut lhs = 0.0;
    let mut phis = Vec::with_capacity(instance.pairs.len());
    for p in &instance.pairs {
        let prob = p.mass / total_mass;
        let true_dist = [1.0 - p.l_true, p.l_true];
        let tilt =
            |label: u8| (-exponent(lambda_star, &stats, p.groups, label, p.l_true, form)).exp();
        let raw = [true_dist[0] * tilt(0), true_dist[1] * tilt(1)];
        let norm = raw[0] + raw[1];
        let bias_dist = [raw[0] / norm, raw[1] / norm];

        let weights = [
            pair_weight(lambda_star, &stats, p.groups, 0, p.l_true, form),
            pair_weight(lambda_star, &stats, p.groups, 1, p.l_true, form),
        ];
        for label in 0..2u8 {
            let li = usize::from(label);
            lhs += prob * bias_dist[li] * weights[li] * loss.eval(p.l_hat, label);
        }
        phis.push(weights[0] * bias_dist[0] + weights[1] * bias_dist[1]);
    }

    let c: f64 = instance
        .pairs
        .iter()
        .zip(&phis)
        .map(|(p, phi)| p.mass / total_mass * phi)
        .sum();
    let mut rhs = 0.0;
    for (p, phi) in instance.pairs.iter().zip(&phis) {
        let tilted = phi * (p.mass / total_mass) / c;
        let expected_loss =
            (1.0 - p.l_true) * loss.eval(p.l_hat, 0) + p.l_true * loss.eval(p.l_hat, 1);
        rhs += tilted * expected_loss;
    }
    Ok((lhs, c * rhs))
}
