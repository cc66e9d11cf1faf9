//! Weighted training of the linear model with Adam.
//!
//! The pairwise trainer minimizes the mean of
//! `w_ij * BCE(sigmoid(h(x_i) - h(x_j)), l_ij)` over minibatches of pairs;
//! the pointwise trainer does the same for items and their labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PairSet};
use crate::error::{Error, Result};
use crate::model::{LinearRankingModel, PairProbability};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 30,
            batch_size: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::validation("beta1 and beta2 must lie in [0, 1)"));
        }
        if self.eps_adam.is_nan() || self.eps_adam <= 0.0 {
            return Err(Error::validation("eps_adam must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One Adam step applied to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps_adam);
        }
    }
}

/// Per-example loss weights, aligned with a pair set (or item order).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable(Vec<f64>);

impl WeightTable {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::validation(format!(
                "weight {i} is {w}; weights must be finite and positive"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|w| w * factor).collect())
    }
}

/// Weighted binary cross-entropy of a predicted pair probability.
pub fn pair_loss(l_hat: PairProbability, label: u8, weight: f64) -> f64 {
    let p = l_hat.value();
    let nll = if label == 1 { -p.ln() } else { -(1.0 - p).ln() };
    weight * nll
}

/// Gradient of [`pair_loss`] with respect to `(w, b)`; the last entry is
/// the bias component, which is always zero.
pub fn loss_gradient(
    model: &LinearRankingModel,
    xi: &[f64],
    xj: &[f64],
    label: u8,
    weight: f64,
) -> Result<Vec<f64>> {
    let l_hat = model.pair_prob(xi, xj)?;
    let mut grad = vec![0.0; model.dim() + 1];
    accumulate_pair_gradient(&mut grad, l_hat, xi, xj, label, weight);
    Ok(grad)
}

fn accumulate_pair_gradient(
    grad: &mut [f64],
    l_hat: PairProbability,
    xi: &[f64],
    xj: &[f64],
    label: u8,
    weight: f64,
) {
    let residual = weight * (l_hat.value() - f64::from(label));
    for ((g, a), b) in grad.iter_mut().zip(xi).zip(xj) {
        *g += residual * (a - b);
    }
}

/// Mean weighted pair loss of `model` over `ps`.
pub fn weighted_loss(
    model: &LinearRankingModel,
    ps: &PairSet<'_>,
    weights: &WeightTable,
) -> Result<f64> {
    check_alignment(ps.len(), weights)?;
    if ps.is_empty() {
        return Err(Error::validation("empty pair set"));
    }
    let total: f64 = ps
        .pairs()
        .iter()
        .zip(weights.as_slice())
        .map(|(p, &w)| {
            let (a, b) = ps.items(p);
            pair_loss(
                model.pair_prob_unchecked(&a.features, &b.features),
                p.label,
                w,
            )
        })
        .sum();
    Ok(total / ps.len() as f64)
}

fn check_alignment(n: usize, weights: &WeightTable) -> Result<()> {
    if weights.len() != n {
        return Err(Error::validation(format!(
            "{} weights supplied for {n} examples",
            weights.len()
        )));
    }
    Ok(())
}

fn check_model(model: &LinearRankingModel, dim: usize) -> Result<()> {
    if model.dim() != dim {
        return Err(Error::validation(format!(
            "initial model has dimension {}, data has {dim}",
            model.dim()
        )));
    }
    Ok(())
}

fn params_of(model: &LinearRankingModel) -> Vec<f64> {
    let mut p = model.weights.clone();
    p.push(model.bias);
    p
}

fn load_params(model: &mut LinearRankingModel, params: &[f64]) {
    let d = model.dim();
    model.weights.copy_from_slice(&params[..d]);
    model.bias = params[d];
}

/// Runs `epochs` passes of shuffled minibatch Adam and calls `on_epoch`
/// after every epoch with the current model.
fn run_minibatch_adam(
    n_examples: usize,
    cfg: &TrainConfig,
    init: &LinearRankingModel,
    mut batch_gradient: impl FnMut(&LinearRankingModel, &[usize], &mut [f64]),
    mut on_epoch: impl FnMut(usize, &LinearRankingModel),
) -> LinearRankingModel {
    let mut model = init.clone();
    let mut params = params_of(&model);
    let mut adam = AdamState::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            batch_gradient(&model, batch, &mut grad);
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad, cfg);
            load_params(&mut model, &params);
        }
        on_epoch(epoch, &model);
    }
    model
}

/// The pairwise learning procedure: weighted pairwise logistic loss, Adam,
/// minibatches of pairs reshuffled every epoch.
pub fn train_weighted(
    ps: &PairSet<'_>,
    weights: &WeightTable,
    cfg: &TrainConfig,
    init: &LinearRankingModel,
) -> Result<LinearRankingModel> {
    train_weighted_with(ps, weights, cfg, init, |_, _| {})
}

/// [`train_weighted`] with a per-epoch observer.
pub fn train_weighted_with(
    ps: &PairSet<'_>,
    weights: &WeightTable,
    cfg: &TrainConfig,
    init: &LinearRankingModel,
    on_epoch: impl FnMut(usize, &LinearRankingModel),
) -> Result<LinearRankingModel> {
    cfg.validate()?;
    if ps.is_empty() {
        return Err(Error::validation("cannot train on an empty pair set"));
    }
    check_alignment(ps.len(), weights)?;
    check_model(init, ps.dataset().dim())?;

    let pairs = ps.pairs();
    let w = weights.as_slice();
    Ok(run_minibatch_adam(
        ps.len(),
        cfg,
        init,
        |model, batch, grad| {
            for &idx in batch {
                let p = &pairs[idx];
                let (a, b) = ps.items(p);
                let l_hat = model.pair_prob_unchecked(&a.features, &b.features);
                accumulate_pair_gradient(grad, l_hat, &a.features, &b.features, p.label, w[idx]);
            }
        },
        on_epoch,
    ))
}

/// Weighted binary cross-entropy of `sigmoid(h(x))` against the item label.
pub fn item_loss(model: &LinearRankingModel, x: &[f64], label: u8, weight: f64) -> f64 {
    pair_loss(
        PairProbability::from_margin(model.score_unchecked(x)),
        label,
        weight,
    )
}

/// Pointwise logistic regression on items (in `Dataset::items` order).
pub fn train_pointwise(
    ds: &Dataset,
    weights: &WeightTable,
    cfg: &TrainConfig,
    init: &LinearRankingModel,
) -> Result<LinearRankingModel> {
    cfg.validate()?;
    let items: Vec<_> = ds.items().collect();
    if items.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    check_alignment(items.len(), weights)?;
    check_model(init, ds.dim())?;
    let w = weights.as_slice();
    let d = ds.dim();
    Ok(run_minibatch_adam(
        items.len(),
        cfg,
        init,
        |model, batch, grad| {
            for &idx in batch {
                let it = items[idx];
                let p = PairProbability::from_margin(model.score_unchecked(&it.features));
                let residual = w[idx] * (p.value() - f64::from(it.label));
                for (g, x) in grad[..d].iter_mut().zip(&it.features) {
                    *g += residual * x;
                }
                grad[d] += residual;
            }
        },
        |_, _| {},
    ))
}

/// Mean weighted item loss, the pointwise analog of [`weighted_loss`].
pub fn weighted_item_loss(
    model: &LinearRankingModel,
    ds: &Dataset,
    weights: &WeightTable,
) -> Result<f64> {
    let n = ds.n_items();
    check_alignment(n, weights)?;
    if n == 0 {
        return Err(Error::validation("empty dataset"));
    }
    let total: f64 = ds
        .items()
        .zip(weights.as_slice())
        .map(|(it, &w)| item_loss(model, &it.features, it.label, w))
        .sum();
    Ok(total / n as f64)
}
