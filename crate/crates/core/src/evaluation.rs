//! Per-query AUC, the fairness score and JSON evaluation reports.

use std::io::Write;

use serde::Serialize;

use crate::constraints::{compute_stats, ConstraintKind, GroupStats};
use crate::dataset::{make_pairs, Dataset, PairSet};
use crate::error::{Error, Result};
use crate::model::LinearRankingModel;
use crate::reweight::{expected_bias, DeltaMatrix};

/// AUC of one query from its scores and binary labels, `None` when the
/// query has no positive/negative pair. Ties earn half credit.
pub fn query_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Mann-Whitney: midranks over the sorted scores.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let positives = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count();
        rank_sum += mid_rank * positives as f64;
        start = end;
    }
    let p = n_pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Mean per-query AUC over queries with a discordant pair, plus the
/// per-query values of those queries in dataset order.
pub fn auc(model: &LinearRankingModel, ds: &Dataset) -> Result<(f64, Vec<f64>)> {
    if model.dim() != ds.dim() {
        return Err(Error::validation(format!(
            "model dimension {} does not match dataset dimension {}",
            model.dim(),
            ds.dim()
        )));
    }
    let per_query: Vec<f64> = ds
        .queries()
        .iter()
        .filter_map(|q| {
            let scores: Vec<f64> = q
                .items
                .iter()
                .map(|it| model.score_unchecked(&it.features))
                .collect();
            let labels: Vec<u8> = q.items.iter().map(|it| it.label).collect();
            query_auc(&scores, &labels)
        })
        .collect();
    if per_query.is_empty() {
        return Err(Error::validation(
            "AUC undefined: no query has a discordant pair",
        ));
    }
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok((mean, per_query))
}

/// `1 - max (Delta_kl - Delta_lk)` over defined entries; the maximum always
/// includes 0 (the `k = l` terms), so the score never exceeds 1.
pub fn fairness_score(delta: &DeltaMatrix) -> f64 {
    let n = delta.n_groups();
    let mut worst = 0.0f64;
    for k in 0..n {
        for l in 0..n {
            if delta.is_defined(k, l) {
                worst = worst.max(delta.get(k, l) - delta.get(l, k));
            }
        }
    }
    1.0 - worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub fairness: f64,
    pub delta: DeltaMatrix,
    pub per_query_auc: Vec<f64>,
    pub n_queries_evaluated: usize,
    pub constraint_kind: ConstraintKind,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    auc: f64,
    fairness: f64,
    delta: Vec<Vec<f64>>,
    defined_mask: Vec<Vec<bool>>,
    per_query_auc: &'a [f64],
    n_queries_evaluated: usize,
    constraint_kind: &'static str,
    /// Undefined entries are excluded from the fairness maximum.
    fairness_over: &'static str,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            auc: self.auc,
            fairness: self.fairness,
            delta: self.delta.rows(),
            defined_mask: self.delta.mask_rows(),
            per_query_auc: &self.per_query_auc,
            n_queries_evaluated: self.n_queries_evaluated,
            constraint_kind: self.constraint_kind.name(),
            fairness_over: "defined_entries",
        };
        serde_json::to_string_pretty(&doc).expect("report fields are plain numbers")
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json().as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Pairs and statistics of one dataset, built once and reused for every
/// model evaluated on it.
pub struct Evaluator<'a> {
    ds: &'a Dataset,
    pairs: PairSet<'a>,
    stats: GroupStats,
    kind: ConstraintKind,
}

impl<'a> Evaluator<'a> {
    pub fn new(ds: &'a Dataset, kind: ConstraintKind) -> Result<Self> {
        if !kind.is_pairwise() {
            return Err(Error::validation(format!(
                "evaluation needs a pairwise constraint, got {kind}"
            )));
        }
        let pairs = make_pairs(ds);
        let stats = compute_stats(&pairs)?;
        Ok(Self {
            ds,
            pairs,
            stats,
            kind,
        })
    }

    pub fn report(&self, model: &LinearRankingModel) -> Result<EvalReport> {
        let (auc, per_query_auc) = auc(model, self.ds)?;
        let delta = expected_bias(model, &self.pairs, &self.stats, self.kind)?;
        Ok(EvalReport {
            auc,
            fairness: fairness_score(&delta),
            delta,
            n_queries_evaluated: per_query_auc.len(),
            per_query_auc,
            constraint_kind: self.kind,
        })
    }
}

/// Full report of `model` on `ds`; statistics come from `ds` alone.
pub fn evaluate(
    model: &LinearRankingModel,
    ds: &Dataset,
    kind: ConstraintKind,
) -> Result<EvalReport> {
    Evaluator::new(ds, kind)?.report(model)
}
