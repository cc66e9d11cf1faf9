//! Group statistics and the pointwise / pairwise constraint functions.
//!
//! Every constraint is written as `c_kl(x, label)` with `c_kl(x, 0) = 0`;
//! its expectation under the model's predicted label distribution is the
//! expected bias. Constraints whose denominator is zero on the available
//! data are reported as undefined (`None`) and skipped by callers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Item, PairSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Cross-group pairs give each group an equal chance to be ranked first.
    PairStatistical,
    /// Cross-group pairs are equally likely to be ranked correctly.
    PairInterGroup,
    /// Same-group pairs are equally likely to be ranked correctly.
    PairIntraGroup,
    /// Pairs are equally likely to be ranked correctly per group, averaged
    /// over the other group.
    PairMarginal,
    PointStatistical,
    PointEqualOpportunity,
}

impl ConstraintKind {
    pub const PAIRWISE: [ConstraintKind; 4] = [
        ConstraintKind::PairStatistical,
        ConstraintKind::PairInterGroup,
        ConstraintKind::PairIntraGroup,
        ConstraintKind::PairMarginal,
    ];

    pub fn is_pairwise(self) -> bool {
        !self.is_pointwise()
    }

    pub fn is_pointwise(self) -> bool {
        matches!(
            self,
            ConstraintKind::PointStatistical | ConstraintKind::PointEqualOpportunity
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::PairStatistical => "statistical",
            ConstraintKind::PairInterGroup => "inter",
            ConstraintKind::PairIntraGroup => "intra",
            ConstraintKind::PairMarginal => "marginal",
            ConstraintKind::PointStatistical => "point_statistical",
            ConstraintKind::PointEqualOpportunity => "equal_opportunity",
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "statistical" | "pair_statistical" => ConstraintKind::PairStatistical,
            "inter" | "pair_inter_group" => ConstraintKind::PairInterGroup,
            "intra" | "pair_intra_group" => ConstraintKind::PairIntraGroup,
            "marginal" | "pair_marginal" => ConstraintKind::PairMarginal,
            "point_statistical" => ConstraintKind::PointStatistical,
            "equal_opportunity" | "point_equal_opportunity" => {
                ConstraintKind::PointEqualOpportunity
            }
            other => return Err(Error::validation(format!("unknown constraint {other:?}"))),
        })
    }
}

/// How empirical proportions are aggregated across queries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsPooling {
    /// One proportion over all pairs (items) of all queries.
    #[default]
    Pooled,
    /// Per-query proportions averaged over queries.
    PerQuery,
}

/// Where the pair label inside a constraint comes from.
#[derive(Debug, Clone, Copy, Default)]
pub enum LabelSource<'a> {
    /// Observed pair labels stand in for the unbiased ones.
    #[default]
    Observed,
    /// Unbiased pair label probabilities, aligned with the pair set.
    True(&'a [f64]),
}

impl LabelSource<'_> {
    pub(crate) fn value(&self, index: usize, observed: u8) -> f64 {
        match self {
            LabelSource::Observed => f64::from(observed),
            LabelSource::True(values) => values[index],
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self {
            LabelSource::True(values) if values.len() != n => Err(Error::validation(format!(
                "{} true labels supplied for {n} pairs",
                values.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Empirical group proportions over a pair set and its items.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    n_groups: usize,
    /// `Z[k][l]`: share of pairs with `i` in group k and `j` in group l.
    membership: Vec<f64>,
    /// `P_G[k][l]`: share of pairs in (k, l) that are positively labelled.
    positive: Vec<f64>,
    /// `P_X`: share of positively labelled pairs.
    positive_rate: f64,
    item_membership: Vec<f64>,
    item_positive: Vec<f64>,
}

impl GroupStats {
    /// Builds statistics from weighted pair observations
    /// `(group_i, group_j, label_value, mass)` and item observations
    /// `(group, label, mass)`. Masses are normalized internally.
    pub fn from_weighted(
        n_groups: usize,
        pairs: impl IntoIterator<Item = (usize, usize, f64, f64)>,
        items: impl IntoIterator<Item = (usize, u8, f64)>,
    ) -> Result<Self> {
        let mut acc = Accumulator::new(n_groups);
        let mut total = 0.0;
        for (gi, gj, label, mass) in pairs {
            acc.add_pair(gi, gj, label, mass);
            total += mass;
        }
        let mut item_total = 0.0;
        for (g, y, mass) in items {
            acc.add_item(g, y, mass);
            item_total += mass;
        }
        if total <= 0.0 && item_total <= 0.0 {
            return Err(Error::validation(
                "group statistics need at least one observation",
            ));
        }
        if total > 0.0 {
            acc.scale_pairs(1.0 / total);
        }
        if item_total > 0.0 {
            acc.scale_items(1.0 / item_total);
        }
        Ok(acc.finish())
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn membership(&self, k: usize, l: usize) -> f64 {
        self.membership[k * self.n_groups + l]
    }

    pub fn positive(&self, k: usize, l: usize) -> f64 {
        self.positive[k * self.n_groups + l]
    }

    pub fn positive_rate(&self) -> f64 {
        self.positive_rate
    }

    /// `sum_l P_G[k][l]`
    pub fn positive_row(&self, k: usize) -> f64 {
        (0..self.n_groups).map(|l| self.positive(k, l)).sum()
    }

    pub fn item_membership(&self, k: usize) -> f64 {
        self.item_membership[k]
    }

    pub fn item_positive(&self, k: usize) -> f64 {
        self.item_positive[k]
    }

    pub fn item_positive_rate(&self) -> f64 {
        self.item_positive.iter().sum()
    }
}

struct Accumulator {
    k: usize,
    membership: Vec<f64>,
    positive: Vec<f64>,
    positive_total: f64,
    item_membership: Vec<f64>,
    item_positive: Vec<f64>,
}

impl Accumulator {
    fn new(k: usize) -> Self {
        Self {
            k,
            membership: vec![0.0; k * k],
            positive: vec![0.0; k * k],
            positive_total: 0.0,
            item_membership: vec![0.0; k],
            item_positive: vec![0.0; k],
        }
    }

    fn add_pair(&mut self, gi: usize, gj: usize, label: f64, mass: f64) {
        self.membership[gi * self.k + gj] += mass;
        self.positive[gi * self.k + gj] += mass * label;
        self.positive_total += mass * label;
    }

    fn add_item(&mut self, g: usize, y: u8, mass: f64) {
        self.item_membership[g] += mass;
        self.item_positive[g] += mass * f64::from(y);
    }

    fn scale_pairs(&mut self, s: f64) {
        self.membership.iter_mut().for_each(|v| *v *= s);
        self.positive.iter_mut().for_each(|v| *v *= s);
        self.positive_total *= s;
    }

    fn scale_items(&mut self, s: f64) {
        self.item_membership.iter_mut().for_each(|v| *v *= s);
        self.item_positive.iter_mut().for_each(|v| *v *= s);
    }

    fn finish(self) -> GroupStats {
        GroupStats {
            n_groups: self.k,
            membership: self.membership,
            positive: self.positive,
            positive_rate: self.positive_total,
            item_membership: self.item_membership,
            item_positive: self.item_positive,
        }
    }
}

/// Item-level shares only (pair shares stay zero), for pointwise kinds.
pub fn item_stats(ds: &Dataset, pooling: StatsPooling) -> Result<GroupStats> {
    let items: Vec<(usize, u8, f64)> = match pooling {
        StatsPooling::Pooled => ds.items().map(|it| (it.group, it.label, 1.0)).collect(),
        StatsPooling::PerQuery => ds
            .queries()
            .iter()
            .flat_map(|q| {
                let mass = 1.0 / q.items.len() as f64;
                q.items.iter().map(move |it| (it.group, it.label, mass))
            })
            .collect(),
    };
    if items.is_empty() {
        return Err(Error::validation(
            "cannot compute item statistics of an empty dataset",
        ));
    }
    GroupStats::from_weighted(ds.n_groups(), std::iter::empty(), items)
}

/// Empirical statistics of `ps` using observed pair labels.
pub fn compute_stats(ps: &PairSet<'_>) -> Result<GroupStats> {
    compute_stats_with(ps, StatsPooling::Pooled, LabelSource::Observed)
}

pub fn compute_stats_with(
    ps: &PairSet<'_>,
    pooling: StatsPooling,
    labels: LabelSource<'_>,
) -> Result<GroupStats> {
    if ps.is_empty() {
        return Err(Error::validation(
            "cannot compute group statistics of an empty pair set",
        ));
    }
    labels.check_len(ps.len())?;
    let ds = ps.dataset();
    let k = ds.n_groups();
    let pair_obs = |idx: usize| {
        let p = &ps.pairs()[idx];
        let (gi, gj) = ps.groups(p);
        (gi, gj, labels.value(idx, p.label))
    };

    match pooling {
        StatsPooling::Pooled => GroupStats::from_weighted(
            k,
            (0..ps.len()).map(|idx| {
                let (gi, gj, l) = pair_obs(idx);
                (gi, gj, l, 1.0)
            }),
            ds.items().map(|it| (it.group, it.label, 1.0)),
        ),
        StatsPooling::PerQuery => {
            // Each query contributes mass 1, spread evenly over its pairs
            // (items); queries without pairs only count toward item shares.
            let n_queries = ds.queries().len();
            let mut pairs_in_query = vec![0usize; n_queries];
            for p in ps.pairs() {
                pairs_in_query[p.query] += 1;
            }
            let items = ds
                .queries()
                .iter()
                .flat_map(|q| {
                    let mass = 1.0 / q.items.len() as f64;
                    q.items.iter().map(move |it| (it.group, it.label, mass))
                })
                .collect::<Vec<_>>();
            GroupStats::from_weighted(
                k,
                (0..ps.len()).map(|idx| {
                    let (gi, gj, l) = pair_obs(idx);
                    let q = ps.pairs()[idx].query;
                    (gi, gj, l, 1.0 / pairs_in_query[q] as f64)
                }),
                items,
            )
        }
    }
}

fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// Whether the constraint for `(k, l)` exists and has nonzero denominators.
///
/// Pointwise kinds are indexed by `k` alone; `l` is ignored.
pub fn is_defined(kind: ConstraintKind, stats: &GroupStats, k: usize, l: usize) -> bool {
    let n = stats.n_groups();
    if k >= n || l >= n {
        return false;
    }
    let px = stats.positive_rate() > 0.0;
    match kind {
        ConstraintKind::PairStatistical => k != l && stats.membership(k, l) > 0.0,
        ConstraintKind::PairInterGroup => k != l && px && stats.positive(k, l) > 0.0,
        ConstraintKind::PairIntraGroup => k == l && px && stats.positive(k, k) > 0.0,
        ConstraintKind::PairMarginal => px && stats.positive_row(k) > 0.0,
        ConstraintKind::PointStatistical => stats.item_membership(k) > 0.0,
        ConstraintKind::PointEqualOpportunity => {
            stats.item_positive(k) > 0.0 && stats.item_positive_rate() > 0.0
        }
    }
}

/// Pairwise constraint `c_kl(x_ij, pair_label)`.
///
/// `groups` are the group ids of items `i` and `j`. `l_true` is the pair
/// label value used inside the inter / intra / marginal formulas; callers
/// pass the observed label unless an unbiased one is known. Returns `None`
/// when the constraint is undefined for `(k, l)` or `kind` is pointwise.
pub fn c_pair(
    kind: ConstraintKind,
    stats: &GroupStats,
    k: usize,
    l: usize,
    groups: (usize, usize),
    pair_label: u8,
    l_true: f64,
) -> Option<f64> {
    if kind.is_pointwise() || !is_defined(kind, stats, k, l) {
        return None;
    }
    if pair_label == 0 {
        return Some(0.0);
    }
    let (gi, gj) = groups;
    let in_pair = indicator(gi == k && gj == l);
    let value = match kind {
        ConstraintKind::PairStatistical => in_pair / stats.membership(k, l) - 1.0,
        ConstraintKind::PairInterGroup | ConstraintKind::PairIntraGroup => {
            l_true * (in_pair / stats.positive(k, l) - 1.0 / stats.positive_rate())
        }
        ConstraintKind::PairMarginal => {
            l_true * (indicator(gi == k) / stats.positive_row(k) - 1.0 / stats.positive_rate())
        }
        ConstraintKind::PointStatistical | ConstraintKind::PointEqualOpportunity => {
            unreachable!("pointwise kinds rejected above")
        }
    };
    Some(value)
}

/// Pointwise constraint `c_k(x, label)`; the item's observed label plays
/// the role of the unbiased one for equal opportunity.
pub fn c_point(
    kind: ConstraintKind,
    stats: &GroupStats,
    k: usize,
    item: &Item,
    label: u8,
) -> Option<f64> {
    if kind.is_pairwise() || !is_defined(kind, stats, k, k) {
        return None;
    }
    if label == 0 {
        return Some(0.0);
    }
    let in_group = indicator(item.group == k);
    let value = match kind {
        ConstraintKind::PointStatistical => in_group / stats.item_membership(k) - 1.0,
        ConstraintKind::PointEqualOpportunity => {
            f64::from(item.label)
                * (in_group / stats.item_positive(k) - 1.0 / stats.item_positive_rate())
        }
        _ => unreachable!("pairwise kinds rejected above"),
    };
    Some(value)
}
