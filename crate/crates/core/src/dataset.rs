//! Ranking data: queries, items, splits and discordant pairs.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sigmoid;

/// A single ranked item.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub features: Vec<f64>,
    /// Observed binary relevance label, 0 or 1.
    pub label: u8,
    /// Protected group id in `0..n_groups`.
    pub group: usize,
}

/// All items retrieved for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub items: Vec<Item>,
}

impl QueryGroup {
    pub fn n_positive(&self) -> usize {
        self.items.iter().filter(|it| it.label == 1).count()
    }

    /// Whether the query holds at least one positive and one negative item.
    pub fn has_discordant_pair(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.items.len()
    }
}

/// A validated collection of queries sharing one feature dimension and one
/// group universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    queries: Vec<QueryGroup>,
    dim: usize,
    n_groups: usize,
}

impl Dataset {
    /// Builds a dataset, checking every item against `dim` and `n_groups`.
    ///
    /// A dataset with zero queries is allowed here (an empty split); loaders
    /// reject empty input on their own.
    pub fn new(queries: Vec<QueryGroup>, dim: usize, n_groups: usize) -> Result<Self> {
        if n_groups == 0 {
            return Err(Error::validation("group count must be at least 1"));
        }
        let mut seen = HashMap::with_capacity(queries.len());
        for (qi, q) in queries.iter().enumerate() {
            if q.items.is_empty() {
                return Err(Error::validation(format!(
                    "query {:?} has no items",
                    q.query_id
                )));
            }
            if seen.insert(q.query_id.as_str(), qi).is_some() {
                return Err(Error::validation(format!(
                    "duplicate query id {:?}",
                    q.query_id
                )));
            }
            for (ii, it) in q.items.iter().enumerate() {
                if it.features.len() != dim {
                    return Err(Error::validation(format!(
                        "query {:?} item {ii}: expected {dim} features, found {}",
                        q.query_id,
                        it.features.len()
                    )));
                }
                if it.label > 1 {
                    return Err(Error::validation(format!(
                        "query {:?} item {ii}: label {} is not 0 or 1",
                        q.query_id, it.label
                    )));
                }
                if it.group >= n_groups {
                    return Err(Error::validation(format!(
                        "query {:?} item {ii}: group {} out of range for {n_groups} groups",
                        q.query_id, it.group
                    )));
                }
                if let Some(x) = it.features.iter().find(|x| !x.is_finite()) {
                    return Err(Error::validation(format!(
                        "query {:?} item {ii}: non-finite feature {x}",
                        q.query_id
                    )));
                }
            }
        }
        Ok(Self {
            queries,
            dim,
            n_groups,
        })
    }

    pub fn queries(&self) -> &[QueryGroup] {
        &self.queries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_items(&self) -> usize {
        self.queries.iter().map(|q| q.items.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.queries.iter().flat_map(|q| q.items.iter())
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            queries: indices.iter().map(|&i| self.queries[i].clone()).collect(),
            dim: self.dim,
            n_groups: self.n_groups,
        }
    }
}

const FIXED_COLUMNS: [&str; 3] = ["query_id", "group", "label"];

/// Reads `query_id,group,label,f0,...,f{d-1}` rows.
///
/// Rows are grouped by query id in order of first appearance; row order is
/// kept inside each query.
pub fn load_csv(path: impl AsRef<Path>, n_groups: usize) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_csv(file, n_groups)
}

pub fn read_csv<R: std::io::Read>(reader: R, n_groups: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < FIXED_COLUMNS.len() + 1 {
        return Err(Error::parse(
            1,
            "header must be query_id,group,label followed by at least one feature column",
        ));
    }
    for (pos, want) in FIXED_COLUMNS.iter().enumerate() {
        if header[pos].trim() != *want {
            return Err(Error::parse(
                1,
                format!(
                    "header column {pos} is {:?}, expected {want:?}",
                    &header[pos]
                ),
            ));
        }
    }
    let dim = header.len() - FIXED_COLUMNS.len();
    for f in 0..dim {
        let name = header[FIXED_COLUMNS.len() + f].trim();
        if name != format!("f{f}") {
            return Err(Error::parse(
                1,
                format!("feature column {f} is named {name:?}, expected \"f{f}\""),
            ));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_query: HashMap<String, Vec<Item>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::parse(
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let query_id = record[0].to_string();
        let group: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("group {:?} is not an integer", &record[1])))?;
        let label: u8 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("label {:?} is not an integer", &record[2])))?;
        if label > 1 {
            return Err(Error::validation(format!(
                "line {line}: label {label} is not 0 or 1"
            )));
        }
        if group >= n_groups {
            return Err(Error::validation(format!(
                "line {line}: group {group} out of range for {n_groups} groups"
            )));
        }
        let mut features = Vec::with_capacity(dim);
        for f in 0..dim {
            let raw = record[FIXED_COLUMNS.len() + f].trim();
            let x: f64 = raw
                .parse()
                .map_err(|_| Error::parse(line, format!("feature f{f} {raw:?} is not numeric")))?;
            if !x.is_finite() {
                return Err(Error::parse(line, format!("feature f{f} is not finite")));
            }
            features.push(x);
        }
        let entry = by_query.entry(query_id.clone()).or_insert_with(|| {
            order.push(query_id);
            Vec::new()
        });
        entry.push(Item {
            features,
            label,
            group,
        });
    }

    if order.is_empty() {
        return Err(Error::validation("empty dataset"));
    }
    let queries = order
        .into_iter()
        .map(|query_id| {
            let items = by_query.remove(&query_id).unwrap_or_default();
            QueryGroup { query_id, items }
        })
        .collect();
    Dataset::new(queries, dim, n_groups)
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, format!("{other:?}")),
    }
}

/// Writes the dataset in the same schema `load_csv` reads. Floats use the
/// shortest representation that parses back to the identical value.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.dim).map(|f| format!("f{f}")));
    wtr.write_record(&header).map_err(csv_error)?;
    let mut row = Vec::with_capacity(header.len());
    for q in &ds.queries {
        for it in &q.items {
            row.clear();
            row.push(q.query_id.clone());
            row.push(it.group.to_string());
            row.push(it.label.to_string());
            row.extend(it.features.iter().map(|x| format!("{x:?}")));
            wtr.write_record(&row).map_err(csv_error)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_csv(ds, std::io::BufWriter::new(file))
}

/// Query-level train / validation / test partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

// Round half toward zero, so exact ties leave the item in training.
fn round_half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

/// Shuffles queries with `seed` and carves off test and validation parts.
///
/// Both ratios are fractions of the full query count. A positive ratio
/// always receives at least one query. Within each part the original query
/// order is kept.
pub fn split_queries(ds: &Dataset, ratio_test: f64, ratio_valid: f64, seed: u64) -> Result<Split> {
    let valid_ratio = |r: f64| r.is_finite() && r >= 0.0;
    if !valid_ratio(ratio_test) || !valid_ratio(ratio_valid) || ratio_test + ratio_valid >= 1.0 {
        return Err(Error::validation(format!(
            "split ratios must be non-negative with sum below 1 (test {ratio_test}, valid {ratio_valid})"
        )));
    }
    let n = ds.queries.len();
    let size_for = |r: f64| {
        if r > 0.0 {
            round_half_down(r * n as f64).max(1)
        } else {
            0
        }
    };
    let n_test = size_for(ratio_test);
    let n_valid = size_for(ratio_valid);
    if n_test + n_valid >= n {
        return Err(Error::validation(format!(
            "{n} queries are too few for a split with {n_test} test and {n_valid} validation queries"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut test_idx = order[..n_test].to_vec();
    let mut valid_idx = order[n_test..n_test + n_valid].to_vec();
    let mut train_idx = order[n_test + n_valid..].to_vec();
    test_idx.sort_unstable();
    valid_idx.sort_unstable();
    train_idx.sort_unstable();

    Ok(Split {
        train: ds.subset(&train_idx),
        valid: ds.subset(&valid_idx),
        test: ds.subset(&test_idx),
    })
}

/// An ordered item pair inside one query whose labels differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub query: usize,
    pub i: usize,
    pub j: usize,
    /// 1 when item `i` carries the higher label.
    pub label: u8,
}

/// Discordant pairs of a dataset, in query / `i` / `j` order.
#[derive(Debug, Clone)]
pub struct PairSet<'a> {
    dataset: &'a Dataset,
    pairs: Vec<Pair>,
}

impl<'a> PairSet<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn items(&self, p: &Pair) -> (&'a Item, &'a Item) {
        let q = &self.dataset.queries[p.query];
        (&q.items[p.i], &q.items[p.j])
    }

    /// Keeps only the pairs matching `keep`, preserving order.
    pub fn retain(&mut self, keep: impl FnMut(&Pair) -> bool) {
        self.pairs.retain(keep);
    }

    pub fn groups(&self, p: &Pair) -> (usize, usize) {
        let (a, b) = self.items(p);
        (a.group, b.group)
    }
}

/// Emits both orientations of every discordant pair within each query.
pub fn make_pairs(ds: &Dataset) -> PairSet<'_> {
    let mut pairs = Vec::new();
    for (qi, q) in ds.queries.iter().enumerate() {
        for (i, a) in q.items.iter().enumerate() {
            for (j, b) in q.items.iter().enumerate() {
                if a.label != b.label {
                    pairs.push(Pair {
                        query: qi,
                        i,
                        j,
                        label: u8::from(a.label > b.label),
                    });
                }
            }
        }
    }
    PairSet { dataset: ds, pairs }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_queries: usize,
    pub items_per_query: usize,
    pub dim: usize,
    pub n_groups: usize,
    pub bias_strength: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_queries: 40,
            items_per_query: 30,
            dim: 5,
            n_groups: 2,
            bias_strength: 1.0,
            seed: 7,
        }
    }
}

/// Group separation along the first feature coordinate.
const GROUP_SHIFT: f64 = 3.0;
/// Euclidean norm of the hidden relevance direction.
const RELEVANCE_SCALE: f64 = 0.75;

/// Ground truth recorded by the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// Unbiased relevance probability per item, keyed by query id.
    pub item_prob: BTreeMap<String, Vec<f64>>,
    /// Probability the biased labels were sampled from, keyed by query id.
    pub observed_prob: BTreeMap<String, Vec<f64>>,
    /// Unbiased pair label probability, aligned with `make_pairs` on the
    /// generated dataset. `None` where it is undefined.
    pub pair_prob: Vec<Option<f64>>,
}

impl SynthTruth {
    /// Probability that `i` outranks `j` given that their labels differ.
    pub fn pair_truth(p_i: f64, p_j: f64) -> Option<f64> {
        let up = p_i * (1.0 - p_j);
        let down = (1.0 - p_i) * p_j;
        let denom = up + down;
        (denom > 0.0).then(|| up / denom)
    }

    /// Unbiased pair label probability for every pair of `ps`, looked up
    /// through query ids so it works on any split of the generated data.
    pub fn l_true(&self, ps: &PairSet<'_>) -> Vec<Option<f64>> {
        let ds = ps.dataset();
        ps.pairs()
            .iter()
            .map(|p| {
                let probs = self.item_prob.get(&ds.queries()[p.query].query_id)?;
                Self::pair_truth(*probs.get(p.i)?, *probs.get(p.j)?)
            })
            .collect()
    }
}

/// Draws a dataset whose observed labels are biased against every group
/// other than group 0.
///
/// Group ids are uniform over `0..n_groups`. Features are standard normal,
/// with the first coordinate shifted by the group id. The unbiased relevance
/// is `sigmoid(v . x)` for a hidden direction `v` that ignores the first
/// coordinate; observed labels are Bernoulli with the logit lowered by
/// `bias_strength` for groups other than 0.
pub fn synth_generate(params: &SynthParams) -> Result<(Dataset, SynthTruth)> {
    let SynthParams {
        n_queries,
        items_per_query,
        dim,
        n_groups,
        bias_strength,
        seed,
    } = *params;
    if n_queries == 0 || items_per_query == 0 || dim == 0 || n_groups == 0 {
        return Err(Error::validation(
            "synthetic counts (queries, items per query, dimension, groups) must be positive",
        ));
    }
    if !bias_strength.is_finite() {
        return Err(Error::validation("bias strength must be finite"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction = vec![0.0; dim];
    for v in direction.iter_mut().skip(1) {
        *v = rng.sample(StandardNormal);
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        direction
            .iter_mut()
            .for_each(|v| *v *= RELEVANCE_SCALE / norm);
    }

    let mut queries = Vec::with_capacity(n_queries);
    let mut item_prob = BTreeMap::new();
    let mut observed_prob = BTreeMap::new();
    let width = n_queries.to_string().len();
    for q in 0..n_queries {
        let query_id = format!("q{q:0width$}");
        let mut items = Vec::with_capacity(items_per_query);
        let mut truth = Vec::with_capacity(items_per_query);
        let mut observed = Vec::with_capacity(items_per_query);
        for _ in 0..items_per_query {
            let group = rng.random_range(0..n_groups);
            let mut features: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            features[0] += GROUP_SHIFT * group as f64;
            let logit: f64 = direction.iter().zip(&features).map(|(v, x)| v * x).sum();
            let p_true = sigmoid(logit);
            let p_obs = if group != 0 {
                sigmoid(logit - bias_strength)
            } else {
                p_true
            };
            let label = u8::from(rng.random::<f64>() < p_obs);
            items.push(Item {
                features,
                label,
                group,
            });
            truth.push(p_true);
            observed.push(p_obs);
        }
        queries.push(QueryGroup {
            query_id: query_id.clone(),
            items,
        });
        item_prob.insert(query_id.clone(), truth);
        observed_prob.insert(query_id, observed);
    }
    let ds = Dataset::new(queries, dim, n_groups)?;
    let mut truth = SynthTruth {
        item_prob,
        observed_prob,
        pair_prob: Vec::new(),
    };
    truth.pair_prob = truth.l_true(&make_pairs(&ds));
    Ok((ds, truth))
}

/// Writes the per-item truth sidecar: `query_id,item,y_true,p_observed`.
pub fn write_truth_csv<W: Write>(ds: &Dataset, truth: &SynthTruth, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["query_id", "item", "y_true", "p_observed"])
        .map_err(csv_error)?;
    for q in ds.queries() {
        let (Some(t), Some(o)) = (
            truth.item_prob.get(&q.query_id),
            truth.observed_prob.get(&q.query_id),
        ) else {
            return Err(Error::Invariant(format!(
                "no truth recorded for query {:?}",
                q.query_id
            )));
        };
        for (i, (pt, po)) in t.iter().zip(o).enumerate() {
            wtr.write_record([
                q.query_id.clone(),
                i.to_string(),
                format!("{pt:?}"),
                format!("{po:?}"),
            ])
            .map_err(csv_error)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
