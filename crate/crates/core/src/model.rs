use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sigmoid;

/// Lower / upper clamp applied to predicted probabilities so log-losses
/// stay finite.
pub const PROB_EPS: f64 = 1e-12;

/// Linear scorer `h(x) = w . x + b`, shared by every query.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRankingModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Predicted probability that the first item of a pair outranks the second.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PairProbability(f64);

impl PairProbability {
    /// Sigmoid of a score difference, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn from_margin(margin: f64) -> Self {
        PairProbability(sigmoid(margin).clamp(PROB_EPS, 1.0 - PROB_EPS))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl LinearRankingModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.weights.len() {
            return Err(Error::validation(format!(
                "feature vector has dimension {}, model expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// `sigmoid(h(x_i) - h(x_j))`. The bias cancels and is never added.
    pub fn pair_prob(&self, xi: &[f64], xj: &[f64]) -> Result<PairProbability> {
        self.check_dim(xi)?;
        self.check_dim(xj)?;
        Ok(self.pair_prob_unchecked(xi, xj))
    }

    pub(crate) fn pair_margin(&self, xi: &[f64], xj: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(xi.iter().zip(xj))
            .map(|(w, (a, b))| w * (a - b))
            .sum()
    }

    pub(crate) fn pair_prob_unchecked(&self, xi: &[f64], xj: &[f64]) -> PairProbability {
        PairProbability::from_margin(self.pair_margin(xi, xj))
    }

    /// Text form: a `dim` line, one `w` line per weight and a `bias` line,
    /// every value with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim {}", self.weights.len());
        for w in &self.weights {
            let _ = writeln!(out, "w {w:.16e}");
        }
        let _ = writeln!(out, "bias {:.16e}", self.bias);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n as u64 + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let field = |line: u64, raw: &str, key: &str| -> Result<String> {
            let mut parts = raw.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
                _ => Err(Error::parse(
                    line,
                    format!("expected `{key} <value>`, found {raw:?}"),
                )),
            }
        };
        let parse_f64 = |line: u64, v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::parse(line, format!("{v:?} is not a number")))?;
            if !x.is_finite() {
                return Err(Error::parse(line, "model parameters must be finite"));
            }
            Ok(x)
        };

        let (line, raw) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty model file"))?;
        let dim: usize = field(line, raw, "dim")?
            .parse()
            .map_err(|_| Error::parse(line, "dimension is not an integer"))?;
        let mut weights = Vec::with_capacity(dim);
        for _ in 0..dim {
            let (line, raw) = lines
                .next()
                .ok_or_else(|| Error::parse(line, "model file ends before all weights"))?;
            weights.push(parse_f64(line, &field(line, raw, "w")?)?);
        }
        let (line, raw) = lines
            .next()
            .ok_or_else(|| Error::parse(line, "model file has no bias line"))?;
        let bias = parse_f64(line, &field(line, raw, "bias")?)?;
        if let Some((line, _)) = lines.next() {
            return Err(Error::parse(line, "trailing content after bias"));
        }
        Ok(Self { weights, bias })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
