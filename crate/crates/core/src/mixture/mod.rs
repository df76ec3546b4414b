//! Exponential-mixture model of inter-action intervals and time-bin
//! attribution.
//!
//! Components are always kept sorted by ascending mean (descending rate), so
//! bin `T1` is the shortest-mean component and `TK` the longest. `T0` is
//! reserved for zero intervals, which no exponential component can explain.

mod codelength;
mod em;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::IntervalSample;
use crate::seed;

pub use codelength::{
    bic, codelength, dnml_approx, fit_candidates, log_multinomial_complexity, select_from, select_model,
    Criterion, Selection, SMALL_CLUSTER_COMPLEXITY,
};
pub use em::{
    e_step_responsibilities, fit_em, m_step_from, EmConfig, EmFit, FitDiagnostics, ResponsibilityMatrix,
};

/// Tolerance on the weight simplex constraint.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("interval sample is empty")]
    EmptyData,
    #[error("no positive intervals: every interval is zero")]
    NoPositiveIntervals,
    #[error("EM requires strictly positive data, found {0}")]
    NonPositiveDatum(f64),
    #[error("interval must be finite and non-negative, got {0}")]
    InvalidInterval(f64),
    #[error("invalid mixture model: {0}")]
    InvalidModel(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("model file: {0}")]
    ModelFile(String),
}

/// Mixture of exponentials, sorted by ascending mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMixtureModel {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl ExpMixtureModel {
    /// Validate and sort. Weights must be non-negative and sum to one within
    /// [`WEIGHT_SUM_TOL`]; rates must be positive and finite.
    pub fn new(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, MixtureError> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(MixtureError::InvalidModel(format!(
                "need matching nonempty weights/rates, got {} and {}",
                weights.len(),
                rates.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(MixtureError::InvalidModel(format!("bad weight {w}")));
        }
        if let Some(r) = rates.iter().find(|r| !r.is_finite() || **r <= 0.0) {
            return Err(MixtureError::InvalidModel(format!("bad rate {r}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MixtureError::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            rates[b]
                .total_cmp(&rates[a])
                .then(weights[b].total_cmp(&weights[a]))
        });
        Ok(ExpMixtureModel {
            weights: order.iter().map(|&i| weights[i]).collect(),
            rates: order.iter().map(|&i| rates[i]).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn means(&self) -> Vec<f64> {
        self.rates.iter().map(|r| 1.0 / r).collect()
    }

    /// `ln(pi_k * lambda_k * exp(-lambda_k * x))` for every component.
    pub fn log_component_scores(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(move |(w, r)| w.ln() + r.ln() - r * x)
    }

    /// Mixture log-density at `x > 0`.
    pub fn log_density(&self, x: f64) -> f64 {
        log_sum_exp(self.log_component_scores(x))
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        let mut sum = KahanSum::default();
        for &x in data {
            sum.add(self.log_density(x));
        }
        sum.value()
    }

    /// Longest-mean bin.
    pub fn long_bin(&self) -> BinLabel {
        BinLabel(self.k() as u32)
    }

    /// Shortest-mean component bin (never `T0`).
    pub fn short_bin(&self) -> BinLabel {
        BinLabel(1)
    }

    pub fn bins(&self) -> impl Iterator<Item = BinLabel> {
        (0..=self.k() as u32).map(BinLabel)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// A time bin: `T0` for zero intervals, `T1..TK` for mixture components in
/// ascending-mean order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BinLabel(pub u32);

impl BinLabel {
    pub const ZERO: BinLabel = BinLabel(0);

    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for BinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

impl FromStr for BinLabel {
    type Err = MixtureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('T')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse().ok())
            .map(BinLabel)
            .ok_or_else(|| MixtureError::InvalidArgument(format!("not a bin label: {s:?}")))
    }
}

/// Attribute an interval to a bin: `T0` for `x == 0`, otherwise the
/// component with the largest `pi_k * lambda_k * exp(-lambda_k * x)`. Ties go
/// to the smaller-mean (lower-index) component.
pub fn assign_bin(model: &ExpMixtureModel, x: f64) -> Result<BinLabel, MixtureError> {
    if !x.is_finite() || x < 0.0 {
        return Err(MixtureError::InvalidInterval(x));
    }
    if x == 0.0 {
        return Ok(BinLabel::ZERO);
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, score) in model.log_component_scores(x).enumerate() {
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    Ok(BinLabel(best as u32 + 1))
}

/// Draw the estimation sample: zero intervals are dropped, then up to `n`
/// values are taken uniformly without replacement (all of them when fewer
/// remain). Sampled values keep their original relative order.
pub fn sample_intervals(sample: &IntervalSample, n: usize, seed: u64) -> Result<IntervalSample, MixtureError> {
    if sample.is_empty() {
        return Err(MixtureError::EmptyData);
    }
    if n == 0 {
        return Err(MixtureError::InvalidArgument("sample size must be positive".into()));
    }
    let positive: Vec<f64> = sample.values().iter().copied().filter(|v| *v > 0.0).collect();
    if positive.is_empty() {
        return Err(MixtureError::NoPositiveIntervals);
    }
    let chosen = if positive.len() <= n {
        positive
    } else {
        let mut rng = seed::rng_from(seed);
        let mut picks = index::sample(&mut rng, positive.len(), n).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| positive[i]).collect()
    };
    IntervalSample::new(chosen).map_err(|e| MixtureError::InvalidArgument(e.to_string()))
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: usize,
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
    pub bin_means: Vec<f64>,
    pub criterion: String,
    pub codelengths: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ModelFile {
    pub fn new(model: &ExpMixtureModel, criterion: Criterion, codelengths: BTreeMap<usize, f64>) -> Self {
        ModelFile {
            k: model.k(),
            weights: model.weights().to_vec(),
            rates: model.rates().to_vec(),
            bin_means: model.means(),
            criterion: criterion.to_string(),
            codelengths,
            config_hash: None,
        }
    }

    pub fn model(&self) -> Result<ExpMixtureModel, MixtureError> {
        if self.k != self.weights.len() {
            return Err(MixtureError::ModelFile(format!(
                "k = {} but {} weights listed",
                self.k,
                self.weights.len()
            )));
        }
        ExpMixtureModel::new(self.weights.clone(), self.rates.clone())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("model file serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, MixtureError> {
        serde_json::from_str(text).map_err(|e| MixtureError::ModelFile(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, MixtureError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MixtureError::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(weights: &[f64], rates: &[f64]) -> ExpMixtureModel {
        ExpMixtureModel::new(weights.to_vec(), rates.to_vec()).unwrap()
    }

    #[test]
    fn components_sorted_by_ascending_mean() {
        let m = model(&[0.3, 0.7], &[0.1, 2.0]);
        assert_eq!(m.rates(), &[2.0, 0.1]);
        assert_eq!(m.weights(), &[0.7, 0.3]);
        assert_eq!(m.means(), vec![0.5, 10.0]);
        assert_eq!(m.long_bin().to_string(), "T2");
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(ExpMixtureModel::new(vec![0.5, 0.6], vec![1.0, 2.0]).is_err());
        assert!(ExpMixtureModel::new(vec![1.0], vec![0.0]).is_err());
        assert!(ExpMixtureModel::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(ExpMixtureModel::new(vec![], vec![]).is_err());
    }

    #[test]
    fn zero_goes_to_t0() {
        let m = model(&[1.0], &[1.0]);
        assert_eq!(assign_bin(&m, 0.0).unwrap(), BinLabel::ZERO);
        assert_eq!(assign_bin(&m, 1e-300).unwrap(), BinLabel(1));
        assert_eq!(assign_bin(&m, 1e9).unwrap(), BinLabel(1));
    }

    #[test]
    fn worked_crossover() {
        let m = model(&[0.5, 0.5], &[1.0, 0.1]);
        assert_eq!(assign_bin(&m, 1.0).unwrap(), BinLabel(1));
        assert_eq!(assign_bin(&m, 5.0).unwrap(), BinLabel(2));
        let crossover = 10f64.ln() / 0.9;
        assert!((crossover - 2.558_427).abs() < 1e-6);
        assert_eq!(assign_bin(&m, crossover - 1e-6).unwrap(), BinLabel(1));
        assert_eq!(assign_bin(&m, crossover + 1e-6).unwrap(), BinLabel(2));
    }

    #[test]
    fn bad_intervals_rejected() {
        let m = model(&[1.0], &[1.0]);
        assert!(assign_bin(&m, -1.0).is_err());
        assert!(assign_bin(&m, f64::NAN).is_err());
        assert!(assign_bin(&m, f64::INFINITY).is_err());
    }

    #[test]
    fn exact_tie_goes_to_lower_index() {
        // Identical components score identically everywhere.
        let m = model(&[0.5, 0.5], &[1.0, 1.0]);
        assert_eq!(assign_bin(&m, 3.0).unwrap(), BinLabel(1));
    }

    #[test]
    fn bin_label_parsing() {
        assert_eq!("T12".parse::<BinLabel>().unwrap(), BinLabel(12));
        assert!("T".parse::<BinLabel>().is_err());
        assert!("X1".parse::<BinLabel>().is_err());
    }

    #[test]
    fn sampling_rules() {
        let s = IntervalSample::new(vec![0.0, 0.0, 3.5]).unwrap();
        assert_eq!(sample_intervals(&s, 10, 1).unwrap().values(), &[3.5]);

        let zeros = IntervalSample::new(vec![0.0; 4]).unwrap();
        assert!(matches!(sample_intervals(&zeros, 10, 1), Err(MixtureError::NoPositiveIntervals)));

        let small = IntervalSample::new((1..=500).map(f64::from).collect()).unwrap();
        assert_eq!(sample_intervals(&small, 10_000, 1).unwrap().len(), 500);

        let big = IntervalSample::new((1..=50_000).map(f64::from).collect()).unwrap();
        let a = sample_intervals(&big, 10_000, 9).unwrap();
        let b = sample_intervals(&big, 10_000, 9).unwrap();
        assert_eq!(a.len(), 10_000);
        assert_eq!(a, b);
        let mut distinct = a.values().to_vec();
        distinct.dedup();
        assert_eq!(distinct.len(), 10_000);
        assert_ne!(a, sample_intervals(&big, 10_000, 10).unwrap());
    }

    #[test]
    fn model_file_round_trip() {
        let m = model(&[0.25, 0.75], &[0.01, 1.0]);
        let mut table = BTreeMap::new();
        table.insert(1, 10.5);
        table.insert(2, 8.25);
        let file = ModelFile::new(&m, Criterion::DnmlApprox, table);
        let json = file.to_json();
        assert!(json.contains("\"codelengths\""));
        assert!(json.contains("\"1\": 10.5"));
        let back = ModelFile::from_json(&json).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.model().unwrap(), m);
        assert_eq!(back.bin_means, vec![1.0, 100.0]);
    }

    #[test]
    fn kahan_beats_naive() {
        let mut s = KahanSum::default();
        s.add(1e16);
        for _ in 0..100 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 100.0);
    }
}
