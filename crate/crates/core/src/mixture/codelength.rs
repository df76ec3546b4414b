//! Codelength criteria for choosing the number of mixture components.
//!
//! `DnmlApprox` scores the latent hard assignments and the data given those
//! assignments separately:
//!
//! * `L(z)`: multinomial maximum log-loss plus the exact multinomial
//!   stochastic complexity `ln C(n, K)`, computed with the linear-time
//!   recurrence `C(n, K+2) = C(n, K+1) + n/K * C(n, K)`.
//! * `L(x|z)`: per cluster, the exponential negative log-likelihood at the
//!   MLE, `n_k (1 + ln mean_k)`, plus the asymptotic parametric complexity
//!   `1/2 ln(n_k / 2pi) + ln ln(lambda_max / lambda_min)` over the rate range
//!   `[1/max(x), 1/min(x)]`.
//!
//! All codelengths are in nats. `Bic` is `-2 ln L + (2K - 1) ln n`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::em::{fit_em, EmConfig, EmFit, FitDiagnostics, ResponsibilityMatrix};
use super::{ExpMixtureModel, KahanSum, MixtureError};
use crate::ingest::IntervalSample;
use crate::seed;

/// Parametric complexity charged for a single-point cluster in place of
/// `1/2 ln(1 / 2pi)`, which would be negative.
pub const SMALL_CLUSTER_COMPLEXITY: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    DnmlApprox,
    Bic,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::DnmlApprox => f.write_str("dnml_approx"),
            Criterion::Bic => f.write_str("bic"),
        }
    }
}

impl FromStr for Criterion {
    type Err = MixtureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dnml_approx" | "dnml" => Ok(Criterion::DnmlApprox),
            "bic" => Ok(Criterion::Bic),
            other => Err(MixtureError::InvalidArgument(format!("unknown criterion {other:?}"))),
        }
    }
}

/// `ln C(n, k)`, the log normalizer of the multinomial NML distribution.
pub fn log_multinomial_complexity(n: usize, k: usize) -> f64 {
    if k <= 1 || n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    // ln h! for h = 0..=n
    let mut log_fact = Vec::with_capacity(n + 1);
    log_fact.push(0.0);
    let mut acc = 0.0;
    for h in 1..=n {
        acc += (h as f64).ln();
        log_fact.push(acc);
    }
    let xlogx = |h: usize| if h == 0 { 0.0 } else { h as f64 * (h as f64 / nf).ln() };
    let terms: Vec<f64> = (0..=n)
        .map(|h| log_fact[n] - log_fact[h] - log_fact[n - h] + xlogx(h) + xlogx(n - h))
        .collect();
    let log_c2 = super::log_sum_exp(terms.into_iter());

    // prev = ln C(n, j), cur = ln C(n, j + 1)
    let (mut prev, mut cur) = (0.0, log_c2);
    for j in 1..k - 1 {
        let next = log_add_exp(cur, nf.ln() - (j as f64).ln() + prev);
        prev = cur;
        cur = next;
    }
    cur
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Rate-range term `ln ln(lambda_max / lambda_min)`, floored at zero when
/// the data span less than a factor of e.
fn log_rate_range(data: &[f64]) -> f64 {
    let (min, max) = data
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = (max / min).ln();
    if span > 1.0 {
        span.ln()
    } else {
        0.0
    }
}

/// Hard-assignment decomposed codelength.
pub fn dnml_approx(model: &ExpMixtureModel, data: &[f64], gamma: &ResponsibilityMatrix) -> Result<f64, MixtureError> {
    check_shapes(model, data, gamma)?;
    let k = model.k();
    let n = data.len();
    let assignment = gamma.hard_assignments();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    for (&z, &x) in assignment.iter().zip(data) {
        counts[z] += 1;
        sums[z] += x;
    }

    let nf = n as f64;
    let mut latent = KahanSum::default();
    for &c in &counts {
        if c > 0 {
            latent.add(-(c as f64) * (c as f64 / nf).ln());
        }
    }
    latent.add(log_multinomial_complexity(n, k));

    let range = log_rate_range(data);
    let mut observed = KahanSum::default();
    for (&c, &s) in counts.iter().zip(&sums) {
        if c == 0 {
            continue;
        }
        let cf = c as f64;
        let mean = s / cf;
        observed.add(cf * (1.0 + mean.ln()));
        let parametric = if c >= 2 {
            0.5 * (cf / (2.0 * PI)).ln()
        } else {
            SMALL_CLUSTER_COMPLEXITY
        };
        observed.add(parametric + range);
    }
    Ok(latent.value() + observed.value())
}

/// `-2 ln L + (2K - 1) ln n` with the soft mixture likelihood.
pub fn bic(model: &ExpMixtureModel, data: &[f64]) -> f64 {
    let p = (2 * model.k() - 1) as f64;
    -2.0 * model.log_likelihood(data) + p * (data.len() as f64).ln()
}

fn check_shapes(model: &ExpMixtureModel, data: &[f64], gamma: &ResponsibilityMatrix) -> Result<(), MixtureError> {
    if data.is_empty() {
        return Err(MixtureError::EmptyData);
    }
    if gamma.n() != data.len() || gamma.k() != model.k() {
        return Err(MixtureError::InvalidArgument(format!(
            "responsibilities are {}x{}, expected {}x{}",
            gamma.n(),
            gamma.k(),
            data.len(),
            model.k()
        )));
    }
    if let Some(&bad) = data.iter().find(|x| !(**x > 0.0)) {
        return Err(MixtureError::NonPositiveDatum(bad));
    }
    Ok(())
}

/// Codelength of `data` under a fitted model.
pub fn codelength(
    model: &ExpMixtureModel,
    data: &IntervalSample,
    gamma: &ResponsibilityMatrix,
    criterion: Criterion,
) -> Result<f64, MixtureError> {
    check_shapes(model, data.values(), gamma)?;
    let value = match criterion {
        Criterion::DnmlApprox => dnml_approx(model, data.values(), gamma)?,
        Criterion::Bic => bic(model, data.values()),
    };
    if !value.is_finite() {
        return Err(MixtureError::NumericalFailure(format!(
            "{criterion} codelength is {value} for K = {}",
            model.k()
        )));
    }
    Ok(value)
}

/// Fit every K in `k_range`. Each K gets its own sub-seed, so a fit does not
/// depend on which other K values are in the range.
pub fn fit_candidates(
    data: &IntervalSample,
    k_range: RangeInclusive<usize>,
    seed: u64,
    config: &EmConfig,
) -> Result<Vec<(usize, EmFit)>, MixtureError> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(MixtureError::InvalidArgument(format!("bad K range {k_range:?}")));
    }
    k_range
        .map(|k| fit_em(data, k, seed::derive_indexed(seed, "em-k", k as u64), config).map(|fit| (k, fit)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Requested K of the winning candidate (the model may have fewer
    /// components if EM dropped a degenerate one).
    pub requested_k: usize,
    pub model: ExpMixtureModel,
    pub diagnostics: FitDiagnostics,
}

/// Pick the candidate with the smallest codelength; ties go to smaller K.
pub fn select_from(
    candidates: &[(usize, EmFit)],
    data: &IntervalSample,
    criterion: Criterion,
) -> Result<Selection, MixtureError> {
    let mut table = BTreeMap::new();
    let mut best: Option<(usize, f64)> = None;
    for (idx, (k, fit)) in candidates.iter().enumerate() {
        let value = codelength(&fit.model, data, &fit.responsibilities, criterion)?;
        table.insert(*k, value);
        if best.map_or(true, |(_, v)| value < v) {
            best = Some((idx, value));
        }
    }
    let (idx, _) = best.ok_or_else(|| MixtureError::InvalidArgument("no candidate models".into()))?;
    let (k, fit) = &candidates[idx];
    let mut diagnostics = fit.diagnostics.clone();
    diagnostics.codelengths = table;
    Ok(Selection {
        requested_k: *k,
        model: fit.model.clone(),
        diagnostics,
    })
}

pub fn select_model(
    data: &IntervalSample,
    k_range: RangeInclusive<usize>,
    criterion: Criterion,
    seed: u64,
    config: &EmConfig,
) -> Result<Selection, MixtureError> {
    let candidates = fit_candidates(data, k_range, seed, config)?;
    select_from(&candidates, data, criterion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::e_step_responsibilities;

    /// Brute-force `C(n, k)`: sum over all count vectors of the multinomial
    /// probability of that vector at its own maximum-likelihood parameters.
    fn brute_complexity(n: usize, k: usize) -> f64 {
        fn rec(n: usize, left: usize, k: usize, counts: &mut Vec<usize>, total: &mut f64) {
            if k == 1 {
                counts.push(left);
                let mut log_p = (1..=n).map(|i| (i as f64).ln()).sum::<f64>();
                for &c in counts.iter() {
                    log_p -= (1..=c).map(|i| (i as f64).ln()).sum::<f64>();
                    if c > 0 {
                        log_p += c as f64 * (c as f64 / n as f64).ln();
                    }
                }
                *total += log_p.exp();
                counts.pop();
                return;
            }
            for c in 0..=left {
                counts.push(c);
                rec(n, left - c, k - 1, counts, total);
                counts.pop();
            }
        }
        let mut total = 0.0;
        rec(n, n, k, &mut Vec::new(), &mut total);
        total
    }

    #[test]
    fn multinomial_complexity_matches_enumeration() {
        for n in 1..=7 {
            for k in 1..=5 {
                let fast = log_multinomial_complexity(n, k).exp();
                let slow = brute_complexity(n, k);
                assert!((fast - slow).abs() < 1e-10 * slow, "n={n} k={k}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn multinomial_complexity_known_value() {
        // C(1, 2) = 2, C(2, 2) = 2.5
        assert!((log_multinomial_complexity(1, 2) - 2f64.ln()).abs() < 1e-14);
        assert!((log_multinomial_complexity(2, 2) - 2.5f64.ln()).abs() < 1e-14);
        assert_eq!(log_multinomial_complexity(100, 1), 0.0);
        // grows with K and n
        assert!(log_multinomial_complexity(10_000, 3) > log_multinomial_complexity(10_000, 2));
        assert!(log_multinomial_complexity(10_000, 2) > log_multinomial_complexity(1_000, 2));
    }

    #[test]
    fn bic_worked_example() {
        let model = ExpMixtureModel::new(vec![1.0], vec![1.0]).unwrap();
        let data = IntervalSample::new(vec![1.0; 4]).unwrap();
        let gamma = e_step_responsibilities(&model, data.values());
        let value = codelength(&model, &data, &gamma, Criterion::Bic).unwrap();
        assert!((value - (8.0 + 4f64.ln())).abs() < 1e-12);
        assert!((value - 9.386).abs() < 1e-3);
    }

    #[test]
    fn dnml_single_component_by_hand() {
        let data = IntervalSample::new(vec![1.0, 2.0, 4.0, 8.0]).unwrap();
        let model = ExpMixtureModel::new(vec![1.0], vec![1.0 / 3.75]).unwrap();
        let gamma = e_step_responsibilities(&model, data.values());
        let value = codelength(&model, &data, &gamma, Criterion::DnmlApprox).unwrap();
        let expected = 4.0 * (1.0 + 3.75f64.ln()) + 0.5 * (4.0 / (2.0 * PI)).ln() + 8f64.ln().ln();
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_and_singleton_clusters() {
        // second component claims nothing; third claims one point
        let model = ExpMixtureModel::new(vec![0.8, 0.1, 0.1], vec![1.0, 0.5, 0.001]).unwrap();
        let data = [0.5, 1.0, 1.5, 2000.0];
        let gamma = ResponsibilityMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let value = dnml_approx(&model, &data, &gamma).unwrap();
        let range = (2000.0f64 / 0.5).ln().ln();
        let latent = -3.0 * (0.75f64).ln() - (0.25f64).ln() + log_multinomial_complexity(4, 3);
        let observed = 3.0 * (1.0 + 1.0f64.ln())
            + 0.5 * (3.0 / (2.0 * PI)).ln()
            + range
            + (1.0 + 2000f64.ln())
            + SMALL_CLUSTER_COMPLEXITY
            + range;
        assert!((value - (latent + observed)).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let model = ExpMixtureModel::new(vec![1.0], vec![1.0]).unwrap();
        let data = IntervalSample::new(vec![1.0, 2.0]).unwrap();
        let gamma = ResponsibilityMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(codelength(&model, &data, &gamma, Criterion::Bic).is_err());
    }

    #[test]
    fn criterion_parsing() {
        assert_eq!("dnml_approx".parse::<Criterion>().unwrap(), Criterion::DnmlApprox);
        assert_eq!("BIC".parse::<Criterion>().unwrap(), Criterion::Bic);
        assert!("aic".parse::<Criterion>().is_err());
        assert_eq!(Criterion::DnmlApprox.to_string(), "dnml_approx");
    }
}
