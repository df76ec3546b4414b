//! EM for a K-component exponential mixture.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;

use super::{ExpMixtureModel, KahanSum, MixtureError};
use crate::ingest::IntervalSample;
use crate::seed;

/// Components whose total responsibility falls below this are dropped.
const DEGENERATE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Random restarts; restart 0 uses evenly spaced quantiles, the others
    /// jitter them.
    pub restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-8,
            max_iter: 500,
            restarts: 10,
        }
    }
}

/// Row-major n x K membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    n: usize,
    k: usize,
    gamma: Vec<f64>,
}

impl ResponsibilityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MixtureError> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(MixtureError::InvalidArgument("ragged responsibility rows".into()));
        }
        Ok(ResponsibilityMatrix {
            n: rows.len(),
            k,
            gamma: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.gamma.chunks_exact(self.k)
    }

    /// Index of the most probable component per row (ties to lower index).
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                let mut best = 0;
                for (k, &g) in row.iter().enumerate() {
                    if g > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitDiagnostics {
    /// M-steps taken by the returned restart.
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after initialization and after every M-step.
    pub trace: Vec<f64>,
    pub restart: usize,
    pub converged: bool,
    pub dropped_components: usize,
    /// Codelength per candidate K, filled by model selection.
    pub codelengths: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: ExpMixtureModel,
    pub responsibilities: ResponsibilityMatrix,
    pub diagnostics: FitDiagnostics,
    /// Traces of every restart, for monotonicity checks.
    pub restart_traces: Vec<Vec<f64>>,
}

/// Unsorted working parameters.
#[derive(Debug, Clone)]
struct Params {
    weights: Vec<f64>,
    rates: Vec<f64>,
}

struct Sufficient {
    log_likelihood: f64,
    mass: Vec<f64>,
    weighted_x: Vec<f64>,
}

fn e_step(params: &Params, data: &[f64], scratch: &mut Vec<f64>) -> Sufficient {
    let k = params.weights.len();
    let log_coef: Vec<f64> = params
        .weights
        .iter()
        .zip(&params.rates)
        .map(|(w, r)| w.ln() + r.ln())
        .collect();
    let mut mass = vec![0.0; k];
    let mut weighted_x = vec![0.0; k];
    let mut ll = KahanSum::default();
    scratch.resize(k, 0.0);
    for &x in data {
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let s = log_coef[j] - params.rates[j] * x;
            scratch[j] = s;
            max = max.max(s);
        }
        let mut total = 0.0;
        for s in scratch.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        ll.add(max + total.ln());
        for j in 0..k {
            let g = scratch[j] / total;
            mass[j] += g;
            weighted_x[j] += g * x;
        }
    }
    Sufficient {
        log_likelihood: ll.value(),
        mass,
        weighted_x,
    }
}

/// M-step from sufficient statistics; drops components with negligible mass.
fn m_step(stats: &Sufficient, n: usize) -> (Params, usize) {
    let mut weights = Vec::with_capacity(stats.mass.len());
    let mut rates = Vec::with_capacity(stats.mass.len());
    let mut dropped = 0;
    for (mass, wx) in stats.mass.iter().zip(&stats.weighted_x) {
        if *mass < DEGENERATE_MASS || *wx <= 0.0 {
            dropped += 1;
            continue;
        }
        weights.push(mass / n as f64);
        rates.push(mass / wx);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (Params { weights, rates }, dropped)
}

/// Membership probabilities of `data` under `model`, columns in the model's
/// (ascending-mean) order.
pub fn e_step_responsibilities(model: &ExpMixtureModel, data: &[f64]) -> ResponsibilityMatrix {
    let k = model.k();
    let mut gamma = Vec::with_capacity(data.len() * k);
    let mut row = vec![0.0; k];
    for &x in data {
        let mut max = f64::NEG_INFINITY;
        for (slot, s) in row.iter_mut().zip(model.log_component_scores(x)) {
            *slot = s;
            max = max.max(s);
        }
        let mut total = 0.0;
        for slot in row.iter_mut() {
            *slot = (*slot - max).exp();
            total += *slot;
        }
        gamma.extend(row.iter().map(|v| v / total));
    }
    ResponsibilityMatrix {
        n: data.len(),
        k,
        gamma,
    }
}

/// Closed-form M-step given explicit responsibilities.
pub fn m_step_from(data: &[f64], gamma: &ResponsibilityMatrix) -> Result<ExpMixtureModel, MixtureError> {
    if gamma.n() != data.len() {
        return Err(MixtureError::InvalidArgument(format!(
            "{} responsibility rows for {} data points",
            gamma.n(),
            data.len()
        )));
    }
    let k = gamma.k();
    let mut stats = Sufficient {
        log_likelihood: 0.0,
        mass: vec![0.0; k],
        weighted_x: vec![0.0; k],
    };
    for (row, &x) in gamma.rows().zip(data) {
        for j in 0..k {
            stats.mass[j] += row[j];
            stats.weighted_x[j] += row[j] * x;
        }
    }
    let (params, _) = m_step(&stats, data.len());
    ExpMixtureModel::new(params.weights, params.rates)
}

fn quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn initial_params(sorted: &[f64], k: usize, restart: usize, rng: &mut impl Rng) -> Params {
    let spacing = 1.0 / (k as f64 + 1.0);
    let rates = (0..k)
        .map(|j| {
            let mut level = (j as f64 + 1.0) * spacing;
            let mut scale = 1.0 + 0.01 * j as f64;
            if restart > 0 {
                level += rng.random_range(-0.5..0.5) * spacing;
                scale *= rng.random_range(-0.1f64..0.1).exp();
            }
            let q = quantile(sorted, level.clamp(0.005, 0.995));
            scale / q
        })
        .collect();
    Params {
        weights: vec![1.0 / k as f64; k],
        rates,
    }
}

struct RunResult {
    params: Params,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    dropped: usize,
}

fn run_em(data: &[f64], mut params: Params, config: &EmConfig) -> RunResult {
    let n = data.len();
    let mut scratch = Vec::new();
    let mut stats = e_step(&params, data, &mut scratch);
    let mut trace = vec![stats.log_likelihood];
    let mut iterations = 0;
    let mut converged = false;
    let mut dropped = 0;
    while iterations < config.max_iter {
        let (next, d) = m_step(&stats, n);
        if d > 0 {
            warn!("EM dropped {d} degenerate component(s); K reduced to {}", next.weights.len());
            dropped += d;
        }
        params = next;
        let prev = stats.log_likelihood;
        stats = e_step(&params, data, &mut scratch);
        iterations += 1;
        trace.push(stats.log_likelihood);
        if !stats.log_likelihood.is_finite() {
            break;
        }
        if (stats.log_likelihood - prev).abs() <= config.tol * prev.abs() {
            converged = true;
            break;
        }
    }
    RunResult {
        params,
        trace,
        iterations,
        converged,
        dropped,
    }
}

/// Fit a K-component mixture by EM with random restarts, keeping the restart
/// with the highest final log-likelihood.
pub fn fit_em(data: &IntervalSample, k: usize, seed: u64, config: &EmConfig) -> Result<EmFit, MixtureError> {
    if k == 0 {
        return Err(MixtureError::InvalidArgument("K must be at least 1".into()));
    }
    if !(config.tol > 0.0) {
        return Err(MixtureError::InvalidArgument(format!("tol must be positive, got {}", config.tol)));
    }
    let values = data.values();
    if values.is_empty() {
        return Err(MixtureError::EmptyData);
    }
    if let Some(&bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(MixtureError::NonPositiveDatum(bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let restarts = config.restarts.max(1);
    let mut best: Option<(usize, RunResult)> = None;
    let mut traces = Vec::with_capacity(restarts);
    for restart in 0..restarts {
        let mut rng = seed::rng_from(seed::derive_indexed(seed, "em-restart", restart as u64));
        let init = initial_params(&sorted, k, restart, &mut rng);
        let run = run_em(values, init, config);
        traces.push(run.trace.clone());
        let final_ll = *run.trace.last().expect("trace has the initial value");
        if !final_ll.is_finite() {
            warn!("EM restart {restart} produced a non-finite log-likelihood; skipped");
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => final_ll > *b.trace.last().unwrap(),
        };
        if better {
            best = Some((restart, run));
        }
    }
    let (restart, run) = best.ok_or_else(|| {
        MixtureError::NumericalFailure(format!("every EM restart diverged for K = {k}"))
    })?;
    let model = ExpMixtureModel::new(run.params.weights, run.params.rates)?;
    let responsibilities = e_step_responsibilities(&model, values);
    let diagnostics = FitDiagnostics {
        iterations: run.iterations,
        log_likelihood: *run.trace.last().unwrap(),
        trace: run.trace,
        restart,
        converged: run.converged,
        dropped_components: run.dropped,
        codelengths: BTreeMap::new(),
    };
    Ok(EmFit {
        model,
        responsibilities,
        diagnostics,
        restart_traces: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    fn draw_mixture(weights: &[f64], rates: &[f64], n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng_from(seed);
        let exps: Vec<_> = rates.iter().map(|&r| Exp::new(r).unwrap()).collect();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut j = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        j = i;
                        break;
                    }
                }
                exps[j].sample(&mut rng)
            })
            .collect()
    }

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "log-likelihood decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn e_step_worked_value() {
        let model = ExpMixtureModel::new(vec![0.5, 0.5], vec![1.0, 2.0]).unwrap();
        let gamma = e_step_responsibilities(&model, &[1.0]);
        // sorted order puts rate 2 first
        let expected = (-1f64).exp() / ((-1f64).exp() + 2.0 * (-2f64).exp());
        assert!((gamma.row(0)[1] - expected).abs() < 1e-15);
        assert!((expected - 0.57612).abs() < 1e-5);
        assert!((gamma.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_hard_responsibilities() {
        let gamma = ResponsibilityMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let model = m_step_from(&[2.0, 4.0], &gamma).unwrap();
        assert_eq!(model.weights(), &[0.5, 0.5]);
        assert_eq!(model.means(), vec![2.0, 4.0]);
        assert_eq!(model.rates(), &[0.5, 0.25]);
    }

    #[test]
    fn single_component_is_the_mle() {
        let data = IntervalSample::new(vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let fit = fit_em(&data, 1, 0, &EmConfig::default()).unwrap();
        assert_eq!(fit.model.weights(), &[1.0]);
        assert!((fit.model.means()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_components() {
        let data = draw_mixture(&[0.4, 0.6], &[0.01, 1.0], 10_000, 42);
        let data = IntervalSample::new(data).unwrap();
        let fit = fit_em(&data, 2, 7, &EmConfig::default()).unwrap();
        let rates = fit.model.rates();
        let weights = fit.model.weights();
        assert!((rates[0] - 1.0).abs() / 1.0 < 0.1, "{rates:?}");
        assert!((rates[1] - 0.01).abs() / 0.01 < 0.1, "{rates:?}");
        assert!((weights[0] - 0.6).abs() < 0.05);
        assert!((weights[1] - 0.4).abs() < 0.05);
        for trace in &fit.restart_traces {
            assert_monotone(trace);
        }
        for row in fit.responsibilities.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let data = IntervalSample::new(draw_mixture(&[0.5, 0.5], &[0.1, 1.0], 2_000, 3)).unwrap();
        let a = fit_em(&data, 3, 11, &EmConfig::default()).unwrap();
        let b = fit_em(&data, 3, 11, &EmConfig::default()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = IntervalSample::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            fit_em(&data, 1, 0, &EmConfig::default()),
            Err(MixtureError::NonPositiveDatum(_))
        ));
        let data = IntervalSample::new(vec![1.0]).unwrap();
        assert!(fit_em(&data, 0, 0, &EmConfig::default()).is_err());
        let cfg = EmConfig {
            tol: 0.0,
            ..EmConfig::default()
        };
        assert!(fit_em(&data, 1, 0, &cfg).is_err());
        assert!(matches!(
            fit_em(&IntervalSample::default(), 1, 0, &EmConfig::default()),
            Err(MixtureError::EmptyData)
        ));
    }

    #[test]
    fn more_components_than_distinct_values() {
        // Identical data cannot support two distinct components; the fit must
        // still be a valid model.
        let data = IntervalSample::new(vec![2.0; 50]).unwrap();
        let fit = fit_em(&data, 3, 0, &EmConfig::default()).unwrap();
        let total: f64 = fit.model.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for trace in &fit.restart_traces {
            assert_monotone(trace);
        }
    }
}
