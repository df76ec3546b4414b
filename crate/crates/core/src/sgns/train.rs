use std::cell::Cell;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;

use super::noise::{build_noise_distribution, NoiseDistribution};
use super::step::{update, AtomicF64, Scratch, Slot};
use super::{EmbedError, EmbeddingTable};
use crate::seed;
use crate::sequence::Vocabulary;

/// Learning rate at the end of training, as a fraction of the initial rate.
const FINAL_LR_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Negative samples per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Noise-distribution smoothing exponent.
    pub alpha: f64,
    pub seed: u64,
    /// 1 is the deterministic mode.
    pub threads: usize,
    /// Shuffle pair order at the start of every epoch.
    pub shuffle: bool,
    pub keep_contexts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 300,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            alpha: 0.75,
            seed: 0,
            threads: 1,
            shuffle: true,
            keep_contexts: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: String| Err(EmbedError::InvalidConfig(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    /// Mean per-pair loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Linear decay from `lr0` to `lr0 * FINAL_LR_FRACTION` over `total` steps.
fn learning_rate(lr0: f64, step: usize, total: usize) -> f64 {
    let progress = (step as f64 / total.max(1) as f64).min(1.0);
    lr0 * (1.0 - (1.0 - FINAL_LR_FRACTION) * progress)
}

/// Draw `k` negatives into `out[1..]`; a draw equal to the observed context
/// is redrawn once and then kept.
fn draw_negatives<R: Rng>(noise: &NoiseDistribution, context: usize, k: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    out.push(context);
    for _ in 0..k {
        let mut neg = noise.sample(rng);
        if neg == context {
            neg = noise.sample(rng);
        }
        out.push(neg);
    }
}

/// Train word and context vectors on `(word_id, context_id)` pairs.
pub fn train(pairs: &[(u32, u32)], vocab: &Vocabulary, config: &TrainConfig) -> Result<TrainOutcome, EmbedError> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(EmbedError::EmptyVocabulary);
    }
    let v = vocab.len();
    if let Some(&(w, c)) = pairs.iter().find(|(w, c)| *w as usize >= v || *c as usize >= v) {
        return Err(EmbedError::PairOutOfRange(w.max(c)));
    }
    let noise = build_noise_distribution(vocab, config.alpha)?;
    let dim = config.dim;

    let mut init_rng = seed::rng_from(seed::derive_seed(config.seed, "sgns-init"));
    let half = 0.5 / dim as f64;
    let mut words: Vec<f64> = (0..v * dim).map(|_| init_rng.random_range(-half..half)).collect();
    let mut contexts = vec![0.0; v * dim];

    let total_steps = pairs.len() * config.epochs;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.shuffle {
            let mut rng = seed::rng_from(seed::derive_indexed(config.seed, "sgns-shuffle", epoch as u64));
            order.shuffle(&mut rng);
        }
        let offset = epoch * pairs.len();
        let loss = if config.threads == 1 {
            epoch_sequential(&mut words, &mut contexts, pairs, &order, &noise, config, epoch, offset, total_steps)
        } else {
            epoch_parallel(&mut words, &mut contexts, pairs, &order, &noise, config, epoch, offset, total_steps)
        };
        check_finite(&words, "word", vocab, dim, epoch)?;
        check_finite(&contexts, "context", vocab, dim, epoch)?;
        let mean = loss / pairs.len().max(1) as f64;
        debug!("sgns epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }

    let table = EmbeddingTable::new(
        vocab.tokens().to_vec(),
        dim,
        words,
        config.keep_contexts.then_some(contexts),
    )?;
    Ok(TrainOutcome { table, epoch_losses })
}

fn check_finite(values: &[f64], table: &'static str, vocab: &Vocabulary, dim: usize, epoch: usize) -> Result<(), EmbedError> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(EmbedError::NonFinite {
            table,
            token: vocab.token((i / dim) as u32).text().to_string(),
            epoch,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn epoch_sequential(
    words: &mut [f64],
    contexts: &mut [f64],
    pairs: &[(u32, u32)],
    order: &[usize],
    noise: &NoiseDistribution,
    config: &TrainConfig,
    epoch: usize,
    offset: usize,
    total: usize,
) -> f64 {
    let word_cells = Cell::from_mut(words).as_slice_of_cells();
    let ctx_cells = Cell::from_mut(contexts).as_slice_of_cells();
    let mut rng = seed::rng_from(seed::derive_indexed(config.seed, "sgns-negatives", epoch as u64));
    run_slice(word_cells, ctx_cells, pairs, order, noise, config, &mut rng, |i| offset + i, total)
}

#[allow(clippy::too_many_arguments)]
fn epoch_parallel(
    words: &mut [f64],
    contexts: &mut [f64],
    pairs: &[(u32, u32)],
    order: &[usize],
    noise: &NoiseDistribution,
    config: &TrainConfig,
    epoch: usize,
    offset: usize,
    total: usize,
) -> f64 {
    let shared_words: Vec<AtomicF64> = words.iter().map(|&v| AtomicF64::new(v)).collect();
    let shared_ctx: Vec<AtomicF64> = contexts.iter().map(|&v| AtomicF64::new(v)).collect();
    let threads = config.threads;
    let chunk = order.len().div_ceil(threads).max(1);
    let loss = std::thread::scope(|scope| {
        let handles: Vec<_> = order
            .chunks(chunk)
            .enumerate()
            .map(|(t, part)| {
                let (sw, sc) = (&shared_words, &shared_ctx);
                scope.spawn(move || {
                    let index = (epoch * threads + t) as u64;
                    let mut rng = seed::rng_from(seed::derive_indexed(config.seed, "sgns-negatives", index));
                    // all workers advance together, so global progress is
                    // roughly local progress times the worker count
                    let step = |i: usize| offset + i * threads;
                    run_slice(sw.as_slice(), sc.as_slice(), pairs, part, noise, config, &mut rng, step, total)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).sum()
    });
    for (dst, src) in words.iter_mut().zip(shared_words) {
        *dst = src.into_inner();
    }
    for (dst, src) in contexts.iter_mut().zip(shared_ctx) {
        *dst = src.into_inner();
    }
    loss
}

#[allow(clippy::too_many_arguments)]
fn run_slice<S: Slot, R: Rng>(
    words: &[S],
    contexts: &[S],
    pairs: &[(u32, u32)],
    order: &[usize],
    noise: &NoiseDistribution,
    config: &TrainConfig,
    rng: &mut R,
    step_of: impl Fn(usize) -> usize,
    total: usize,
) -> f64 {
    let mut scratch = Scratch::default();
    let mut targets = Vec::with_capacity(config.negatives + 1);
    let mut loss = 0.0;
    for (i, &p) in order.iter().enumerate() {
        let (w, c) = pairs[p];
        draw_negatives(noise, c as usize, config.negatives, rng, &mut targets);
        let lr = learning_rate(config.learning_rate, step_of(i), total);
        loss += update(words, contexts, config.dim, w as usize, &targets, lr, &mut scratch);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::Token;

    fn vocab_of(names: &[(&str, u64)]) -> Vocabulary {
        Vocabulary::from_counts(names.iter().map(|(n, c)| (Token::action(*n), *c)))
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// P and Q share contexts x1..x4; R only sees y1..y4.
    fn planted() -> (Vocabulary, Vec<(u32, u32)>) {
        let names = ["P", "Q", "R", "x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4"];
        let vocab = vocab_of(&names.iter().map(|n| (*n, 10)).collect::<Vec<_>>());
        let id = |n: &str| vocab.id(n).unwrap();
        let mut pairs = Vec::new();
        for _ in 0..200 {
            for x in ["x1", "x2", "x3", "x4"] {
                pairs.push((id("P"), id(x)));
                pairs.push((id("Q"), id(x)));
            }
            for y in ["y1", "y2", "y3", "y4"] {
                pairs.push((id("R"), id(y)));
            }
        }
        (vocab, pairs)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 16,
            epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn planted_similarity() {
        let (vocab, pairs) = planted();
        let out = train(&pairs, &vocab, &small_config()).unwrap();
        let t = &out.table;
        let (p, q, r) = (t.vector("P").unwrap(), t.vector("Q").unwrap(), t.vector("R").unwrap());
        assert!(cos(p, q) > cos(p, r), "cos(P,Q)={} cos(P,R)={}", cos(p, q), cos(p, r));
        let losses = &out.epoch_losses;
        assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (vocab, pairs) = planted();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let out = train(&pairs, &vocab, &cfg).unwrap();
        let half = 0.5 / 16.0;
        for id in 0..vocab.len() {
            assert!(out.table.word_vector(id).iter().all(|v| v.abs() <= half));
            assert!(out.table.context_vector(id).unwrap().iter().all(|v| *v == 0.0));
        }
        // same seed, same initialization
        let again = train(&[], &vocab, &cfg).unwrap();
        assert_eq!(again.table, out.table);
    }

    #[test]
    fn single_thread_is_bit_identical() {
        let (vocab, pairs) = planted();
        let a = train(&pairs, &vocab, &small_config()).unwrap();
        let b = train(&pairs, &vocab, &small_config()).unwrap();
        assert_eq!(a.table, b.table);
        let c = train(&pairs, &vocab, &TrainConfig { seed: 4, ..small_config() }).unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn multi_threaded_still_learns() {
        let (vocab, pairs) = planted();
        let cfg = TrainConfig {
            threads: 3,
            ..small_config()
        };
        let out = train(&pairs, &vocab, &cfg).unwrap();
        let t = &out.table;
        let (p, q, r) = (t.vector("P").unwrap(), t.vector("Q").unwrap(), t.vector("R").unwrap());
        assert!(cos(p, q) > cos(p, r));
    }

    #[test]
    fn divergence_is_reported() {
        let (vocab, pairs) = planted();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 1,
            ..small_config()
        };
        assert!(matches!(train(&pairs, &vocab, &cfg), Err(EmbedError::NonFinite { .. })));
    }

    #[test]
    fn config_validation() {
        let (vocab, pairs) = planted();
        for cfg in [
            TrainConfig { dim: 0, ..small_config() },
            TrainConfig { negatives: 0, ..small_config() },
            TrainConfig { learning_rate: 0.0, ..small_config() },
            TrainConfig { threads: 0, ..small_config() },
            TrainConfig { alpha: 2.0, ..small_config() },
        ] {
            assert!(train(&pairs, &vocab, &cfg).is_err());
        }
        assert!(matches!(
            train(&[(0, 99)], &vocab, &small_config()),
            Err(EmbedError::PairOutOfRange(99))
        ));
    }

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(learning_rate(0.025, 0, 100), 0.025);
        assert!((learning_rate(0.025, 100, 100) - 0.025 * 1e-4).abs() < 1e-18);
        assert!((learning_rate(0.025, 50, 100) - 0.025 * (1.0 - 0.9999 * 0.5)).abs() < 1e-15);
    }
}
