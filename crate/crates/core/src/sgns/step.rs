//! The SGNS update, shared by the single- and multi-threaded trainers.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln sigmoid(x)` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// A shared f64 slot. `Cell` for the sequential trainer; relaxed atomics for
/// lock-free concurrent training, where lost updates are accepted.
pub(crate) trait Slot {
    fn get(&self) -> f64;
    fn set(&self, v: f64);
}

impl Slot for Cell<f64> {
    #[inline]
    fn get(&self) -> f64 {
        Cell::get(self)
    }

    #[inline]
    fn set(&self, v: f64) {
        Cell::set(self, v)
    }
}

pub(crate) struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub(crate) fn new(v: f64) -> Self {
        AtomicF64(AtomicU64::new(v.to_bits()))
    }

    pub(crate) fn into_inner(self) -> f64 {
        f64::from_bits(self.0.into_inner())
    }
}

impl Slot for AtomicF64 {
    #[inline]
    fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    fn set(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }
}

/// Reusable buffers for [`update`].
#[derive(Default)]
pub(crate) struct Scratch {
    grad: Vec<f64>,
    coef: Vec<f64>,
}

/// One ascent step on `ln σ(w·c) + Σ_j ln σ(-w·c̄_j)`.
///
/// `contexts[0]` is the observed context, the rest are negatives. Every
/// score and every gradient term uses the pre-step vectors, so repeated
/// context ids simply accumulate. Returns the pair's loss (negated
/// objective) before the step.
pub(crate) fn update<S: Slot>(
    word_table: &[S],
    context_table: &[S],
    dim: usize,
    word: usize,
    contexts: &[usize],
    lr: f64,
    scratch: &mut Scratch,
) -> f64 {
    let w = &word_table[word * dim..(word + 1) * dim];
    scratch.grad.clear();
    scratch.grad.resize(dim, 0.0);
    scratch.coef.clear();
    let mut loss = 0.0;
    for (t, &c) in contexts.iter().enumerate() {
        let row = &context_table[c * dim..(c + 1) * dim];
        let dot: f64 = w.iter().zip(row).map(|(a, b)| a.get() * b.get()).sum();
        let (g, l) = if t == 0 {
            (1.0 - sigmoid(dot), -log_sigmoid(dot))
        } else {
            (-sigmoid(dot), -log_sigmoid(-dot))
        };
        loss += l;
        scratch.coef.push(g);
        for (acc, v) in scratch.grad.iter_mut().zip(row) {
            *acc += g * v.get();
        }
    }
    for (&c, &g) in contexts.iter().zip(&scratch.coef) {
        let row = &context_table[c * dim..(c + 1) * dim];
        for (v, wv) in row.iter().zip(w) {
            v.set(v.get() + lr * g * wv.get());
        }
    }
    for (wv, acc) in w.iter().zip(&scratch.grad) {
        wv.set(wv.get() + lr * acc);
    }
    loss
}

/// Standalone form of the update on plain vectors. Returns the loss before
/// the step.
pub fn pair_gradient_step(word: &mut [f64], context: &mut [f64], negatives: &mut [Vec<f64>], lr: f64) -> f64 {
    let dim = word.len();
    assert_eq!(context.len(), dim, "context dimension mismatch");
    assert!(negatives.iter().all(|n| n.len() == dim), "negative dimension mismatch");
    let mut ctx = Vec::with_capacity(dim * (1 + negatives.len()));
    ctx.extend_from_slice(context);
    for n in negatives.iter() {
        ctx.extend_from_slice(n);
    }
    let ids: Vec<usize> = (0..=negatives.len()).collect();
    let word_cells = Cell::from_mut(word).as_slice_of_cells();
    let ctx_cells = Cell::from_mut(ctx.as_mut_slice()).as_slice_of_cells();
    let loss = update(word_cells, ctx_cells, dim, 0, &ids, lr, &mut Scratch::default());
    context.copy_from_slice(&ctx[..dim]);
    for (j, n) in negatives.iter_mut().enumerate() {
        n.copy_from_slice(&ctx[(j + 1) * dim..(j + 2) * dim]);
    }
    loss
}
