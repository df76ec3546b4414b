//! Action timing context scoring and the statistics built on it.
//!
//! For an action `A` with word vector `a`,
//! `r(A) = cos(v_long, a) - cos(v_short, a)`, where `v_long` / `v_short` are
//! the means of the `Tb|A'|Tb` trigram vectors for the longest- and
//! shortest-mean bins. Large `r` means the action tends to sit between long
//! pauses.

mod report;
mod stats;
mod windows;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ingest::unescape_action;
use crate::mixture::BinLabel;
use crate::sequence::{Token, TokenKind};
use crate::sgns::EmbeddingTable;

pub use report::{
    cohort_diff, read_report_csv, standardize, AtcReport, AtcScore, CohortDiff, DiffRow, ReportMeta,
};
pub use stats::{
    category_mean_ci, pearson_linreg, percentile_bootstrap, read_category_map, read_covariate, write_category_csv,
    Bootstrap, CategoryStat, Correlation,
};
pub use windows::{partition_windows, WEEK_SECONDS};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("zero-norm vector for {0}")]
    ZeroNorm(String),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty reference set: no {bin}|A|{bin} trigram in the vocabulary")]
    EmptyReferenceSet { bin: BinLabel },
    #[error("unknown action {token:?}; nearest known: {nearest:?}")]
    UnknownAction { token: String, nearest: Vec<String> },
    #[error("group {0:?} cannot be standardized: {1}")]
    Degenerate(String, String),
    #[error("report has no standardized values for {0:?}")]
    NotStandardized(String),
    #[error("cohorts share no actions")]
    EmptyIntersection,
    #[error("long and short reference bins are both {0}; ATC needs at least two mixture components (or the T0 short bin)")]
    SameReferenceBin(BinLabel),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {what}: {message}")]
    Malformed { what: String, message: String },
    #[error("analysis i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Cosine similarity. Fails on a zero-norm operand.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(AnalysisError::ZeroNorm("left operand".into()));
    }
    if nb == 0.0 {
        return Err(AnalysisError::ZeroNorm("right operand".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVector {
    pub bin: BinLabel,
    pub vector: Vec<f64>,
    /// Trigrams that contributed.
    pub members: Vec<String>,
}

impl ReferenceVector {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// Mean word vector of the `bin|A|bin` trigrams present in the table, over
/// the given actions.
pub fn reference_vector(emb: &EmbeddingTable, bin: BinLabel, actions: &[Token]) -> Result<ReferenceVector, AnalysisError> {
    let bin_text = bin.to_string();
    let mut sum = vec![0.0; emb.dim()];
    let mut members = Vec::new();
    for action in actions {
        let text = format!("{bin_text}|{}|{bin_text}", action.text());
        if let Some(v) = emb.vector(&text) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            members.push(text);
        }
    }
    if members.is_empty() {
        return Err(AnalysisError::EmptyReferenceSet { bin });
    }
    let m = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= m);
    Ok(ReferenceVector {
        bin,
        vector: sum,
        members,
    })
}

/// Action tokens of an embedding table, in table order.
pub fn action_tokens(emb: &EmbeddingTable) -> Vec<Token> {
    emb.tokens().iter().filter(|t| t.kind() == TokenKind::Action).cloned().collect()
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn nearest_actions(emb: &EmbeddingTable, text: &str, limit: usize) -> Vec<String> {
    let mut ranked: Vec<(usize, String)> = action_tokens(emb)
        .into_iter()
        .map(|t| (edit_distance(text, t.text()), unescape_action(t.text())))
        .collect();
    ranked.sort();
    ranked.into_iter().take(limit).map(|(_, t)| t).collect()
}

/// `r(A) = cos(v_long, a) - cos(v_short, a)` for one action.
pub fn action_atc(
    emb: &EmbeddingTable,
    action: &Token,
    long: &ReferenceVector,
    short: &ReferenceVector,
) -> Result<AtcScore, AnalysisError> {
    let a = match emb.vector(action.text()) {
        Some(v) if action.is_action() => v,
        _ => {
            return Err(AnalysisError::UnknownAction {
                token: unescape_action(action.text()),
                nearest: nearest_actions(emb, action.text(), 3),
            })
        }
    };
    let name = || unescape_action(action.text());
    let named = |e: AnalysisError, reference: &ReferenceVector| match e {
        AnalysisError::ZeroNorm(side) if side == "left operand" => {
            AnalysisError::ZeroNorm(format!("reference vector {}", reference.bin))
        }
        AnalysisError::ZeroNorm(_) => AnalysisError::ZeroNorm(format!("action {:?}", name())),
        other => other,
    };
    let to_long = cosine(&long.vector, a).map_err(|e| named(e, long))?;
    let to_short = cosine(&short.vector, a).map_err(|e| named(e, short))?;
    Ok(AtcScore {
        token: action.clone(),
        r: to_long - to_short,
        r_std: None,
        occurrences: 0,
    })
}

/// Which bin plays the short-interval reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShortBin {
    /// `T1`, the shortest-mean mixture component.
    #[default]
    Component,
    /// `T0`, the zero-interval bin.
    Zero,
}

/// Score every action token in `emb`. `occurrence` supplies corpus counts.
pub fn score_actions(
    emb: &EmbeddingTable,
    long_bin: BinLabel,
    short_bin: BinLabel,
    occurrence: impl Fn(&str) -> u64,
) -> Result<AtcReport, AnalysisError> {
    if long_bin == short_bin {
        return Err(AnalysisError::SameReferenceBin(long_bin));
    }
    let actions = action_tokens(emb);
    let long = reference_vector(emb, long_bin, &actions)?;
    let short = reference_vector(emb, short_bin, &actions)?;
    let mut scores = Vec::with_capacity(actions.len());
    for action in &actions {
        let mut score = action_atc(emb, action, &long, &short)?;
        score.occurrences = occurrence(action.text());
        scores.push(score);
    }
    Ok(AtcReport {
        scores,
        meta: ReportMeta {
            long_bin,
            short_bin,
            long_members: long.count(),
            short_members: short.count(),
            ..ReportMeta::default()
        },
    })
}

/// Distinct action tokens across reports, sorted.
pub fn union_actions<'a>(reports: impl IntoIterator<Item = &'a AtcReport>) -> BTreeSet<String> {
    reports
        .into_iter()
        .flat_map(|r| r.scores.iter().map(|s| s.token.text().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = rows[0].1.len();
        let tokens = rows.iter().map(|(t, _)| Token::parse(t).unwrap()).collect();
        let words = rows.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        EmbeddingTable::new(tokens, dim, words, None).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let v = [0.3, -1.2, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let a = [1.0, 2.0];
        let b = [-0.5, 3.0];
        let a2 = [2.0, 4.0];
        assert!((cosine(&a2, &b).unwrap() - cosine(&a, &b).unwrap()).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &a), Err(AnalysisError::ZeroNorm(_))));
        assert!(cosine(&[1.0], &a).is_err());
    }

    #[test]
    fn reference_vector_is_a_mean() {
        let emb = table(&[
            ("A", &[1.0, 1.0]),
            ("B", &[1.0, -1.0]),
            ("C", &[0.2, 0.1]),
            ("T2|A|T2", &[1.0, 0.0]),
            ("T2|B|T2", &[0.0, 1.0]),
        ]);
        let actions = action_tokens(&emb);
        let r = reference_vector(&emb, BinLabel(2), &actions).unwrap();
        assert_eq!(r.vector, vec![0.5, 0.5]);
        assert_eq!(r.count(), 2);
        let only_a = reference_vector(&emb, BinLabel(2), &actions[..1]).unwrap();
        assert_eq!(only_a.vector, vec![1.0, 0.0]);
        assert!(matches!(
            reference_vector(&emb, BinLabel(1), &actions),
            Err(AnalysisError::EmptyReferenceSet { .. })
        ));
    }

    #[test]
    fn atc_endpoints_and_symmetry() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let emb = table(&[
            ("L", &[1.0, 0.0]),
            ("M", &[s, s]),
            ("T2|L|T2", &[1.0, 0.0]),
            ("T1|M|T1", &[0.0, 1.0]),
        ]);
        let actions = action_tokens(&emb);
        let long = reference_vector(&emb, BinLabel(2), &actions).unwrap();
        let short = reference_vector(&emb, BinLabel(1), &actions).unwrap();
        let l = action_atc(&emb, &actions[0], &long, &short).unwrap();
        assert_eq!(l.r, 1.0);
        let m = action_atc(&emb, &actions[1], &long, &short).unwrap();
        assert!(m.r.abs() < 1e-15);
        let swapped = action_atc(&emb, &actions[0], &short, &long).unwrap();
        assert_eq!(swapped.r, -l.r);
    }

    #[test]
    fn unknown_action_suggests_neighbours() {
        let emb = table(&[("Pause\\sVideo", &[1.0]), ("Play\\sVideo", &[1.0]), ("T1|Play\\sVideo|T1", &[1.0])]);
        let r = reference_vector(&emb, BinLabel(1), &action_tokens(&emb)).unwrap();
        match action_atc(&emb, &Token::action("Pause\\sVide"), &r, &r) {
            Err(AnalysisError::UnknownAction { nearest, .. }) => assert_eq!(nearest[0], "Pause Video"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_action_vector_names_the_action() {
        let emb = table(&[("A", &[0.0, 0.0]), ("B", &[1.0, 0.0]), ("T1|B|T1", &[1.0, 0.0]), ("T2|B|T2", &[0.0, 1.0])]);
        let acts = action_tokens(&emb);
        let long = reference_vector(&emb, BinLabel(2), &acts).unwrap();
        let short = reference_vector(&emb, BinLabel(1), &acts).unwrap();
        match action_atc(&emb, &acts[0], &long, &short) {
            Err(AnalysisError::ZeroNorm(who)) => assert!(who.contains("\"A\"")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_component_cannot_score() {
        let emb = table(&[("A", &[1.0]), ("T1|A|T1", &[1.0])]);
        assert!(score_actions(&emb, BinLabel(1), BinLabel(1), |_| 1).is_err());
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
    }
}
