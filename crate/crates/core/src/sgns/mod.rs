//! Skip-gram with negative sampling over explicit (word, context) pairs.
//!
//! Word and context vectors live in separate tables. Word vectors are the
//! output used for scoring; context vectors can be persisted alongside.

mod noise;
mod step;
mod train;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::sequence::{SequenceError, Token};

pub use noise::{build_noise_distribution, NoiseDistribution};
pub use step::{log_sigmoid, pair_gradient_step, sigmoid};
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("non-finite value in {table} vector of {token:?} after epoch {epoch}")]
    NonFinite {
        table: &'static str,
        token: String,
        epoch: usize,
    },
    #[error("pair references id {0} outside the vocabulary")]
    PairOutOfRange(u32),
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Trained vectors in vocabulary-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<Token>,
    dim: usize,
    words: Vec<f64>,
    contexts: Option<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<Token>, dim: usize, words: Vec<f64>, contexts: Option<Vec<f64>>) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidConfig("dimension must be at least 1".into()));
        }
        let expected = tokens.len() * dim;
        if words.len() != expected || contexts.as_ref().is_some_and(|c| c.len() != expected) {
            return Err(EmbedError::InvalidConfig(format!(
                "{} tokens x {dim} dims needs {expected} values per table",
                tokens.len()
            )));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.text().to_string(), i))
            .collect();
        Ok(EmbeddingTable {
            tokens,
            dim,
            words,
            contexts,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        self.index.get(text).copied()
    }

    pub fn word_vector(&self, id: usize) -> &[f64] {
        &self.words[id * self.dim..(id + 1) * self.dim]
    }

    pub fn context_vector(&self, id: usize) -> Option<&[f64]> {
        self.contexts
            .as_ref()
            .map(|c| &c[id * self.dim..(id + 1) * self.dim])
    }

    /// Word vector by token text.
    pub fn vector(&self, text: &str) -> Option<&[f64]> {
        self.index_of(text).map(|id| self.word_vector(id))
    }

    pub fn has_contexts(&self) -> bool {
        self.contexts.is_some()
    }

    pub fn drop_contexts(&mut self) {
        self.contexts = None;
    }

    /// Multiply every word vector by `factor`.
    pub fn scaled(&self, factor: f64) -> EmbeddingTable {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Text format: `V d` header, then `token v1 ... vd` per line in id order.
    pub fn write_words<W: Write>(&self, out: W) -> Result<(), EmbedError> {
        write_matrix(&self.tokens, self.dim, &self.words, out)
    }

    pub fn write_contexts<W: Write>(&self, out: W) -> Result<(), EmbedError> {
        let contexts = self
            .contexts
            .as_ref()
            .ok_or_else(|| EmbedError::InvalidConfig("table has no context vectors".into()))?;
        write_matrix(&self.tokens, self.dim, contexts, out)
    }

    /// Read a word-vector file written by [`EmbeddingTable::write_words`].
    pub fn read_words<R: BufRead>(input: R) -> Result<EmbeddingTable, EmbedError> {
        let (tokens, dim, words) = read_matrix(input)?;
        EmbeddingTable::new(tokens, dim, words, None)
    }
}

fn write_matrix<W: Write>(tokens: &[Token], dim: usize, values: &[f64], mut out: W) -> Result<(), EmbedError> {
    writeln!(out, "{} {}", tokens.len(), dim)?;
    for (token, row) in tokens.iter().zip(values.chunks_exact(dim)) {
        out.write_all(token.text().as_bytes())?;
        for v in row {
            write!(out, " {v}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_matrix<R: BufRead>(input: R) -> Result<(Vec<Token>, usize, Vec<f64>), EmbedError> {
    let mut lines = input.lines();
    let bad = |line: usize, message: String| EmbedError::Format { line, message };
    let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))??;
    let mut fields = header.split_whitespace();
    let mut header_num = |name: &str| -> Result<usize, EmbedError> {
        fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad(1, format!("header needs `V d`, bad {name}")))
    };
    let (count, dim) = (header_num("V")?, header_num("d")?);
    let mut tokens = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * dim);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let text = fields.next().unwrap_or_default();
        let token = Token::parse(text).map_err(|e: SequenceError| bad(lineno, e.to_string()))?;
        let before = values.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| bad(lineno, format!("bad number {f:?}")))?;
            values.push(v);
        }
        if values.len() - before != dim {
            return Err(bad(lineno, format!("expected {dim} values, found {}", values.len() - before)));
        }
        tokens.push(token);
    }
    if tokens.len() != count {
        return Err(bad(1, format!("header says {count} rows, found {}", tokens.len())));
    }
    Ok((tokens, dim, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let tokens = vec![Token::parse("A").unwrap(), Token::parse("T1|A|T1").unwrap()];
        let words = vec![0.1, -2.5e-7, 1.0 / 3.0, 42.0];
        let table = EmbeddingTable::new(tokens, 2, words.clone(), Some(vec![0.0; 4])).unwrap();
        let mut buf = Vec::new();
        table.write_words(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "2 2\nA 0.1 -0.00000025\nT1|A|T1 0.3333333333333333 42\n");
        let back = EmbeddingTable::read_words(buf.as_slice()).unwrap();
        assert_eq!(back.word_vector(1), &words[2..]);
        assert_eq!(back.vector("A").unwrap(), &words[..2]);
        assert!(!back.has_contexts());

        let mut ctx = Vec::new();
        table.write_contexts(&mut ctx).unwrap();
        assert!(String::from_utf8(ctx).unwrap().ends_with("T1|A|T1 0 0\n"));
    }

    #[test]
    fn malformed_files() {
        assert!(EmbeddingTable::read_words("2 2\nA 1 2\n".as_bytes()).is_err());
        assert!(EmbeddingTable::read_words("1 2\nA 1\n".as_bytes()).is_err());
        assert!(EmbeddingTable::read_words("1 2\nA 1 x\n".as_bytes()).is_err());
        assert!(EmbeddingTable::read_words("".as_bytes()).is_err());
    }
}
