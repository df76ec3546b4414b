//! Interleaved action/bin token sequences, trigrams, training pairs and the
//! vocabulary.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::ingest::{compute_intervals, is_bin_shaped, UserStream};
use crate::mixture::{assign_bin, BinLabel, ExpMixtureModel, MixtureError};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("bin assignment failed: {0}")]
    Bin(#[from] MixtureError),
    #[error("stream for user {0} has fewer than two events")]
    TooShort(String),
    #[error("invalid token {0:?}: {1}")]
    InvalidToken(String, String),
    #[error("vocabulary is empty (min_count = {0})")]
    EmptyVocabulary(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Action,
    Bin,
    Trigram,
}

/// A corpus token. Action text is escaped, so it never contains a bare `|`
/// or whitespace and never looks like a bin token; trigram text is three
/// unigram tokens joined by bare `|`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    kind: TokenKind,
    text: String,
}

impl Token {
    /// An action token from an already-escaped label.
    pub fn action(escaped: impl Into<String>) -> Token {
        Token {
            kind: TokenKind::Action,
            text: escaped.into(),
        }
    }

    pub fn bin(bin: BinLabel) -> Token {
        Token {
            kind: TokenKind::Bin,
            text: bin.to_string(),
        }
    }

    pub fn trigram(a: &Token, b: &Token, c: &Token) -> Token {
        Token {
            kind: TokenKind::Trigram,
            text: format!("{}|{}|{}", a.text, b.text, c.text),
        }
    }

    pub fn kind(&self) -> TokenKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_action(&self) -> bool {
        self.kind == TokenKind::Action
    }

    /// Classify token text as read back from a corpus or embedding file.
    pub fn parse(text: &str) -> Result<Token, SequenceError> {
        let parts = split_unescaped_bars(text);
        if parts.len() == 3 {
            for part in &parts {
                Token::parse_unigram(part)?;
            }
            return Ok(Token {
                kind: TokenKind::Trigram,
                text: text.to_string(),
            });
        }
        if parts.len() != 1 {
            return Err(SequenceError::InvalidToken(
                text.to_string(),
                format!("expected 1 or 3 parts, found {}", parts.len()),
            ));
        }
        Token::parse_unigram(text)
    }

    fn parse_unigram(text: &str) -> Result<Token, SequenceError> {
        if text.is_empty() {
            return Err(SequenceError::InvalidToken(text.into(), "empty".into()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(SequenceError::InvalidToken(text.into(), "contains whitespace".into()));
        }
        let kind = if is_bin_shaped(text) {
            TokenKind::Bin
        } else {
            TokenKind::Action
        };
        Ok(Token {
            kind,
            text: text.to_string(),
        })
    }

    /// The three part texts of a trigram.
    pub fn trigram_parts(&self) -> Option<[&str; 3]> {
        if self.kind != TokenKind::Trigram {
            return None;
        }
        let parts = split_unescaped_bars(&self.text);
        Some([parts[0], parts[1], parts[2]])
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn split_unescaped_bars(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if escaped {
            escaped = false;
        } else if ch == '\\' {
            escaped = true;
        } else if ch == '|' {
            parts.push(&text[start..i]);
            start = i + 1;
        }
    }
    parts.push(&text[start..]);
    parts
}

/// `A1 T1 A2 T2 ... AJ` for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub user_id: String,
    tokens: Vec<Token>,
}

impl TokenSequence {
    /// Wrap an interleaved token list, checking the alternation invariant.
    pub fn new(user_id: impl Into<String>, tokens: Vec<Token>) -> Result<Self, SequenceError> {
        if tokens.len() % 2 == 0 {
            return Err(SequenceError::InvalidArgument(format!(
                "token sequence must have odd length, got {}",
                tokens.len()
            )));
        }
        for (i, t) in tokens.iter().enumerate() {
            let want = if i % 2 == 0 { TokenKind::Action } else { TokenKind::Bin };
            if t.kind != want {
                return Err(SequenceError::InvalidToken(
                    t.text.clone(),
                    format!("position {i} must be {want:?}"),
                ));
            }
        }
        Ok(TokenSequence {
            user_id: user_id.into(),
            tokens,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn action_count(&self) -> usize {
        self.tokens.len().div_ceil(2)
    }
}

/// Interleave each action with the bin of the interval that follows it.
pub fn build_token_sequence(stream: &UserStream, model: &ExpMixtureModel) -> Result<TokenSequence, SequenceError> {
    if stream.len() < 2 {
        return Err(SequenceError::TooShort(stream.user_id.clone()));
    }
    let intervals = compute_intervals(stream);
    let mut tokens = Vec::with_capacity(2 * stream.len() - 1);
    for (event, &x) in stream.events.iter().zip(intervals.values()) {
        tokens.push(Token::action(event.action.clone()));
        tokens.push(Token::bin(assign_bin(model, x)?));
    }
    let last = stream.events.last().expect("stream has events");
    tokens.push(Token::action(last.action.clone()));
    Ok(TokenSequence {
        user_id: stream.user_id.clone(),
        tokens,
    })
}

/// All consecutive token triples, in order (`2J - 3` for `J` actions).
pub fn extract_trigrams(seq: &TokenSequence) -> Vec<Token> {
    seq.tokens
        .windows(3)
        .map(|w| Token::trigram(&w[0], &w[1], &w[2]))
        .collect()
}

/// Window settings for pair enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairConfig {
    /// Max distance between two unigram positions.
    pub unigram_window: usize,
    /// Max distance from a unigram to the nearest member of a trigram.
    pub ngram_window: usize,
    /// Also emit trigram-trigram pairs (trigrams starting at most
    /// `ngram_window` positions apart).
    pub trigram_pairs: bool,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            unigram_window: 1,
            ngram_window: 2,
            trigram_pairs: false,
        }
    }
}

/// A pair element by position: a unigram index or a trigram start index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Unigram(usize),
    Trigram(usize),
}

/// Enumerate (word, context) slots for a sequence of `len` unigrams in a
/// fixed order: for every centre `i`, unigram neighbours by ascending
/// position, then `(w_i, g)` for qualifying trigrams by ascending start, then
/// `(g, w_i)` for the same trigrams. Trigram-trigram pairs, when enabled,
/// follow all unigram-centred pairs.
pub fn for_each_pair_slot(len: usize, config: &PairConfig, mut emit: impl FnMut(Slot, Slot)) {
    let n_trigrams = len.saturating_sub(2);
    let mut near = Vec::new();
    for i in 0..len {
        let lo = i.saturating_sub(config.unigram_window);
        let hi = (i + config.unigram_window).min(len.saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                emit(Slot::Unigram(i), Slot::Unigram(j));
            }
        }
        near.clear();
        // trigram at s covers s..=s+2; nearest member distance is s - i to the
        // right, i - (s + 2) to the left
        if i >= 3 {
            let lo = i.saturating_sub(config.ngram_window + 2);
            near.extend((lo..=i - 3).filter(|&s| s < n_trigrams));
        }
        near.extend(((i + 1)..=(i + config.ngram_window)).filter(|&s| s < n_trigrams));
        for &s in &near {
            emit(Slot::Unigram(i), Slot::Trigram(s));
        }
        for &s in &near {
            emit(Slot::Trigram(s), Slot::Unigram(i));
        }
    }
    if config.trigram_pairs {
        for s in 0..n_trigrams {
            let lo = s.saturating_sub(config.ngram_window);
            let hi = (s + config.ngram_window).min(n_trigrams.saturating_sub(1));
            for t in lo..=hi {
                if t != s {
                    emit(Slot::Trigram(s), Slot::Trigram(t));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub word: Token,
    pub context: Token,
}

/// Token-level pair stream for one sequence.
pub fn generate_training_pairs(seq: &TokenSequence, config: &PairConfig) -> Result<Vec<TrainingPair>, SequenceError> {
    validate_pair_config(config)?;
    let trigrams = extract_trigrams(seq);
    let resolve = |slot: Slot| match slot {
        Slot::Unigram(i) => seq.tokens[i].clone(),
        Slot::Trigram(s) => trigrams[s].clone(),
    };
    let mut pairs = Vec::new();
    for_each_pair_slot(seq.len(), config, |w, c| {
        pairs.push(TrainingPair {
            word: resolve(w),
            context: resolve(c),
        })
    });
    Ok(pairs)
}

fn validate_pair_config(config: &PairConfig) -> Result<(), SequenceError> {
    if config.unigram_window == 0 || config.ngram_window == 0 {
        return Err(SequenceError::InvalidArgument("windows must be at least 1".into()));
    }
    Ok(())
}

/// Id-level pairs over a corpus, skipping pairs with an out-of-vocabulary
/// member. Per-sequence streams are concatenated in corpus order.
pub fn corpus_pair_ids(
    sequences: &[TokenSequence],
    vocab: &Vocabulary,
    config: &PairConfig,
) -> Result<Vec<(u32, u32)>, SequenceError> {
    validate_pair_config(config)?;
    let mut pairs = Vec::new();
    for seq in sequences {
        let unigram_ids: Vec<Option<u32>> = seq.tokens.iter().map(|t| vocab.id(t.text())).collect();
        let trigram_ids: Vec<Option<u32>> = extract_trigrams(seq).iter().map(|t| vocab.id(t.text())).collect();
        let lookup = |slot: Slot| match slot {
            Slot::Unigram(i) => unigram_ids[i],
            Slot::Trigram(s) => trigram_ids[s],
        };
        for_each_pair_slot(seq.len(), config, |w, c| {
            if let (Some(w), Some(c)) = (lookup(w), lookup(c)) {
                pairs.push((w, c));
            }
        });
    }
    Ok(pairs)
}

/// Token to dense id, with corpus counts. Word and context roles share one
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from (token, count) entries; ids follow descending count, then
    /// token text.
    pub fn from_counts(entries: impl IntoIterator<Item = (Token, u64)>) -> Vocabulary {
        let mut entries: Vec<(Token, u64)> = entries.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.text.cmp(&b.0.text)));
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.text.clone(), i as u32))
            .collect();
        let (tokens, counts) = entries.into_iter().unzip();
        Vocabulary { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, text: &str) -> Option<u32> {
        self.index.get(text).copied()
    }

    pub fn token(&self, id: u32) -> &Token {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn count_of(&self, text: &str) -> Option<u64> {
        self.id(text).map(|id| self.count(id))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn actions(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_action())
    }
}

/// Count unigrams and trigrams over the corpus and drop tokens seen fewer
/// than `min_count` times.
pub fn build_vocabulary(sequences: &[TokenSequence], min_count: u64) -> Result<Vocabulary, SequenceError> {
    if min_count == 0 {
        return Err(SequenceError::InvalidArgument("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<Token, u64> = HashMap::new();
    for seq in sequences {
        for t in &seq.tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for g in extract_trigrams(seq) {
            *counts.entry(g).or_default() += 1;
        }
    }
    let vocab = Vocabulary::from_counts(counts.into_iter().filter(|(_, c)| *c >= min_count));
    if vocab.is_empty() {
        return Err(SequenceError::EmptyVocabulary(min_count));
    }
    Ok(vocab)
}

/// One sequence per line, unigram tokens separated by single spaces.
pub fn write_corpus<W: Write>(sequences: &[TokenSequence], mut out: W) -> Result<(), SequenceError> {
    for seq in sequences {
        let line: Vec<&str> = seq.tokens.iter().map(Token::text).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a corpus file back; sequences get their 1-based line number as id.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<TokenSequence>, SequenceError> {
    let mut sequences = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corpus_err = |message: String| SequenceError::Corpus {
            line: idx + 1,
            message,
        };
        let tokens = line
            .split(' ')
            .map(Token::parse_unigram)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| corpus_err(e.to_string()))?;
        let seq = TokenSequence::new((idx + 1).to_string(), tokens).map_err(|e| corpus_err(e.to_string()))?;
        sequences.push(seq);
    }
    Ok(sequences)
}
