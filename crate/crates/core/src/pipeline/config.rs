use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::analysis::{Bootstrap, ShortBin, WEEK_SECONDS};
use crate::ingest::LogFormat;
use crate::mixture::{Criterion, EmConfig};
use crate::sequence::PairConfig;
use crate::sgns::TrainConfig;
use crate::{Error, Result};

/// Every tunable of a run. Serialized as flat `key = value` lines; the keys
/// are the field names below.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub format: LogFormat,
    pub min_actions: usize,
    pub sample_size: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub criterion: Criterion,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub em_restarts: usize,
    pub unigram_window: usize,
    pub ngram_window: usize,
    pub trigram_pairs: bool,
    pub min_count: u64,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub save_contexts: bool,
    pub short_bin: ShortBin,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub window_days: f64,
    pub refit_windows: bool,
    pub bootstrap_resamples: usize,
    pub confidence_level: f64,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let em = EmConfig::default();
        let pairs = PairConfig::default();
        let sgns = TrainConfig::default();
        let boot = Bootstrap::default();
        PipelineConfig {
            input: None,
            format: LogFormat::Csv,
            min_actions: 10,
            sample_size: 10_000,
            k_min: 1,
            k_max: 8,
            criterion: Criterion::DnmlApprox,
            em_tol: em.tol,
            em_max_iter: em.max_iter,
            em_restarts: em.restarts,
            unigram_window: pairs.unigram_window,
            ngram_window: pairs.ngram_window,
            trigram_pairs: pairs.trigram_pairs,
            min_count: 5,
            dim: sgns.dim,
            negatives: sgns.negatives,
            epochs: sgns.epochs,
            learning_rate: sgns.learning_rate,
            alpha: sgns.alpha,
            save_contexts: false,
            short_bin: ShortBin::Component,
            seed: 0,
            threads: 1,
            deterministic: false,
            window_days: WEEK_SECONDS / 86_400.0,
            refit_windows: false,
            bootstrap_resamples: boot.resamples,
            confidence_level: boot.level,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Keys left out of the config hash and the config file: they choose where
/// results go, not what they contain.
const UNHASHED: &[&str] = &["out_dir"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn parse_short_bin(value: &str) -> Result<ShortBin> {
    match value {
        "T0" | "t0" | "zero" => Ok(ShortBin::Zero),
        "T1" | "t1" | "component" => Ok(ShortBin::Component),
        _ => Err(Error::Config(format!("short_bin = {value:?}: expected T1 or T0"))),
    }
}

impl PipelineConfig {
    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "input" => self.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "format" => {
                self.format = value
                    .parse()
                    .map_err(|e: crate::ingest::IngestError| Error::Config(e.to_string()))?
            }
            "min_actions" => self.min_actions = parse(key, value)?,
            "sample_size" => self.sample_size = parse(key, value)?,
            "k_min" => self.k_min = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "criterion" => self.criterion = parse(key, value)?,
            "em_tol" => self.em_tol = parse(key, value)?,
            "em_max_iter" => self.em_max_iter = parse(key, value)?,
            "em_restarts" => self.em_restarts = parse(key, value)?,
            "unigram_window" => self.unigram_window = parse(key, value)?,
            "ngram_window" => self.ngram_window = parse(key, value)?,
            "trigram_pairs" => self.trigram_pairs = parse_bool(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "save_contexts" => self.save_contexts = parse_bool(key, value)?,
            "short_bin" => self.short_bin = parse_short_bin(value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "window_days" => self.window_days = parse(key, value)?,
            "refit_windows" => self.refit_windows = parse_bool(key, value)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse(key, value)?,
            "confidence_level" => self.confidence_level = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in a fixed order.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        let short_bin = match self.short_bin {
            ShortBin::Component => "T1",
            ShortBin::Zero => "T0",
        };
        vec![
            ("input", self.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("format", self.format.to_string()),
            ("min_actions", self.min_actions.to_string()),
            ("sample_size", self.sample_size.to_string()),
            ("k_min", self.k_min.to_string()),
            ("k_max", self.k_max.to_string()),
            ("criterion", self.criterion.to_string()),
            ("em_tol", self.em_tol.to_string()),
            ("em_max_iter", self.em_max_iter.to_string()),
            ("em_restarts", self.em_restarts.to_string()),
            ("unigram_window", self.unigram_window.to_string()),
            ("ngram_window", self.ngram_window.to_string()),
            ("trigram_pairs", self.trigram_pairs.to_string()),
            ("min_count", self.min_count.to_string()),
            ("dim", self.dim.to_string()),
            ("negatives", self.negatives.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("alpha", self.alpha.to_string()),
            ("save_contexts", self.save_contexts.to_string()),
            ("short_bin", short_bin.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("window_days", self.window_days.to_string()),
            ("refit_windows", self.refit_windows.to_string()),
            ("bootstrap_resamples", self.bootstrap_resamples.to_string()),
            ("confidence_level", self.confidence_level.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let mut config = PipelineConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Resolved config file contents. `out_dir` is left out: the file is
    /// written into it, and a replay may target another directory.
    pub fn to_text(&self) -> String {
        let mut out = format!("# config_hash = {}\n", self.hash());
        for (k, v) in self.to_key_values() {
            if !UNHASHED.contains(&k) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// SHA-256 over the serialized fields, excluding `out_dir`.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.to_key_values() {
            if !UNHASHED.contains(&k) {
                hasher.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Threads actually used: 1 in deterministic mode.
    pub fn effective_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            tol: self.em_tol,
            max_iter: self.em_max_iter,
            restarts: self.em_restarts,
        }
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            unigram_window: self.unigram_window,
            ngram_window: self.ngram_window,
            trigram_pairs: self.trigram_pairs,
        }
    }

    /// `seed` is the stage seed, not the root seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            alpha: self.alpha,
            seed,
            threads: self.effective_threads(),
            shuffle: true,
            keep_contexts: self.save_contexts,
        }
    }

    pub fn bootstrap(&self, seed: u64) -> Bootstrap {
        Bootstrap {
            resamples: self.bootstrap_resamples,
            level: self.confidence_level,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad(format!("need 1 <= k_min <= k_max, got {}..{}", self.k_min, self.k_max));
        }
        if self.sample_size == 0 {
            return bad("sample_size must be positive".into());
        }
        if !(self.window_days > 0.0) {
            return bad(format!("window_days must be positive, got {}", self.window_days));
        }
        Ok(())
    }
}
