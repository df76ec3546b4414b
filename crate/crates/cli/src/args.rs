use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Action timing context analysis of user action logs.
///
/// Settings resolve as: built-in defaults, then `--config` file, then
/// command-line flags.
#[derive(Debug, Parser)]
#[command(name = "atc", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` config file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stage
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded, bit-reproducible execution
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for embedding training
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for artifacts
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the interval mixture and write model.json
    FitMixture {
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        mixture: MixtureArgs,
    },
    /// Turn the log into bin-interleaved token sequences (corpus.txt)
    BuildCorpus {
        #[command(flatten)]
        ingest: IngestArgs,
        /// Fitted model [default: <out-dir>/model.json]
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train embeddings from a corpus (embeddings.txt)
    Train {
        /// Corpus file [default: <out-dir>/corpus.txt]
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score every action (atc.csv)
    Atc {
        /// [default: <out-dir>/embeddings.txt]
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// [default: <out-dir>/model.json]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Corpus used for occurrence counts [default: <out-dir>/corpus.txt]
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        atc: AtcArgs,
    },
    /// Per-category mean ATC with bootstrap CIs (categories.csv)
    Categories {
        /// ATC report [default: <out-dir>/atc.csv]
        #[arg(long)]
        report: Option<PathBuf>,
        /// CSV with header `action,category`
        #[arg(long)]
        categories: PathBuf,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Per-action difference of standardized ATC between two cohorts (diff.csv)
    Diff {
        /// Report of cohort A
        #[arg(long)]
        a: PathBuf,
        /// Report of cohort B
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "a")]
        label_a: String,
        #[arg(long, default_value = "b")]
        label_b: String,
    },
    /// ATC per fixed-width time window (dynamics.csv)
    Dynamics {
        #[command(flatten)]
        ingest: IngestArgs,
        /// Global model [default: <out-dir>/model.json]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Window width in days
        #[arg(long)]
        window_days: Option<f64>,
        /// Refit the mixture inside every window
        #[arg(long)]
        refit_windows: bool,
        #[command(flatten)]
        mixture: MixtureArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        atc: AtcArgs,
    },
    /// Correlate one action's windowed ATC with a covariate (correlation.csv)
    Correlate {
        /// Dynamics CSV [default: <out-dir>/dynamics.csv]
        #[arg(long)]
        dynamics: Option<PathBuf>,
        /// CSV with header `window_index,value`
        #[arg(long)]
        covariate: PathBuf,
        /// Action label; all actions when omitted
        #[arg(long)]
        action: Option<String>,
    },
    /// Write a synthetic event log with planted timing contexts
    Synth {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 500)]
        actions_per_user: usize,
        /// Planted action as LABEL=MEAN_SECONDS; repeat for more
        #[arg(long = "action", value_name = "LABEL=MEAN", default_values = ["L=1000", "S=1"])]
        actions: Vec<String>,
        #[arg(long, default_value_t = 1_600_000_000.0)]
        start_time: f64,
        /// Output CSV [default: <out-dir>/synthetic.csv]
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run fit-mixture, build-corpus, train and atc in one go
    Run {
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        mixture: MixtureArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        atc: AtcArgs,
    },
}

/// `(config key, value)` pairs for the flags that were given.
pub trait Overrides {
    fn overrides(&self) -> Vec<(&'static str, String)>;
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

fn flag(out: &mut Vec<(&'static str, String)>, key: &'static str, set: bool) {
    if set {
        out.push((key, "true".into()));
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Event log with user_id, action and timestamp
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// csv or jsonl
    #[arg(long)]
    pub format: Option<String>,
    /// Drop users with fewer events
    #[arg(long)]
    pub min_actions: Option<usize>,
}

impl Overrides for IngestArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "input", &self.input.as_ref().map(|p| p.display().to_string()));
        push(&mut out, "format", &self.format);
        push(&mut out, "min_actions", &self.min_actions);
        out
    }
}

#[derive(Debug, Args)]
pub struct MixtureArgs {
    /// Intervals sampled for fitting
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// dnml_approx or bic
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub em_tol: Option<f64>,
    #[arg(long)]
    pub em_max_iter: Option<usize>,
    #[arg(long)]
    pub em_restarts: Option<usize>,
}

impl Overrides for MixtureArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "sample_size", &self.sample_size);
        push(&mut out, "k_min", &self.k_min);
        push(&mut out, "k_max", &self.k_max);
        push(&mut out, "criterion", &self.criterion);
        push(&mut out, "em_tol", &self.em_tol);
        push(&mut out, "em_max_iter", &self.em_max_iter);
        push(&mut out, "em_restarts", &self.em_restarts);
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub unigram_window: Option<usize>,
    #[arg(long)]
    pub ngram_window: Option<usize>,
    /// Also pair trigrams with nearby trigrams
    #[arg(long)]
    pub trigram_pairs: bool,
    /// Drop tokens seen fewer times
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Negative samples per pair
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Noise distribution exponent
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write context vectors
    #[arg(long)]
    pub save_contexts: bool,
}

impl Overrides for TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "unigram_window", &self.unigram_window);
        push(&mut out, "ngram_window", &self.ngram_window);
        flag(&mut out, "trigram_pairs", self.trigram_pairs);
        push(&mut out, "min_count", &self.min_count);
        push(&mut out, "dim", &self.dim);
        push(&mut out, "negatives", &self.negatives);
        push(&mut out, "epochs", &self.epochs);
        push(&mut out, "learning_rate", &self.learning_rate);
        push(&mut out, "alpha", &self.alpha);
        flag(&mut out, "save_contexts", self.save_contexts);
        out
    }
}

#[derive(Debug, Args)]
pub struct AtcArgs {
    /// Short reference bin: T1 (default) or T0
    #[arg(long)]
    pub short_bin: Option<String>,
}

impl Overrides for AtcArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "short_bin", &self.short_bin);
        out
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub bootstrap_resamples: Option<usize>,
    #[arg(long)]
    pub confidence_level: Option<f64>,
}

impl Overrides for StatsArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "bootstrap_resamples", &self.bootstrap_resamples);
        push(&mut out, "confidence_level", &self.confidence_level);
        out
    }
}

impl Overrides for GlobalArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        push(&mut out, "seed", &self.seed);
        flag(&mut out, "deterministic", self.deterministic);
        push(&mut out, "threads", &self.threads);
        push(&mut out, "out_dir", &self.out_dir.as_ref().map(|p| p.display().to_string()));
        out
    }
}
