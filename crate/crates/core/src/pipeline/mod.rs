//! Stage functions and the batch runner that chains them.
//!
//! Each stage is callable on its own; [`run_pipeline`] runs them in order
//! and persists one artifact per stage. All randomness comes from
//! `config.seed` through named sub-seeds (`sample`, `em`, `sgns`).

mod config;
mod synth;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::analysis::{partition_windows, score_actions, AnalysisError, AtcReport, Correlation, ShortBin};
use crate::ingest::{build_user_streams, parse_event_log, pooled_intervals, EventRecord, IngestError, UserStream};
use crate::mixture::{sample_intervals, select_model, BinLabel, ExpMixtureModel, ModelFile};
use crate::sequence::{build_token_sequence, build_vocabulary, corpus_pair_ids, SequenceError, TokenSequence, Vocabulary};
use crate::sgns::{train, EmbeddingTable, TrainOutcome};
use crate::{seed, Error, Result};

pub use config::PipelineConfig;
pub use synth::{generate_synthetic, write_synthetic_csv, PlantedAction, SyntheticSpec};

pub const MODEL_FILE: &str = "model.json";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const EMBEDDING_FILE: &str = "embeddings.txt";
pub const CONTEXT_FILE: &str = "contexts.txt";
pub const REPORT_FILE: &str = "atc.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Read and parse the configured input log.
pub fn load_events(config: &PipelineConfig) -> Result<Vec<EventRecord>> {
    let path = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    read_events(path, config.format)
}

pub fn read_events(path: &Path, format: crate::ingest::LogFormat) -> Result<Vec<EventRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(parse_event_log(BufReader::new(file), format)?)
}

/// Fit the interval mixture: sample intervals, fit every K in range and keep
/// the best by the configured criterion.
pub fn fit_mixture(streams: &[UserStream], config: &PipelineConfig) -> Result<ModelFile> {
    config.validate()?;
    let pooled = pooled_intervals(streams);
    let sample = sample_intervals(&pooled, config.sample_size, seed::derive_seed(config.seed, "sample"))?;
    info!("fitting K = {}..={} on {} intervals", config.k_min, config.k_max, sample.len());
    let selection = select_model(
        &sample,
        config.k_min..=config.k_max,
        config.criterion,
        seed::derive_seed(config.seed, "em"),
        &config.em_config(),
    )?;
    info!("selected K = {} ({})", selection.model.k(), config.criterion);
    let mut file = ModelFile::new(&selection.model, config.criterion, selection.diagnostics.codelengths);
    file.config_hash = Some(config.hash());
    Ok(file)
}

pub fn build_corpus(streams: &[UserStream], model: &ExpMixtureModel) -> Result<Vec<TokenSequence>> {
    Ok(streams
        .iter()
        .map(|s| build_token_sequence(s, model))
        .collect::<Result<Vec<_>, SequenceError>>()?)
}

pub fn train_embeddings(sequences: &[TokenSequence], config: &PipelineConfig) -> Result<(Vocabulary, TrainOutcome)> {
    let vocab = build_vocabulary(sequences, config.min_count)?;
    let pairs = corpus_pair_ids(sequences, &vocab, &config.pair_config())?;
    info!("training on {} pairs over {} tokens", pairs.len(), vocab.len());
    let outcome = train(&pairs, &vocab, &config.train_config(seed::derive_seed(config.seed, "sgns")))?;
    Ok((vocab, outcome))
}

/// Long and short reference bins for a model.
pub fn reference_bins(model: &ExpMixtureModel, short: ShortBin) -> (BinLabel, BinLabel) {
    let short_bin = match short {
        ShortBin::Component => model.short_bin(),
        ShortBin::Zero => BinLabel::ZERO,
    };
    (model.long_bin(), short_bin)
}

/// Score every action and standardize over all of them.
pub fn score_embeddings(
    emb: &EmbeddingTable,
    model: &ExpMixtureModel,
    short: ShortBin,
    occurrence: impl Fn(&str) -> u64,
) -> Result<AtcReport> {
    let (long_bin, short_bin) = reference_bins(model, short);
    let mut report = score_actions(emb, long_bin, short_bin, occurrence)?;
    report.meta.scope = "all".into();
    report.standardize_all()?;
    Ok(report)
}

/// Paths of the files a run produced, with their SHA-256 digests.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub digests: BTreeMap<String, String>,
}

impl RunArtifacts {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `dir/name.partial`, then rename into place.
fn persist(dir: &Path, name: &str, bytes: &[u8], digests: &mut BTreeMap<String, String>) -> Result<()> {
    let final_path = dir.join(name);
    let partial = dir.join(format!("{name}.partial"));
    let write = || -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(&partial)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&partial, &final_path)
    };
    write().map_err(|e| Error::io(format!("writing {}", final_path.display()), e))?;
    digests.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Run every stage and write `model.json`, `corpus.txt`, `embeddings.txt`
/// (plus `contexts.txt` when requested) and `atc.csv`, then `config.txt`
/// and `manifest.json`. A failure names its stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut digests = BTreeMap::new();

    let streams = load_events(config)
        .and_then(|records| Ok(build_user_streams(&records, config.min_actions)?))
        .map_err(|e| e.in_stage("ingest"))?;

    let model_file = fit_mixture(&streams, config).map_err(|e| e.in_stage("fit-mixture"))?;
    persist(dir, MODEL_FILE, model_file.to_json().as_bytes(), &mut digests).map_err(|e| e.in_stage("fit-mixture"))?;
    let model = model_file.model().map_err(|e| Error::from(e).in_stage("fit-mixture"))?;

    let sequences = build_corpus(&streams, &model).map_err(|e| e.in_stage("build-corpus"))?;
    let corpus = to_bytes(|b| Ok(crate::sequence::write_corpus(&sequences, b)?)).map_err(|e| e.in_stage("build-corpus"))?;
    persist(dir, CORPUS_FILE, &corpus, &mut digests).map_err(|e| e.in_stage("build-corpus"))?;

    let (vocab, outcome) = train_embeddings(&sequences, config).map_err(|e| e.in_stage("train"))?;
    let words = to_bytes(|b| Ok(outcome.table.write_words(b)?)).map_err(|e| e.in_stage("train"))?;
    persist(dir, EMBEDDING_FILE, &words, &mut digests).map_err(|e| e.in_stage("train"))?;
    if config.save_contexts {
        let ctx = to_bytes(|b| Ok(outcome.table.write_contexts(b)?)).map_err(|e| e.in_stage("train"))?;
        persist(dir, CONTEXT_FILE, &ctx, &mut digests).map_err(|e| e.in_stage("train"))?;
    }

    let report = score_embeddings(&outcome.table, &model, config.short_bin, |t| vocab.count_of(t).unwrap_or(0))
        .map_err(|e| e.in_stage("atc"))?;
    let csv = to_bytes(|b| Ok(report.write_csv(b)?)).map_err(|e| e.in_stage("atc"))?;
    persist(dir, REPORT_FILE, &csv, &mut digests).map_err(|e| e.in_stage("atc"))?;

    let hash = config.hash();
    persist(dir, CONFIG_FILE, config.to_text().as_bytes(), &mut digests)?;
    let manifest = serde_json::json!({ "config_hash": hash, "artifacts": digests });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    persist(dir, MANIFEST_FILE, text.as_bytes(), &mut BTreeMap::new())?;
    Ok(RunArtifacts {
        out_dir: dir.clone(),
        config_hash: hash,
        digests,
    })
}

/// One window of a dynamics run. `report` is `None` when the window had
/// too little data.
#[derive(Debug, Clone)]
pub struct WindowReport {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub events: usize,
    pub report: Option<AtcReport>,
}

fn insufficient(e: &Error) -> bool {
    matches!(
        e,
        Error::Ingest(IngestError::NoUsableUsers { .. })
            | Error::Sequence(SequenceError::EmptyVocabulary(_))
            | Error::Analysis(AnalysisError::EmptyReferenceSet { .. })
    )
}

/// ATC per fixed-width time window. Every window reuses `model` unless
/// `config.refit_windows` is set, and every window trains with the same
/// stage seeds as a global run. Scores are standardized within a window.
pub fn windowed_atc(records: &[EventRecord], model: &ExpMixtureModel, config: &PipelineConfig) -> Result<Vec<WindowReport>> {
    config.validate()?;
    let width = config.window_days * 86_400.0;
    let windows = partition_windows(records, width)?;
    let t0 = records.iter().map(|r| r.timestamp).min_by(f64::total_cmp).unwrap_or(0.0);
    let mut out = Vec::with_capacity(windows.len());
    for (index, events) in windows.into_iter().enumerate() {
        let scope = format!("window {index}");
        let run = || -> Result<AtcReport> {
            let streams = build_user_streams(&events, config.min_actions)?;
            let refit;
            let model = if config.refit_windows {
                refit = fit_mixture(&streams, config)?.model()?;
                &refit
            } else {
                model
            };
            let sequences = build_corpus(&streams, model)?;
            let (vocab, outcome) = train_embeddings(&sequences, config)?;
            let (long_bin, short_bin) = reference_bins(model, config.short_bin);
            let mut report = score_actions(&outcome.table, long_bin, short_bin, |t| vocab.count_of(t).unwrap_or(0))?;
            report.meta.scope = scope.clone();
            report.standardize_all()?;
            Ok(report)
        };
        let report = match run() {
            Ok(r) => Some(r),
            Err(e) if insufficient(&e) => {
                warn!("{scope}: not enough data ({e}); emitting an empty report");
                None
            }
            Err(e) => return Err(e.in_stage("dynamics")),
        };
        out.push(WindowReport {
            index,
            start: t0 + index as f64 * width,
            end: t0 + (index + 1) as f64 * width,
            events: events.len(),
            report,
        });
    }
    Ok(out)
}

/// Long-format CSV: `window_index,token,r,r_std,occurrences`.
pub fn write_dynamics_csv<W: Write>(windows: &[WindowReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("dynamics CSV", e.to_string());
    w.write_record(["window_index", "token", "r", "r_std", "occurrences"]).map_err(err)?;
    for win in windows {
        for s in win.report.iter().flat_map(|r| &r.scores) {
            w.write_record([
                win.index.to_string(),
                s.label(),
                s.r.to_string(),
                s.r_std.map(|v| v.to_string()).unwrap_or_default(),
                s.occurrences.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io("writing dynamics CSV", e))?;
    Ok(())
}

/// Per-window standardized scores of one raw action label from a dynamics
/// CSV, as `(window_index, r_std)`.
pub fn read_dynamics_series<R: std::io::Read>(input: R, action: &str) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let bad = |m: String| Error::format("dynamics CSV", format!("row {}: {m}", i + 2));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.get(1) != Some(action) {
            continue;
        }
        let window: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad window_index".into()))?;
        let value: f64 = rec.get(3).unwrap_or("").parse().map_err(|_| bad("bad r_std".into()))?;
        out.push((window, value));
    }
    Ok(out)
}

/// Distinct raw action labels in a dynamics CSV, sorted.
pub fn read_dynamics_actions<R: std::io::Read>(input: R) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut seen = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format("dynamics CSV", e.to_string()))?;
        if let Some(token) = rec.get(1) {
            seen.insert(token.to_string());
        }
    }
    Ok(seen.into_iter().collect())
}

/// CSV with header `action,n,r,p_value,slope,intercept`.
pub fn write_correlation_csv<W: Write>(rows: &[(String, Correlation)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::format("correlation CSV", e.to_string());
    w.write_record(["action", "n", "r", "p_value", "slope", "intercept"]).map_err(err)?;
    for (label, c) in rows {
        w.write_record([
            label.clone(),
            c.n.to_string(),
            c.r.to_string(),
            c.p_value.to_string(),
            c.slope.to_string(),
            c.intercept.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("writing correlation CSV", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_bins_follow_the_override() {
        let m = ExpMixtureModel::new(vec![0.5, 0.3, 0.2], vec![1.0, 0.1, 0.001]).unwrap();
        assert_eq!(reference_bins(&m, ShortBin::Component), (BinLabel(3), BinLabel(1)));
        assert_eq!(reference_bins(&m, ShortBin::Zero), (BinLabel(3), BinLabel(0)));
    }

    #[test]
    fn missing_input_names_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = PipelineConfig::default();
        config.input = Some(dir.path().join("absent.csv"));
        config.out_dir = dir.path().join("out");
        let err = run_pipeline(&config).unwrap_err();
        assert_eq!(err.stage(), Some("ingest"));
        assert_eq!(err.class().exit_code(), 2);
    }

    #[test]
    fn persist_leaves_no_partial_on_success() {
        let dir = tempfile::tempdir().unwrap();
        let mut digests = BTreeMap::new();
        persist(dir.path(), "x.txt", b"abc", &mut digests).unwrap();
        assert_eq!(fs::read(dir.path().join("x.txt")).unwrap(), b"abc");
        assert!(!dir.path().join("x.txt.partial").exists());
        assert_eq!(
            digests["x.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn dynamics_csv_round_trip() {
        use crate::analysis::{AtcScore, ReportMeta};
        use crate::sequence::Token;
        let score = |t: &str, r: f64, z: f64| AtcScore {
            token: Token::action(t),
            r,
            r_std: Some(z),
            occurrences: 3,
        };
        let win = |index, scores| WindowReport {
            index,
            start: 0.0,
            end: 1.0,
            events: 10,
            report: Some(AtcReport {
                scores,
                meta: ReportMeta::default(),
            }),
        };
        let windows = vec![
            win(0, vec![score("A", 0.1, 1.0), score("B", 0.0, -1.0)]),
            WindowReport {
                report: None,
                ..win(1, vec![])
            },
            win(2, vec![score("A", 0.3, -0.5)]),
        ];
        let mut buf = Vec::new();
        write_dynamics_csv(&windows, &mut buf).unwrap();
        assert_eq!(read_dynamics_series(buf.as_slice(), "A").unwrap(), vec![(0, 1.0), (2, -0.5)]);
        assert_eq!(read_dynamics_actions(buf.as_slice()).unwrap(), ["A", "B"]);
    }
}
