mod args;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use log::{info, warn};

use atc_core::analysis::{
    category_mean_ci, cohort_diff, pearson_linreg, read_category_map, read_covariate, read_report_csv,
    write_category_csv, AtcReport,
};
use atc_core::ingest::build_user_streams;
use atc_core::mixture::{ExpMixtureModel, ModelFile};
use atc_core::pipeline::{self, PipelineConfig, PlantedAction, SyntheticSpec};
use atc_core::sequence::{build_vocabulary, read_corpus, write_corpus};
use atc_core::sgns::EmbeddingTable;
use atc_core::{seed, Error, Result};

use args::{Cli, Command, Overrides};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

fn report_error(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli, groups: &[&dyn Overrides]) -> Result<PipelineConfig> {
    let mut config = match &cli.global.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for group in groups.iter().copied().chain([&cli.global as &dyn Overrides]) {
        for (key, value) in group.overrides() {
            config.set(key, &value)?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Write through a `.partial` file and rename into place.
fn write_artifact(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let file = File::create(&partial).map_err(|e| Error::io(format!("creating {}", partial.display()), e))?;
    let mut out = BufWriter::new(file);
    f(&mut out)?;
    out.flush().map_err(|e| Error::io(format!("writing {}", partial.display()), e))?;
    drop(out);
    fs::rename(&partial, path).map_err(|e| Error::io(format!("renaming {}", partial.display()), e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn save_config(config: &PipelineConfig) -> Result<()> {
    write_artifact(&config.out_dir.join(pipeline::CONFIG_FILE), |out| {
        out.write_all(config.to_text().as_bytes())
            .map_err(|e| Error::io("writing config", e))
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn or_default(path: &Option<PathBuf>, config: &PipelineConfig, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| config.out_dir.join(name))
}

fn load_model(path: &Path) -> Result<ExpMixtureModel> {
    Ok(ModelFile::read(path)?.model()?)
}

fn load_report(path: &Path) -> Result<AtcReport> {
    Ok(read_report_csv(open(path)?)?)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::FitMixture { ingest, mixture } => {
            let config = resolve(&cli, &[ingest, mixture])?;
            let streams = load_streams(&config).map_err(|e| e.in_stage("ingest"))?;
            let model = pipeline::fit_mixture(&streams, &config).map_err(|e| e.in_stage("fit-mixture"))?;
            write_artifact(&config.out_dir.join(pipeline::MODEL_FILE), |out| {
                out.write_all(model.to_json().as_bytes())
                    .map_err(|e| Error::io("writing model", e))
            })?;
            save_config(&config)
        }
        Command::BuildCorpus { ingest, model } => {
            let config = resolve(&cli, &[ingest])?;
            let model = load_model(&or_default(model, &config, pipeline::MODEL_FILE))?;
            let streams = load_streams(&config).map_err(|e| e.in_stage("ingest"))?;
            let sequences = pipeline::build_corpus(&streams, &model).map_err(|e| e.in_stage("build-corpus"))?;
            write_artifact(&config.out_dir.join(pipeline::CORPUS_FILE), |out| Ok(write_corpus(&sequences, out)?))?;
            save_config(&config)
        }
        Command::Train { corpus, train } => {
            let config = resolve(&cli, &[train])?;
            let sequences = read_corpus(open(&or_default(corpus, &config, pipeline::CORPUS_FILE))?)?;
            let (_, outcome) = pipeline::train_embeddings(&sequences, &config).map_err(|e| e.in_stage("train"))?;
            write_artifact(&config.out_dir.join(pipeline::EMBEDDING_FILE), |out| {
                Ok(outcome.table.write_words(out)?)
            })?;
            if config.save_contexts {
                write_artifact(&config.out_dir.join(pipeline::CONTEXT_FILE), |out| {
                    Ok(outcome.table.write_contexts(out)?)
                })?;
            }
            save_config(&config)
        }
        Command::Atc {
            embeddings,
            model,
            corpus,
            atc,
        } => {
            let config = resolve(&cli, &[atc])?;
            let emb = EmbeddingTable::read_words(open(&or_default(embeddings, &config, pipeline::EMBEDDING_FILE))?)?;
            let model = load_model(&or_default(model, &config, pipeline::MODEL_FILE))?;
            let corpus_path = or_default(corpus, &config, pipeline::CORPUS_FILE);
            let vocab = if corpus_path.exists() {
                Some(build_vocabulary(&read_corpus(open(&corpus_path)?)?, 1)?)
            } else {
                warn!("no corpus at {}; occurrence counts will be 0", corpus_path.display());
                None
            };
            let count = |t: &str| vocab.as_ref().and_then(|v| v.count_of(t)).unwrap_or(0);
            let report =
                pipeline::score_embeddings(&emb, &model, config.short_bin, count).map_err(|e| e.in_stage("atc"))?;
            write_artifact(&config.out_dir.join(pipeline::REPORT_FILE), |out| Ok(report.write_csv(out)?))
        }
        Command::Categories {
            report,
            categories,
            stats,
        } => {
            let config = resolve(&cli, &[stats])?;
            let report = load_report(&or_default(report, &config, pipeline::REPORT_FILE))?;
            let map = read_category_map(open(categories)?)?;
            let boot = config.bootstrap(seed::derive_seed(config.seed, "bootstrap"));
            let table = category_mean_ci(&report.scores, &map, &boot)?;
            write_artifact(&config.out_dir.join("categories.csv"), |out| Ok(write_category_csv(&table, out)?))
        }
        Command::Diff { a, b, label_a, label_b } => {
            let config = resolve(&cli, &[])?;
            let diff = cohort_diff(&load_report(a)?, &load_report(b)?, label_a, label_b)?;
            for (label, missing) in [(label_a, &diff.only_a), (label_b, &diff.only_b)] {
                if !missing.is_empty() {
                    let names: Vec<String> = missing.iter().map(|t| atc_core::ingest::unescape_action(t.text())).collect();
                    warn!("only in cohort {label}: {}", names.join(", "));
                }
            }
            info!("diff = {label_a} - {label_b} over {} shared actions", diff.rows.len());
            write_artifact(&config.out_dir.join("diff.csv"), |out| Ok(diff.write_csv(out)?))
        }
        Command::Dynamics {
            ingest,
            model,
            window_days,
            refit_windows,
            mixture,
            train,
            atc,
        } => {
            let mut config = resolve(&cli, &[ingest, mixture, train, atc])?;
            if let Some(days) = window_days {
                config.set("window_days", &days.to_string())?;
            }
            if *refit_windows {
                config.refit_windows = true;
            }
            config.validate()?;
            let model = load_model(&or_default(model, &config, pipeline::MODEL_FILE))?;
            let records = pipeline::load_events(&config).map_err(|e| e.in_stage("ingest"))?;
            let windows = pipeline::windowed_atc(&records, &model, &config)?;
            info!("{} windows", windows.len());
            write_artifact(&config.out_dir.join("dynamics.csv"), |out| pipeline::write_dynamics_csv(&windows, out))?;
            save_config(&config)
        }
        Command::Correlate {
            dynamics,
            covariate,
            action,
        } => {
            let config = resolve(&cli, &[])?;
            let dynamics_path = or_default(dynamics, &config, "dynamics.csv");
            let covariate = read_covariate(open(covariate)?)?;
            let actions = match action {
                Some(a) => vec![a.clone()],
                None => pipeline::read_dynamics_actions(open(&dynamics_path)?)?,
            };
            let mut rows = Vec::new();
            for label in &actions {
                let series = pipeline::read_dynamics_series(open(&dynamics_path)?, label)?;
                let (x, y): (Vec<f64>, Vec<f64>) = series
                    .iter()
                    .filter_map(|(w, v)| covariate.iter().find(|(cw, _)| cw == w).map(|(_, c)| (*c, *v)))
                    .unzip();
                match pearson_linreg(&x, &y) {
                    Ok(c) => rows.push((label.clone(), c)),
                    Err(e) if action.is_none() => warn!("skipping {label:?}: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            write_artifact(&config.out_dir.join("correlation.csv"), |out| {
                pipeline::write_correlation_csv(&rows, out)
            })
        }
        Command::Synth {
            users,
            actions_per_user,
            actions,
            start_time,
            output,
        } => {
            let config = resolve(&cli, &[])?;
            let planted = actions.iter().map(|a| parse_planted(a)).collect::<Result<Vec<_>>>()?;
            let spec = SyntheticSpec {
                users: *users,
                actions: planted,
                actions_per_user: *actions_per_user,
                start_time: *start_time,
                seed: seed::derive_seed(config.seed, "synth"),
            };
            let path = or_default(output, &config, "synthetic.csv");
            write_artifact(&path, |out| pipeline::write_synthetic_csv(&spec, out).map(|_| ()))
        }
        Command::Run {
            ingest,
            mixture,
            train,
            atc,
        } => {
            let config = resolve(&cli, &[ingest, mixture, train, atc])?;
            let run = pipeline::run_pipeline(&config)?;
            info!("config hash {}", run.config_hash);
            for (name, digest) in &run.digests {
                info!("{name} sha256 {digest}");
            }
            Ok(())
        }
    }
}

fn load_streams(config: &PipelineConfig) -> Result<Vec<atc_core::ingest::UserStream>> {
    let records = pipeline::load_events(config)?;
    Ok(build_user_streams(&records, config.min_actions)?)
}

fn parse_planted(text: &str) -> Result<PlantedAction> {
    let (label, mean) = text
        .rsplit_once('=')
        .ok_or_else(|| Error::Config(format!("--action expects LABEL=MEAN, got {text:?}")))?;
    let mean_interval = mean
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("--action {text:?}: bad mean {mean:?}")))?;
    Ok(PlantedAction {
        label: label.to_string(),
        mean_interval,
    })
}
