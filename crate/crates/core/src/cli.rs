//! The `emodistill` command line. One subcommand per pipeline stage; every
//! output is written via write-then-rename.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::annotator::{annotate, AnnotateOptions, LiveClient, LiveConfig, LlmClient, MockClient};
use crate::corpus::{
    filter_split, generate_synthetic_corpus, load_annotations, load_dataset, load_label_space, save_annotations,
    save_dataset, DatasetFormat, LabelSpace, LabelSpaceKind, Split, SyntheticSpec, TextSample,
};
use crate::evaluation::{build_probe_pool, evaluate, nearest_neighbors};
use crate::fsio;
use crate::inference::{
    calibrate_for_space, predict_multi, predict_single, score_batch, DimensionalHead, LabelBank, ThresholdTable,
};
use crate::model::EmotionModel;
use crate::provenance::{config_hash, Provenance};
use crate::training::{ablate_dimensions, train, AblationTarget, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "emodistill", version, about = "Contrastive emotion-descriptor distillation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClientKind {
    Live,
    Mock,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus, label spaces and mock keyword table.
    Synth {
        /// Generator spec (JSON); defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Annotate a dataset with descriptor phrases through an LLM client.
    Annotate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, value_enum)]
        client: ClientKind,
        /// Keyword table (JSON object) for the mock client.
        #[arg(long)]
        mock_table: Option<PathBuf>,
        /// Endpoint config (JSON) for the live client.
        #[arg(long)]
        live_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
    },
    /// Train a model; the best checkpoint lands in the config's checkpoint dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Report path; defaults to `<checkpoint_dir>/train_report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Label space files whose labels join the vocabulary.
        #[arg(long = "vocab-labels")]
        vocab_labels: Vec<PathBuf>,
    },
    /// Calibrate per-label thresholds on a validation set.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score and predict over a label space; writes JSONL.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the test split of a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Seen classes: a JSON list of labels or a label space file.
        #[arg(long)]
        seen: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Also write the plain-text table next to the JSON.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Nearest-neighbour probe in the label embedding space.
    Probe {
        #[arg(long)]
        model: PathBuf,
        /// JSON list of target phrases.
        #[arg(long)]
        targets: PathBuf,
        /// JSON list of candidate phrases, or an annotations JSONL file (then
        /// `--data` selects the test split).
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(short = 'k', long = "k")]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per emotion-space dimension and tabulate results.
    Ablate {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// `<label space>=<dataset>`; thresholds calibrate on the val split,
        /// metrics use the test split.
        #[arg(long = "target")]
        targets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fsio::write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fsio::atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn load_jsonl_dataset(path: &Path, kind: LabelSpaceKind) -> Result<Vec<TextSample>> {
    load_dataset(path, DatasetFormat::Jsonl, kind).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<EmotionModel> {
    require_file(path, "model checkpoint")?;
    EmotionModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_space(path: &Path) -> Result<LabelSpace> {
    require_file(path, "label space")?;
    load_label_space(path).with_context(|| format!("loading label space {}", path.display()))
}

fn model_provenance(model: &EmotionModel) -> Provenance {
    Provenance::new(model.meta.config_hash.clone(), model.meta.seed)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), &out, seed),
        Command::Annotate {
            input,
            cache,
            client,
            mock_table,
            live_config,
            out,
            max_in_flight,
        } => cmd_annotate(&input, &cache, client, mock_table.as_deref(), live_config.as_deref(), &out, max_in_flight),
        Command::Train {
            config,
            data,
            annotations,
            out,
            seed,
            epochs,
            lr,
            batch_size,
            dim,
            checkpoint_dir,
            vocab_labels,
        } => {
            require_file(&config, "config")?;
            let mut cfg: TrainConfig =
                fsio::read_json(&config).with_context(|| format!("reading config {}", config.display()))?;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = dim {
                cfg.d = v;
            }
            if let Some(v) = checkpoint_dir {
                cfg.checkpoint_dir = v;
            }
            for p in &vocab_labels {
                cfg.extra_vocab.extend(load_space(p)?.labels().iter().cloned());
            }
            cmd_train(&cfg, &data, &annotations, out)
        }
        Command::Calibrate { model, val, labels, out } => {
            let model = load_model(&model)?;
            let space = load_space(&labels)?;
            if space.kind() != LabelSpaceKind::Multi {
                bail!("calibration needs a multi-label space, {} is {}", space.name(), space.kind());
            }
            let samples = filter_split(&load_jsonl_dataset(&val, space.kind())?, Split::Val);
            let table = calibrate_for_space(&model, &space, &samples)?;
            write_json(&out, &table)
        }
        Command::Predict {
            model,
            labels,
            thresholds,
            input,
            out,
        } => cmd_predict(&model, &labels, thresholds.as_deref(), &input, &out),
        Command::Evaluate {
            model,
            data,
            labels,
            thresholds,
            seen,
            split,
            out,
            table,
        } => {
            let model = load_model(&model)?;
            let space = load_space(&labels)?;
            let thresholds = thresholds.map(|p| load_thresholds(&p)).transpose()?;
            let seen = seen.map(|p| load_seen(&p)).transpose()?;
            let all = load_jsonl_dataset(&data, space.kind())?;
            let samples = filter_split(&all, split);
            let name = data.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
            let report = evaluate(
                &name,
                &samples,
                &model,
                &space,
                thresholds.as_ref(),
                seen.as_deref(),
                model_provenance(&model),
            )?;
            write_json(&out, &report)?;
            if let Some(t) = table {
                write_text(&t, &report.render_table())?;
            }
            print!("{}", report.render_table());
            Ok(())
        }
        Command::Probe {
            model,
            targets,
            pool,
            data,
            k,
            out,
        } => {
            let model = load_model(&model)?;
            require_file(&targets, "targets")?;
            let targets: Vec<String> = fsio::read_json(&targets).context("targets must be a JSON list")?;
            require_file(&pool, "pool")?;
            let pool = if pool.extension().is_some_and(|e| e == "jsonl") {
                let anns = load_annotations(&pool)?;
                let ids: Vec<String> = match data {
                    Some(d) => filter_split(&load_jsonl_dataset(&d, LabelSpaceKind::Multi)?, Split::Test)
                        .into_iter()
                        .map(|s| s.id)
                        .collect(),
                    None => anns.iter().map(|a| a.sample_id.clone()).collect(),
                };
                build_probe_pool(&anns, &ids)
            } else {
                fsio::read_json(&pool).context("pool must be a JSON list")?
            };
            let mut table = nearest_neighbors(&targets, &pool, k, &model)?;
            table.provenance = Some(model_provenance(&model));
            write_json(&out, &table)?;
            print!("{}", table.render_table());
            Ok(())
        }
        Command::Ablate {
            dims,
            config,
            data,
            annotations,
            targets,
            out,
            table,
        } => {
            require_file(&config, "config")?;
            let mut cfg: TrainConfig = fsio::read_json(&config)?;
            let mut parsed = Vec::new();
            for t in &targets {
                let (space_path, data_path) = t
                    .split_once('=')
                    .with_context(|| format!("target {t:?} is not <label space>=<dataset>"))?;
                let space = load_space(Path::new(space_path))?;
                cfg.extra_vocab.extend(space.labels().iter().cloned());
                let all = load_jsonl_dataset(Path::new(data_path), space.kind())?;
                parsed.push(AblationTarget {
                    name: space.name().to_string(),
                    calibration: filter_split(&all, Split::Val),
                    test: filter_split(&all, Split::Test),
                    space,
                });
            }
            let dataset = filter_split(&load_jsonl_dataset(&data, LabelSpaceKind::Multi)?, Split::Train);
            let anns = load_annotations(&annotations)?;
            let result = ablate_dimensions(&dataset, &anns, &dims, &cfg, &parsed)?;
            write_json(&out, &result)?;
            if let Some(t) = table {
                write_text(&t, &result.render_table())?;
            }
            print!("{}", result.render_table());
            Ok(())
        }
    }
}

fn cmd_synth(spec_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            require_file(p, "spec")?;
            fsio::read_json::<SyntheticSpec>(p).with_context(|| format!("reading spec {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let corpus = generate_synthetic_corpus(&spec)?;
    save_dataset(&out.join("seen.jsonl"), &corpus.seen_dataset)?;
    save_dataset(&out.join("unseen.jsonl"), &corpus.unseen_dataset)?;
    save_annotations(&out.join("reference_annotations.jsonl"), &corpus.annotations)?;
    write_json(&out.join("seen_space.json"), &corpus.seen_space)?;
    write_json(&out.join("unseen_space.json"), &corpus.unseen_space)?;
    write_json(&out.join("mock_table.json"), &corpus.mock_table())?;
    let seen_labels: Vec<&String> = corpus.seen_space.labels().iter().collect();
    write_json(
        &out.join("manifest.json"),
        &json!({
            "spec": spec,
            "emotions": corpus.emotions,
            "seen_classes": seen_labels,
            "provenance": Provenance::new(config_hash(&spec), spec.seed),
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_annotate(
    input: &Path,
    cache: &Path,
    client: ClientKind,
    mock_table: Option<&Path>,
    live_config: Option<&Path>,
    out: &Path,
    max_in_flight: usize,
) -> Result<()> {
    require_file(input, "input dataset")?;
    let data = load_jsonl_dataset(input, LabelSpaceKind::Multi)?;
    let client: Box<dyn LlmClient> = match client {
        ClientKind::Mock => {
            let table: BTreeMap<String, String> = match mock_table {
                Some(p) => {
                    require_file(p, "mock table")?;
                    fsio::read_json(p).with_context(|| format!("reading mock table {}", p.display()))?
                }
                None => BTreeMap::new(),
            };
            Box::new(MockClient::new(table))
        }
        ClientKind::Live => {
            let p = live_config.context("--live-config is required with --client live")?;
            Box::new(LiveClient::new(LiveConfig::load(p)?)?)
        }
    };
    let options = AnnotateOptions {
        max_in_flight,
        ..AnnotateOptions::default()
    };
    let anns = annotate(&data, client.as_ref(), cache, &options)?;
    save_annotations(out, &anns)?;
    Ok(())
}

fn cmd_train(cfg: &TrainConfig, data: &Path, annotations: &Path, out: Option<PathBuf>) -> Result<()> {
    require_file(data, "dataset")?;
    require_file(annotations, "annotations")?;
    let dataset = filter_split(&load_jsonl_dataset(data, LabelSpaceKind::Multi)?, Split::Train);
    let anns = load_annotations(annotations)?;
    let trained = train(&dataset, &anns, cfg)?;
    let out = out.unwrap_or_else(|| cfg.checkpoint_dir.join("train_report.json"));
    write_json(&out, &trained.report)?;
    eprintln!(
        "selected epoch {} of {}; checkpoint {}",
        trained.report.selected_epoch,
        cfg.epochs,
        trained.report.checkpoint_path.display()
    );
    Ok(())
}

fn load_thresholds(path: &Path) -> Result<ThresholdTable> {
    require_file(path, "thresholds")?;
    fsio::read_json(path).with_context(|| format!("reading thresholds {}", path.display()))
}

fn load_seen(path: &Path) -> Result<Vec<String>> {
    require_file(path, "seen classes")?;
    let value: serde_json::Value = fsio::read_json(path)?;
    if value.is_array() {
        return Ok(serde_json::from_value(value)?);
    }
    let space: LabelSpace = serde_json::from_value(value).context("seen classes must be a list or label space")?;
    Ok(space.labels().to_vec())
}

fn cmd_predict(model: &Path, labels: &Path, thresholds: Option<&Path>, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let space = load_space(labels)?;
    require_file(input, "input dataset")?;
    let data = load_dataset(input, DatasetFormat::Jsonl, LabelSpaceKind::Multi)
        .or_else(|_| load_dataset(input, DatasetFormat::Jsonl, space.kind()))?;
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let mut rows = Vec::with_capacity(data.len());
    match space.kind() {
        LabelSpaceKind::Dimensional => {
            let head = DimensionalHead::new(&model)?;
            for s in &data {
                let (valence, activation) = head.predict(&model, &s.text)?;
                rows.push(json!({
                    "id": s.id,
                    "scores": {"valence": valence, "activation": activation},
                    "prediction": {"valence": valence, "activation": activation},
                }));
            }
        }
        kind => {
            let thresholds = thresholds.map(load_thresholds).transpose()?;
            if kind == LabelSpaceKind::Multi && thresholds.is_none() {
                bail!("multi-label prediction needs --thresholds");
            }
            let bank = LabelBank::new(&model, &space)?;
            let scores = score_batch(&model, &bank, &texts)?;
            for (s, sv) in data.iter().zip(&scores) {
                let prediction = match &thresholds {
                    Some(t) if kind == LabelSpaceKind::Multi => json!(predict_multi(sv, t)?),
                    _ => json!(predict_single(sv)),
                };
                rows.push(json!({"id": s.id, "scores": sv.as_map(), "prediction": prediction}));
            }
        }
    }
    fsio::write_jsonl(out, &rows).with_context(|| format!("writing {}", out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(run(["emodistill", "frobnicate"]), 2);
        assert_eq!(run(["emodistill"]), 2);
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.json");
        let code = run([
            "emodistill",
            "calibrate",
            "--model",
            "/nonexistent/model.json",
            "--val",
            "/nonexistent/val.jsonl",
            "--labels",
            "/nonexistent/labels.json",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(!out.exists());
    }
}
