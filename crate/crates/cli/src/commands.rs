//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use regiontag::audio::read_array_wav;
use regiontag::dataset::{acs_expand, acs_expand_clips, load_split, simulate_dataset, Manifest, Split, MANIFEST_NAME};
use regiontag::features::{encode_feature_dump, extract_features, ClipFeatures, FeatureRecipe};
use regiontag::harness::{evaluate_queries, run_harness};
use regiontag::metrics::{equal_error_rate, mean_average_precision_report};
use regiontag::regionfeat::{AngularRegion, RegionQuery};
use regiontag::scenesim::CLASS_NAMES;
use regiontag::train::{crop_frames, log_csv, train, PreparedClip, QueryMode, TrainedModel};

use crate::config::{EvalMode, ExperimentConfig};

/// A command-line misuse, reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const CHECKPOINT_NAME: &str = "model.rtck";
pub const LOG_NAME: &str = "train_log.csv";
pub const RESULTS_NAME: &str = "results.csv";
pub const RUN_RECORD_NAME: &str = "run.json";

fn write_run_record(dir: &Path, command: &str, cfg: &ExperimentConfig, extra: serde_json::Value) -> Result<()> {
    let record = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "result": extra,
    });
    let path = dir.join(RUN_RECORD_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").with_context(|| path.display().to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Builds a query from `--region` or `--distance`.
pub fn parse_query(region: Option<&str>, distance: Option<f64>) -> Result<Option<RegionQuery>> {
    match (region, distance) {
        (Some(_), Some(_)) => Err(UsageError("--region and --distance are exclusive".into()).into()),
        (Some(r), None) => {
            let region: AngularRegion = r.parse().map_err(|e| UsageError(format!("--region: {e}")))?;
            Ok(Some(RegionQuery::Angular(region)))
        }
        (None, Some(d)) => Ok(Some(RegionQuery::distance(d).map_err(|e| UsageError(format!("--distance: {e}")))?)),
        (None, None) => Ok(None),
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let geom = cfg.geometry()?;
    let out = &cfg.paths.dataset;
    create_dir(out)?;
    let manifest = simulate_dataset(&cfg.simulation, &geom, out)?;
    let counts = json!({
        "train": manifest.count(Split::Train),
        "val": manifest.count(Split::Val),
        "test": manifest.count(Split::Test),
    });
    write_run_record(out, "simulate", cfg, counts.clone())?;
    println!("wrote {} clips to {} ({counts})", manifest.entries.len(), out.display());
    Ok(())
}

pub fn extract(cfg: &ExperimentConfig, input: &Path, output: &Path, query: Option<RegionQuery>) -> Result<()> {
    let geom = cfg.geometry()?;
    if cfg.recipe.uses_query() && query.is_none() {
        bail!(UsageError(format!("recipe {} needs --region or --distance", cfg.recipe)));
    }
    let clip = read_array_wav(input, geom.sample_rate())?;
    let stack = extract_features(&clip, &cfg.features, &geom, &cfg.recipe, query.as_ref())?;
    std::fs::write(output, encode_feature_dump(&stack)).with_context(|| output.display().to_string())?;
    println!("{} planes x {} frames x {} bins -> {}", stack.channels(), stack.frames, stack.bins, output.display());
    Ok(())
}

pub fn acs_expand_dataset(cfg: &ExperimentConfig, output: &Path) -> Result<()> {
    let geom = cfg.geometry()?;
    let manifest = Manifest::read(&cfg.paths.dataset.join(MANIFEST_NAME))?;
    create_dir(output)?;
    let out = acs_expand(&manifest, &geom, output)?;
    println!("{} training clips expanded to {} in {}", manifest.count(Split::Train), out.count(Split::Train), output.display());
    Ok(())
}

pub fn train_model(cfg: &ExperimentConfig) -> Result<TrainedModel> {
    let geom = cfg.geometry()?;
    let mode = cfg.query.to_mode()?;
    // surface recipe and mode conflicts before any data is read
    let crop = crop_frames(cfg.train.crop_seconds, &cfg.features, geom.sample_rate());
    TrainedModel::new(cfg.features.clone(), cfg.recipe.clone(), mode, crop, geom.clone(), cfg.train.widths, cfg.train.seed)?;

    let manifest = Manifest::read(&cfg.paths.dataset.join(MANIFEST_NAME))?;
    let mut train_clips = load_split(&manifest, Split::Train, geom.sample_rate())?;
    if cfg.acs {
        train_clips = acs_expand_clips(&train_clips, &geom)?;
    }
    let val_clips = load_split(&manifest, Split::Val, geom.sample_rate())?;
    let train_prepared = PreparedClip::prepare_all(&train_clips, &cfg.features, &cfg.recipe)?;
    drop(train_clips);
    let val_prepared = PreparedClip::prepare_all(&val_clips, &cfg.features, &cfg.recipe)?;
    let outcome = train(&train_prepared, &val_prepared, &cfg.features, &cfg.recipe, mode, &geom, &cfg.train)?;

    let out = &cfg.paths.output;
    create_dir(out)?;
    outcome.trained.save(&out.join(CHECKPOINT_NAME))?;
    let log_path = out.join(LOG_NAME);
    std::fs::write(&log_path, log_csv(&outcome.log)).with_context(|| log_path.display().to_string())?;
    write_run_record(
        out,
        "train",
        cfg,
        json!({
            "train_clips": train_prepared.len(),
            "val_clips": val_prepared.len(),
            "epochs": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "first_batch_loss": outcome.first_batch_loss,
            "parameters": outcome.trained.model.num_parameters(),
        }),
    )?;
    println!(
        "trained {} epochs (best {:?}); checkpoint {}",
        outcome.log.len(),
        outcome.best_epoch,
        out.join(CHECKPOINT_NAME).display()
    );
    Ok(outcome.trained)
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub mode: String,
    pub features: FeatureRecipe,
    pub map: f64,
    pub eer: f64,
    pub n_examples: usize,
    pub per_class: Vec<Option<f64>>,
}

pub fn results_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("mode,features,mAP,EER,n_examples\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6},{}", r.mode, r.features.to_string().replace(',', "+"), r.map, r.eer, r.n_examples);
    }
    out
}

fn per_class_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("mode,class,AP\n");
    for r in rows {
        for (c, ap) in r.per_class.iter().enumerate() {
            if let Some(ap) = ap {
                let _ = writeln!(out, "{},{},{ap:.6}", r.mode, CLASS_NAMES[c]);
            }
        }
    }
    out
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, output: Option<&Path>, per_class: bool) -> Result<Vec<EvalRow>> {
    let trained = TrainedModel::load(checkpoint)?;
    let modes = cfg.eval.harness.iter().map(|h| EvalMode::parse(h)).collect::<Result<Vec<_>, _>>()?;
    let split: Split = cfg.eval.split.parse()?;
    let manifest = Manifest::read(&cfg.paths.dataset.join(MANIFEST_NAME))?;
    let clips = load_split(&manifest, split, trained.geometry.sample_rate())?;
    let prepared = PreparedClip::prepare_all(&clips, &trained.features, &trained.recipe)?;
    drop(clips);
    let mut rows = Vec::new();
    for mode in modes {
        let sm = match mode {
            EvalMode::Harness(h) => run_harness(&trained, &prepared, &h)?,
            EvalMode::Queries => evaluate_queries(&trained, &prepared, cfg.eval.query_crops_per_clip, cfg.train.event_query_prob, cfg.eval.seed)?,
        };
        let report = mean_average_precision_report(&sm)?;
        let eer = equal_error_rate(&sm)?;
        rows.push(EvalRow {
            mode: mode.name().into(),
            features: trained.recipe.clone(),
            map: report.map,
            eer,
            n_examples: sm.rows(),
            per_class: report.per_class.clone(),
        });
    }
    let csv = results_csv(&rows);
    print!("{csv}");
    let out_dir = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.output.clone());
    create_dir(&out_dir)?;
    std::fs::write(out_dir.join(RESULTS_NAME), &csv).with_context(|| out_dir.display().to_string())?;
    if per_class {
        std::fs::write(out_dir.join("per_class_ap.csv"), per_class_csv(&rows)).with_context(|| out_dir.display().to_string())?;
    }
    let summary: Vec<_> = rows.iter().map(|r| json!({"mode": r.mode, "mAP": r.map, "EER": r.eer, "n_examples": r.n_examples})).collect();
    write_run_record(&out_dir, "eval", cfg, json!({ "checkpoint": checkpoint, "split": split.name(), "rows": summary }))?;
    Ok(rows)
}

/// Class probabilities for a whole recording, highest first.
pub fn tag(checkpoint: &Path, input: &Path, query: Option<RegionQuery>) -> Result<Vec<(&'static str, f64)>> {
    let trained = TrainedModel::load(checkpoint)?;
    let query = match (trained.mode, query) {
        (QueryMode::Omni, q) => q,
        (QueryMode::Angular { .. }, Some(q @ RegionQuery::Angular(_))) => Some(q),
        (QueryMode::Distance { .. }, Some(q @ RegionQuery::Distance(_))) => Some(q),
        (QueryMode::Angular { .. }, _) => bail!(UsageError("this model needs --region".into())),
        (QueryMode::Distance { .. }, _) => bail!(UsageError("this model needs --distance".into())),
    };
    let clip = read_array_wav(input, trained.geometry.sample_rate())?;
    let cache = ClipFeatures::compute(&clip, &trained.features, trained.recipe.has(regiontag::dsp::PlaneKind::GccPhat))?;
    let q = if trained.recipe.uses_query() { query.as_ref() } else { None };
    let stack = cache.assemble(&trained.features, &trained.geometry, &trained.recipe, 0, cache.frames(), q)?;
    let probs = trained.predict_stack(&stack, query.as_ref())?;
    let mut out: Vec<(&'static str, f64)> = CLASS_NAMES.iter().copied().zip(probs).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}

pub fn tag_json(probs: &[(&str, f64)]) -> String {
    let items: Vec<_> = probs.iter().map(|(c, p)| json!({ "class": c, "probability": p })).collect();
    serde_json::to_string_pretty(&items).expect("serializable")
}

pub fn default_acs_output(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "data".into());
    name.push("_acs");
    dataset.with_file_name(name)
}
