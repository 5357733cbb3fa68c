//! Command-line front end: argument parsing, config overrides and exit codes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::UsageError;
use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "regiontag", version, about = "Region-specific audio tagging for tetrahedral microphone arrays")]
pub struct Cli {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Dataset directory (holds manifest.tsv).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Array geometry file.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render an annotated dataset with train/val/test splits.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_clips: Option<usize>,
        #[arg(long)]
        val_clips: Option<usize>,
        #[arg(long)]
        test_clips: Option<usize>,
        /// Clip length in seconds.
        #[arg(long)]
        clip_length: Option<f64>,
        /// Also write the channel-swapped training set to `<dataset>_acs`.
        #[arg(long)]
        acs: bool,
    },
    /// Write the feature stack of one recording as a feature dump.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Feature dump to write.
        #[arg(long = "dump")]
        dump: PathBuf,
        /// Plane kinds, e.g. `lps,ipd,df`.
        #[arg(long)]
        features: Option<String>,
        /// Angular query `begin:end` in degrees.
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
        /// Distance query in meters.
        #[arg(long)]
        distance: Option<f64>,
    },
    /// Write eight channel-swapped copies of every training clip.
    AcsExpand {
        #[command(flatten)]
        common: Common,
    },
    /// Train a tagger and write checkpoint, log and run record.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<String>,
        /// `omni`, `angular` or `distance`.
        #[arg(long)]
        query: Option<String>,
        /// Angular query width in degrees.
        #[arg(long)]
        width: Option<f64>,
        /// Augment training clips with channel swapping.
        #[arg(long)]
        acs: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Evaluate a checkpoint under one or more harnesses.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated: omnidirectional, fixed_region, location_aware, queries.
        #[arg(long)]
        harness: Option<String>,
        #[arg(long)]
        split: Option<String>,
        /// Also write per-class AP.
        #[arg(long)]
        per_class: bool,
    },
    /// Print class probabilities for one recording as JSON, highest first.
    Tag {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
        #[arg(long)]
        distance: Option<f64>,
    },
}

fn apply_common(cfg: &mut ExperimentConfig, c: &Common) {
    if let Some(d) = &c.dataset {
        cfg.paths.dataset = d.clone();
    }
    if let Some(o) = &c.output {
        cfg.paths.output = o.clone();
    }
    if let Some(g) = &c.geometry {
        cfg.paths.geometry = Some(g.clone());
    }
    if let Some(s) = c.seed {
        cfg.simulation.seed = s;
        cfg.train.seed = s;
        cfg.eval.seed = s;
    }
}

fn set_recipe(cfg: &mut ExperimentConfig, features: &Option<String>) -> Result<()> {
    if let Some(f) = features {
        cfg.recipe = f.parse().map_err(|e| UsageError(format!("--features: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Simulate { common, train_clips, val_clips, test_clips, clip_length, acs } => {
            // for simulate, --output names the dataset being written
            let dataset = common.output.clone().or_else(|| common.dataset.clone());
            apply_common(&mut cfg, &Common { dataset, output: None, ..common });
            let sim = &mut cfg.simulation;
            sim.train_clips = train_clips.unwrap_or(sim.train_clips);
            sim.val_clips = val_clips.unwrap_or(sim.val_clips);
            sim.test_clips = test_clips.unwrap_or(sim.test_clips);
            sim.scene.clip_length = clip_length.unwrap_or(sim.scene.clip_length);
            cfg.acs |= acs;
            commands::simulate(&cfg)?;
            if cfg.acs {
                commands::acs_expand_dataset(&cfg, &commands::default_acs_output(&cfg.paths.dataset))?;
            }
            Ok(())
        }
        Command::Extract { common, input, dump, features, region, distance } => {
            apply_common(&mut cfg, &common);
            set_recipe(&mut cfg, &features)?;
            let query = commands::parse_query(region.as_deref(), distance)?;
            commands::extract(&cfg, &input, &dump, query)
        }
        Command::AcsExpand { common } => {
            apply_common(&mut cfg, &common);
            let out = common.output.clone().unwrap_or_else(|| commands::default_acs_output(&cfg.paths.dataset));
            commands::acs_expand_dataset(&cfg, &out)
        }
        Command::Train { common, features, query, width, acs, epochs, learning_rate } => {
            apply_common(&mut cfg, &common);
            set_recipe(&mut cfg, &features)?;
            if let Some(q) = query {
                cfg.query.mode = q;
            }
            cfg.query.width = width.unwrap_or(cfg.query.width);
            cfg.acs |= acs;
            cfg.train.max_epochs = epochs.unwrap_or(cfg.train.max_epochs);
            cfg.train.learning_rate = learning_rate.unwrap_or(cfg.train.learning_rate);
            cfg.validate().map_err(|e| UsageError(e.to_string()))?;
            commands::train_model(&cfg).map(|_| ())
        }
        Command::Eval { common, checkpoint, harness, split, per_class } => {
            apply_common(&mut cfg, &common);
            if let Some(h) = harness {
                cfg.eval.harness = h.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            }
            if let Some(s) = split {
                cfg.eval.split = s;
            }
            cfg.validate().map_err(|e| UsageError(e.to_string()))?;
            commands::evaluate(&cfg, &checkpoint, common.output.as_deref(), per_class).map(|_| ())
        }
        Command::Tag { checkpoint, input, region, distance } => {
            let query = commands::parse_query(region.as_deref(), distance)?;
            let probs = commands::tag(&checkpoint, &input, query)?;
            println!("{}", commands::tag_json(&probs));
            Ok(())
        }
    }
}

/// Exit code for an error: 2 for misuse, 3 for bad or missing data, 4 for
/// violated internal invariants.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use regiontag::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => EXIT_USAGE,
                E::Shape(_) => EXIT_INTERNAL,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}
