//! Experiment configuration: a TOML file whose every field has a default, so
//! a config only needs the values it changes. Command-line flags override it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use regiontag::dataset::SimulationConfig;
use regiontag::features::{FeatureConfig, FeatureRecipe};
use regiontag::geometry::{default_tetrahedral_geometry, ArrayGeometry};
use regiontag::harness::HarnessMode;
use regiontag::train::{QueryMode, TrainConfig};
use regiontag::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Array geometry file; the default tetrahedron when absent.
    pub geometry: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset: PathBuf::from("data"), output: PathBuf::from("runs"), geometry: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    /// `omni`, `angular` or `distance`.
    pub mode: String,
    pub width: f64,
    pub tolerance: f64,
    pub distance_range: (f64, f64),
}

impl Default for QuerySection {
    fn default() -> Self {
        Self { mode: "angular".into(), width: 60.0, tolerance: 0.5, distance_range: (1.0, 3.0) }
    }
}

impl QuerySection {
    pub fn to_mode(&self) -> Result<QueryMode, Error> {
        match self.mode.trim().to_ascii_lowercase().as_str() {
            "omni" | "none" => Ok(QueryMode::Omni),
            "angular" | "angle" => Ok(QueryMode::Angular { width: self.width }),
            "distance" => Ok(QueryMode::Distance { tolerance: self.tolerance, range: self.distance_range }),
            other => Err(Error::InvalidArgument(format!("unknown query mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Harness names, plus `queries` for randomly sampled queries in the
    /// model's own mode.
    pub harness: Vec<String>,
    pub split: String,
    pub query_crops_per_clip: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            harness: vec!["fixed_region".into(), "location_aware".into()],
            split: "test".into(),
            query_crops_per_clip: 8,
            seed: 0,
        }
    }
}

/// What `eval` runs for one requested harness name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Harness(HarnessMode),
    Queries,
}

impl EvalMode {
    pub fn parse(name: &str) -> Result<Self, Error> {
        if matches!(name.trim(), "queries" | "query") {
            Ok(EvalMode::Queries)
        } else {
            name.parse().map(EvalMode::Harness)
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Harness(h) => h.name(),
            EvalMode::Queries => "queries",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub simulation: SimulationConfig,
    pub recipe: FeatureRecipe,
    pub features: FeatureConfig,
    pub query: QuerySection,
    pub train: TrainConfig,
    /// Train on the eight channel-swapped copies of every training clip.
    pub acs: bool,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            simulation: SimulationConfig::default(),
            recipe: "lps,ipd,df".parse().expect("valid default recipe"),
            features: FeatureConfig::default(),
            query: QuerySection::default(),
            train: TrainConfig::default(),
            acs: false,
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format { what: "experiment config", msg: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|cause| Error::Io { path: path.into(), cause })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.features.validate()?;
        self.train.validate()?;
        self.query.to_mode()?;
        for h in &self.eval.harness {
            EvalMode::parse(h)?;
        }
        self.eval.split.parse::<regiontag::dataset::Split>()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry, Error> {
        match &self.paths.geometry {
            None => Ok(default_tetrahedral_geometry()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|cause| Error::Io { path: p.clone(), cause })?;
                ArrayGeometry::from_config(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
