//! Training: crop and query sampling, targets, mini-batch Adam with early
//! stopping on validation mAP, and the trained-model bundle.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledClip;
use crate::error::{Error, Result};
use crate::features::{ClipFeatures, FeatureConfig, FeatureRecipe, FeatureStack};
use crate::geometry::ArrayGeometry;
use crate::metrics::{equal_error_rate, mean_average_precision, ScoreMatrix};
use crate::model::checkpoint::{self, Container, DType};
use crate::model::{Adam, CompactCnn, EmbeddingKind, Gradients, ModelConfig};
use crate::regionfeat::{region_contains, AngularRegion, RegionQuery};
use crate::dsp::PlaneKind;
use crate::scenesim::{mix_seed, EventTrack, ANNOTATION_HOP, NUM_CLASSES};

/// What the model is asked about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QueryMode {
    /// Every present class, no query.
    Omni,
    /// Classes whose azimuth lies in an angular region of `width` degrees.
    Angular { width: f64 },
    /// Classes within `tolerance` meters of the queried distance; random
    /// queries are drawn from `range`.
    Distance { tolerance: f64, range: (f64, f64) },
}

impl QueryMode {
    pub fn angular(width: f64) -> Self {
        QueryMode::Angular { width }
    }

    pub fn name(&self) -> &'static str {
        match self {
            QueryMode::Omni => "omni",
            QueryMode::Angular { .. } => "angular",
            QueryMode::Distance { .. } => "distance",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            QueryMode::Omni => Ok(()),
            QueryMode::Angular { width } if width > 0.0 && width <= 360.0 => Ok(()),
            QueryMode::Distance { tolerance, range } if tolerance >= 0.0 && range.0 > 0.0 && range.1 >= range.0 => Ok(()),
            other => Err(Error::invalid(format!("invalid query mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub crop_seconds: f64,
    /// Random crops drawn per training clip and epoch.
    pub crops_per_clip: usize,
    /// Fixed validation crops per validation clip.
    pub val_crops_per_clip: usize,
    /// Probability that an angular or distance query is centered on a
    /// present event.
    pub event_query_prob: f64,
    pub widths: [usize; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 16,
            max_epochs: 50,
            patience: 10,
            crop_seconds: 2.0,
            crops_per_clip: 4,
            val_crops_per_clip: 4,
            event_query_prob: 0.5,
            widths: [16, 32, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.crops_per_clip == 0 {
            return Err(Error::invalid("batch size, epochs and crops per clip must be positive"));
        }
        if self.crop_seconds.is_nan() || self.crop_seconds <= 0.0 || !(0.0..=1.0).contains(&self.event_query_prob) {
            return Err(Error::invalid("crop length must be positive and the event query probability in [0, 1]"));
        }
        Ok(())
    }
}

/// Number of STFT frames covering `seconds` of audio.
pub fn crop_frames(seconds: f64, cfg: &FeatureConfig, sample_rate: u32) -> usize {
    let samples = (seconds * sample_rate as f64).round() as usize;
    if samples < cfg.n_fft {
        return 0;
    }
    (samples - cfg.n_fft) / cfg.hop + 1
}

/// A clip with cached features and per-event tracks.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub name: String,
    pub features: ClipFeatures,
    pub events: Vec<EventTrack>,
    sample_rate: u32,
}

impl PreparedClip {
    pub fn new(clip: &LabeledClip, cfg: &FeatureConfig, with_gcc: bool) -> Result<Self> {
        let features = ClipFeatures::compute(&clip.clip, cfg, with_gcc)?;
        let events = clip.annotation.tracks().into_values().collect();
        Ok(Self { name: clip.name.clone(), features, events, sample_rate: clip.clip.sample_rate() })
    }

    pub fn prepare_all(clips: &[LabeledClip], cfg: &FeatureConfig, recipe: &FeatureRecipe) -> Result<Vec<Self>> {
        let gcc = recipe.has(PlaneKind::GccPhat);
        clips.par_iter().map(|c| Self::new(c, cfg, gcc)).collect()
    }

    /// Events with at least one annotation frame lying entirely inside STFT
    /// frames `[start, start + len)`.
    pub fn present_events(&self, cfg: &FeatureConfig, start: usize, len: usize) -> Vec<&EventTrack> {
        let fs = self.sample_rate as f64;
        let t0 = (start * cfg.hop) as f64 / fs;
        let t1 = ((start + len - 1) * cfg.hop + cfg.n_fft) as f64 / fs;
        let first = ((t0 - 1e-9) / ANNOTATION_HOP).ceil().max(0.0) as usize;
        let end = ((t1 + 1e-9) / ANNOTATION_HOP).floor() as usize;
        self.events.iter().filter(|e| e.frames.iter().any(|&f| f >= first && f < end)).collect()
    }

    /// Crop starts whose window contains at least one event.
    pub fn valid_starts(&self, cfg: &FeatureConfig, len: usize) -> Vec<usize> {
        if len == 0 || len > self.features.frames() {
            return Vec::new();
        }
        (0..=self.features.frames() - len).filter(|&s| !self.present_events(cfg, s, len).is_empty()).collect()
    }
}

/// Multi-hot targets for a query over the present events.
pub fn query_targets(mode: &QueryMode, query: Option<&RegionQuery>, present: &[&EventTrack]) -> Vec<bool> {
    let mut t = vec![false; NUM_CLASSES];
    for e in present {
        let hit = match (mode, query) {
            (QueryMode::Omni, _) => true,
            (QueryMode::Angular { .. }, Some(RegionQuery::Angular(r))) => region_contains(r, e.azimuth),
            (QueryMode::Distance { tolerance, .. }, Some(RegionQuery::Distance(d))) => (e.distance - d).abs() <= *tolerance + 1e-9,
            _ => false,
        };
        if hit {
            t[e.class_id] = true;
        }
    }
    t
}

/// Draws a query: centered on a random present event with probability
/// `event_prob`, otherwise uniform.
pub fn sample_query<R: Rng>(mode: &QueryMode, present: &[&EventTrack], event_prob: f64, rng: &mut R) -> Option<RegionQuery> {
    let use_event = !present.is_empty() && rng.random_bool(event_prob);
    match *mode {
        QueryMode::Omni => None,
        QueryMode::Angular { width } => {
            let center = if use_event { present[rng.random_range(0..present.len())].azimuth } else { rng.random_range(-180.0..180.0) };
            Some(RegionQuery::Angular(AngularRegion::centered(center, width).expect("validated width")))
        }
        QueryMode::Distance { range, .. } => {
            let d = if use_event {
                present[rng.random_range(0..present.len())].distance
            } else if range.1 > range.0 {
                rng.random_range(range.0..range.1)
            } else {
                range.0
            };
            Some(RegionQuery::Distance(d))
        }
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub clip: usize,
    pub start: usize,
    pub query: Option<RegionQuery>,
    pub targets: Vec<bool>,
}

/// A model with everything needed to compute its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: CompactCnn,
    pub features: FeatureConfig,
    pub recipe: FeatureRecipe,
    pub mode: QueryMode,
    pub crop_frames: usize,
    pub geometry: ArrayGeometry,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    model: ModelConfig,
    features: FeatureConfig,
    recipe: FeatureRecipe,
    mode: QueryMode,
    crop_frames: usize,
    geometry: String,
}

impl TrainedModel {
    pub fn new(
        features: FeatureConfig,
        recipe: FeatureRecipe,
        mode: QueryMode,
        crop_frames: usize,
        geometry: ArrayGeometry,
        widths: [usize; 3],
        seed: u64,
    ) -> Result<Self> {
        features.validate()?;
        mode.validate()?;
        let embedding = if recipe.has_embedding() {
            match mode {
                QueryMode::Angular { .. } => Some(EmbeddingKind::Angle),
                QueryMode::Distance { .. } => Some(EmbeddingKind::Distance),
                QueryMode::Omni => return Err(Error::Mismatch("a learned embedding needs a query mode".into())),
            }
        } else {
            None
        };
        if (recipe.has(PlaneKind::Df) || recipe.has(PlaneKind::Fov)) && !matches!(mode, QueryMode::Angular { .. }) {
            return Err(Error::Mismatch(format!("recipe {recipe} needs angular queries, not {}", mode.name())));
        }
        if crop_frames < 8 {
            return Err(Error::invalid(format!("crop of {crop_frames} frames is shorter than the 8 the model needs")));
        }
        let config = ModelConfig { widths, ..ModelConfig::new(recipe.plane_kinds(&features).len(), embedding) };
        let model = CompactCnn::new(config, seed)?;
        Ok(Self { model, features, recipe, mode, crop_frames, geometry })
    }

    pub fn stack(&self, clip: &PreparedClip, start: usize, query: Option<&RegionQuery>) -> Result<FeatureStack> {
        clip.features.assemble(&self.features, &self.geometry, &self.recipe, start, self.crop_frames, query)
    }

    /// Probabilities for one crop and query.
    pub fn predict(&self, clip: &PreparedClip, start: usize, query: Option<&RegionQuery>) -> Result<Vec<f64>> {
        let q = if self.recipe.uses_query() { query } else { None };
        self.model.forward(&self.stack(clip, start, q)?, q)
    }

    /// Probabilities for a full feature stack of arbitrary length.
    pub fn predict_stack(&self, stack: &FeatureStack, query: Option<&RegionQuery>) -> Result<Vec<f64>> {
        let q = if self.recipe.uses_query() { query } else { None };
        self.model.forward(stack, q)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            model: self.model.config().clone(),
            features: self.features.clone(),
            recipe: self.recipe.clone(),
            mode: self.mode,
            crop_frames: self.crop_frames,
            geometry: self.geometry.to_config(),
        };
        let metadata = serde_json::to_string(&meta).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        Ok(checkpoint::encode(&Container { metadata, tensors: self.model.to_tensors() }, DType::F64))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = checkpoint::decode(bytes)?;
        let meta: Metadata = serde_json::from_str(&c.metadata).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        meta.features.validate()?;
        meta.mode.validate()?;
        if meta.model.in_planes != meta.recipe.plane_kinds(&meta.features).len() {
            return Err(Error::Mismatch("checkpoint recipe disagrees with the model input width".into()));
        }
        let geometry = ArrayGeometry::from_config(&meta.geometry)?;
        let model = CompactCnn::from_tensors(meta.model, &c.tensors)?;
        Ok(Self { model, features: meta.features, recipe: meta.recipe, mode: meta.mode, crop_frames: meta.crop_frames, geometry })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: f64,
    pub val_eer: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_mAP,val_EER\n");
    for e in log {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", e.epoch, e.train_loss, e.val_map, e.val_eer);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub log: Vec<EpochLog>,
    pub first_batch_loss: f64,
    pub best_epoch: Option<usize>,
}

/// Samples `per_clip` examples from each clip that has a valid crop.
#[allow(clippy::too_many_arguments)]
pub fn sample_examples(
    clips: &[PreparedClip],
    valid: &[Vec<usize>],
    mode: &QueryMode,
    cfg: &FeatureConfig,
    crop: usize,
    per_clip: usize,
    event_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Example> {
    let mut out = Vec::new();
    for (ci, clip) in clips.iter().enumerate() {
        if valid[ci].is_empty() {
            continue;
        }
        for _ in 0..per_clip {
            let start = valid[ci][rng.random_range(0..valid[ci].len())];
            let present = clip.present_events(cfg, start, crop);
            let query = sample_query(mode, &present, event_prob, rng);
            let targets = query_targets(mode, query.as_ref(), &present);
            out.push(Example { clip: ci, start, query, targets });
        }
    }
    out
}

/// Scores every example with the model.
pub fn score_examples(trained: &TrainedModel, clips: &[PreparedClip], examples: &[Example]) -> Result<ScoreMatrix> {
    let rows = examples
        .par_iter()
        .map(|e| trained.predict(&clips[e.clip], e.start, e.query.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut sm = ScoreMatrix::new(NUM_CLASSES);
    for (r, e) in rows.iter().zip(examples) {
        sm.push(r, &e.targets)?;
    }
    Ok(sm)
}

fn metrics_or_nan(sm: &ScoreMatrix) -> (f64, f64) {
    (mean_average_precision(sm).unwrap_or(f64::NAN), equal_error_rate(sm).unwrap_or(f64::NAN))
}

fn normalization_stats(trained: &TrainedModel, clips: &[PreparedClip], examples: &[Example]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = trained.model.config().in_planes;
    let (mut sum, mut sq, mut n) = (vec![0.0; k], vec![0.0; k], 0usize);
    for e in examples.iter().take(64) {
        let q = if trained.recipe.uses_query() { e.query.as_ref() } else { None };
        let s = trained.stack(&clips[e.clip], e.start, q)?;
        for c in 0..k {
            for &v in s.plane(c) {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += s.frames * s.bins;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-3)).collect();
    Ok((mean, std))
}

/// Trains a model on prepared clips.
pub fn train(
    train_clips: &[PreparedClip],
    val_clips: &[PreparedClip],
    features: &FeatureConfig,
    recipe: &FeatureRecipe,
    mode: QueryMode,
    geometry: &ArrayGeometry,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_clips.is_empty() {
        return Err(Error::EmptyDataset("no training clips".into()));
    }
    let sample_rate = geometry.sample_rate();
    let crop = crop_frames(config.crop_seconds, features, sample_rate);
    let mut trained = TrainedModel::new(features.clone(), recipe.clone(), mode, crop, geometry.clone(), config.widths, config.seed)?;
    let valid: Vec<Vec<usize>> = train_clips.par_iter().map(|c| c.valid_starts(features, crop)).collect();
    if valid.iter().all(Vec::is_empty) {
        return Err(Error::EmptyDataset("no training crop contains an event".into()));
    }
    let val_valid: Vec<Vec<usize>> = val_clips.par_iter().map(|c| c.valid_starts(features, crop)).collect();
    let mut val_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x0056_414C));
    let val_examples =
        sample_examples(val_clips, &val_valid, &mode, features, crop, config.val_crops_per_clip, config.event_query_prob, &mut val_rng);

    let mut norm_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x4E4F_524D));
    let norm_examples = sample_examples(train_clips, &valid, &mode, features, crop, 1, config.event_query_prob, &mut norm_rng);
    let (mean, std) = normalization_stats(&trained, train_clips, &norm_examples)?;
    trained.model.set_input_normalization(mean, std)?;
    if let QueryMode::Distance { .. } = mode {
        let d: Vec<f64> = train_clips.iter().flat_map(|c| c.events.iter().map(|e| e.distance)).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let s = (d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d.len() as f64).sqrt().max(1e-3);
        trained.model.set_distance_normalization(m, s)?;
    }

    let mut opt = Adam::new(&trained.model, config.learning_rate);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, CompactCnn)> = None;
    let mut since_best = 0;
    let mut first_batch_loss = f64::NAN;
    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));
        let mut examples =
            sample_examples(train_clips, &valid, &mode, features, crop, config.crops_per_clip, config.event_query_prob, &mut rng);
        examples.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in examples.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|e| {
                    let q = if recipe.uses_query() { e.query.as_ref() } else { None };
                    let stack = trained.stack(&train_clips[e.clip], e.start, q)?;
                    trained.model.loss_and_gradients(&stack, q, &e.targets)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros_like(&trained.model);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if first_batch_loss.is_nan() {
                first_batch_loss = batch_loss / batch.len() as f64;
            }
            loss_sum += batch_loss;
            opt.step(&mut trained.model, &grads)?;
        }
        let train_loss = loss_sum / examples.len() as f64;
        let (val_map, val_eer) = if val_examples.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            metrics_or_nan(&score_examples(&trained, val_clips, &val_examples)?)
        };
        log.push(EpochLog { epoch, train_loss, val_map, val_eer });
        if !train_loss.is_finite() {
            return Err(Error::invalid(format!("training diverged at epoch {epoch}")));
        }
        if val_map.is_nan() {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_map > *b) {
            best = Some((val_map, epoch, trained.model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, model)) = best {
        trained.model = model;
    }
    Ok(TrainOutcome { trained, log, first_batch_loss, best_epoch })
}
