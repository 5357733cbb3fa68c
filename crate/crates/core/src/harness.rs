//! Tagging harnesses: omnidirectional, fixed-region and location-aware, with
//! max-aggregation of per-region outputs.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoreMatrix;
use crate::regionfeat::{AngularRegion, RegionQuery};
use crate::scenesim::{mix_seed, EventTrack, NUM_CLASSES};
use crate::train::{query_targets, sample_examples, score_examples, PreparedClip, QueryMode, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarnessMode {
    Omnidirectional,
    FixedRegion { width: f64, count: usize },
    LocationAware { width: f64, overlap_filter: f64 },
}

impl HarnessMode {
    pub fn fixed_region() -> Self {
        HarnessMode::FixedRegion { width: 60.0, count: 6 }
    }

    pub fn location_aware() -> Self {
        HarnessMode::LocationAware { width: 60.0, overlap_filter: 30.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HarnessMode::Omnidirectional => "omnidirectional",
            HarnessMode::FixedRegion { .. } => "fixed_region",
            HarnessMode::LocationAware { .. } => "location_aware",
        }
    }

    fn check_model(&self, trained: &TrainedModel) -> Result<()> {
        let ok = match self {
            HarnessMode::Omnidirectional => trained.mode == QueryMode::Omni,
            _ => matches!(trained.mode, QueryMode::Angular { .. }),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Mismatch(format!("{} harness cannot use a {} model", self.name(), trained.mode.name())))
        }
    }
}

impl fmt::Display for HarnessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HarnessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "omni" | "omnidirectional" => Ok(HarnessMode::Omnidirectional),
            "fixed" | "fixed_region" => Ok(HarnessMode::fixed_region()),
            "location" | "location_aware" => Ok(HarnessMode::location_aware()),
            other => Err(Error::invalid(format!("unknown harness mode {other:?}"))),
        }
    }
}

/// `count` tiles of `width` degrees starting at −180; they must cover the circle exactly.
pub fn fixed_tiles(width: f64, count: usize) -> Result<Vec<AngularRegion>> {
    if count == 0 || (width * count as f64 - 360.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{count} tiles of {width} degrees do not tile the circle")));
    }
    (0..count)
        .map(|i| {
            let begin = -180.0 + i as f64 * width;
            AngularRegion::new(begin, begin + width)
        })
        .collect()
}

/// Regions centered on each event in order, dropping any that overlaps an
/// already kept region by more than `overlap_filter` degrees.
pub fn location_regions(events: &[&EventTrack], width: f64, overlap_filter: f64) -> Result<Vec<AngularRegion>> {
    let mut kept: Vec<AngularRegion> = Vec::new();
    for e in events {
        let r = AngularRegion::centered(e.azimuth, width)?;
        if kept.iter().all(|k| k.overlap(&r) <= overlap_filter + 1e-9) {
            kept.push(r);
        }
    }
    Ok(kept)
}

/// Elementwise maximum of equal-length rows.
pub fn max_aggregate(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    (0..n).map(|j| rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Non-overlapping crop starts containing at least one event.
pub fn harness_crops(clip: &PreparedClip, trained: &TrainedModel) -> Vec<usize> {
    let len = trained.crop_frames;
    let total = clip.features.frames();
    if len == 0 || len > total {
        return Vec::new();
    }
    (0..=total - len)
        .step_by(len)
        .filter(|&s| !clip.present_events(&trained.features, s, len).is_empty())
        .collect()
}

fn as_f64(t: &[bool]) -> Vec<f64> {
    t.iter().map(|&b| f64::from(u8::from(b))).collect()
}

fn crop_row(trained: &TrainedModel, clip: &PreparedClip, start: usize, mode: &HarnessMode) -> Result<(Vec<f64>, Vec<bool>)> {
    let present = clip.present_events(&trained.features, start, trained.crop_frames);
    let regions = match *mode {
        HarnessMode::Omnidirectional => {
            let scores = trained.predict(clip, start, None)?;
            return Ok((scores, query_targets(&QueryMode::Omni, None, &present)));
        }
        HarnessMode::FixedRegion { width, count } => fixed_tiles(width, count)?,
        HarnessMode::LocationAware { width, overlap_filter } => location_regions(&present, width, overlap_filter)?,
    };
    let half_open = matches!(mode, HarnessMode::FixedRegion { .. });
    let mut scores = Vec::with_capacity(regions.len());
    let mut labels = Vec::with_capacity(regions.len());
    for r in &regions {
        scores.push(trained.predict(clip, start, Some(&RegionQuery::Angular(*r)))?);
        let mut t = vec![false; NUM_CLASSES];
        for e in &present {
            if if half_open { r.contains_half_open(e.azimuth) } else { r.contains(e.azimuth) } {
                t[e.class_id] = true;
            }
        }
        labels.push(as_f64(&t));
    }
    let labels = max_aggregate(&labels).iter().map(|&v| v > 0.5).collect();
    Ok((max_aggregate(&scores), labels))
}

/// Scores every non-overlapping event-bearing crop of every clip.
pub fn run_harness(trained: &TrainedModel, clips: &[PreparedClip], mode: &HarnessMode) -> Result<ScoreMatrix> {
    mode.check_model(trained)?;
    let jobs: Vec<(usize, usize)> = clips
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| harness_crops(c, trained).into_iter().map(move |s| (ci, s)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::EmptyDataset("no evaluation crop contains an event".into()));
    }
    let rows = jobs
        .par_iter()
        .map(|&(ci, s)| crop_row(trained, &clips[ci], s, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut sm = ScoreMatrix::new(NUM_CLASSES);
    for (scores, labels) in &rows {
        sm.push(scores, labels)?;
    }
    Ok(sm)
}

/// Scores randomly drawn crops and queries in the model's own query mode.
pub fn evaluate_queries(trained: &TrainedModel, clips: &[PreparedClip], per_clip: usize, event_prob: f64, seed: u64) -> Result<ScoreMatrix> {
    let valid: Vec<Vec<usize>> = clips.par_iter().map(|c| c.valid_starts(&trained.features, trained.crop_frames)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4556_414C));
    let examples = sample_examples(clips, &valid, &trained.mode, &trained.features, trained.crop_frames, per_clip, event_prob, &mut rng);
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no evaluation crop contains an event".into()));
    }
    score_examples(trained, clips, &examples)
}
