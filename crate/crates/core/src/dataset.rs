//! Dataset manifests, simulation to disk and ACS expansion.
//!
//! A manifest is a text file with one `split<TAB>wav<TAB>csv` line per clip.
//! Relative paths resolve against the manifest's directory; `#` starts a
//! comment line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_array_wav, write_wav, MultichannelClip};
use crate::augment::{apply_acs, AcsTransform};
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::scenesim::{mix_seed, read_annotation, render_scene, write_annotation, SceneAnnotation, SceneSampler};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub wav: PathBuf,
    pub csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse { path: source.to_string(), line: i + 1, msg };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(perr(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let split = fields[0].trim().parse::<Split>().map_err(|e| perr(e.to_string()))?;
            let resolve = |f: &str| {
                let f = f.trim();
                if f.is_empty() {
                    Err(perr("empty path".into()))
                } else {
                    Ok(base.join(f))
                }
            };
            entries.push(ManifestEntry { split, wav: resolve(fields[1])?, csv: resolve(fields[2])? });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), &path.display().to_string())
    }

    /// Writes paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        self.entries.iter().map(|e| format!("{}\t{}\t{}\n", e.split, rel(&e.wav), rel(&e.csv))).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// An array recording with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub name: String,
    pub clip: MultichannelClip,
    pub annotation: SceneAnnotation,
}

impl LabeledClip {
    pub fn load(entry: &ManifestEntry, sample_rate: u32) -> Result<Self> {
        let clip = read_array_wav(&entry.wav, sample_rate)?;
        let ann = read_annotation(&entry.csv)?;
        let name = entry.wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { name, clip, annotation: ann })
    }
}

pub fn load_split(manifest: &Manifest, split: Split, sample_rate: u32) -> Result<Vec<LabeledClip>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    entries.par_iter().map(|e| LabeledClip::load(e, sample_rate)).collect()
}

/// Clip counts and scene distribution for a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub seed: u64,
    pub scene: SceneSampler,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { train_clips: 10, val_clips: 2, test_clips: 2, seed: 0, scene: SceneSampler { clip_length: 10.0, ..Default::default() } }
    }
}

fn split_seed(seed: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(seed, split as u64 + 1), index as u64)
}

/// Renders one labeled clip per requested slot, in manifest order.
pub fn simulate_clips(cfg: &SimulationConfig, geom: &ArrayGeometry) -> Result<Vec<(Split, LabeledClip)>> {
    let slots: Vec<(Split, usize)> = [(Split::Train, cfg.train_clips), (Split::Val, cfg.val_clips), (Split::Test, cfg.test_clips)]
        .into_iter()
        .flat_map(|(s, n)| (0..n).map(move |i| (s, i)))
        .collect();
    slots
        .par_iter()
        .map(|&(split, i)| {
            let spec = cfg.scene.sample(split_seed(cfg.seed, split, i))?;
            let (clip, annotation) = render_scene(&spec, geom)?;
            Ok((split, LabeledClip { name: format!("{split}_{i:05}"), clip, annotation }))
        })
        .collect()
}

/// Simulates a dataset under `out_dir` and writes its manifest.
pub fn simulate_dataset(cfg: &SimulationConfig, geom: &ArrayGeometry, out_dir: &Path) -> Result<Manifest> {
    let clips = simulate_clips(cfg, geom)?;
    let mut manifest = Manifest::default();
    for split in Split::ALL {
        let dir = out_dir.join(split.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let entries = clips
        .par_iter()
        .map(|(split, c)| {
            let dir = out_dir.join(split.name());
            let (wav, csv) = (dir.join(format!("{}.wav", c.name)), dir.join(format!("{}.csv", c.name)));
            write_wav(&c.clip, &wav)?;
            write_annotation(&c.annotation, &csv)?;
            Ok(ManifestEntry { split: *split, wav, csv })
        })
        .collect::<Result<Vec<_>>>()?;
    manifest.entries = entries;
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Writes eight ACS copies of every training clip; validation and test
/// entries are kept as they are.
pub fn acs_expand(manifest: &Manifest, geom: &ArrayGeometry, out_dir: &Path) -> Result<Manifest> {
    let transforms = AcsTransform::all(geom)?;
    let dir = out_dir.join("train_acs");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let train: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    let expanded = train
        .par_iter()
        .map(|entry| {
            let clip = LabeledClip::load(entry, geom.sample_rate())?;
            transforms
                .iter()
                .map(|t| {
                    let (c, a) = apply_acs(&clip.clip, &clip.annotation, t)?;
                    let stem = format!("{}_acs{}", clip.name, t.id());
                    let (wav, csv) = (dir.join(format!("{stem}.wav")), dir.join(format!("{stem}.csv")));
                    write_wav(&c, &wav)?;
                    write_annotation(&a, &csv)?;
                    Ok(ManifestEntry { split: Split::Train, wav, csv })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Manifest { entries: expanded.into_iter().flatten().collect() };
    out.entries.extend(manifest.entries.iter().filter(|e| e.split != Split::Train).cloned());
    out.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(out)
}

/// In-memory ACS expansion of labeled clips.
pub fn acs_expand_clips(clips: &[LabeledClip], geom: &ArrayGeometry) -> Result<Vec<LabeledClip>> {
    let transforms = AcsTransform::all(geom)?;
    let mut out = Vec::with_capacity(clips.len() * transforms.len());
    for c in clips {
        for t in &transforms {
            let (clip, annotation) = apply_acs(&c.clip, &c.annotation, t)?;
            out.push(LabeledClip { name: format!("{}_acs{}", c.name, t.id()), clip, annotation });
        }
    }
    Ok(out)
}
