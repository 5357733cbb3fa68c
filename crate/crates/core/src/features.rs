//! Feature recipes, per-clip caches, stack assembly and the feature dump
//! container.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::MultichannelClip;
use crate::dsp::{self, FeaturePlane, PlaneKind, SpectroTensor};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, MicPair, SteeringModel, DEFAULT_PAIRS, NUM_MICS};
use crate::regionfeat::{AngleGrid, DirectionalField, RegionQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub pairs: Vec<MicPair>,
    pub fov_resolution: f64,
    pub gcc_max_lag: usize,
    pub steering: SteeringModel,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_fft: dsp::DEFAULT_N_FFT,
            hop: dsp::DEFAULT_HOP,
            pairs: DEFAULT_PAIRS.to_vec(),
            fov_resolution: 5.0,
            gcc_max_lag: 16,
            steering: SteeringModel::Geometric,
        }
    }
}

impl FeatureConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Pairs that carry information; the self pair has an identically zero
    /// IPD and GCC lag and is skipped for those planes.
    pub fn informative_pairs(&self) -> Vec<MicPair> {
        self.pairs.iter().copied().filter(|p| !p.is_self_pair()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 4 {
            return Err(Error::invalid(format!("n_fft {} must be a power of two ≥ 4", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::invalid(format!("hop {} outside [1, n_fft]", self.hop)));
        }
        if self.pairs.is_empty() {
            return Err(Error::invalid("at least one mic pair is required"));
        }
        if let Some(p) = self.pairs.iter().find(|p| p.first >= NUM_MICS || p.second >= NUM_MICS) {
            return Err(Error::invalid(format!("mic pair ({}, {}) out of range", p.first, p.second)));
        }
        if self.gcc_max_lag == 0 || self.gcc_max_lag > self.n_fft / 2 {
            return Err(Error::invalid(format!("gcc_max_lag {} outside [1, n_fft/2]", self.gcc_max_lag)));
        }
        AngleGrid::new(self.fov_resolution)?;
        Ok(())
    }
}

/// Ordered list of feature kinds, e.g. `lps,ipd,df`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureRecipe {
    kinds: Vec<PlaneKind>,
}

impl FeatureRecipe {
    pub fn new(kinds: Vec<PlaneKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::invalid("feature recipe is empty"));
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(Error::invalid(format!("feature kind {k} listed twice")));
            }
        }
        if kinds == [PlaneKind::Embed] {
            return Err(Error::invalid("a learned embedding needs at least one computed plane"));
        }
        Ok(Self { kinds })
    }

    pub fn kinds(&self) -> &[PlaneKind] {
        &self.kinds
    }

    pub fn has(&self, kind: PlaneKind) -> bool {
        self.kinds.contains(&kind)
    }

    pub fn has_embedding(&self) -> bool {
        self.has(PlaneKind::Embed)
    }

    /// Whether the stack depends on the query.
    pub fn uses_query(&self) -> bool {
        self.has(PlaneKind::Df) || self.has(PlaneKind::Fov) || self.has_embedding()
    }

    /// Kind of each computed plane, in stack order. The learned embedding is
    /// appended by the model and is not part of the computed stack.
    pub fn plane_kinds(&self, cfg: &FeatureConfig) -> Vec<PlaneKind> {
        let pairs = cfg.informative_pairs().len();
        let mut out = Vec::new();
        for &k in &self.kinds {
            let n = match k {
                PlaneKind::Lps => NUM_MICS,
                PlaneKind::Ipd | PlaneKind::GccPhat => pairs,
                PlaneKind::Df | PlaneKind::Fov => 1,
                PlaneKind::Embed => 0,
            };
            out.extend(std::iter::repeat_n(k, n));
        }
        out
    }

    /// Input channel count the model sees, embedding plane included.
    pub fn model_channels(&self, cfg: &FeatureConfig) -> usize {
        self.plane_kinds(cfg).len() + usize::from(self.has_embedding())
    }
}

impl fmt::Display for FeatureRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FeatureRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split(['+', ','])
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<PlaneKind>>>()?;
        Self::new(kinds)
    }
}

impl TryFrom<String> for FeatureRecipe {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureRecipe> for String {
    fn from(r: FeatureRecipe) -> String {
        r.to_string()
    }
}

/// `k × T × F` real feature stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub kinds: Vec<PlaneKind>,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl FeatureStack {
    pub fn new(kinds: Vec<PlaneKind>, frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if kinds.is_empty() || frames == 0 || bins == 0 {
            return Err(Error::Shape("feature stack must be non-empty".into()));
        }
        if data.len() != kinds.len() * frames * bins {
            return Err(Error::Shape(format!(
                "{} values for a {}x{frames}x{bins} stack",
                data.len(),
                kinds.len()
            )));
        }
        Ok(Self { kinds, frames, bins, data })
    }

    pub fn from_planes(planes: Vec<FeaturePlane>) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::Shape("no planes".into()))?;
        let (frames, bins) = (first.frames, first.bins);
        if planes.iter().any(|p| p.frames != frames || p.bins != bins) {
            return Err(Error::Shape("planes differ in shape".into()));
        }
        let kinds = planes.iter().map(|p| p.kind).collect();
        let data = planes.into_iter().flat_map(|p| p.values).collect();
        Self::new(kinds, frames, bins, data)
    }

    pub fn channels(&self) -> usize {
        self.kinds.len()
    }

    pub fn plane(&self, index: usize) -> &[f64] {
        let size = self.frames * self.bins;
        &self.data[index * size..(index + 1) * size]
    }
}

/// Query-independent features of a whole clip, stored in single precision.
#[derive(Debug, Clone)]
pub struct ClipFeatures {
    frames: usize,
    bins: usize,
    n_fft: usize,
    lps: Vec<Vec<f32>>,
    /// IPD for each configured pair, self pairs included as zeros.
    ipd: Vec<Vec<f32>>,
    /// GCC-PHAT per informative pair, resampled to `bins` columns.
    gcc: Vec<Vec<f32>>,
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

impl ClipFeatures {
    pub fn compute(clip: &MultichannelClip, cfg: &FeatureConfig, with_gcc: bool) -> Result<Self> {
        cfg.validate()?;
        clip.require_channels(NUM_MICS)?;
        let spec = dsp::stft(clip, cfg.n_fft, cfg.hop)?;
        Self::from_spectrum(&spec, cfg, with_gcc)
    }

    pub fn from_spectrum(spec: &SpectroTensor, cfg: &FeatureConfig, with_gcc: bool) -> Result<Self> {
        let (frames, bins) = (spec.frames(), spec.freqs());
        let lps = (0..NUM_MICS).map(|c| dsp::lps(spec, c).map(|p| to_f32(&p.values))).collect::<Result<_>>()?;
        let ipd = cfg
            .pairs
            .iter()
            .map(|&p| {
                if p.is_self_pair() {
                    Ok(vec![0.0; frames * bins])
                } else {
                    dsp::ipd(spec, p).map(|pl| to_f32(&pl.values))
                }
            })
            .collect::<Result<_>>()?;
        let gcc = if with_gcc {
            cfg.informative_pairs()
                .into_iter()
                .map(|p| dsp::gcc_phat(spec, p, cfg.gcc_max_lag).map(|g| to_f32(&g.resample_bins(bins).values)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self { frames, bins, n_fft: spec.n_fft(), lps, ipd, gcc })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn has_gcc(&self) -> bool {
        !self.gcc.is_empty()
    }

    fn crop(values: &[f32], bins: usize, start: usize, len: usize) -> impl Iterator<Item = f64> + '_ {
        values[start * bins..(start + len) * bins].iter().map(|&v| f64::from(v))
    }

    /// Builds the computed stack for frames `[start, start + len)`.
    pub fn assemble(
        &self,
        cfg: &FeatureConfig,
        geom: &ArrayGeometry,
        recipe: &FeatureRecipe,
        start: usize,
        len: usize,
        query: Option<&RegionQuery>,
    ) -> Result<FeatureStack> {
        if len == 0 || start + len > self.frames {
            return Err(Error::invalid(format!("crop [{start}, {}) outside {} frames", start + len, self.frames)));
        }
        let bins = self.bins;
        let plane_kinds = recipe.plane_kinds(cfg);
        let mut data = Vec::with_capacity(plane_kinds.len() * len * bins);
        let informative: Vec<usize> = (0..cfg.pairs.len()).filter(|&i| !cfg.pairs[i].is_self_pair()).collect();
        let field = if recipe.has(PlaneKind::Df) || recipe.has(PlaneKind::Fov) {
            let planes = self
                .ipd
                .iter()
                .map(|v| FeaturePlane::new(PlaneKind::Ipd, len, bins, Self::crop(v, bins, start, len).collect()))
                .collect::<Result<Vec<_>>>()?;
            Some(DirectionalField::from_ipd(&planes, self.n_fft, geom, &cfg.pairs, cfg.steering)?)
        } else {
            None
        };
        for &kind in recipe.kinds() {
            match kind {
                PlaneKind::Lps => self.lps.iter().for_each(|v| data.extend(Self::crop(v, bins, start, len))),
                PlaneKind::Ipd => informative.iter().for_each(|&i| data.extend(Self::crop(&self.ipd[i], bins, start, len))),
                PlaneKind::GccPhat => {
                    if !self.has_gcc() {
                        return Err(Error::invalid("GCC-PHAT planes were not computed for this clip"));
                    }
                    self.gcc.iter().for_each(|v| data.extend(Self::crop(v, bins, start, len)));
                }
                PlaneKind::Df => {
                    let Some(RegionQuery::Angular(region)) = query else {
                        return Err(Error::invalid("the directional feature needs an angular query"));
                    };
                    data.extend(field.as_ref().expect("field built").evaluate(region.middle()).values);
                }
                PlaneKind::Fov => {
                    let Some(RegionQuery::Angular(region)) = query else {
                        return Err(Error::invalid("the FOV feature needs an angular query"));
                    };
                    let grid = AngleGrid::new(cfg.fov_resolution)?;
                    data.extend(field.as_ref().expect("field built").fov(region, &grid).values);
                }
                PlaneKind::Embed => {
                    if query.is_none() {
                        return Err(Error::invalid("a learned embedding needs a query"));
                    }
                }
            }
        }
        FeatureStack::new(plane_kinds, len, bins, data)
    }
}

/// Full-clip feature stack for one query.
pub fn extract_features(
    clip: &MultichannelClip,
    cfg: &FeatureConfig,
    geom: &ArrayGeometry,
    recipe: &FeatureRecipe,
    query: Option<&RegionQuery>,
) -> Result<FeatureStack> {
    let cache = ClipFeatures::compute(clip, cfg, recipe.has(PlaneKind::GccPhat))?;
    cache.assemble(cfg, geom, recipe, 0, cache.frames(), query)
}

// ---------------------------------------------------------------------------
// Feature dump container
//
//   magic "RTFD" | u32 version | u32 k | u32 frames | u32 bins
//   | k kind codes (u8) | k·frames·bins f32, little endian

pub const DUMP_MAGIC: &[u8; 4] = b"RTFD";
pub const DUMP_VERSION: u32 = 1;
const DUMP_MAX_VALUES: usize = 1 << 30;

pub fn encode_feature_dump(stack: &FeatureStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + stack.kinds.len() + 4 * stack.data.len());
    out.extend_from_slice(DUMP_MAGIC);
    for v in [DUMP_VERSION, stack.kinds.len() as u32, stack.frames as u32, stack.bins as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(stack.kinds.iter().map(|k| k.code()));
    for &v in &stack.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_dump(bytes: &[u8]) -> Result<FeatureStack> {
    let err = |msg: String| Error::format("feature dump", msg);
    if bytes.len() < 20 || &bytes[..4] != DUMP_MAGIC {
        return Err(err("missing RTFD header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (version, k, frames, bins) = (word(0), word(1), word(2), word(3));
    if version != DUMP_VERSION as usize {
        return Err(err(format!("unsupported version {version}")));
    }
    let count = k
        .checked_mul(frames)
        .and_then(|v| v.checked_mul(bins))
        .filter(|&v| v <= DUMP_MAX_VALUES)
        .ok_or_else(|| err("dimensions too large".into()))?;
    let body = &bytes[20..];
    if body.len() != k + 4 * count {
        return Err(err(format!("expected {} payload bytes, found {}", k + 4 * count, body.len())));
    }
    let kinds = body[..k]
        .iter()
        .map(|&c| PlaneKind::from_code(c).ok_or_else(|| err(format!("unknown plane kind code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<f64> = body[k..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(err("non-finite value".into()));
    }
    FeatureStack::new(kinds, frames, bins, data).map_err(|e| err(e.to_string()))
}
