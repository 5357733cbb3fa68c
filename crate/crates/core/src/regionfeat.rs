//! Query regions and the positional features that condition the tagger:
//! directional features (DF) and field-of-view (FOV) features.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::dsp::{self, FeaturePlane, PlaneKind, SpectroTensor};
use crate::error::{Error, Result};
use crate::geometry::{self, wrap_azimuth, ArrayGeometry, DirectionOfArrival, MicPair, SteeringModel};

const ANGLE_EPS: f64 = 1e-9;

/// A horizontal span traversed counterclockwise from `begin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularRegion {
    begin: f64,
    width: f64,
}

impl AngularRegion {
    /// Span from `begin` to `end` (degrees, counterclockwise). `end − begin`
    /// equal to a nonzero multiple of 360 is the full circle.
    pub fn new(begin: f64, end: f64) -> Result<Self> {
        if !begin.is_finite() || !end.is_finite() {
            return Err(Error::invalid("region bounds must be finite"));
        }
        let diff = end - begin;
        let mut width = diff.rem_euclid(360.0);
        if width.abs() < ANGLE_EPS || (360.0 - width).abs() < ANGLE_EPS {
            if diff.abs() < ANGLE_EPS {
                return Err(Error::invalid("region has zero width"));
            }
            width = 360.0;
        }
        Ok(Self { begin: wrap_azimuth(begin), width })
    }

    /// Span of `width` degrees centered on `center`.
    pub fn centered(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= 360.0) {
            return Err(Error::invalid(format!("region width {width} outside (0, 360]")));
        }
        if !center.is_finite() {
            return Err(Error::invalid("region center must be finite"));
        }
        Ok(Self { begin: wrap_azimuth(center - width / 2.0), width })
    }

    pub fn full_circle() -> Self {
        Self { begin: -180.0, width: 360.0 }
    }

    pub fn begin(&self) -> f64 {
        self.begin
    }

    pub fn end(&self) -> f64 {
        wrap_azimuth(self.begin + self.width)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn is_full_circle(&self) -> bool {
        self.width >= 360.0
    }

    /// Middle angle of the span, wrapped.
    pub fn middle(&self) -> f64 {
        wrap_azimuth(self.begin + self.width / 2.0)
    }

    fn offset(&self, azimuth: f64) -> f64 {
        (wrap_azimuth(azimuth) - self.begin).rem_euclid(360.0)
    }

    /// Inclusive on both boundaries.
    pub fn contains(&self, azimuth: f64) -> bool {
        if self.is_full_circle() {
            return true;
        }
        let off = self.offset(azimuth);
        off <= self.width + ANGLE_EPS || off >= 360.0 - ANGLE_EPS
    }

    /// Inclusive at `begin`, exclusive at `end`, so adjacent tiles partition the circle.
    pub fn contains_half_open(&self, azimuth: f64) -> bool {
        if self.is_full_circle() {
            return true;
        }
        let off = self.offset(azimuth);
        let off = if off >= 360.0 - ANGLE_EPS { 0.0 } else { off };
        off < self.width - ANGLE_EPS
    }

    /// Angular length of the intersection of two spans.
    pub fn overlap(&self, other: &AngularRegion) -> f64 {
        if self.is_full_circle() {
            return other.width;
        }
        if other.is_full_circle() {
            return self.width;
        }
        // intersect [0, w1) with the other span shifted into self's frame, on both turns
        let start = (other.begin - self.begin).rem_euclid(360.0);
        [start - 360.0, start, start + 360.0]
            .iter()
            .map(|&s| (self.width.min(s + other.width) - s.max(0.0)).max(0.0))
            .sum::<f64>()
            .min(self.width.min(other.width))
    }
}

impl fmt::Display for AngularRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.begin, self.begin + self.width)
    }
}

/// Parses `begin:end` in degrees, e.g. `-30:30` or `150:-150`.
impl FromStr for AngularRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("region {s:?} is not `begin:end`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("region bound {v:?}: {e}")))
        };
        AngularRegion::new(parse(a)?, parse(b)?)
    }
}

/// What part of the scene the tagger is asked about.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RegionQuery {
    Angular(AngularRegion),
    Distance(f64),
}

impl RegionQuery {
    pub fn distance(d: f64) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::invalid(format!("query distance {d} must be positive")));
        }
        Ok(RegionQuery::Distance(d))
    }
}

pub fn region_contains(query: &AngularRegion, azimuth: f64) -> bool {
    query.contains(azimuth)
}

/// Azimuths `−180, −180 + r, …` covering the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    resolution: f64,
    angles: Vec<f64>,
}

impl AngleGrid {
    pub fn new(resolution: f64) -> Result<Self> {
        let steps = 360.0 / resolution;
        if resolution.is_nan() || resolution <= 0.0 || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!("resolution {resolution} does not divide 360")));
        }
        let n = steps.round() as usize;
        let angles = (0..n).map(|i| -180.0 + i as f64 * resolution).collect();
        Ok(Self { resolution, angles })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self::new(5.0).expect("5 divides 360")
    }
}

/// Cached per-pair IPD (as cos/sin) for repeated DF evaluation.
///
/// Evaluating one azimuth costs one pass over the cached planes; the STFT and
/// IPD are never recomputed.
#[derive(Debug)]
pub struct DirectionalField {
    geom: ArrayGeometry,
    pairs: Vec<MicPair>,
    steering: SteeringModel,
    n_fft: usize,
    frames: usize,
    bins: usize,
    cos_ipd: Vec<Vec<f64>>,
    sin_ipd: Vec<Vec<f64>>,
    evaluations: AtomicUsize,
}

impl DirectionalField {
    pub fn new(spec: &SpectroTensor, geom: &ArrayGeometry, pairs: &[MicPair], steering: SteeringModel) -> Result<Self> {
        let planes = pairs.iter().map(|&p| dsp::ipd(spec, p)).collect::<Result<Vec<_>>>()?;
        Self::from_ipd(&planes, spec.n_fft(), geom, pairs, steering)
    }

    /// Builds the field from precomputed IPD planes, one per pair.
    pub fn from_ipd(
        ipd: &[FeaturePlane],
        n_fft: usize,
        geom: &ArrayGeometry,
        pairs: &[MicPair],
        steering: SteeringModel,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("directional features need at least one mic pair"));
        }
        if ipd.len() != pairs.len() {
            return Err(Error::Shape(format!("{} IPD planes for {} pairs", ipd.len(), pairs.len())));
        }
        let (frames, bins) = (ipd[0].frames, ipd[0].bins);
        if ipd.iter().any(|p| p.frames != frames || p.bins != bins) || bins != n_fft / 2 + 1 {
            return Err(Error::Shape("IPD planes disagree in shape".into()));
        }
        Ok(Self {
            geom: geom.clone(),
            pairs: pairs.to_vec(),
            steering,
            n_fft,
            frames,
            bins,
            cos_ipd: ipd.iter().map(|p| p.values.iter().map(|v| v.cos()).collect()).collect(),
            sin_ipd: ipd.iter().map(|p| p.values.iter().map(|v| v.sin()).collect()).collect(),
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn pairs(&self) -> &[MicPair] {
        &self.pairs
    }

    /// Number of [`DirectionalField::evaluate`] calls so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// `Σ_n cos(IPD_n − P_n(θ))` per bin, at elevation 0.
    pub fn evaluate(&self, azimuth: f64) -> FeaturePlane {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let doa = DirectionOfArrival::horizontal(azimuth);
        let mut values = vec![0.0; self.frames * self.bins];
        for (n, &pair) in self.pairs.iter().enumerate() {
            let delay = geometry::steering_delay(&self.geom, pair, doa, self.steering);
            let (cp, sp): (Vec<f64>, Vec<f64>) = (0..self.bins)
                .map(|k| {
                    let phase = 2.0 * PI * geometry::bin_frequency(k, self.n_fft, self.geom.sample_rate()) * delay;
                    (phase.cos(), phase.sin())
                })
                .unzip();
            let (ci, si) = (&self.cos_ipd[n], &self.sin_ipd[n]);
            for t in 0..self.frames {
                let row = t * self.bins;
                for k in 0..self.bins {
                    values[row + k] += ci[row + k] * cp[k] + si[row + k] * sp[k];
                }
            }
        }
        FeaturePlane { kind: PlaneKind::Df, frames: self.frames, bins: self.bins, values }
    }

    /// FOV plane for `region` over `grid`: `F_in` where the in-view maximum
    /// strictly beats the out-of-view maximum, `−1` elsewhere.
    pub fn fov(&self, region: &AngularRegion, grid: &AngleGrid) -> FeaturePlane {
        let size = self.frames * self.bins;
        let mut f_in = vec![f64::NEG_INFINITY; size];
        let mut f_out = vec![f64::NEG_INFINITY; size];
        for &angle in grid.angles() {
            let df = self.evaluate(angle);
            let target = if region.contains(angle) { &mut f_in } else { &mut f_out };
            for (m, v) in target.iter_mut().zip(&df.values) {
                if *v > *m {
                    *m = *v;
                }
            }
        }
        let values = f_in
            .iter()
            .zip(&f_out)
            .map(|(&i, &o)| if i > o { i } else { -1.0 })
            .collect();
        FeaturePlane { kind: PlaneKind::Fov, frames: self.frames, bins: self.bins, values }
    }
}

/// Directional feature for a single hypothesized azimuth.
pub fn directional_feature(
    spec: &SpectroTensor,
    geom: &ArrayGeometry,
    pairs: &[MicPair],
    azimuth: f64,
) -> Result<FeaturePlane> {
    Ok(DirectionalField::new(spec, geom, pairs, SteeringModel::Geometric)?.evaluate(azimuth))
}

/// Field-of-view feature for an angular query.
pub fn fov_feature(
    spec: &SpectroTensor,
    geom: &ArrayGeometry,
    pairs: &[MicPair],
    query: &AngularRegion,
    grid: &AngleGrid,
) -> Result<FeaturePlane> {
    Ok(DirectionalField::new(spec, geom, pairs, SteeringModel::Geometric)?.fov(query, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MultichannelClip;
    use crate::dsp::stft;
    use crate::geometry::{default_tetrahedral_geometry, DEFAULT_PAIRS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_spec(seed: u64) -> SpectroTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = (0..4).map(|_| (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        stft(&MultichannelClip::new(channels, 24_000).unwrap(), 512, 256).unwrap()
    }

    #[test]
    fn region_membership_examples() {
        let r = AngularRegion::new(-30.0, 30.0).unwrap();
        assert!(region_contains(&r, 0.0));
        assert!(region_contains(&r, 30.0));
        assert!(region_contains(&r, -30.0));
        assert!(!region_contains(&r, 30.001));
        let seam = AngularRegion::new(150.0, -150.0).unwrap();
        assert_eq!(seam.width(), 60.0);
        assert!(region_contains(&seam, 175.0));
        assert!(region_contains(&seam, -175.0));
        assert!(region_contains(&seam, 180.0));
        assert!(!region_contains(&seam, 0.0));
        assert_eq!(seam.middle(), -180.0);
    }

    #[test]
    fn region_parsing_wraps() {
        let a: AngularRegion = "-30:30".parse().unwrap();
        let b: AngularRegion = "330:390".parse().unwrap();
        assert_eq!(a, b);
        let full: AngularRegion = "-180:180".parse().unwrap();
        assert!(full.is_full_circle());
        assert!("10:10".parse::<AngularRegion>().is_err());
        assert!("10".parse::<AngularRegion>().is_err());
        assert!("a:b".parse::<AngularRegion>().is_err());
        assert!(RegionQuery::distance(0.0).is_err());
    }

    #[test]
    fn half_open_tiles_partition_the_circle() {
        let tiles: Vec<_> = (0..6).map(|i| AngularRegion::new(-180.0 + 60.0 * i as f64, -120.0 + 60.0 * i as f64).unwrap()).collect();
        for az in (-1800..1800).map(|a| a as f64 * 0.1) {
            assert_eq!(tiles.iter().filter(|t| t.contains_half_open(az)).count(), 1, "az {az}");
        }
    }

    #[test]
    fn overlap_of_centered_regions() {
        let a = AngularRegion::centered(10.0, 60.0).unwrap();
        let b = AngularRegion::centered(25.0, 60.0).unwrap();
        assert!((a.overlap(&b) - 45.0).abs() < 1e-9);
        let c = AngularRegion::centered(175.0, 60.0).unwrap();
        let d = AngularRegion::centered(-175.0, 60.0).unwrap();
        assert!((c.overlap(&d) - 50.0).abs() < 1e-9);
        let e = AngularRegion::centered(100.0, 60.0).unwrap();
        assert_eq!(a.overlap(&e), 0.0);
    }

    #[test]
    fn grid_and_inclusive_span() {
        let grid = AngleGrid::default();
        assert_eq!(grid.angles().len(), 72);
        let r = AngularRegion::new(-30.0, 30.0).unwrap();
        assert_eq!(grid.angles().iter().filter(|&&a| r.contains(a)).count(), 13);
        assert!(AngleGrid::new(7.0).is_err());
    }

    #[test]
    fn self_pair_df_is_one() {
        let spec = noise_spec(1);
        let g = default_tetrahedral_geometry();
        let df = directional_feature(&spec, &g, &[DEFAULT_PAIRS[0]], 42.0).unwrap();
        assert!(df.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn df_is_bounded_by_pair_count() {
        let spec = noise_spec(2);
        let g = default_tetrahedral_geometry();
        for az in [-170.0, -20.0, 95.0] {
            let df = directional_feature(&spec, &g, &DEFAULT_PAIRS, az).unwrap();
            assert!(df.values.iter().all(|&v| (-4.0 - 1e-9..=4.0 + 1e-9).contains(&v)));
        }
    }

    #[test]
    fn df_ignores_full_turns_of_ipd() {
        let spec = noise_spec(3);
        let g = default_tetrahedral_geometry();
        let pairs = &DEFAULT_PAIRS[1..];
        let planes: Vec<_> = pairs.iter().map(|&p| dsp::ipd(&spec, p).unwrap()).collect();
        let mut shifted = planes.clone();
        for (i, v) in shifted[1].values.iter_mut().enumerate() {
            *v += 2.0 * PI * (i % 3) as f64;
        }
        let a = DirectionalField::from_ipd(&planes, 512, &g, pairs, SteeringModel::Geometric).unwrap().evaluate(33.0);
        let b = DirectionalField::from_ipd(&shifted, 512, &g, pairs, SteeringModel::Geometric).unwrap().evaluate(33.0);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn df_matches_cosine_definition() {
        let spec = noise_spec(4);
        let g = default_tetrahedral_geometry();
        let df = directional_feature(&spec, &g, &DEFAULT_PAIRS, -65.0).unwrap();
        let doa = DirectionOfArrival::horizontal(-65.0);
        for (t, k) in [(0, 0), (3, 17), (10, 200), (14, 256)] {
            let expected: f64 = DEFAULT_PAIRS
                .iter()
                .map(|&p| {
                    let x = spec.get(p.first, t, k);
                    let y = spec.get(p.second, t, k);
                    (x.arg() - y.arg() - geometry::target_phase(&g, p, doa, k, 512)).cos()
                })
                .sum();
            assert!((df.get(t, k) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn fov_full_circle_is_f_in() {
        let spec = noise_spec(5);
        let g = default_tetrahedral_geometry();
        let field = DirectionalField::new(&spec, &g, &DEFAULT_PAIRS, SteeringModel::Geometric).unwrap();
        let grid = AngleGrid::default();
        let fov = field.fov(&AngularRegion::full_circle(), &grid);
        assert_eq!(field.evaluations(), 72);
        let all: Vec<_> = grid.angles().iter().map(|&a| field.evaluate(a)).collect();
        for i in 0..fov.values.len() {
            let max = all.iter().map(|p| p.values[i]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(fov.values[i], max);
        }
    }

    #[test]
    fn fov_values_are_grid_df_values_or_minus_one() {
        let spec = noise_spec(6);
        let g = default_tetrahedral_geometry();
        let field = DirectionalField::new(&spec, &g, &DEFAULT_PAIRS, SteeringModel::Geometric).unwrap();
        let grid = AngleGrid::default();
        let region = AngularRegion::new(150.0, -150.0).unwrap();
        let fov = field.fov(&region, &grid);
        let all: Vec<_> = grid.angles().iter().map(|&a| field.evaluate(a)).collect();
        let mut minus_one = 0;
        for i in 0..fov.values.len() {
            let v = fov.values[i];
            let (mut fin, mut fout) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (a, p) in grid.angles().iter().zip(&all) {
                if region.contains(*a) {
                    fin = fin.max(p.values[i]);
                } else {
                    fout = fout.max(p.values[i]);
                }
            }
            if fin <= fout {
                assert_eq!(v, -1.0);
                minus_one += 1;
            } else {
                assert_eq!(v, fin);
                assert!(all.iter().any(|p| p.values[i] == v));
            }
        }
        assert!(minus_one > 0);
    }
}
