//! Tetrahedral array geometry and the far-field steering model.
//!
//! Coordinates are array-centered, in meters. Azimuth is measured
//! counterclockwise from +x towards +y, elevation upwards from the xy-plane.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_MICS: usize = 4;
pub const DEFAULT_SOUND_SPEED: f64 = 343.0;
pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;
pub const DEFAULT_RADIUS: f64 = 0.042;

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Wraps an azimuth in degrees into `[-180, 180)`.
pub fn wrap_azimuth(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Unit vector pointing from the array towards `(azimuth, elevation)` in degrees.
pub fn unit_vector(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionOfArrival {
    azimuth: f64,
    elevation: f64,
}

impl DirectionOfArrival {
    /// Azimuth is wrapped into `[-180, 180)`; elevation must lie in `[-90, 90]`.
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !azimuth.is_finite() || !elevation.is_finite() {
            return Err(Error::invalid("direction must be finite"));
        }
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(Error::invalid(format!("elevation {elevation} outside [-90, 90]")));
        }
        Ok(Self { azimuth: wrap_azimuth(azimuth), elevation })
    }

    /// Horizontal direction (elevation 0).
    pub fn horizontal(azimuth: f64) -> Self {
        Self { azimuth: wrap_azimuth(azimuth), elevation: 0.0 }
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn unit_vector(&self) -> Vec3 {
        unit_vector(self.azimuth, self.elevation)
    }
}

/// An ordered pair of microphone indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MicPair {
    pub first: usize,
    pub second: usize,
}

/// The pairs used for IPD and directional features.
pub const DEFAULT_PAIRS: [MicPair; 4] = [
    MicPair { first: 0, second: 0 },
    MicPair { first: 0, second: 1 },
    MicPair { first: 0, second: 2 },
    MicPair { first: 0, second: 3 },
];

impl MicPair {
    pub fn new(first: usize, second: usize) -> Result<Self> {
        if first >= NUM_MICS || second >= NUM_MICS {
            return Err(Error::invalid(format!("mic pair ({first}, {second}) out of range")));
        }
        Ok(Self { first, second })
    }

    pub fn swapped(self) -> Self {
        Self { first: self.second, second: self.first }
    }

    pub fn is_self_pair(self) -> bool {
        self.first == self.second
    }
}

/// Which formula turns a hypothesized azimuth into a per-pair phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SteeringModel {
    /// Projection of the pair baseline onto the arrival direction.
    #[default]
    Geometric,
    /// `2π f φ cos(θ) f_s / c`, exact only for pairs lying on the x-axis.
    LiteralPlanar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mic_positions: [Vec3; NUM_MICS],
    sound_speed: f64,
    sample_rate: u32,
}

impl ArrayGeometry {
    pub fn new(mic_positions: [Vec3; NUM_MICS], sound_speed: f64, sample_rate: u32) -> Result<Self> {
        if mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mic positions must be finite"));
        }
        let mut centroid = [0.0; 3];
        for p in &mic_positions {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / NUM_MICS as f64;
            }
        }
        if norm(centroid) > 1e-9 {
            return Err(Error::invalid(format!("mic centroid {centroid:?} is not the origin")));
        }
        if !(sound_speed.is_finite() && sound_speed > 0.0) {
            return Err(Error::invalid("sound speed must be positive"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self { mic_positions, sound_speed, sample_rate })
    }

    pub fn mic_positions(&self) -> &[Vec3; NUM_MICS] {
        &self.mic_positions
    }

    pub fn mic(&self, index: usize) -> Vec3 {
        self.mic_positions[index]
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Distance between the two microphones of `pair`.
    pub fn pair_distance(&self, pair: MicPair) -> f64 {
        norm(self.baseline(pair))
    }

    fn baseline(&self, pair: MicPair) -> Vec3 {
        sub(self.mic_positions[pair.first], self.mic_positions[pair.second])
    }

    /// Parses the key-value text format written by [`ArrayGeometry::to_config`].
    pub fn from_config(text: &str) -> Result<Self> {
        let mut mics: [Option<Vec3>; NUM_MICS] = [None; NUM_MICS];
        let mut sound_speed = DEFAULT_SOUND_SPEED;
        let mut sample_rate = DEFAULT_SAMPLE_RATE;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: "geometry".into(), line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "sound_speed" => {
                    sound_speed = value.parse().map_err(|e| parse_err(format!("sound_speed: {e}")))?;
                }
                "sample_rate" => {
                    sample_rate = value.parse().map_err(|e| parse_err(format!("sample_rate: {e}")))?;
                }
                _ => {
                    let index = key
                        .strip_prefix("mic")
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&i| i < NUM_MICS)
                        .ok_or_else(|| parse_err(format!("unknown key {key:?}")))?;
                    let coords = value
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(f64::from_str)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| parse_err(format!("{key}: {e}")))?;
                    if coords.len() != 3 {
                        return Err(parse_err(format!("{key}: expected 3 coordinates, got {}", coords.len())));
                    }
                    mics[index] = Some([coords[0], coords[1], coords[2]]);
                }
            }
        }
        let mut positions = [[0.0; 3]; NUM_MICS];
        for (i, m) in mics.iter().enumerate() {
            positions[i] = m.ok_or_else(|| Error::format("geometry", format!("missing mic{i}")))?;
        }
        Self::new(positions, sound_speed, sample_rate)
    }

    pub fn to_config(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.mic_positions.iter().enumerate() {
            let _ = writeln!(out, "mic{i} = {:?} {:?} {:?}", p[0], p[1], p[2]);
        }
        let _ = writeln!(out, "sound_speed = {:?}", self.sound_speed);
        let _ = writeln!(out, "sample_rate = {}", self.sample_rate);
        out
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        default_tetrahedral_geometry()
    }
}

/// Four capsules on a 4.2 cm sphere at (45°, 35°), (−45°, −35°), (135°, −35°)
/// and (−135°, 35°).
pub fn default_tetrahedral_geometry() -> ArrayGeometry {
    const DIRS: [(f64, f64); NUM_MICS] = [(45.0, 35.0), (-45.0, -35.0), (135.0, -35.0), (-135.0, 35.0)];
    let mut positions = [[0.0; 3]; NUM_MICS];
    for (p, &(az, el)) in positions.iter_mut().zip(DIRS.iter()) {
        let u = unit_vector(az, el);
        *p = [DEFAULT_RADIUS * u[0], DEFAULT_RADIUS * u[1], DEFAULT_RADIUS * u[2]];
    }
    ArrayGeometry::new(positions, DEFAULT_SOUND_SPEED, DEFAULT_SAMPLE_RATE)
        .expect("canonical geometry is valid")
}

/// Time by which mic `pair.first` leads mic `pair.second` for a far-field
/// source in direction `doa`, in seconds.
pub fn pair_delay(geom: &ArrayGeometry, pair: MicPair, doa: DirectionOfArrival) -> f64 {
    dot(geom.baseline(pair), doa.unit_vector()) / geom.sound_speed
}

/// Physical frequency in Hz of STFT bin `freq_bin`.
pub fn bin_frequency(freq_bin: usize, n_fft: usize, sample_rate: u32) -> f64 {
    freq_bin as f64 * sample_rate as f64 / n_fft as f64
}

/// Expected inter-channel phase difference at `freq_bin` for a source at `doa`.
pub fn target_phase(geom: &ArrayGeometry, pair: MicPair, doa: DirectionOfArrival, freq_bin: usize, n_fft: usize) -> f64 {
    2.0 * PI * bin_frequency(freq_bin, n_fft, geom.sample_rate) * pair_delay(geom, pair, doa)
}

/// `2π f φ cos(θ) f_s / c` with `f = freq_bin / n_fft`. Ignores elevation and
/// the pair's orientation.
pub fn target_phase_literal(geom: &ArrayGeometry, pair: MicPair, azimuth_deg: f64, freq_bin: usize, n_fft: usize) -> f64 {
    let f = freq_bin as f64 / n_fft as f64;
    2.0 * PI * f * geom.pair_distance(pair) * azimuth_deg.to_radians().cos() * geom.sample_rate as f64 / geom.sound_speed
}

/// Per-pair delay under the chosen steering model, in seconds.
pub(crate) fn steering_delay(geom: &ArrayGeometry, pair: MicPair, doa: DirectionOfArrival, model: SteeringModel) -> f64 {
    match model {
        SteeringModel::Geometric => pair_delay(geom, pair, doa),
        SteeringModel::LiteralPlanar => geom.pair_distance(pair) * doa.azimuth().to_radians().cos() / geom.sound_speed,
    }
}
