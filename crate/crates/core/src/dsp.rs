//! STFT and the spectral/spatial feature planes: LPS, IPD and GCC-PHAT.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultichannelClip;
use crate::error::{Error, Result};
use crate::geometry::MicPair;

pub const DEFAULT_N_FFT: usize = 512;
pub const DEFAULT_HOP: usize = 256;
/// Floor inside the LPS logarithm and the PHAT denominator.
pub const SPECTRAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => hann_window(n),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

/// Complex spectrogram, `channels × frames × bins`, bins `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroTensor {
    bins: Vec<Complex64>,
    channels: usize,
    frames: usize,
    freqs: usize,
    n_fft: usize,
    hop: usize,
    sample_rate: u32,
}

impl SpectroTensor {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn freqs(&self) -> usize {
        self.freqs
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.bins[(channel * self.frames + frame) * self.freqs + bin]
    }

    /// All bins of one frame of one channel.
    pub fn frame(&self, channel: usize, frame: usize) -> &[Complex64] {
        let start = (channel * self.frames + frame) * self.freqs;
        &self.bins[start..start + self.freqs]
    }

    /// Frames `[start, start + len)` of every channel.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<SpectroTensor> {
        if len == 0 || start + len > self.frames {
            return Err(Error::invalid(format!("frame range [{start}, {}) outside {} frames", start + len, self.frames)));
        }
        let mut bins = Vec::with_capacity(self.channels * len * self.freqs);
        for c in 0..self.channels {
            let from = (c * self.frames + start) * self.freqs;
            bins.extend_from_slice(&self.bins[from..from + len * self.freqs]);
        }
        Ok(SpectroTensor { bins, frames: len, ..*self })
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            return Err(Error::invalid(format!("channel {channel} out of range ({} channels)", self.channels)));
        }
        Ok(())
    }
}

/// Number of frames produced for `len` samples (no centering padding).
pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        0
    } else {
        (len - n_fft) / hop + 1
    }
}

/// Hann-windowed STFT of every channel. The first frame starts at sample 0.
pub fn stft(clip: &MultichannelClip, n_fft: usize, hop: usize) -> Result<SpectroTensor> {
    stft_with_window(clip, n_fft, hop, Window::Hann)
}

pub fn stft_with_window(clip: &MultichannelClip, n_fft: usize, hop: usize, window: Window) -> Result<SpectroTensor> {
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::invalid(format!("n_fft {n_fft} is not a power of two")));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::invalid(format!("hop {hop} must be in [1, n_fft]")));
    }
    if clip.len() < n_fft {
        return Err(Error::ClipTooShort { len: clip.len(), needed: n_fft });
    }
    let frames = frame_count(clip.len(), n_fft, hop);
    let freqs = n_fft / 2 + 1;
    let win = window.coefficients(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n_fft];
    let mut bins = Vec::with_capacity(clip.num_channels() * frames * freqs);
    for channel in clip.channels() {
        for t in 0..frames {
            let seg = &channel[t * hop..t * hop + n_fft];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&win) {
                *b = Complex64::new(x * w, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            bins.extend_from_slice(&buf[..freqs]);
        }
    }
    Ok(SpectroTensor {
        bins,
        channels: clip.num_channels(),
        frames,
        freqs,
        n_fft,
        hop,
        sample_rate: clip.sample_rate(),
    })
}

/// What a feature plane holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneKind {
    Lps,
    Ipd,
    GccPhat,
    Df,
    Fov,
    Embed,
}

impl PlaneKind {
    pub const ALL: [PlaneKind; 6] = [
        PlaneKind::Lps,
        PlaneKind::Ipd,
        PlaneKind::GccPhat,
        PlaneKind::Df,
        PlaneKind::Fov,
        PlaneKind::Embed,
    ];

    pub fn code(self) -> u8 {
        match self {
            PlaneKind::Lps => 0,
            PlaneKind::Ipd => 1,
            PlaneKind::GccPhat => 2,
            PlaneKind::Df => 3,
            PlaneKind::Fov => 4,
            PlaneKind::Embed => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PlaneKind::Lps => "lps",
            PlaneKind::Ipd => "ipd",
            PlaneKind::GccPhat => "gccphat",
            PlaneKind::Df => "df",
            PlaneKind::Fov => "fov",
            PlaneKind::Embed => "embed",
        }
    }
}

impl fmt::Display for PlaneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlaneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lps" => Ok(PlaneKind::Lps),
            "ipd" => Ok(PlaneKind::Ipd),
            "gccphat" | "gcc-phat" | "gcc" => Ok(PlaneKind::GccPhat),
            "df" => Ok(PlaneKind::Df),
            "fov" => Ok(PlaneKind::Fov),
            "embed" | "learned" => Ok(PlaneKind::Embed),
            other => Err(Error::invalid(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// A real `frames × bins` array tagged with its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlane {
    pub kind: PlaneKind,
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl FeaturePlane {
    pub fn new(kind: PlaneKind, frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::Shape(format!("{} values for a {frames}x{bins} plane", values.len())));
        }
        Ok(Self { kind, frames, bins, values })
    }

    pub fn filled(kind: PlaneKind, frames: usize, bins: usize, value: f64) -> Self {
        Self { kind, frames, bins, values: vec![value; frames * bins] }
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    /// Linearly resamples the bin axis to `bins` points, keeping both ends.
    pub fn resample_bins(&self, bins: usize) -> FeaturePlane {
        if bins == self.bins {
            return self.clone();
        }
        let mut values = Vec::with_capacity(self.frames * bins);
        let scale = if bins > 1 { (self.bins - 1) as f64 / (bins - 1) as f64 } else { 0.0 };
        for t in 0..self.frames {
            let row = &self.values[t * self.bins..(t + 1) * self.bins];
            for j in 0..bins {
                let x = j as f64 * scale;
                let i0 = (x.floor() as usize).min(self.bins - 1);
                let i1 = (i0 + 1).min(self.bins - 1);
                let frac = x - i0 as f64;
                values.push(row[i0] * (1.0 - frac) + row[i1] * frac);
            }
        }
        FeaturePlane { kind: self.kind, frames: self.frames, bins, values }
    }
}

/// Wraps a phase into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Log power spectrum `log(|X|² + ε)` of one channel.
pub fn lps(spec: &SpectroTensor, channel: usize) -> Result<FeaturePlane> {
    spec.check_channel(channel)?;
    let values = (0..spec.frames)
        .flat_map(|t| spec.frame(channel, t).iter().map(|x| (x.norm_sqr() + SPECTRAL_FLOOR).ln()))
        .collect();
    Ok(FeaturePlane { kind: PlaneKind::Lps, frames: spec.frames, bins: spec.freqs, values })
}

/// Inter-channel phase difference `angle(X^a) − angle(X^b)`, wrapped.
pub fn ipd(spec: &SpectroTensor, pair: MicPair) -> Result<FeaturePlane> {
    spec.check_channel(pair.first)?;
    spec.check_channel(pair.second)?;
    let mut values = Vec::with_capacity(spec.frames * spec.freqs);
    for t in 0..spec.frames {
        let (a, b) = (spec.frame(pair.first, t), spec.frame(pair.second, t));
        values.extend(a.iter().zip(b).map(|(x, y)| wrap_phase(x.arg() - y.arg())));
    }
    Ok(FeaturePlane { kind: PlaneKind::Ipd, frames: spec.frames, bins: spec.freqs, values })
}

/// Per-frame GCC-PHAT over lags `-max_lag..=max_lag`; the returned plane has
/// `2·max_lag + 1` columns, column `max_lag + τ` holding lag `τ`. A positive
/// peak lag means `pair.second` is delayed relative to `pair.first`, so column
/// `τ` holds the inverse transform evaluated at `−τ`.
pub fn gcc_phat(spec: &SpectroTensor, pair: MicPair, max_lag: usize) -> Result<FeaturePlane> {
    spec.check_channel(pair.first)?;
    spec.check_channel(pair.second)?;
    let n = spec.n_fft;
    if max_lag > n / 2 {
        return Err(Error::invalid(format!("max_lag {max_lag} exceeds n_fft/2 = {}", n / 2)));
    }
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    let lags = 2 * max_lag + 1;
    let mut values = Vec::with_capacity(spec.frames * lags);
    for t in 0..spec.frames {
        let (a, b) = (spec.frame(pair.first, t), spec.frame(pair.second, t));
        for k in 0..spec.freqs {
            let cross = a[k] * b[k].conj();
            buf[k] = cross / (cross.norm() + SPECTRAL_FLOOR);
        }
        for k in spec.freqs..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        for lag in -(max_lag as isize)..=max_lag as isize {
            let idx = (-lag).rem_euclid(n as isize) as usize;
            values.push(buf[idx].re / n as f64);
        }
    }
    Ok(FeaturePlane { kind: PlaneKind::GccPhat, frames: spec.frames, bins: lags, values })
}

/// Lag (in samples) of the largest GCC-PHAT value in each frame.
pub fn gcc_peak_lags(gcc: &FeaturePlane) -> Vec<isize> {
    let max_lag = (gcc.bins / 2) as isize;
    (0..gcc.frames)
        .map(|t| {
            let row = &gcc.values[t * gcc.bins..(t + 1) * gcc.bins];
            let (best, _) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best as isize - max_lag
        })
        .collect()
}
