//! Free-field spatial scene simulator.
//!
//! Sound events are synthesized per class, delayed onto the four capsules as
//! far-field plane waves with a windowed-sinc fractional delay, attenuated
//! with a 1/r law referenced at 1 m, and summed into a clip. Ground truth is
//! written on a 100 ms grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, MultichannelClip};
use crate::error::{Error, Result};
use crate::geometry::{dot, unit_vector, ArrayGeometry, NUM_MICS};

pub const NUM_CLASSES: usize = 13;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "female_speech",
    "male_speech",
    "clapping",
    "telephone",
    "laughter",
    "domestic_sounds",
    "walk",
    "door",
    "music",
    "musical_instrument",
    "water_tap",
    "bell",
    "knock",
];

/// Annotation frame hop in seconds.
pub const ANNOTATION_HOP: f64 = 0.1;
pub const MIN_DISTANCE: f64 = 0.3;
pub const EVENT_PEAK: f64 = 0.5;
pub const CLIP_PEAK_LIMIT: f64 = 0.99;
const FRACTIONAL_DELAY_TAPS: usize = 32;

/// splitmix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub class_id: usize,
    pub onset: f64,
    pub duration: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub gain: f64,
}

impl EventSpec {
    fn validate(&self, clip_length: f64) -> Result<()> {
        if self.class_id >= NUM_CLASSES {
            return Err(Error::UnknownClass(self.class_id));
        }
        if !(self.onset >= 0.0 && self.duration > 0.0 && self.onset + self.duration <= clip_length + 1e-9) {
            return Err(Error::invalid(format!(
                "event [{}, {}) outside clip of {clip_length} s",
                self.onset,
                self.onset + self.duration
            )));
        }
        if self.distance.is_nan() || self.distance < MIN_DISTANCE {
            return Err(Error::invalid(format!("event distance {} below {MIN_DISTANCE} m", self.distance)));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid(format!("event gain {} must be non-negative", self.gain)));
        }
        if !(-90.0..=90.0).contains(&self.elevation) || !self.azimuth.is_finite() {
            return Err(Error::invalid("event direction out of range"));
        }
        Ok(())
    }

    fn is_active_in_frame(&self, frame: usize, hop: f64) -> bool {
        let (start, end) = (frame as f64 * hop, (frame + 1) as f64 * hop);
        start < self.onset + self.duration - 1e-9 && end > self.onset + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub clip_length: f64,
    pub events: Vec<EventSpec>,
    pub noise_snr: Option<f64>,
    pub seed: u64,
}

/// One event as seen in one annotation frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEvent {
    pub class_id: usize,
    pub event_index: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

/// Per-event summary reconstructed from an annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrack {
    pub class_id: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotation {
    pub frame_hop: f64,
    pub frames: Vec<Vec<FrameEvent>>,
}

impl SceneAnnotation {
    pub fn empty(n_frames: usize) -> Self {
        Self { frame_hop: ANNOTATION_HOP, frames: vec![Vec::new(); n_frames] }
    }

    /// Pads with empty frames up to `n_frames`.
    pub fn with_frame_count(mut self, n_frames: usize) -> Self {
        if self.frames.len() < n_frames {
            self.frames.resize(n_frames, Vec::new());
        }
        self
    }

    /// Events keyed by event index, in ascending order.
    pub fn tracks(&self) -> BTreeMap<usize, EventTrack> {
        let mut tracks: BTreeMap<usize, EventTrack> = BTreeMap::new();
        for (f, events) in self.frames.iter().enumerate() {
            for e in events {
                tracks
                    .entry(e.event_index)
                    .or_insert_with(|| EventTrack {
                        class_id: e.class_id,
                        azimuth: e.azimuth,
                        elevation: e.elevation,
                        distance: e.distance,
                        frames: Vec::new(),
                    })
                    .frames
                    .push(f);
            }
        }
        tracks
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "frame_index,class_index,event_index,azimuth_deg,elevation_deg,distance_m")?;
        for (f, events) in self.frames.iter().enumerate() {
            for e in events {
                writeln!(w, "{f},{},{},{},{},{}", e.class_id, e.event_index, e.azimuth, e.elevation, e.distance)?;
            }
        }
        Ok(())
    }

    /// Parses the CSV written by [`SceneAnnotation::write_csv`]. The frame
    /// count is one past the largest frame index present.
    pub fn read_csv<R: BufRead>(r: R, source: &str) -> Result<Self> {
        let mut rows: Vec<(usize, FrameEvent)> = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse { path: source.into(), line: line_no, msg: e.to_string() })?;
            let line = line.trim();
            if line.is_empty() || (line_no == 1 && line.starts_with("frame_index")) {
                continue;
            }
            rows.push(parse_annotation_row(line).map_err(|msg| Error::Parse { path: source.into(), line: line_no, msg })?);
        }
        let n_frames = rows.iter().map(|(f, _)| f + 1).max().unwrap_or(0);
        let mut ann = SceneAnnotation::empty(n_frames);
        for (f, e) in rows {
            ann.frames[f].push(e);
        }
        Ok(ann)
    }
}

fn parse_annotation_row(line: &str) -> std::result::Result<(usize, FrameEvent), String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, got {}", fields.len()));
    }
    let int = |i: usize, name: &str| fields[i].parse::<usize>().map_err(|e| format!("{name}: {e}"));
    let float = |i: usize, name: &str| {
        fields[i]
            .parse::<f64>()
            .map_err(|e| format!("{name}: {e}"))
            .and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("{name}: not finite")) })
    };
    let frame = int(0, "frame_index")?;
    // bounded so a hostile row cannot allocate an absurd frame vector
    if frame > 10_000_000 {
        return Err(format!("frame_index {frame} too large"));
    }
    let class_id = int(1, "class_index")?;
    if class_id >= NUM_CLASSES {
        return Err(format!("class_index {class_id} out of range"));
    }
    let event = FrameEvent {
        class_id,
        event_index: int(2, "event_index")?,
        azimuth: float(3, "azimuth_deg")?,
        elevation: float(4, "elevation_deg")?,
        distance: float(5, "distance_m")?,
    };
    if !(-90.0..=90.0).contains(&event.elevation) {
        return Err(format!("elevation {} out of range", event.elevation));
    }
    Ok((frame, event))
}

pub fn write_annotation(ann: &SceneAnnotation, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    ann.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_annotation(path: &Path) -> Result<SceneAnnotation> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    SceneAnnotation::read_csv(std::io::BufReader::new(file), &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Event bank

#[derive(Debug, Clone, Copy)]
enum Envelope {
    Steady,
    /// Sinusoidal amplitude modulation.
    Modulated { rate: f64, depth: f64 },
    /// Repeating exponentially decaying bursts.
    Bursts { rate: f64, decay: f64 },
    /// One exponential decay over the event.
    Decay { tau: f64 },
}

/// Synthesis recipe for one class: band-limited noise plus a harmonic comb.
#[derive(Debug, Clone, Copy)]
struct ClassRecipe {
    noise_band: Option<(f64, f64)>,
    noise_level: f64,
    f0: f64,
    partials: &'static [f64],
    rolloff: f64,
    envelope: Envelope,
}

const HARMONIC_8: &[f64] = &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
const HARMONIC_4: &[f64] = &[1.0, 2.0, 3.0, 4.0];
const NONE: &[f64] = &[];

const RECIPES: [ClassRecipe; NUM_CLASSES] = [
    // female speech: high voice, syllabic modulation
    ClassRecipe { noise_band: Some((3000.0, 5000.0)), noise_level: 0.3, f0: 230.0, partials: HARMONIC_8, rolloff: 1.0, envelope: Envelope::Modulated { rate: 4.0, depth: 0.8 } },
    // male speech
    ClassRecipe { noise_band: Some((1500.0, 3000.0)), noise_level: 0.3, f0: 115.0, partials: HARMONIC_8, rolloff: 0.8, envelope: Envelope::Modulated { rate: 3.5, depth: 0.8 } },
    // clapping
    ClassRecipe { noise_band: Some((1000.0, 6000.0)), noise_level: 1.0, f0: 0.0, partials: NONE, rolloff: 0.0, envelope: Envelope::Bursts { rate: 4.0, decay: 0.02 } },
    // telephone: dual tone with ring cadence
    ClassRecipe { noise_band: None, noise_level: 0.0, f0: 440.0, partials: &[1.0, 480.0 / 440.0, 2.0], rolloff: 0.5, envelope: Envelope::Modulated { rate: 0.5, depth: 1.0 } },
    // laughter
    ClassRecipe { noise_band: Some((2000.0, 4500.0)), noise_level: 0.6, f0: 320.0, partials: HARMONIC_4, rolloff: 1.0, envelope: Envelope::Modulated { rate: 7.0, depth: 1.0 } },
    // domestic sounds
    ClassRecipe { noise_band: Some((200.0, 1200.0)), noise_level: 1.0, f0: 0.0, partials: NONE, rolloff: 0.0, envelope: Envelope::Modulated { rate: 0.7, depth: 0.3 } },
    // walk: low thuds
    ClassRecipe { noise_band: Some((80.0, 600.0)), noise_level: 1.0, f0: 0.0, partials: NONE, rolloff: 0.0, envelope: Envelope::Bursts { rate: 2.0, decay: 0.05 } },
    // door
    ClassRecipe { noise_band: Some((400.0, 2500.0)), noise_level: 0.7, f0: 150.0, partials: HARMONIC_4, rolloff: 1.5, envelope: Envelope::Decay { tau: 0.6 } },
    // music: rich harmonic tone
    ClassRecipe { noise_band: None, noise_level: 0.0, f0: 262.0, partials: &[1.0, 1.26, 1.5, 2.0, 2.52, 3.0, 4.0, 5.0], rolloff: 0.7, envelope: Envelope::Modulated { rate: 1.0, depth: 0.4 } },
    // musical instrument: plucked notes
    ClassRecipe { noise_band: None, noise_level: 0.0, f0: 392.0, partials: &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], rolloff: 1.2, envelope: Envelope::Bursts { rate: 1.5, decay: 0.3 } },
    // water tap
    ClassRecipe { noise_band: Some((5000.0, 9000.0)), noise_level: 1.0, f0: 0.0, partials: NONE, rolloff: 0.0, envelope: Envelope::Steady },
    // bell: inharmonic partials
    ClassRecipe { noise_band: None, noise_level: 0.0, f0: 700.0, partials: &[1.0, 2.76, 5.4, 8.93], rolloff: 0.5, envelope: Envelope::Bursts { rate: 0.8, decay: 0.5 } },
    // knock
    ClassRecipe { noise_band: Some((150.0, 900.0)), noise_level: 1.0, f0: 180.0, partials: &[1.0], rolloff: 0.0, envelope: Envelope::Bursts { rate: 3.0, decay: 0.015 } },
];

fn band_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, band: (f64, f64)) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        if f < band.0 || f > band.1 {
            *v = Complex64::default();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn envelope_value(env: Envelope, t: f64, duration: f64, phase: f64) -> f64 {
    match env {
        Envelope::Steady => 1.0,
        Envelope::Modulated { rate, depth } => 1.0 - depth * 0.5 * (1.0 - (2.0 * PI * rate * t + phase).cos()),
        Envelope::Bursts { rate, decay } => {
            let period = 1.0 / rate;
            let local = (t + phase / (2.0 * PI) * period).rem_euclid(period);
            (-local / decay).exp()
        }
        Envelope::Decay { tau } => (-t / tau.min(duration)).exp(),
    }
}

/// Deterministic synthetic event of `duration` seconds for `class_id`, peak
/// normalized to 0.5.
pub fn event_bank(class_id: usize, duration: f64, seed: u64, sample_rate: u32) -> Result<Vec<f64>> {
    let recipe = RECIPES.get(class_id).ok_or(Error::UnknownClass(class_id))?;
    if !(0.2..=10.0).contains(&duration) {
        return Err(Error::invalid(format!("event duration {duration} outside [0.2, 10] s")));
    }
    let fs = sample_rate as f64;
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, class_id as u64));
    let mut out = match recipe.noise_band {
        Some(band) => band_noise(&mut rng, n, fs, (band.0, band.1.min(fs / 2.0)))
            .into_iter()
            .map(|v| v * recipe.noise_level)
            .collect(),
        None => vec![0.0; n],
    };
    if !recipe.partials.is_empty() {
        // per-event pitch jitter of ±3%
        let f0 = recipe.f0 * rng.random_range(0.97..1.03);
        let noise_rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let comb_scale = if recipe.noise_band.is_some() { noise_rms.max(1e-6) / recipe.noise_level.max(1e-6) } else { 1.0 };
        for (h, &ratio) in recipe.partials.iter().enumerate() {
            let freq = f0 * ratio;
            if freq >= fs / 2.0 {
                continue;
            }
            let amp = comb_scale / ((h + 1) as f64).powf(recipe.rolloff);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            for (i, v) in out.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * freq * i as f64 / fs + phase).sin();
            }
        }
    }
    let env_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let fade = (0.01 * fs) as usize;
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let mut g = envelope_value(recipe.envelope, t, duration, env_phase);
        if i < fade {
            g *= i as f64 / fade as f64;
        } else if n - i <= fade {
            g *= (n - i - 1) as f64 / fade as f64;
        }
        *v *= g;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= EVENT_PEAK / peak);
    }
    Ok(out)
}

/// Where event waveforms come from.
#[derive(Debug, Clone, Default)]
pub enum SourceBank {
    #[default]
    Synthetic,
    /// Mono recordings per class, indexed by class id.
    Recorded(Vec<Vec<Vec<f64>>>),
}

impl SourceBank {
    /// Loads mono WAVs from `dir/<class>/…wav`, where `<class>` is a class
    /// index or class name. Classes without recordings fall back to synthesis.
    pub fn load_dir(dir: &Path, sample_rate: u32) -> Result<Self> {
        let mut bank = vec![Vec::new(); NUM_CLASSES];
        for (class_id, name) in CLASS_NAMES.iter().enumerate() {
            for sub in [class_id.to_string(), name.to_string()] {
                let class_dir = dir.join(sub);
                let Ok(entries) = std::fs::read_dir(&class_dir) else { continue };
                let mut paths: Vec<_> = entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                    .collect();
                paths.sort();
                for p in paths {
                    let clip = read_wav(&p)?;
                    clip.require_channels(1)?;
                    if clip.sample_rate() != sample_rate {
                        return Err(Error::SampleRate { expected: sample_rate, got: clip.sample_rate() });
                    }
                    bank[class_id].push(clip.into_channels().remove(0));
                }
            }
        }
        Ok(SourceBank::Recorded(bank))
    }

    pub fn signal(&self, class_id: usize, duration: f64, seed: u64, sample_rate: u32) -> Result<Vec<f64>> {
        let recordings = match self {
            SourceBank::Recorded(bank) if bank.get(class_id).is_some_and(|r| !r.is_empty()) => &bank[class_id],
            _ => return event_bank(class_id, duration, seed, sample_rate),
        };
        let src = &recordings[(mix_seed(seed, class_id as u64) % recordings.len() as u64) as usize];
        let n = (duration * sample_rate as f64).round() as usize;
        let mut out: Vec<f64> = src.iter().copied().cycle().take(n).collect();
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            out.iter_mut().for_each(|v| *v *= EVENT_PEAK / peak);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Rendering

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// `signal` evaluated at fractional positions `n + advance`, Hann-windowed sinc.
pub(crate) fn fractional_shift(signal: &[f64], advance: f64) -> Vec<f64> {
    let half = (FRACTIONAL_DELAY_TAPS / 2) as isize;
    let len = signal.len() as isize;
    let whole = advance.floor();
    let frac = advance - whole;
    let whole = whole as isize;
    // taps for j = n + whole + o, o in (-half, half]; the same for every n
    let taps: Vec<(isize, f64)> = ((-half + 1)..=half)
        .map(|o| {
            let d = frac - o as f64;
            (o, sinc(d) * 0.5 * (1.0 + (PI * d / half as f64).cos()))
        })
        .collect();
    (0..len)
        .map(|n| {
            let j0 = n + whole;
            let mut acc = 0.0;
            for &(o, w) in &taps {
                let j = j0 + o;
                if j >= 0 && j < len {
                    acc += signal[j as usize] * w;
                }
            }
            acc
        })
        .collect()
}

/// Renders a mono event onto the four capsules as a far-field plane wave.
pub fn spatialize(event: &[f64], spec: &EventSpec, geom: &ArrayGeometry) -> Vec<Vec<f64>> {
    let u = unit_vector(spec.azimuth, spec.elevation);
    let scale = spec.gain / spec.distance;
    let fs = geom.sample_rate() as f64;
    (0..NUM_MICS)
        .map(|m| {
            if scale == 0.0 {
                return vec![0.0; event.len()];
            }
            // a capsule further along u hears the wavefront earlier
            let advance = dot(geom.mic(m), u) * fs / geom.sound_speed();
            fractional_shift(event, advance).into_iter().map(|v| v * scale).collect()
        })
        .collect()
}

/// Renders every event, adds optional diffuse noise, and limits the peak.
pub fn render_scene(spec: &SceneSpec, geom: &ArrayGeometry) -> Result<(MultichannelClip, SceneAnnotation)> {
    render_scene_with(spec, geom, &SourceBank::Synthetic)
}

pub fn render_scene_with(spec: &SceneSpec, geom: &ArrayGeometry, bank: &SourceBank) -> Result<(MultichannelClip, SceneAnnotation)> {
    if !(spec.clip_length > 0.0 && spec.clip_length.is_finite()) {
        return Err(Error::invalid("clip length must be positive"));
    }
    if spec.events.is_empty() {
        return Err(Error::invalid("scene has no events"));
    }
    for e in &spec.events {
        e.validate(spec.clip_length)?;
    }
    let sr = geom.sample_rate();
    let total = (spec.clip_length * sr as f64).round() as usize;
    let mut channels = vec![vec![0.0; total]; NUM_MICS];
    for (idx, e) in spec.events.iter().enumerate() {
        let mono = bank.signal(e.class_id, e.duration, mix_seed(spec.seed, idx as u64), sr)?;
        let start = (e.onset * sr as f64).round() as usize;
        for (ch, seg) in channels.iter_mut().zip(spatialize(&mono, e, geom)) {
            for (dst, v) in ch.iter_mut().skip(start).zip(seg) {
                *dst += v;
            }
        }
    }
    if let Some(snr) = spec.noise_snr {
        let power = channels.iter().flatten().map(|v| v * v).sum::<f64>() / (NUM_MICS * total) as f64;
        let std = (power / 10f64.powf(snr / 10.0)).sqrt();
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, u64::MAX));
            for v in channels.iter_mut().flatten() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let peak = channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > CLIP_PEAK_LIMIT {
        let g = CLIP_PEAK_LIMIT / peak;
        channels.iter_mut().flatten().for_each(|v| *v *= g);
    }
    let clip = MultichannelClip::new(channels, sr)?;
    Ok((clip, annotate(spec)))
}

/// Ground truth on the 100 ms grid.
pub fn annotate(spec: &SceneSpec) -> SceneAnnotation {
    let n_frames = (spec.clip_length / ANNOTATION_HOP - 1e-9).ceil().max(0.0) as usize;
    let mut ann = SceneAnnotation::empty(n_frames);
    for (f, frame) in ann.frames.iter_mut().enumerate() {
        for (idx, e) in spec.events.iter().enumerate() {
            if e.is_active_in_frame(f, ANNOTATION_HOP) {
                frame.push(FrameEvent {
                    class_id: e.class_id,
                    event_index: idx,
                    azimuth: crate::geometry::wrap_azimuth(e.azimuth),
                    elevation: e.elevation,
                    distance: e.distance,
                });
            }
        }
    }
    ann
}

// ---------------------------------------------------------------------------
// Scene sampling

/// Distribution of random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub clip_length: f64,
    /// Event-count mean and standard deviation per 60 s, scaled to `clip_length`.
    pub events_per_minute_mean: f64,
    pub events_per_minute_std: f64,
    /// Classes drawn uniformly from `0..num_classes`.
    pub num_classes: usize,
    pub duration_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub distance_range: (f64, f64),
    /// When non-empty, distances are drawn from this set instead of the range.
    pub distance_choices: Vec<f64>,
    pub gain_range: (f64, f64),
    pub noise_snr: Option<f64>,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            clip_length: 60.0,
            events_per_minute_mean: 25.0,
            events_per_minute_std: 3.0,
            num_classes: NUM_CLASSES,
            duration_range: (2.0, 8.0),
            elevation_range: (-40.0, 40.0),
            distance_range: (1.0, 3.0),
            distance_choices: Vec::new(),
            gain_range: (0.5, 1.0),
            noise_snr: Some(30.0),
        }
    }
}

impl SceneSampler {
    /// Draws an event count from `N(mean, std²)` scaled to the clip length,
    /// rounded and clamped to at least one.
    pub fn sample_event_count<R: Rng>(&self, rng: &mut R) -> usize {
        let scale = self.clip_length / 60.0;
        let z: f64 = rng.sample(StandardNormal);
        let n = (self.events_per_minute_mean * scale + z * self.events_per_minute_std * scale).round();
        n.max(1.0) as usize
    }

    pub fn sample(&self, seed: u64) -> Result<SceneSpec> {
        if self.num_classes == 0 || self.num_classes > NUM_CLASSES {
            return Err(Error::invalid(format!("num_classes {} outside [1, {NUM_CLASSES}]", self.num_classes)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5CE7E));
        let count = self.sample_event_count(&mut rng);
        let max_dur = self.duration_range.1.min(self.clip_length).min(10.0);
        let min_dur = self.duration_range.0.max(0.2).min(max_dur);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let events = (0..count)
            .map(|_| {
                let duration = uniform(&mut rng, (min_dur, max_dur));
                let onset = uniform(&mut rng, (0.0, self.clip_length - duration));
                let distance = if self.distance_choices.is_empty() {
                    uniform(&mut rng, self.distance_range)
                } else {
                    self.distance_choices[rng.random_range(0..self.distance_choices.len())]
                };
                EventSpec {
                    class_id: rng.random_range(0..self.num_classes),
                    onset,
                    duration,
                    azimuth: rng.random_range(-180.0..180.0),
                    elevation: uniform(&mut rng, self.elevation_range),
                    distance: distance.max(MIN_DISTANCE),
                    gain: uniform(&mut rng, self.gain_range),
                }
            })
            .collect();
        Ok(SceneSpec { clip_length: self.clip_length, events, noise_snr: self.noise_snr, seed })
    }
}

/// Human-readable listing of the class recipes.
pub fn describe_event_bank() -> String {
    let mut out = String::new();
    for (name, r) in CLASS_NAMES.iter().zip(RECIPES.iter()) {
        let _ = writeln!(
            out,
            "{name}: noise {:?} x{:.1}, comb f0 {} Hz partials {:?}, envelope {:?}",
            r.noise_band, r.noise_level, r.f0, r.partials, r.envelope
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{gcc_peak_lags, gcc_phat, stft};
    use crate::geometry::{default_tetrahedral_geometry, pair_delay, DirectionOfArrival, MicPair};
    use crate::regionfeat::AngularRegion;

    fn one_event(class_id: usize) -> EventSpec {
        EventSpec { class_id, onset: 0.5, duration: 1.0, azimuth: 30.0, elevation: 10.0, distance: 1.0, gain: 1.0 }
    }

    #[test]
    fn event_bank_is_deterministic_and_normalized() {
        for class in 0..NUM_CLASSES {
            let a = event_bank(class, 1.3, 77, 24_000).unwrap();
            let b = event_bank(class, 1.3, 77, 24_000).unwrap();
            assert_eq!(a, b);
            let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 0.5).abs() < 1e-6, "class {class}: {peak}");
        }
        assert!(matches!(event_bank(13, 1.0, 0, 24_000), Err(Error::UnknownClass(13))));
        assert!(event_bank(0, 0.1, 0, 24_000).is_err());
    }

    #[test]
    fn distance_law_halves_rms() {
        let mono = event_bank(10, 1.0, 3, 24_000).unwrap();
        let g = default_tetrahedral_geometry();
        let rms = |ch: &[f64]| (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt();
        let near = spatialize(&mono, &one_event(10), &g);
        let far = spatialize(&mono, &EventSpec { distance: 2.0, ..one_event(10) }, &g);
        for m in 0..4 {
            let ratio = rms(&near[m]) / rms(&far[m]);
            assert!((ratio - 2.0).abs() < 0.02, "{ratio}");
        }
        let silent = spatialize(&mono, &EventSpec { gain: 0.0, ..one_event(10) }, &g);
        assert!(silent.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn spatialized_delay_matches_gcc_peak() {
        let g = default_tetrahedral_geometry();
        let p01 = MicPair::new(0, 1).unwrap();
        // direction of the baseline m0 − m1
        let b = crate::geometry::sub(g.mic(0), g.mic(1));
        let az = b[1].atan2(b[0]).to_degrees();
        let el = (b[2] / crate::geometry::norm(b)).asin().to_degrees();
        let doa = DirectionOfArrival::new(az, el).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mono: Vec<f64> = (0..24_000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let spec = EventSpec { class_id: 0, onset: 0.0, duration: 1.0, azimuth: az, elevation: el, distance: 1.0, gain: 1.0 };
        let chans = spatialize(&mono, &spec, &g);
        let clip = MultichannelClip::new(chans, 24_000).unwrap();
        let gcc = gcc_phat(&stft(&clip, 512, 256).unwrap(), p01, 20).unwrap();
        let expected = pair_delay(&g, p01, doa) * 24_000.0;
        let mut lags = gcc_peak_lags(&gcc);
        lags.sort();
        let median = lags[lags.len() / 2] as f64;
        assert!((median - expected).abs() <= 0.5, "median {median} vs {expected}");
    }

    #[test]
    fn single_event_scene_equals_its_segment() {
        let g = default_tetrahedral_geometry();
        let spec = SceneSpec { clip_length: 2.0, events: vec![one_event(3)], noise_snr: None, seed: 9 };
        let (clip, ann) = render_scene(&spec, &g).unwrap();
        let mono = event_bank(3, 1.0, mix_seed(9, 0), 24_000).unwrap();
        let seg = spatialize(&mono, &spec.events[0], &g);
        for (m, s) in seg.iter().enumerate() {
            assert!(clip.channel(m)[..12_000].iter().all(|&v| v == 0.0));
            assert_eq!(&clip.channel(m)[12_000..36_000], &s[..]);
        }
        assert_eq!(ann.frames.len(), 20);
        assert!(ann.frames[4].is_empty());
        assert_eq!(ann.frames[5].len(), 1);
        assert_eq!(ann.frames[14].len(), 1);
        assert!(ann.frames[15].is_empty());
    }

    #[test]
    fn identical_events_sum_linearly() {
        let g = default_tetrahedral_geometry();
        let e = EventSpec { gain: 0.2, ..one_event(1) };
        let single = SceneSpec { clip_length: 2.0, events: vec![e], noise_snr: None, seed: 0 };
        let (a, _) = render_scene(&single, &g).unwrap();
        // both events draw the same waveform only when their seeds match, so
        // compare against the explicit sum of the two spatialized signals
        let double = SceneSpec { events: vec![e, e], ..single.clone() };
        let (b, _) = render_scene(&double, &g).unwrap();
        let m0 = event_bank(1, 1.0, mix_seed(0, 0), 24_000).unwrap();
        let m1 = event_bank(1, 1.0, mix_seed(0, 1), 24_000).unwrap();
        let (s0, s1) = (spatialize(&m0, &e, &g), spatialize(&m1, &e, &g));
        for m in 0..4 {
            for i in 0..24_000 {
                assert_eq!(b.channel(m)[12_000 + i], s0[m][i] + s1[m][i]);
            }
            assert_eq!(&a.channel(m)[12_000..36_000], &s0[m][..]);
        }
        // same waveform twice: the recorded bank makes both events identical
        let bank = SourceBank::Recorded({
            let mut v = vec![Vec::new(); NUM_CLASSES];
            v[1].push(m0.clone());
            v
        });
        let (one, _) = render_scene_with(&single, &g, &bank).unwrap();
        let (two, _) = render_scene_with(&double, &g, &bank).unwrap();
        for m in 0..4 {
            for i in 0..one.len() {
                assert_eq!(two.channel(m)[i], 2.0 * one.channel(m)[i]);
            }
        }
    }

    #[test]
    fn out_of_bounds_event_is_rejected() {
        let g = default_tetrahedral_geometry();
        let spec = SceneSpec { clip_length: 1.0, events: vec![one_event(0)], noise_snr: None, seed: 0 };
        assert!(render_scene(&spec, &g).is_err());
        let spec = SceneSpec { clip_length: 2.0, events: vec![], noise_snr: None, seed: 0 };
        assert!(render_scene(&spec, &g).is_err());
        let spec = SceneSpec { clip_length: 2.0, events: vec![EventSpec { distance: 0.1, ..one_event(0) }], noise_snr: None, seed: 0 };
        assert!(render_scene(&spec, &g).is_err());
    }

    #[test]
    fn rendering_is_deterministic_and_peak_limited() {
        let g = default_tetrahedral_geometry();
        let sampler = SceneSampler { clip_length: 5.0, gain_range: (3.0, 4.0), distance_range: (0.3, 0.4), ..Default::default() };
        let spec = sampler.sample(11).unwrap();
        let (a, ann_a) = render_scene(&spec, &g).unwrap();
        let (b, ann_b) = render_scene(&spec, &g).unwrap();
        assert_eq!(a, b);
        assert_eq!(ann_a, ann_b);
        assert!(a.peak() <= CLIP_PEAK_LIMIT + 1e-12);
        assert_eq!(a.len(), 120_000);
    }

    #[test]
    fn energy_is_additive_for_disjoint_events() {
        let g = default_tetrahedral_geometry();
        let events = vec![
            EventSpec { onset: 0.0, gain: 0.3, ..one_event(2) },
            EventSpec { onset: 1.5, gain: 0.3, ..one_event(8) },
        ];
        let spec = SceneSpec { clip_length: 3.0, events: events.clone(), noise_snr: None, seed: 4 };
        let (clip, _) = render_scene(&spec, &g).unwrap();
        let event_energy: f64 = events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mono = event_bank(e.class_id, e.duration, mix_seed(4, i as u64), 24_000).unwrap();
                spatialize(&mono, e, &g).iter().flatten().map(|v| v * v).sum::<f64>()
            })
            .sum();
        assert!((clip.energy() - event_energy).abs() < 1e-6);
    }

    #[test]
    fn event_count_mean_scales_with_clip_length() {
        let sampler = SceneSampler::default();
        let mean = (0..100u64).map(|s| sampler.sample(s).unwrap().events.len() as f64).sum::<f64>() / 100.0;
        assert!((23.5..=26.5).contains(&mean), "{mean}");
    }

    #[test]
    fn annotation_ground_truth_is_consistent() {
        let spec = SceneSampler { clip_length: 20.0, ..Default::default() }.sample(3).unwrap();
        let ann = annotate(&spec);
        assert_eq!(ann.frames.len(), 200);
        for e in ann.frames.iter().flatten() {
            assert!((-180.0..180.0).contains(&e.azimuth));
            assert!(AngularRegion::centered(e.azimuth, 60.0).unwrap().contains(e.azimuth));
        }
    }

    #[test]
    fn annotation_csv_round_trip() {
        let spec = SceneSampler { clip_length: 10.0, ..Default::default() }.sample(8).unwrap();
        let ann = annotate(&spec);
        let mut buf = Vec::new();
        ann.write_csv(&mut buf).unwrap();
        let back = SceneAnnotation::read_csv(&buf[..], "mem").unwrap().with_frame_count(ann.frames.len());
        assert_eq!(back, ann);
    }

    #[test]
    fn annotation_row_format() {
        let csv = "frame_index,class_index,event_index,azimuth_deg,elevation_deg,distance_m\n12,3,0,45,-10,2.5\n";
        let ann = SceneAnnotation::read_csv(csv.as_bytes(), "mem").unwrap();
        assert_eq!(ann.frames.len(), 13);
        assert!(ann.frames[..12].iter().all(Vec::is_empty));
        assert_eq!(
            ann.frames[12],
            vec![FrameEvent { class_id: 3, event_index: 0, azimuth: 45.0, elevation: -10.0, distance: 2.5 }]
        );
        let mut out = Vec::new();
        SceneAnnotation::empty(3).write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let csv = "frame_index,class_index,event_index,azimuth_deg,elevation_deg,distance_m\n1,2,3,4,5,6\n1,2,x,4,5,6\n";
        let err = SceneAnnotation::read_csv(csv.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(SceneAnnotation::read_csv("0,99,0,0,0,1\n".as_bytes(), "mem").is_err());
    }
}
