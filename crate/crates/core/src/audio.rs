//! Multichannel clips and WAV I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};
use crate::geometry::NUM_MICS;

/// Time-domain audio, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let len = channels.first().map(Vec::len).unwrap_or(0);
        if channels.is_empty() || len == 0 {
            return Err(Error::invalid("clip must have at least one non-empty channel"));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("clip contains non-finite samples"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self { channels, sample_rate })
    }

    /// Four silent channels of `len` samples.
    pub fn silent(len: usize, sample_rate: u32) -> Self {
        Self { channels: vec![vec![0.0; len.max(1)]; NUM_MICS], sample_rate }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn require_channels(&self, expected: usize) -> Result<()> {
        if self.channels.len() != expected {
            return Err(Error::ChannelCount { expected, got: self.channels.len() });
        }
        Ok(())
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::invalid(format!("slice [{start}, {}) outside clip of {}", start + len, self.len())));
        }
        let channels = self.channels.iter().map(|c| c[start..start + len].to_vec()).collect();
        Ok(Self { channels, sample_rate: self.sample_rate })
    }

    pub fn peak(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|v| v * v).sum()
    }
}

/// Decodes a PCM-16 or float-32 WAV stream.
pub fn decode_wav<R: Read>(reader: R) -> Result<MultichannelClip> {
    let mut wav = hound::WavReader::new(reader).map_err(|e| Error::format("wav", e.to_string()))?;
    let spec = wav.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(Error::format("wav", "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => wav
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => wav
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => return Err(Error::format("wav", format!("unsupported sample format {fmt:?}/{bits} bit"))),
    }
    .map_err(|e| Error::format("wav", e.to_string()))?;
    if !interleaved.len().is_multiple_of(n_ch) {
        return Err(Error::format("wav", "truncated frame"));
    }
    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &v) in channels.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    MultichannelClip::new(channels, spec.sample_rate).map_err(|e| Error::format("wav", e.to_string()))
}

pub fn read_wav(path: &Path) -> Result<MultichannelClip> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(BufReader::new(file)).map_err(|e| match e {
        Error::Format { msg, .. } => Error::Format { what: "wav", msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// Reads a WAV that must match the array's channel count and sample rate.
pub fn read_array_wav(path: &Path, sample_rate: u32) -> Result<MultichannelClip> {
    let clip = read_wav(path)?;
    clip.require_channels(NUM_MICS)?;
    if clip.sample_rate() != sample_rate {
        return Err(Error::SampleRate { expected: sample_rate, got: clip.sample_rate() });
    }
    Ok(clip)
}

/// Encodes as interleaved IEEE float32.
pub fn encode_wav<W: Write + Seek>(clip: &MultichannelClip, writer: W) -> Result<()> {
    let spec = WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(|e| Error::format("wav", e.to_string()))?;
    for i in 0..clip.len() {
        for c in clip.channels() {
            w.write_sample(c[i] as f32).map_err(|e| Error::format("wav", e.to_string()))?;
        }
    }
    w.finalize().map_err(|e| Error::format("wav", e.to_string()))
}

pub fn write_wav(clip: &MultichannelClip, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_wav(clip, BufWriter::new(file)).map_err(|e| match e {
        Error::Format { msg, .. } => Error::Format { what: "wav", msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}
