use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Reads every channel of a WAV file as separate waveforms.
pub fn read_wav_channels(path: impl AsRef<Path>) -> Result<Vec<Waveform>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (HoundFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (HoundFormat::Int, 24) | (HoundFormat::Int, 32) => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::invalid(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    (0..channels)
        .map(|c| {
            Waveform::new(
                interleaved.iter().skip(c).step_by(channels).copied().collect(),
                spec.sample_rate,
            )
        })
        .collect()
}

/// Reads a mono WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut channels = read_wav_channels(path)?;
    if channels.len() != 1 {
        return Err(Error::invalid(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            channels.len()
        )));
    }
    Ok(channels.remove(0))
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: SampleFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.rate(),
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        match format {
            SampleFormat::Pcm16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
            SampleFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}
