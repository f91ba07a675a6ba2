//! WAV and raw mel-dump file formats.
//!
//! Mel dump layout, little-endian: `b"UMEL"`, `u32 F`, `u32 N`, then `F * N`
//! `f32` values in row-major (band-major) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{MelConfig, MelSpectrogram, Waveform};
use crate::error::{format_err, Error, Result};

pub const MEL_MAGIC: &[u8; 4] = b"UMEL";

/// Reads a mono WAV; 16-bit PCM and 32-bit float are accepted.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(path, format!("{} channels, expected mono", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(format_err(path, format!("unsupported sample format {fmt:?}/{bits}")))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in wave.samples() {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes a mono 16-bit PCM WAV, clipping to [-1, 1].
pub fn write_wav_pcm16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in wave.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_mel(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MEL_MAGIC)?;
    w.write_all(&(mel.n_mels() as u32).to_le_bytes())?;
    w.write_all(&(mel.n_frames() as u32).to_le_bytes())?;
    for v in mel.values().iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a mel dump. The file carries no framing metadata, so the caller
/// supplies the config; its `n_mels` must match the stored `F`.
pub fn read_mel(path: impl AsRef<Path>, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &head[..4] != MEL_MAGIC {
        return Err(format_err(path, "bad magic, expected UMEL"));
    }
    let f = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if f != cfg.n_mels {
        return Err(Error::ShapeMismatch(format!(
            "{} stores {f} mel bands, config has {}",
            path.display(),
            cfg.n_mels
        )));
    }
    let mut buf = vec![0u8; f * n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "truncated data"))?;
    let data: Vec<f64> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Array2::from_shape_vec((f, n), data)
        .map_err(|e| format_err(path, e.to_string()))?;
    MelSpectrogram::new(values, *cfg)
}
