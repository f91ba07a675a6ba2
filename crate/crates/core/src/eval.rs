//! Metrics, SER sweeps and mel images.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::io::{write_mel, write_wav};
use crate::audio::stft::Stft;
use crate::audio::{MelConfig, MelSpectrogram, SerValue, Waveform};
use crate::denoiser::DenoiserParams;
use crate::error::{format_err, Error, Result};
use crate::flow::{synthesize, SamplerConfig, SynthesisRequest, TemporalMask};
use crate::forge::{dominant_frequency, f0_to_char, SPEECH_BAND_HZ};
use crate::text::CharVocab;

/// Mean squared difference, over the masked frames when a mask is given.
pub fn mel_mse(a: &MelSpectrogram, b: &MelSpectrogram, mask: Option<&TemporalMask>) -> Result<f64> {
    let (va, vb) = (a.values(), b.values());
    if va.dim() != vb.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", va.dim(), vb.dim())));
    }
    let cols: Vec<usize> = match mask {
        Some(m) if m.len() != va.ncols() => {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} frames, mels have {}",
                m.len(),
                va.ncols()
            )))
        }
        Some(m) => (0..m.len()).filter(|&j| m.is_masked(j)).collect(),
        None => (0..va.ncols()).collect(),
    };
    if cols.is_empty() {
        return Err(Error::InvalidInput("no frames selected".into()));
    }
    let sum: f64 = cols
        .iter()
        .map(|&j| {
            va.column(j)
                .iter()
                .zip(vb.column(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (cols.len() * va.nrows()) as f64)
}

/// Variance over all entries.
pub fn mel_variance(m: &MelSpectrogram) -> f64 {
    let v = m.values();
    let n = v.len() as f64;
    let mean = v.sum() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Energy outside `speech_band` divided by energy inside it, from the
/// magnitude-squared STFT.
pub fn env_speech_energy_ratio(wave: &Waveform, cfg: &MelConfig, speech_band: (f64, f64)) -> Result<f64> {
    cfg.validate()?;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let (lo, hi) = speech_band;
    if !(0.0 <= lo && lo < hi && hi <= nyquist) {
        return Err(Error::InvalidInput(format!("band {lo}..{hi} Hz outside 0..{nyquist}")));
    }
    if wave.len() < cfg.n_fft {
        return Err(Error::WaveTooShort {
            len: wave.len(),
            need: cfg.n_fft,
        });
    }
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let (mut inside, mut outside) = (0.0, 0.0);
    for frame in stft.analyze(wave.samples()) {
        for (k, c) in frame.iter().enumerate() {
            let hz = cfg.bin_hz(k);
            if hz >= lo && hz <= hi {
                inside += c.norm_sqr();
            } else {
                outside += c.norm_sqr();
            }
        }
    }
    if inside + outside == 0.0 {
        return Err(Error::ZeroPower("waveform"));
    }
    if inside == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(outside / inside)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    crate::forge::pearson(&ranks(a), &ranks(b))
}

/// Reads a transcript back from synthetic speech: the recording is split
/// into `n_chars` equal segments and each segment's strongest partial in
/// the base-frequency range picks a character.
pub fn decode_transcript(wave: &Waveform, n_chars: usize) -> String {
    if n_chars == 0 || wave.is_empty() {
        return String::new();
    }
    let x = wave.samples();
    let seg = x.len() / n_chars;
    (0..n_chars)
        .map(|i| {
            let part = &x[i * seg..((i + 1) * seg).min(x.len())];
            dominant_frequency(part, wave.sample_rate(), 165.0, 945.0)
                .map(f0_to_char)
                .unwrap_or('?')
        })
        .collect()
}

/// Levenshtein distance over characters divided by the reference length.
pub fn char_error_rate(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    if r.is_empty() {
        return if h.is_empty() { 0.0 } else { 1.0 };
    }
    let mut prev: Vec<usize> = (0..=h.len()).collect();
    for i in 1..=r.len() {
        let mut cur = vec![i; h.len() + 1];
        for j in 1..=h.len() {
            let sub = prev[j - 1] + usize::from(r[i - 1] != h[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[h.len()] as f64 / r.len() as f64
}

/// Grayscale PNG, one pixel per bin and frame, lowest band at the bottom,
/// linear over the mel's own value range.
pub fn plot_mel(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let v = mel.values();
    let (f, n) = v.dim();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut pixels = Vec::with_capacity(f * n);
    for row in 0..f {
        let band = f - 1 - row;
        for col in 0..n {
            let level = if span > 0.0 { (v[[band, col]] - lo) / span } else { 0.0 };
            pixels.push((level * 255.0).round() as u8);
        }
    }
    let file = fs::File::create(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), n as u32, f as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&pixels)?;
    writer.finish()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub ser: f64,
    pub ratio: f64,
    pub mel: PathBuf,
    pub wave: PathBuf,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub seed: u64,
    pub checkpoint: String,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn ratios(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.ratio).collect()
    }

    /// One JSON object per line: a header, then one line per SER value.
    pub fn write_report(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            seed: u64,
            checkpoint: &'a str,
        }
        let mut out = Vec::new();
        serde_json::to_writer(
            &mut out,
            &Header {
                seed: self.seed,
                checkpoint: &self.checkpoint,
            },
        )?;
        out.push(b'\n');
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }
}

/// Shared inputs of a sweep; only the SER changes between runs.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub ref_mel: &'a MelSpectrogram,
    pub ref_text: &'a str,
    pub env_prompt: &'a MelSpectrogram,
    pub gen_text: &'a str,
}

/// Synthesizes once per SER value with identical text, prompts and seed,
/// writing `ser_<v>.{mel,wav,png}` into `out_dir`.
pub fn ser_sweep(
    params: &DenoiserParams,
    vocab: &CharVocab,
    checkpoint: &str,
    inputs: &SweepInputs<'_>,
    ser_values: &[f64],
    sampler: &SamplerConfig,
    out_dir: &Path,
) -> Result<SweepResult> {
    if ser_values.is_empty() {
        return Err(Error::InvalidInput("no SER values".into()));
    }
    if ser_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("SER values must be strictly increasing".into()));
    }
    let sers = ser_values
        .iter()
        .map(|&s| SerValue::new(s))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir)?;
    let cfg = *inputs.ref_mel.config();
    let mut entries = Vec::with_capacity(sers.len());
    for ser in sers {
        let req = SynthesisRequest {
            ref_mel: inputs.ref_mel,
            ref_text: inputs.ref_text,
            env_prompt: inputs.env_prompt,
            gen_text: inputs.gen_text,
            ser,
        };
        let out = synthesize(params, vocab, &req, sampler)?;
        let ratio = env_speech_energy_ratio(&out.wave, &cfg, SPEECH_BAND_HZ)?;
        let stem = format!("ser_{:.3}", ser.value());
        let entry = SweepEntry {
            ser: ser.value(),
            ratio,
            mel: out_dir.join(format!("{stem}.mel")),
            wave: out_dir.join(format!("{stem}.wav")),
            image: out_dir.join(format!("{stem}.png")),
        };
        write_mel(&entry.mel, &out.mel)?;
        write_wav(&entry.wave, &out.wave)?;
        plot_mel(&out.mel, &entry.image)?;
        entries.push(entry);
    }
    Ok(SweepResult {
        seed: sampler.seed,
        checkpoint: checkpoint.to_string(),
        entries,
    })
}
