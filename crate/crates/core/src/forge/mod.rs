//! Mining (speech, environment, transcript) triplets from mixed
//! recordings, plus a synthetic corpus with known stems.

mod manifest;
mod separate;
mod synth;
mod vad;

pub use manifest::{load_samples, read_manifest, save_corpus, write_manifest, Manifest, ManifestRecord, MANIFEST_FILE};
pub use separate::{spectral_separate, GATE_FACTOR};
pub use synth::{
    char_f0, dominant_frequency, f0_to_char, synth_sample, EnvClass, SynthOptions, SynthSample, ALPHABET, ENV_MIN_HZ, SPEECH_BAND_HZ,
};
pub use vad::{energy_vad, env_from_vad, VadLabels, DEFAULT_THRESHOLD_DB, HYSTERESIS_FRAMES};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{snr_to_ser, stft_mel, MelConfig, MelSpectrogram, SerValue, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Vad,
    Separation,
    Synthetic,
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSample {
    /// The full recording, `x1`.
    pub target_mel: MelSpectrogram,
    pub speech_mel: MelSpectrogram,
    pub env_mel: MelSpectrogram,
    pub transcript: String,
    pub ser: SerValue,
    pub strategy: Strategy,
}

impl TripletSample {
    pub fn validate(&self) -> Result<()> {
        let f = self.target_mel.n_mels();
        if self.speech_mel.n_mels() != f || self.env_mel.n_mels() != f {
            return Err(Error::ShapeMismatch(format!(
                "mel bins differ: target {f}, speech {}, env {}",
                self.speech_mel.n_mels(),
                self.env_mel.n_mels()
            )));
        }
        if self.speech_mel.n_frames() != self.target_mel.n_frames() {
            return Err(Error::ShapeMismatch(format!(
                "target has {} frames, speech {}",
                self.target_mel.n_frames(),
                self.speech_mel.n_frames()
            )));
        }
        if self.transcript.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.target_mel.n_frames()
    }
}

/// Speech and environment stems mined from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgedStems {
    pub speech: Waveform,
    pub env: Waveform,
    pub strategy: Strategy,
    pub labels: VadLabels,
}

fn ser_from_powers(speech: f64, env: f64) -> SerValue {
    if env <= 0.0 {
        return SerValue::clamped(1.0);
    }
    if speech <= 0.0 {
        return SerValue::clamped(0.0);
    }
    snr_to_ser(10.0 * (speech / env).log10())
}

/// Labels with at least one non-speech frame: when the detector finds
/// none, the quietest frame is released as the noise reference.
fn with_forced_minimum(wave: &Waveform, labels: VadLabels, cfg: &MelConfig) -> VadLabels {
    if labels.non_speech_count() > 0 {
        return labels;
    }
    let x = wave.samples();
    let quietest = (0..labels.len())
        .map(|f| {
            let frame = &x[f * cfg.hop..f * cfg.hop + cfg.n_fft];
            (f, frame.iter().map(|v| v * v).sum::<f64>())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(f, _)| f)
        .unwrap_or(0);
    let mut l = labels.labels().to_vec();
    l[quietest] = false;
    VadLabels::new(l, cfg)
}

/// Picks VAD or separation with equal odds. VAD falls back to
/// separation when it finds no usable non-speech audio.
pub fn forge_stems<R: Rng + ?Sized>(
    wave: &Waveform,
    rng: &mut R,
    cfg: &MelConfig,
    threshold_db: f64,
) -> Result<ForgedStems> {
    let labels = energy_vad(wave, cfg, threshold_db)?;
    let want_vad = rng.random_bool(0.5);
    if want_vad && labels.non_speech_count() > 0 {
        let env = env_from_vad(wave, &labels)?;
        if env.len() >= cfg.n_fft {
            let speech = vad::speech_from_vad(wave, &labels)?;
            return Ok(ForgedStems {
                speech,
                env,
                strategy: Strategy::Vad,
                labels,
            });
        }
    }
    let labels = with_forced_minimum(wave, labels, cfg);
    let (speech, env) = spectral_separate(wave, &labels, cfg)?;
    Ok(ForgedStems {
        speech,
        env,
        strategy: Strategy::Separation,
        labels,
    })
}

/// Builds a triplet from a recording and its transcript. SER comes from
/// the measured speech and environment power.
pub fn forge_triplet<R: Rng + ?Sized>(
    wave: &Waveform,
    transcript: &str,
    rng: &mut R,
    cfg: &MelConfig,
    threshold_db: f64,
) -> Result<TripletSample> {
    if transcript.is_empty() {
        return Err(Error::EmptyText);
    }
    let stems = forge_stems(wave, rng, cfg, threshold_db)?;
    triplet_from_stems(wave, transcript, &stems, cfg)
}

/// Analyzes a recording and its mined stems into a triplet.
pub fn triplet_from_stems(wave: &Waveform, transcript: &str, stems: &ForgedStems, cfg: &MelConfig) -> Result<TripletSample> {
    let env_power = stems.env.power();
    let speech_power = match stems.strategy {
        // Speech frames still carry the background; remove its share.
        Strategy::Vad => {
            let mask = stems.labels.sample_mask(wave.len());
            let (sum, count) = wave
                .samples()
                .iter()
                .zip(mask)
                .filter(|(_, speech)| *speech)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v * v, c + 1));
            (sum / count.max(1) as f64 - env_power).max(0.0)
        }
        _ => stems.speech.power(),
    };
    let sample = TripletSample {
        target_mel: stft_mel(wave, cfg)?,
        speech_mel: stft_mel(&stems.speech, cfg)?,
        env_mel: stft_mel(&stems.env, cfg)?,
        transcript: transcript.to_string(),
        ser: ser_from_powers(speech_power, env_power),
        strategy: stems.strategy,
    };
    sample.validate()?;
    Ok(sample)
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Column-energy correlation between a forged environment mel and the
/// true stem, aligned through the same VAD segmentation where used.
pub fn env_fidelity(stems: &ForgedStems, true_env: &Waveform, cfg: &MelConfig) -> Result<f64> {
    let truth = match stems.strategy {
        Strategy::Vad => env_from_vad(true_env, &stems.labels)?,
        _ => true_env.clone(),
    };
    let a = stft_mel(&stems.env, cfg)?.column_energy();
    let b = stft_mel(&truth, cfg)?.column_energy();
    pearson(&a, &b).ok_or_else(|| Error::InvalidInput("constant column energy".into()))
}
