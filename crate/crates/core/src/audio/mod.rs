//! Waveforms, mel front end, Griffin-Lim resynthesis and SER-controlled mixing.

mod griffin_lim;
pub mod io;
mod mel;
pub(crate) mod stft;

pub use griffin_lim::griffin_lim;
pub use mel::{mel_filterbank, stft_mel, MelConfig, MelSpectrogram, LOG_EPS};

use crate::error::{Error, Result};

/// Lowest SNR of the mixing range, mapped to SER 0.
pub const SNR_MIN_DB: f64 = -5.0;
/// Highest SNR of the mixing range, mapped to SER 1.
pub const SNR_MAX_DB: f64 = 20.0;
/// Peak ceiling applied after mixing.
pub const PEAK_CEILING: f64 = 0.99;

/// Mono audio with a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Loops or truncates the waveform to exactly `len` samples.
    pub fn tiled(&self, len: usize) -> Self {
        let samples = if self.samples.is_empty() {
            vec![0.0; len]
        } else {
            self.samples.iter().copied().cycle().take(len).collect()
        };
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Speech-to-environment ratio in `[0, 1]`; lower means a louder environment.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SerValue(f64);

impl SerValue {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput(format!("SER {value} outside [0, 1]")));
        }
        Ok(Self(value))
    }

    /// Clamps into range; NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Target SNR in dB that this SER stands for.
    pub fn snr_db(self) -> f64 {
        SNR_MIN_DB + (SNR_MAX_DB - SNR_MIN_DB) * self.0
    }
}

/// Linear map of `[-5, 20]` dB onto `[0, 1]`, clamped outside the range.
pub fn snr_to_ser(snr_db: f64) -> SerValue {
    SerValue::clamped((snr_db - SNR_MIN_DB) / (SNR_MAX_DB - SNR_MIN_DB))
}

/// Result of [`mix_at_ser`].
#[derive(Debug, Clone)]
pub struct Mix {
    pub wave: Waveform,
    /// Gain applied to the (tiled) environment before summing.
    pub env_gain: f64,
    /// Uniform factor applied to the sum to respect the peak ceiling.
    pub peak_scale: f64,
}

/// Scales `env` so that speech/env power matches the SNR implied by `ser`,
/// adds it to `speech`, then scales the sum down if its peak exceeds 0.99.
pub fn mix_at_ser(speech: &Waveform, env: &Waveform, ser: SerValue) -> Result<Mix> {
    if speech.sample_rate != env.sample_rate {
        return Err(Error::SampleRateMismatch(speech.sample_rate, env.sample_rate));
    }
    let env = env.tiled(speech.len());
    let p_speech = speech.power();
    let p_env = env.power();
    if p_speech <= 0.0 {
        return Err(Error::ZeroPower("speech"));
    }
    if p_env <= 0.0 {
        return Err(Error::ZeroPower("environment"));
    }
    let snr_lin = 10f64.powf(ser.snr_db() / 10.0);
    let env_gain = (p_speech / (p_env * snr_lin)).sqrt();
    let mut mixed: Vec<f64> = speech
        .samples
        .iter()
        .zip(&env.samples)
        .map(|(s, e)| s + env_gain * e)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_scale = if peak > PEAK_CEILING {
        PEAK_CEILING / peak
    } else {
        1.0
    };
    if peak_scale != 1.0 {
        mixed.iter_mut().for_each(|v| *v *= peak_scale);
    }
    Ok(Mix {
        wave: Waveform::new(mixed, speech.sample_rate)?,
        env_gain,
        peak_scale,
    })
}
