use rustfft::num_complex::Complex64;

use super::VadLabels;
use crate::audio::stft::Stft;
use crate::audio::{MelConfig, Waveform};
use crate::error::{Error, Result};

/// Magnitudes up to this multiple of the noise profile go to the
/// environment stem.
pub const GATE_FACTOR: f64 = 2.5;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Spectral gating against the median non-speech spectrum. Returns
/// `(speech, env)`, both the length of the input.
pub fn spectral_separate(wave: &Waveform, labels: &VadLabels, cfg: &MelConfig) -> Result<(Waveform, Waveform)> {
    cfg.validate()?;
    if wave.len() < cfg.n_fft {
        return Err(Error::WaveTooShort {
            len: wave.len(),
            need: cfg.n_fft,
        });
    }
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let frames = stft.analyze(wave.samples());
    if labels.len() != frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} frames",
            labels.len(),
            frames.len()
        )));
    }
    let quiet: Vec<usize> = (0..frames.len()).filter(|&i| !labels.labels()[i]).collect();
    if quiet.is_empty() {
        return Err(Error::NoNonSpeech);
    }
    let n_bins = stft.n_bins();
    let profile: Vec<f64> = (0..n_bins)
        .map(|k| median(&mut quiet.iter().map(|&i| frames[i][k].norm()).collect::<Vec<_>>()))
        .collect();

    let mut env_frames = Vec::with_capacity(frames.len());
    let mut speech_frames = Vec::with_capacity(frames.len());
    for frame in &frames {
        let (env, speech): (Vec<Complex64>, Vec<Complex64>) = frame
            .iter()
            .zip(&profile)
            .map(|(&x, &p)| {
                let mag = x.norm();
                let g = if mag > 0.0 { (GATE_FACTOR * p / mag).min(1.0) } else { 1.0 };
                (x * g, x * (1.0 - g))
            })
            .unzip();
        env_frames.push(env);
        speech_frames.push(speech);
    }
    let resynth = |frames: &[Vec<Complex64>]| {
        let mut y = stft.synthesize(frames);
        y.resize(wave.len(), 0.0);
        Waveform::new(y, wave.sample_rate())
    };
    Ok((resynth(&speech_frames)?, resynth(&env_frames)?))
}
