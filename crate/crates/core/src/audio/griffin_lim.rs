use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::mel::{mel_filterbank, MelSpectrogram, LOG_EPS};
use super::stft::Stft;
use super::Waveform;
use crate::error::{Error, Result};

const NNLS_ITERS: usize = 100;
const MOMENTUM: f64 = 0.99;

/// Mel energies back to a linear power spectrogram via multiplicative
/// non-negative least squares against the filterbank.
fn mel_to_power(mel: &MelSpectrogram) -> Array2<f64> {
    let fb = mel_filterbank(mel.config());
    let energy = mel.values().mapv(|v| (v.exp() - LOG_EPS).max(0.0));
    let fbt = fb.t();
    let numer = fbt.dot(&energy);
    let coverage: Vec<f64> = fb.columns().into_iter().map(|c| c.sum()).collect();
    let mut power = numer.clone();
    for ((k, _), p) in power.indexed_iter_mut() {
        *p = if coverage[k] > 0.0 { *p / coverage[k] } else { 0.0 };
    }
    for _ in 0..NNLS_ITERS {
        let denom = fbt.dot(&fb.dot(&power));
        ndarray::Zip::from(&mut power)
            .and(&numer)
            .and(&denom)
            .for_each(|p, &n, &d| {
                *p = if d > 1e-30 { *p * n / d } else { 0.0 };
            });
    }
    power
}

/// Phase reconstruction of a log-mel spectrogram. The initial phase is
/// drawn from `seed`; output length is `(N - 1) * hop + n_fft`.
pub fn griffin_lim(mel: &MelSpectrogram, iters: usize, seed: u64) -> Result<Waveform> {
    if iters == 0 {
        return Err(Error::InvalidConfig("griffin_lim needs iters >= 1".into()));
    }
    let cfg = mel.config();
    cfg.validate()?;
    let magnitude = mel_to_power(mel).mapv(f64::sqrt);
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let (n_bins, n_frames) = magnitude.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex64>> = (0..n_frames)
        .map(|j| {
            (0..n_bins)
                .map(|k| Complex64::from_polar(magnitude[[k, j]], rng.random::<f64>() * 2.0 * PI))
                .collect()
        })
        .collect();
    // Fast Griffin-Lim: extrapolate along the sequence of projections.
    let mut prev = spec.clone();
    for _ in 0..iters {
        let x = stft.synthesize(&spec);
        let rebuilt = stft.analyze(&x);
        for (j, frame) in rebuilt.into_iter().enumerate() {
            for (k, c) in frame.into_iter().enumerate() {
                let norm = c.norm();
                let projected = if norm > 1e-12 {
                    c * (magnitude[[k, j]] / norm)
                } else {
                    Complex64::new(magnitude[[k, j]], 0.0)
                };
                spec[j][k] = projected + (projected - prev[j][k]) * MOMENTUM;
                prev[j][k] = projected;
            }
        }
    }
    let spec = prev;
    Waveform::new(stft.synthesize(&spec), cfg.sample_rate)
}
