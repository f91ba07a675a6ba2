//! Short-time Fourier transform over non-centered frames.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of full frames of `n_fft` samples stepped by `hop`.
pub(crate) fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        0
    } else {
        1 + (len - n_fft) / hop
    }
}

const NORM_FLOOR: f64 = 0.1;

pub(crate) struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames x bins, one-sided spectrum.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let n_frames = frame_count(x.len(), self.n_fft, self.hop);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        (0..n_frames)
            .map(|f| {
                let start = f * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(x[start + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`]; output has
    /// `(frames - 1) * hop + n_fft` samples.
    pub fn synthesize(&self, frames: &[Vec<Complex64>]) -> Vec<f64> {
        if frames.is_empty() {
            return Vec::new();
        }
        let len = (frames.len() - 1) * self.hop + self.n_fft;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let n_bins = self.n_bins();
        for (f, spec) in frames.iter().enumerate() {
            buf[..n_bins].copy_from_slice(spec);
            // Hermitian completion for a real signal.
            for k in n_bins..self.n_fft {
                buf[k] = buf[self.n_fft - k].conj();
            }
            buf[0].im = 0.0;
            if self.n_fft.is_multiple_of(2) {
                buf[self.n_fft / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = f * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                out[start + i] += buf[i].re / self.n_fft as f64 * w;
                norm[start + i] += w * w;
            }
        }
        // Near the ends only the window tails overlap; flooring the
        // normalizer keeps inconsistent spectra from blowing up there.
        let floor = NORM_FLOOR * self.window.iter().map(|w| w * w).sum::<f64>() / self.hop as f64;
        for (o, n) in out.iter_mut().zip(&norm) {
            *o /= n.max(floor);
        }
        out
    }
}
