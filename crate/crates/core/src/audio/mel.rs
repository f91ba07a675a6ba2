use ndarray::{s, Array2, ArrayView2};

use super::stft::{frame_count, Stft};
use super::Waveform;
use crate::error::{Error, Result};

/// Floor added to mel energies before the log.
pub const LOG_EPS: f64 = 1e-5;

/// Framing and filterbank geometry of the mel front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 400,
            hop: 160,
            n_mels: 40,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "need 0 < hop ({}) <= n_fft ({})",
                self.hop, self.n_fft
            )));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin, self.fmax
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.n_fft as f64
    }

    pub fn frames_for(&self, len: usize) -> usize {
        frame_count(len, self.n_fft, self.hop)
    }

    /// Center frequency of each mel band, in Hz.
    pub fn band_centers(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.fmin), hz_to_mel(self.fmax));
        let step = (hi - lo) / (self.n_mels + 1) as f64;
        (1..=self.n_mels)
            .map(|m| mel_to_hz(lo + step * m as f64))
            .collect()
    }
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, `n_mels x n_bins`.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, cfg.n_bins()));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..cfg.n_bins() {
            let f = cfg.bin_hz(k);
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Log-mel energies, `F x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Array2<f64>,
    config: MelConfig,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f64>, config: MelConfig) -> Result<Self> {
        if values.nrows() != config.n_mels {
            return Err(Error::ShapeMismatch(format!(
                "mel has {} rows, config says {}",
                values.nrows(),
                config.n_mels
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::ShapeMismatch("mel needs at least one frame".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        Ok(Self { values, config })
    }

    /// A mel whose every entry is `log(LOG_EPS)`.
    pub fn silent(n_frames: usize, config: MelConfig) -> Self {
        Self {
            values: Array2::from_elem((config.n_mels, n_frames.max(1)), LOG_EPS.ln()),
            config,
        }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Columns `[start, end)`.
    pub fn frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames() {
            return Err(Error::InvalidInput(format!(
                "frame range {start}..{end} outside 0..{}",
                self.n_frames()
            )));
        }
        Ok(Self {
            values: self.values.slice(s![.., start..end]).to_owned(),
            config: self.config,
        })
    }

    /// Loops or truncates columns to exactly `n` frames.
    pub fn tiled(&self, n: usize) -> Self {
        let src = self.n_frames();
        let mut values = Array2::zeros((self.n_mels(), n.max(1)));
        for j in 0..n.max(1) {
            values.column_mut(j).assign(&self.values.column(j % src));
        }
        Self {
            values,
            config: self.config,
        }
    }

    /// Sum of linear mel energy per frame.
    pub fn column_energy(&self) -> Vec<f64> {
        self.values
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|v| (v.exp() - LOG_EPS).max(0.0)).sum())
            .collect()
    }
}

/// Power-spectrum mel analysis with `log(energy + 1e-5)` compression.
pub fn stft_mel(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if wave.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRateMismatch(wave.sample_rate(), cfg.sample_rate));
    }
    if wave.len() < cfg.n_fft {
        return Err(Error::WaveTooShort {
            len: wave.len(),
            need: cfg.n_fft,
        });
    }
    let power = power_spectrogram(wave.samples(), cfg);
    let mel = mel_filterbank(cfg).dot(&power);
    let values = mel.mapv(|e| (e + LOG_EPS).ln());
    MelSpectrogram::new(values, *cfg)
}

/// `n_bins x N` power spectrogram.
pub(crate) fn power_spectrogram(x: &[f64], cfg: &MelConfig) -> Array2<f64> {
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let frames = stft.analyze(x);
    let mut power = Array2::zeros((cfg.n_bins(), frames.len()));
    for (j, frame) in frames.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            power[[k, j]] = c.norm_sqr();
        }
    }
    power
}
