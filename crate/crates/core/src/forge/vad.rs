use crate::audio::{MelConfig, Waveform};
use crate::audio::stft::frame_count;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD_DB: f64 = 10.0;
pub const HYSTERESIS_FRAMES: usize = 2;
const FLOOR_PERCENTILE: f64 = 0.05;

/// Per-frame speech decisions on the mel frame grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadLabels {
    labels: Vec<bool>,
    n_fft: usize,
    hop: usize,
}

impl VadLabels {
    pub fn new(labels: Vec<bool>, cfg: &MelConfig) -> Self {
        Self {
            labels,
            n_fft: cfg.n_fft,
            hop: cfg.hop,
        }
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn speech_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn non_speech_count(&self) -> usize {
        self.len() - self.speech_count()
    }

    /// Per-sample speech flags: a sample is speech when any speech
    /// frame's window covers it. The last window extends to the end.
    pub fn sample_mask(&self, wave_len: usize) -> Vec<bool> {
        let mut mask = vec![false; wave_len];
        let n = self.labels.len();
        for (i, &speech) in self.labels.iter().enumerate() {
            if speech {
                let start = (i * self.hop).min(wave_len);
                let end = if i + 1 == n { wave_len } else { (i * self.hop + self.n_fft).min(wave_len) };
                mask[start..end].fill(true);
            }
        }
        mask
    }
}

fn frame_rms_db(x: &[f64], n_fft: usize, hop: usize) -> Vec<f64> {
    (0..frame_count(x.len(), n_fft, hop))
        .map(|f| {
            let frame = &x[f * hop..f * hop + n_fft];
            let ms = frame.iter().map(|v| v * v).sum::<f64>() / n_fft as f64;
            if ms > 0.0 {
                10.0 * ms.log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Flips runs of at most `max_run` frames to their surroundings.
fn debounce(labels: &mut [bool], max_run: usize) {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            runs.push((start, i));
            start = i;
        }
    }
    if runs.len() < 2 {
        return;
    }
    for &(a, b) in &runs {
        if b - a <= max_run {
            let v = !labels[a];
            labels[a..b].fill(v);
        }
    }
}

/// Energy detector: a frame is speech when its RMS exceeds the 5th
/// percentile frame RMS by more than `threshold_db`.
pub fn energy_vad(wave: &Waveform, cfg: &MelConfig, threshold_db: f64) -> Result<VadLabels> {
    cfg.validate()?;
    if wave.len() < cfg.n_fft {
        return Err(Error::WaveTooShort {
            len: wave.len(),
            need: cfg.n_fft,
        });
    }
    if !threshold_db.is_finite() || threshold_db < 0.0 {
        return Err(Error::InvalidConfig(format!("threshold {threshold_db} dB")));
    }
    let db = frame_rms_db(wave.samples(), cfg.n_fft, cfg.hop);
    let mut sorted = db.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[((sorted.len() - 1) as f64 * FLOOR_PERCENTILE).floor() as usize];
    let loudest = sorted[sorted.len() - 1];
    let mut labels: Vec<bool> = if loudest == f64::NEG_INFINITY {
        vec![false; db.len()]
    } else if loudest - floor <= threshold_db {
        // No quiet frames to contrast against.
        vec![true; db.len()]
    } else {
        db.iter().map(|&d| d > floor + threshold_db).collect()
    };
    debounce(&mut labels, HYSTERESIS_FRAMES);
    Ok(VadLabels::new(labels, cfg))
}

/// Concatenates the samples outside every speech frame's window.
pub fn env_from_vad(wave: &Waveform, labels: &VadLabels) -> Result<Waveform> {
    if labels.non_speech_count() == 0 {
        return Err(Error::NoNonSpeech);
    }
    let x = wave.samples();
    let out = x
        .iter()
        .zip(labels.sample_mask(x.len()))
        .filter(|(_, speech)| !speech)
        .map(|(&v, _)| v)
        .collect();
    Waveform::new(out, wave.sample_rate())
}

/// The input with non-speech samples zeroed.
pub(crate) fn speech_from_vad(wave: &Waveform, labels: &VadLabels) -> Result<Waveform> {
    let mask = labels.sample_mask(wave.len());
    let x = wave
        .samples()
        .iter()
        .zip(mask)
        .map(|(&v, speech)| if speech { v } else { 0.0 })
        .collect();
    Waveform::new(x, wave.sample_rate())
}
