use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{Strategy, TripletSample};
use crate::audio::{mix_at_ser, stft_mel, MelConfig, SerValue, Waveform};
use crate::error::{Error, Result};

pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";
pub const BASE_F0_HZ: f64 = 180.0;
pub const F0_STEP_HZ: f64 = 30.0;
const HARMONIC_AMPS: [f64; 3] = [1.0, 0.5, 0.3];
/// All speech partials fall inside this band.
pub const SPEECH_BAND_HZ: (f64, f64) = (150.0, 2900.0);
/// Environment content stays above this frequency.
pub const ENV_MIN_HZ: f64 = 3200.0;
pub const MIN_CHAR_HOPS: usize = 8;
pub const MAX_CHAR_HOPS: usize = 14;
const SPEECH_AMP: f64 = 0.3;
const ENV_RMS: f64 = 0.1;
const RAMP_SECS: f64 = 0.005;
const ENVELOPE_KNOT_SECS: f64 = 0.15;

/// Base frequency of a character's segment.
pub fn char_f0(c: char) -> Option<f64> {
    ALPHABET
        .find(c)
        .map(|i| BASE_F0_HZ + F0_STEP_HZ * i as f64)
}

/// Character whose base frequency is nearest to `f0`.
pub fn f0_to_char(f0: f64) -> char {
    let idx = ((f0 - BASE_F0_HZ) / F0_STEP_HZ).round().clamp(0.0, 25.0) as usize;
    ALPHABET.as_bytes()[idx] as char
}

/// Frequency of the strongest spectral peak of `x` within `[lo, hi]` Hz,
/// using a Hann window and 4x zero padding.
pub fn dominant_frequency(x: &[f64], sample_rate: u32, lo: f64, hi: f64) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let n = (4 * x.len()).next_power_of_two();
    let w = x.len() as f64;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| {
            let v = if i < x.len() {
                x[i] * (0.5 - 0.5 * (2.0 * PI * i as f64 / w).cos())
            } else {
                0.0
            };
            Complex64::new(v, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let hz = sample_rate as f64 / n as f64;
    let (k0, k1) = ((lo / hz).ceil() as usize, ((hi / hz).floor() as usize).min(n / 2));
    (k0..=k1)
        .filter(|&k| buf[k].norm() > 0.0)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .map(|k| k as f64 * hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvClass {
    FilteredNoise,
    ModulatedNoise,
    TonePad,
}

impl EnvClass {
    pub const ALL: [EnvClass; 3] = [Self::FilteredNoise, Self::ModulatedNoise, Self::TonePad];

    pub fn name(self) -> &'static str {
        match self {
            Self::FilteredNoise => "filtered_noise",
            Self::ModulatedNoise => "modulated_noise",
            Self::TonePad => "tone_pad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub min_chars: usize,
    pub max_chars: usize,
    /// Silent frames before and after the speech.
    pub lead_frames: usize,
    pub trail_frames: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            min_chars: 3,
            max_chars: 6,
            lead_frames: 0,
            trail_frames: 0,
        }
    }
}

/// Ground-truth stems of one synthetic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub speech: Waveform,
    pub env: Waveform,
    pub transcript: String,
    pub env_class: EnvClass,
    /// Frames per character.
    pub char_frames: usize,
    pub lead_frames: usize,
}

impl SynthSample {
    /// Mixes the stems at `ser` and analyzes all three signals.
    pub fn triplet(&self, ser: SerValue, cfg: &MelConfig) -> Result<TripletSample> {
        let mix = mix_at_ser(&self.speech, &self.env, ser)?;
        Ok(TripletSample {
            target_mel: stft_mel(&mix.wave, cfg)?,
            speech_mel: stft_mel(&self.speech, cfg)?,
            env_mel: stft_mel(&self.env, cfg)?,
            transcript: self.transcript.clone(),
            ser,
            strategy: Strategy::Synthetic,
        })
    }

    /// Sample range of character `i`.
    pub fn char_samples(&self, i: usize, cfg: &MelConfig) -> std::ops::Range<usize> {
        let offset = (cfg.n_fft - cfg.hop) / 2;
        let start = (self.lead_frames + i * self.char_frames) * cfg.hop + offset;
        start..start + self.char_frames * cfg.hop
    }
}

fn random_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.0..2.0 * PI)
}

/// White noise band-limited to `[lo, hi]` Hz, zero-phase FFT mask.
fn band_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, sr: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        let hz = bin as f64 * sr / len as f64;
        if hz < lo || hz > hi {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

fn slow_envelope<R: Rng + ?Sized>(rng: &mut R, len: usize, sr: f64) -> Vec<f64> {
    let step = ((ENVELOPE_KNOT_SECS * sr) as usize).max(1);
    let knots: Vec<f64> = (0..len / step + 2).map(|_| rng.random_range(0.3..1.0)).collect();
    (0..len)
        .map(|i| {
            let k = i / step;
            let frac = (i % step) as f64 / step as f64;
            knots[k] * (1.0 - frac) + knots[k + 1] * frac
        })
        .collect()
}

fn synth_env<R: Rng + ?Sized>(rng: &mut R, class: EnvClass, len: usize, sr: f64) -> Vec<f64> {
    let nyquist = sr / 2.0;
    let mut x = match class {
        EnvClass::FilteredNoise => band_noise(rng, len, sr, ENV_MIN_HZ + 200.0, (6000.0f64).min(nyquist)),
        EnvClass::ModulatedNoise => {
            let rate = rng.random_range(3.0..6.0);
            let phase = random_phase(rng);
            band_noise(rng, len, sr, 4000.0f64.min(nyquist), (7600.0f64).min(nyquist))
                .into_iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + 0.7 * (2.0 * PI * rate * i as f64 / sr + phase).sin()))
                .collect()
        }
        EnvClass::TonePad => {
            let tones: Vec<(f64, f64)> = (0..3)
                .map(|_| (rng.random_range(ENV_MIN_HZ + 200.0..(7400.0f64).min(nyquist)), random_phase(rng)))
                .collect();
            (0..len)
                .map(|i| {
                    tones
                        .iter()
                        .map(|(f, p)| (2.0 * PI * f * i as f64 / sr + p).sin())
                        .sum::<f64>()
                        / 3.0
                })
                .collect()
        }
    };
    for (v, e) in x.iter_mut().zip(slow_envelope(rng, len, sr)) {
        *v *= e;
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= ENV_RMS / rms);
    }
    x
}

/// Random transcript, speech and environment stems on the mel frame grid:
/// the recording spans exactly `lead + chars * char_frames + trail` frames.
pub fn synth_sample<R: Rng + ?Sized>(rng: &mut R, cfg: &MelConfig, opts: &SynthOptions) -> Result<SynthSample> {
    cfg.validate()?;
    if opts.min_chars == 0 || opts.min_chars > opts.max_chars {
        return Err(Error::InvalidConfig(format!(
            "character range {}..={}",
            opts.min_chars, opts.max_chars
        )));
    }
    if cfg.fmax < SPEECH_BAND_HZ.1 || (cfg.sample_rate as f64) / 2.0 < 7600.0 {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs a sample rate of at least 15.2 kHz".into(),
        ));
    }
    let sr = cfg.sample_rate as f64;
    let k = rng.random_range(opts.min_chars..=opts.max_chars);
    let letters: Vec<char> = ALPHABET.chars().collect();
    let transcript: String = (0..k).map(|_| letters[rng.random_range(0..letters.len())]).collect();
    let char_frames = rng.random_range(MIN_CHAR_HOPS..=MAX_CHAR_HOPS);
    let n_frames = opts.lead_frames + k * char_frames + opts.trail_frames;
    let len = (n_frames - 1) * cfg.hop + cfg.n_fft;

    let mut sample = SynthSample {
        speech: Waveform::silence(0, cfg.sample_rate),
        env: Waveform::silence(0, cfg.sample_rate),
        transcript,
        env_class: EnvClass::ALL[rng.random_range(0..3)],
        char_frames,
        lead_frames: opts.lead_frames,
    };
    let ramp = (RAMP_SECS * sr) as usize;
    let mut speech = vec![0.0; len];
    for (i, c) in sample.transcript.chars().enumerate() {
        let f0 = char_f0(c).expect("alphabet character");
        let range = sample.char_samples(i, cfg);
        let seg_len = range.len();
        let phases: Vec<f64> = HARMONIC_AMPS.iter().map(|_| random_phase(rng)).collect();
        for (n, s) in speech[range].iter_mut().enumerate() {
            let edge = n.min(seg_len - 1 - n);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let tau = n as f64 / sr;
            let tone: f64 = HARMONIC_AMPS
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (2.0 * PI * f0 * (h + 1) as f64 * tau + p).sin())
                .sum();
            *s = SPEECH_AMP * env * tone;
        }
    }
    sample.speech = Waveform::new(speech, cfg.sample_rate)?;
    sample.env = Waveform::new(synth_env(rng, sample.env_class, len, sr), cfg.sample_rate)?;
    Ok(sample)
}
