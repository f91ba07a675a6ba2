use std::path::Path;

use envtts::audio::{MelConfig, Waveform};
use envtts::denoiser::{save_checkpoint, DenoiserConfig, DenoiserParams};
use rand::SeedableRng;

/// Writes an untrained checkpoint small enough for quick synthesis.
pub fn tiny_checkpoint(path: &Path) {
    let mel = MelConfig::default();
    let cfg = DenoiserConfig {
        n_mels: mel.n_mels,
        max_frames: 96,
        ..DenoiserConfig::tiny()
    };
    let params = DenoiserParams::init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0), cfg).unwrap();
    save_checkpoint(path, &params, &mel, None).unwrap();
}

pub fn tone(len: usize, f: f64) -> Vec<f32> {
    (0..len)
        .map(|i| (0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin()) as f32)
        .collect()
}

#[allow(dead_code)]
pub fn wave(len: usize, f: f64) -> Waveform {
    Waveform::new(tone(len, f).into_iter().map(f64::from).collect(), 16000).unwrap()
}
