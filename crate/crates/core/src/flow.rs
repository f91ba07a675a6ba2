//! Flow matching on straight-line noise-to-data paths: training draws,
//! the masked objective, ODE integration and infilling synthesis.

use ndarray::{s, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{griffin_lim, MelSpectrogram, SerValue, Waveform};
use crate::denoiser::{cond_vector, denoise_forward, DenoiserParams};
use crate::error::{Error, Result};
use crate::forge::TripletSample;
use crate::text::{embed_text, estimate_target_length, extend_with_filler, tokenize, CharVocab, ExtendedTokens};

/// Per-frame mask, `true` = frame is generated (hidden from the context).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalMask {
    frames: Vec<bool>,
}

impl TemporalMask {
    pub fn new(frames: Vec<bool>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("mask over zero frames".into()));
        }
        Ok(Self { frames })
    }

    /// Frames `[start, start + len)` of `n` masked.
    pub fn span(n: usize, start: usize, len: usize) -> Result<Self> {
        if start + len > n {
            return Err(Error::InvalidInput(format!("span {start}+{len} exceeds {n} frames")));
        }
        Self::new((0..n).map(|i| i >= start && i < start + len).collect())
    }

    pub fn all(n: usize) -> Result<Self> {
        Self::span(n, 0, n)
    }

    pub fn frames(&self) -> &[bool] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.frames.iter().filter(|&&m| m).count()
    }

    pub fn is_masked(&self, frame: usize) -> bool {
        self.frames[frame]
    }

    /// `(1 - m) ⊙ x` over the columns of `x`.
    pub fn unmasked_part(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} frames, matrix has {}",
                self.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, &m) in self.frames.iter().enumerate() {
            if m {
                out.column_mut(j).fill(0.0);
            }
        }
        Ok(out)
    }
}

/// One contiguous masked span with length uniform in
/// `[min_frac * n, max_frac * n]` and uniform position.
pub fn sample_mask<R: Rng + ?Sized>(n: usize, rng: &mut R, min_frac: f64, max_frac: f64) -> Result<TemporalMask> {
    if !(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "mask fractions must satisfy 0 < min <= max <= 1, got {min_frac}, {max_frac}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("mask over zero frames".into()));
    }
    let frac = if min_frac == max_frac {
        min_frac
    } else {
        rng.random_range(min_frac..=max_frac)
    };
    let len = ((frac * n as f64).round() as usize).clamp(1, n);
    let start = rng.random_range(0..=n - len);
    TemporalMask::span(n, start, len)
}

/// A point on the straight path from noise to data.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint {
    pub x_t: Array2<f64>,
    pub t: f64,
    pub target: Array2<f64>,
}

/// `x_t = (1 - t) x0 + t x1`, target velocity `x1 - x0`.
pub fn flow_point(x0: &Array2<f64>, x1: &Array2<f64>, t: f64) -> Result<FlowPoint> {
    if x0.dim() != x1.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise is {:?}, data is {:?}",
            x0.dim(),
            x1.dim()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("flow time {t} outside [0, 1]")));
    }
    let x_t = x0 * (1.0 - t) + x1 * t;
    Ok(FlowPoint {
        x_t,
        t,
        target: x1 - x0,
    })
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Everything one training example feeds to the network and the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDraw {
    pub x_t: Array2<f64>,
    pub speech_ctx: Array2<f64>,
    pub env_ctx: Array2<f64>,
    pub tokens: ExtendedTokens,
    pub t: f64,
    pub ser: SerValue,
    pub mask: TemporalMask,
    pub target: Array2<f64>,
}

pub fn make_training_draw<R: Rng + ?Sized>(
    triplet: &TripletSample,
    vocab: &CharVocab,
    rng: &mut R,
    min_frac: f64,
    max_frac: f64,
) -> Result<TrainingDraw> {
    triplet.validate()?;
    let x1 = triplet.target_mel.values().to_owned();
    let (f, n) = x1.dim();
    let mask = sample_mask(n, rng, min_frac, max_frac)?;
    let t: f64 = rng.random_range(0.0..=1.0);
    let x0 = standard_normal(rng, f, n);
    let point = flow_point(&x0, &x1, t)?;
    let speech_ctx = mask.unmasked_part(&triplet.speech_mel.values().to_owned())?;
    let env_ctx = mask.unmasked_part(&triplet.env_mel.tiled(n).into_values())?;
    let tokens = extend_with_filler(&tokenize(&triplet.transcript, vocab)?, n, vocab)?;
    Ok(TrainingDraw {
        x_t: point.x_t,
        speech_ctx,
        env_ctx,
        tokens,
        t,
        ser: triplet.ser,
        mask,
        target: point.target,
    })
}

/// Masked, normalized squared error and its gradient w.r.t. `v`.
pub fn masked_mse_with_grad(
    v: &Array2<f64>,
    target: &Array2<f64>,
    mask: &TemporalMask,
) -> Result<(f64, Array2<f64>)> {
    if v.dim() != target.dim() || v.ncols() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "velocity {:?}, target {:?}, mask {}",
            v.dim(),
            target.dim(),
            mask.len()
        )));
    }
    let m = mask.masked_count();
    if m == 0 {
        return Err(Error::InvalidInput("mask selects no frames".into()));
    }
    let norm = (m * v.nrows()) as f64;
    let mut grad = Array2::zeros(v.dim());
    let mut loss = 0.0;
    for j in (0..v.ncols()).filter(|&j| mask.is_masked(j)) {
        let diff = &v.column(j) - &target.column(j);
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        grad.column_mut(j).assign(&(diff * (2.0 / norm)));
    }
    Ok((loss / norm, grad))
}

/// Batch mean of the masked objective.
pub fn cfm_loss(params: &DenoiserParams, batch: &[TrainingDraw]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = 0.0;
    for draw in batch {
        let text = embed_text(&draw.tokens, &params.text)?;
        let c = cond_vector(draw.t, draw.ser, params)?;
        let v = denoise_forward(&draw.x_t, &draw.speech_ctx, &draw.env_ctx, text.view(), &c, params)?;
        total += masked_mse_with_grad(&v, &draw.target, &draw.mask)?.0;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Euler,
    Midpoint,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::Euler),
            "midpoint" => Ok(Self::Midpoint),
            other => Err(Error::InvalidConfig(format!("unknown method {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub method: Method,
    pub seed: u64,
    /// Phase-reconstruction iterations used when a waveform is requested.
    pub griffin_lim_iters: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 32,
            method: Method::Euler,
            seed: 0,
            griffin_lim_iters: 64,
        }
    }
}

/// Integrates `dx/dt = v(x, t)` from 0 to 1 on a uniform grid.
pub fn integrate<V>(mut velocity: V, x0: &Array2<f64>, cfg: &SamplerConfig) -> Result<Array2<f64>>
where
    V: FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
{
    if cfg.n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
    }
    let h = 1.0 / cfg.n_steps as f64;
    let mut x = x0.clone();
    for i in 0..cfg.n_steps {
        let t = i as f64 * h;
        let v = velocity(&x, t)?;
        let step = match cfg.method {
            Method::Euler => v,
            Method::Midpoint => {
                let mid = &x + &(&v * (h / 2.0));
                velocity(&mid, t + h / 2.0)?
            }
        };
        x.scaled_add(h, &step);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ODE state at step {}", i + 1)));
        }
    }
    Ok(x)
}

/// Inputs for reference-conditioned generation.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisRequest<'a> {
    /// Clean speech of the reference, `F x N_ref`.
    pub ref_mel: &'a MelSpectrogram,
    pub ref_text: &'a str,
    /// Background prompt; tiled or cut to `N_ref`.
    pub env_prompt: &'a MelSpectrogram,
    pub gen_text: &'a str,
    pub ser: SerValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    pub wave: Waveform,
}

/// Generates the mel for `gen_text` only (reference frames discarded).
pub fn synthesize_mel(
    params: &DenoiserParams,
    vocab: &CharVocab,
    req: &SynthesisRequest<'_>,
    sampler: &SamplerConfig,
) -> Result<MelSpectrogram> {
    let cfg = &params.config;
    let mel_cfg = *req.ref_mel.config();
    if req.ref_mel.n_mels() != cfg.n_mels || req.env_prompt.n_mels() != cfg.n_mels {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} mel bins, got reference {} and environment {}",
            cfg.n_mels,
            req.ref_mel.n_mels(),
            req.env_prompt.n_mels()
        )));
    }
    if req.ref_mel.n_frames() == 0 || req.env_prompt.n_frames() == 0 {
        return Err(Error::InvalidInput("empty reference or environment mel".into()));
    }
    let n_ref = req.ref_mel.n_frames();
    let n_gen = estimate_target_length(req.gen_text, req.ref_text, n_ref)?;
    let n_total = n_ref + n_gen;
    if n_total > cfg.max_frames {
        return Err(Error::DurationOverflow {
            frames: n_total,
            max: cfg.max_frames,
        });
    }

    let mut speech_ctx = Array2::zeros((cfg.n_mels, n_total));
    speech_ctx.slice_mut(s![.., ..n_ref]).assign(&req.ref_mel.values());
    let mut env_ctx = Array2::zeros((cfg.n_mels, n_total));
    env_ctx
        .slice_mut(s![.., ..n_ref])
        .assign(&req.env_prompt.tiled(n_ref).values());

    let text = format!("{}{}", req.ref_text, req.gen_text);
    let tokens = extend_with_filler(&tokenize(&text, vocab)?, n_total, vocab)?;
    let text_feat = embed_text(&tokens, &params.text)?;

    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let x0 = standard_normal(&mut rng, cfg.n_mels, n_total);
    let x1 = integrate(
        |x, t| {
            let c = cond_vector(t.min(1.0), req.ser, params)?;
            denoise_forward(x, &speech_ctx, &env_ctx, text_feat.view(), &c, params)
        },
        &x0,
        sampler,
    )?;
    MelSpectrogram::new(x1.slice(s![.., n_ref..]).to_owned(), mel_cfg)
}

/// [`synthesize_mel`] followed by phase reconstruction.
pub fn synthesize(
    params: &DenoiserParams,
    vocab: &CharVocab,
    req: &SynthesisRequest<'_>,
    sampler: &SamplerConfig,
) -> Result<Synthesis> {
    let mel = synthesize_mel(params, vocab, req, sampler)?;
    let wave = griffin_lim(&mel, sampler.griffin_lim_iters, sampler.seed)?;
    Ok(Synthesis { mel, wave })
}

/// Regenerates the tail of a training triplet given its first `ref_chars`
/// characters as reference. Returns `(generated, ground truth)`.
pub fn reconstruct(
    params: &DenoiserParams,
    vocab: &CharVocab,
    triplet: &TripletSample,
    ref_chars: usize,
    sampler: &SamplerConfig,
) -> Result<(MelSpectrogram, MelSpectrogram)> {
    triplet.validate()?;
    let chars: Vec<char> = triplet.transcript.chars().collect();
    if ref_chars == 0 || ref_chars >= chars.len() {
        return Err(Error::InvalidInput(format!(
            "reference must cover 1..{} characters, got {ref_chars}",
            chars.len()
        )));
    }
    let n = triplet.target_mel.n_frames();
    let n_ref = n * ref_chars / chars.len();
    if n_ref == 0 {
        return Err(Error::InvalidInput("reference span has no frames".into()));
    }
    let ref_text: String = chars[..ref_chars].iter().collect();
    let gen_text: String = chars[ref_chars..].iter().collect();
    let ref_mel = triplet.speech_mel.frames(0, n_ref)?;
    let env_prompt = triplet.env_mel.tiled(n).frames(0, n_ref)?;
    let req = SynthesisRequest {
        ref_mel: &ref_mel,
        ref_text: &ref_text,
        env_prompt: &env_prompt,
        gen_text: &gen_text,
        ser: triplet.ser,
    };
    let generated = synthesize_mel(params, vocab, &req, sampler)?;
    let end = (n_ref + generated.n_frames()).min(n);
    let truth = triplet.target_mel.frames(n_ref, end)?;
    Ok((generated.frames(0, end - n_ref)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelConfig;
    use crate::denoiser::DenoiserConfig;
    use crate::forge::{synth_sample, SynthOptions};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn full_fraction_masks_everything() {
        let m = sample_mask(17, &mut rng(1), 1.0, 1.0).unwrap();
        assert_eq!(m.masked_count(), 17);
        let m = sample_mask(1, &mut rng(2), 0.3, 1.0).unwrap();
        assert_eq!(m.frames(), &[true]);
    }

    #[test]
    fn mask_fraction_errors() {
        for (lo, hi) in [(0.0, 1.0), (0.6, 0.5), (0.5, 1.2)] {
            assert!(sample_mask(10, &mut rng(0), lo, hi).is_err());
        }
    }

    #[test]
    fn mean_masked_fraction() {
        let mut r = rng(3);
        let n = 200;
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|_| sample_mask(n, &mut r, 0.3, 1.0).unwrap().masked_count())
            .sum();
        let mean = total as f64 / (draws * n) as f64;
        assert!((0.60..=0.70).contains(&mean), "{mean}");
    }

    #[test]
    fn masks_are_one_contiguous_span() {
        let mut r = rng(4);
        for _ in 0..200 {
            let m = sample_mask(37, &mut r, 0.3, 1.0).unwrap();
            let f = m.frames();
            let starts = (0..f.len()).filter(|&i| f[i] && (i == 0 || !f[i - 1])).count();
            assert_eq!(starts, 1);
            assert!(m.masked_count() >= 11);
        }
    }

    #[test]
    fn flow_point_cases() {
        let mut r = rng(5);
        let x0 = standard_normal(&mut r, 4, 6);
        let x1 = standard_normal(&mut r, 4, 6);
        assert_eq!(flow_point(&x0, &x1, 0.0).unwrap().x_t, x0);
        assert_eq!(flow_point(&x0, &x1, 1.0).unwrap().x_t, x1);
        let zero = Array2::zeros((4, 6));
        let p = flow_point(&zero, &x1, 0.25).unwrap();
        assert_eq!(p.x_t, &x1 * 0.25);
        assert_eq!(p.target, x1);
        assert!(flow_point(&zero, &Array2::zeros((4, 5)), 0.5).is_err());
        assert!(flow_point(&x0, &x1, 1.5).is_err());
    }

    fn triplet(seed: u64) -> TripletSample {
        let cfg = MelConfig::default();
        let s = synth_sample(&mut rng(seed), &cfg, &SynthOptions::default()).unwrap();
        s.triplet(SerValue::new(0.5).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn training_draw_contexts() {
        let tr = triplet(6);
        let vocab = CharVocab::default();
        let d = make_training_draw(&tr, &vocab, &mut rng(7), 1.0, 1.0).unwrap();
        assert!(d.speech_ctx.iter().all(|&v| v == 0.0));
        assert!(d.env_ctx.iter().all(|&v| v == 0.0));
        assert_eq!(d.tokens.len(), tr.n_frames());
        for seed in 0..50 {
            let d = make_training_draw(&tr, &vocab, &mut rng(seed), 0.3, 1.0).unwrap();
            assert!(d.mask.masked_count() >= 1);
            for j in 0..tr.n_frames() {
                if !d.mask.is_masked(j) {
                    assert_eq!(d.speech_ctx.column(j), tr.speech_mel.values().column(j));
                }
            }
        }
        let a = make_training_draw(&tr, &vocab, &mut rng(8), 0.3, 1.0).unwrap();
        let b = make_training_draw(&tr, &vocab, &mut rng(8), 0.3, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_mse_cases() {
        let mut r = rng(9);
        let u = standard_normal(&mut r, 5, 8);
        let mask = TemporalMask::span(8, 2, 3).unwrap();
        assert_eq!(masked_mse_with_grad(&u, &u, &mask).unwrap().0, 0.0);
        assert_eq!(masked_mse_with_grad(&(&u + 1.0), &u, &mask).unwrap().0, 1.0);
        // Unmasked frames carry no loss.
        let mut v = u.clone();
        v.column_mut(0).fill(100.0);
        assert_eq!(masked_mse_with_grad(&v, &u, &mask).unwrap().0, 0.0);
        let l1 = masked_mse_with_grad(&(&u + 0.3), &u, &mask).unwrap().0;
        let l2 = masked_mse_with_grad(&(&u + 0.6), &u, &mask).unwrap().0;
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn cfm_loss_batch_mean() {
        let cfg = DenoiserConfig {
            n_mels: 40,
            ..DenoiserConfig::tiny()
        };
        let params = DenoiserParams::init(&mut rng(10), cfg).unwrap();
        let tr = triplet(11);
        let d = make_training_draw(&tr, &CharVocab::default(), &mut rng(12), 0.3, 1.0).unwrap();
        let single = cfm_loss(&params, std::slice::from_ref(&d)).unwrap();
        let double = cfm_loss(&params, &[d.clone(), d]).unwrap();
        assert_eq!(single, double);
        assert!(cfm_loss(&params, &[]).is_err());
    }

    fn scalar_field(method: Method, n: usize) -> f64 {
        let cfg = SamplerConfig {
            n_steps: n,
            method,
            ..Default::default()
        };
        integrate(|x, _| Ok(x.clone()), &Array2::from_elem((1, 1), 1.0), &cfg).unwrap()[[0, 0]]
    }

    #[test]
    fn integrator_closed_forms() {
        assert_eq!(scalar_field(Method::Euler, 2), 2.25);
        let mid = scalar_field(Method::Midpoint, 2);
        assert!((mid - 1.625f64.powi(2)).abs() < 1e-15);
        assert!((mid - 2.64063).abs() < 1e-5);
        let u = Array2::from_shape_fn((3, 4), |(i, j)| i as f64 - 0.5 * j as f64);
        let x0 = Array2::from_elem((3, 4), 0.25);
        for method in [Method::Euler, Method::Midpoint] {
            for n in [1, 3, 7] {
                let cfg = SamplerConfig {
                    n_steps: n,
                    method,
                    ..Default::default()
                };
                let x = integrate(|_, _| Ok(u.clone()), &x0, &cfg).unwrap();
                for (a, b) in x.iter().zip((&x0 + &u).iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn integrator_orders() {
        let steps = [2usize, 4, 8, 16, 32, 64];
        for (method, lo, hi) in [(Method::Euler, 0.85, 1.15), (Method::Midpoint, 1.8, 2.2)] {
            let pts: Vec<(f64, f64)> = steps
                .iter()
                .map(|&n| ((n as f64).ln(), (scalar_field(method, n) - std::f64::consts::E).abs().ln()))
                .collect();
            let slope = -least_squares_slope(&pts);
            assert!((lo..=hi).contains(&slope), "{method:?} slope {slope}");
        }
    }

    fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn integrator_rejects_zero_steps_and_divergence() {
        let x0 = Array2::from_elem((1, 1), 1.0);
        let cfg = SamplerConfig {
            n_steps: 0,
            ..Default::default()
        };
        assert!(integrate(|x, _| Ok(x.clone()), &x0, &cfg).is_err());
        let cfg = SamplerConfig::default();
        assert!(matches!(
            integrate(|x, _| Ok(x.mapv(|_| f64::INFINITY)), &x0, &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    fn synth_setup() -> (DenoiserParams, TripletSample) {
        let cfg = DenoiserConfig {
            n_mels: 40,
            ..DenoiserConfig::tiny()
        };
        let mut p = DenoiserParams::init(&mut rng(20), cfg).unwrap();
        // Wake the modulation heads so SER reaches the output.
        let mut r = rng(21);
        for block in &mut p.blocks {
            block.modulation.w.mapv_inplace(|_| r.random_range(-0.05..0.05));
        }
        let mut tr = triplet(22);
        tr.transcript = "abcd".into();
        (p, tr)
    }

    #[test]
    fn synthesis_shape_and_determinism() {
        let (p, tr) = synth_setup();
        let vocab = CharVocab::default();
        let ref_mel = tr.speech_mel.frames(0, 20).unwrap();
        let req = SynthesisRequest {
            ref_mel: &ref_mel,
            ref_text: "ab",
            env_prompt: &tr.env_mel,
            gen_text: "cde",
            ser: SerValue::new(0.5).unwrap(),
        };
        let sampler = SamplerConfig {
            n_steps: 4,
            griffin_lim_iters: 4,
            ..Default::default()
        };
        let a = synthesize(&p, &vocab, &req, &sampler).unwrap();
        assert_eq!(a.mel.n_frames(), 30);
        let b = synthesize(&p, &vocab, &req, &sampler).unwrap();
        assert_eq!(a, b);
        let other = synthesize_mel(&p, &vocab, &SynthesisRequest { ser: SerValue::new(0.9).unwrap(), ..req }, &sampler)
            .unwrap();
        assert_ne!(a.mel, other);
    }

    #[test]
    fn synthesis_overflow_and_empty_text() {
        let (p, tr) = synth_setup();
        let vocab = CharVocab::default();
        let ref_mel = tr.speech_mel.frames(0, 20).unwrap();
        let long = "x".repeat(200);
        let req = SynthesisRequest {
            ref_mel: &ref_mel,
            ref_text: "ab",
            env_prompt: &tr.env_mel,
            gen_text: &long,
            ser: SerValue::new(0.5).unwrap(),
        };
        let sampler = SamplerConfig::default();
        assert!(matches!(
            synthesize_mel(&p, &vocab, &req, &sampler),
            Err(Error::DurationOverflow { .. })
        ));
        let req = SynthesisRequest { gen_text: "", ..req };
        assert!(synthesize_mel(&p, &vocab, &req, &sampler).is_err());
    }

    #[test]
    fn reconstruct_aligns_with_target() {
        let (p, tr) = synth_setup();
        let sampler = SamplerConfig {
            n_steps: 2,
            ..Default::default()
        };
        let (gen, truth) = reconstruct(&p, &CharVocab::default(), &tr, 2, &sampler).unwrap();
        assert_eq!(gen.values().dim(), truth.values().dim());
        assert_eq!(gen.n_frames(), tr.n_frames() / 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn flow_point_scales_linearly(seed in any::<u64>(), t in 0.0f64..=1.0, a in -4.0f64..4.0) {
            let mut r = rng(seed);
            let x0 = standard_normal(&mut r, 3, 5);
            let x1 = standard_normal(&mut r, 3, 5);
            let base = flow_point(&x0, &x1, t).unwrap().x_t;
            let scaled = flow_point(&(&x0 * a), &(&x1 * a), t).unwrap().x_t;
            for (s, b) in scaled.iter().zip(base.iter()) {
                prop_assert!((s - a * b).abs() <= 1e-12 * (1.0 + b.abs() * a.abs()));
            }
        }

        #[test]
        fn mask_span_bounds(n in 1usize..300, seed in any::<u64>()) {
            let m = sample_mask(n, &mut rng(seed), 0.3, 1.0).unwrap();
            prop_assert_eq!(m.len(), n);
            prop_assert!(m.masked_count() >= 1);
            prop_assert!(m.masked_count() as f64 >= (0.3 * n as f64).round().max(1.0));
        }
    }
}
