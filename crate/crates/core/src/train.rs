//! AdamW optimization over frame-budget batches, with checkpoints and a
//! per-step loss log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::MelConfig;
use crate::denoiser::{load_checkpoint, loss_and_gradients, save_checkpoint, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::flow::make_training_draw;
use crate::forge::TripletSample;
use crate::nn::Params;
use crate::text::CharVocab;

pub const LOSS_LOG: &str = "loss.log";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub frames_per_batch: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub mask_min_frac: f64,
    pub mask_max_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 1e-4,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            frames_per_batch: 2048,
            seed: 0,
            checkpoint_every: 1000,
            mask_min_frac: 0.3,
            mask_max_frac: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &DenoiserConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        let (b1, b2) = self.betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad(format!("betas must lie in (0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight decay non-negative".into());
        }
        if self.frames_per_batch < model.max_frames {
            return bad(format!(
                "frames_per_batch {} is below the model's max frames {}",
                self.frames_per_batch, model.max_frames
            ));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        if !(self.mask_min_frac > 0.0 && self.mask_min_frac <= self.mask_max_frac && self.mask_max_frac <= 1.0) {
            return bad("mask fractions must satisfy 0 < min <= max <= 1".into());
        }
        Ok(())
    }
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub first: DenoiserParams,
    pub second: DenoiserParams,
}

impl OptimizerState {
    pub fn new(params: &DenoiserParams) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }
}

/// One decoupled-weight-decay Adam update. Parameters and moments are
/// kept at `f32` precision afterwards.
pub fn adamw_step(
    params: &mut DenoiserParams,
    grads: &DenoiserParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let grads = grads.tensors();
    let mut m = state.first.tensors_mut();
    let mut v = state.second.tensors_mut();
    let mut p = params.tensors_mut();
    if grads.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    for (i, (name, g)) in grads.iter().enumerate() {
        if g.shape() != p[i].1.shape() || m[i].1.shape() != p[i].1.shape() {
            return Err(Error::ShapeMismatch(format!("tensor {name}")));
        }
        ndarray::Zip::from(&mut p[i].1)
            .and(&mut m[i].1)
            .and(&mut v[i].1)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
                *p = *p * decay - cfg.lr * update;
            });
    }
    drop((m, v, p));
    params.round_to_f32();
    state.first.round_to_f32();
    state.second.round_to_f32();
    Ok(())
}

/// Shuffles sample indices and packs them greedily under the frame budget.
pub fn make_batches<R: Rng + ?Sized>(lengths: &[usize], frames_per_batch: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if lengths.is_empty() {
        return Err(Error::InvalidInput("no samples to batch".into()));
    }
    if let Some((i, &l)) = lengths.iter().enumerate().find(|(_, &l)| l > frames_per_batch) {
        return Err(Error::InvalidInput(format!(
            "sample {i} has {l} frames, more than the batch budget {frames_per_batch}"
        )));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for i in order {
        if used + lengths[i] > frames_per_batch && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        used += lengths[i];
        current.push(i);
    }
    batches.push(current);
    Ok(batches)
}

const INIT_STREAM: u64 = 0;
const STEP_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 1 << 62;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn batch_for_step(lengths: &[usize], cfg: &TrainConfig, step: usize) -> Result<Vec<usize>> {
    let mut remaining = step;
    for epoch in 0.. {
        let batches = make_batches(lengths, cfg.frames_per_batch, &mut stream_rng(cfg.seed, EPOCH_STREAM + epoch))?;
        if remaining < batches.len() {
            return Ok(batches[remaining].clone());
        }
        remaining -= batches.len();
    }
    unreachable!()
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step}.ckpt"))
}

/// A training job over in-memory samples.
#[derive(Debug, Clone)]
pub struct TrainRun<'a> {
    pub config: TrainConfig,
    pub model: DenoiserConfig,
    pub mel: MelConfig,
    pub vocab: &'a CharVocab,
    pub samples: &'a [TripletSample],
    pub out_dir: &'a Path,
    /// Continue from this checkpoint instead of a fresh init.
    pub resume: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_checkpoint: PathBuf,
    /// `(step, loss)` for the steps run in this call.
    pub losses: Vec<(usize, f64)>,
}

fn rewrite_log(path: &Path, up_to: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let kept: String = text
        .lines()
        .filter(|l| {
            l.split('\t')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|s| s <= up_to)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, kept)?;
    Ok(())
}

pub fn train(run: &TrainRun<'_>) -> Result<TrainReport> {
    let cfg = &run.config;
    cfg.validate(&run.model)?;
    if run.samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for s in run.samples {
        s.validate()?;
        if s.target_mel.n_mels() != run.model.n_mels {
            return Err(Error::ShapeMismatch(format!(
                "samples have {} mel bins, model expects {}",
                s.target_mel.n_mels(),
                run.model.n_mels
            )));
        }
        if s.n_frames() > run.model.max_frames {
            return Err(Error::DurationOverflow {
                frames: s.n_frames(),
                max: run.model.max_frames,
            });
        }
    }
    fs::create_dir_all(run.out_dir)?;
    let log_path = run.out_dir.join(LOSS_LOG);

    let (mut params, mut opt) = match run.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.params.config != run.model {
                return Err(Error::InvalidConfig("checkpoint model config differs from the run".into()));
            }
            let opt = ck.optimizer.unwrap_or_else(|| OptimizerState::new(&ck.params));
            rewrite_log(&log_path, opt.step)?;
            (ck.params, opt)
        }
        None => {
            let params = DenoiserParams::init(&mut stream_rng(cfg.seed, INIT_STREAM), run.model)?;
            let opt = OptimizerState::new(&params);
            if log_path.exists() {
                fs::remove_file(&log_path)?;
            }
            (params, opt)
        }
    };
    let mut log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;

    let lengths: Vec<usize> = run.samples.iter().map(TripletSample::n_frames).collect();
    let mut losses = Vec::new();
    let mut last_saved = None;
    if opt.step >= cfg.steps {
        let path = checkpoint_path(run.out_dir, opt.step);
        save_checkpoint(&path, &params, &run.mel, Some(&opt))?;
        return Ok(TrainReport {
            final_checkpoint: path,
            losses,
        });
    }
    while opt.step < cfg.steps {
        let step = opt.step;
        let mut rng = stream_rng(cfg.seed, STEP_STREAM + step as u64);
        let batch = batch_for_step(&lengths, cfg, step)?;
        let draws = batch
            .iter()
            .map(|&i| make_training_draw(&run.samples[i], run.vocab, &mut rng, cfg.mask_min_frac, cfg.mask_max_frac))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = match loss_and_gradients(&params, &draws) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged(step + 1)),
            Err(e) => return Err(e),
        };
        adamw_step(&mut params, &grads, &mut opt, cfg).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged(step + 1),
            e => e,
        })?;
        writeln!(log, "{}\t{loss}", opt.step)?;
        losses.push((opt.step, loss));
        if opt.step % cfg.checkpoint_every == 0 {
            let path = checkpoint_path(run.out_dir, opt.step);
            save_checkpoint(&path, &params, &run.mel, Some(&opt))?;
            last_saved = Some((opt.step, path));
        }
    }
    let final_checkpoint = match last_saved {
        Some((s, p)) if s == opt.step => p,
        _ => {
            let path = checkpoint_path(run.out_dir, opt.step);
            save_checkpoint(&path, &params, &run.mel, Some(&opt))?;
            path
        }
    };
    Ok(TrainReport {
        final_checkpoint,
        losses,
    })
}

/// Trailing moving average over at most `window` values.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Parses a `step<TAB>loss` log.
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<(usize, f64)>> {
    let path = path.as_ref();
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split('\t');
            let step = parts.next().and_then(|s| s.parse().ok());
            let loss = parts.next().and_then(|s| s.parse().ok());
            match (step, loss) {
                (Some(s), Some(v)) => Ok((s, v)),
                _ => Err(crate::error::format_err(path, format!("bad log line {l:?}"))),
            }
        })
        .collect()
}
