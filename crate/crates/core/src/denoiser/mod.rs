//! The velocity network: a DiT-style transformer over mel frames whose
//! blocks are modulated (adaLN-zero) by a conditioning vector built from
//! the flow time and the requested SER.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{denoise_forward, loss_and_gradients, ForwardCache, Velocity};

use ndarray::{Array1, ArrayView1, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use crate::audio::SerValue;
use crate::error::{Error, Result};
use crate::nn::{prefixed, silu, silu_grad, Attention, Linear, Params};
use crate::text::{TextEmbedderConfig, TextEmbedderParams};

/// Hyperparameters of the velocity network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub model_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub d_text: usize,
    pub n_mels: usize,
    pub max_frames: usize,
    pub ser_embed_dim: usize,
    pub time_embed_dim: usize,
    pub vocab_size: usize,
    pub text_blocks: usize,
    pub text_kernel: usize,
    pub text_expansion: usize,
    /// Add absolute sinusoidal positions after the input projection.
    pub positional_encoding: bool,
    /// Multiplier applied to the SER before its sinusoidal encoding.
    pub ser_embed_scale: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            model_dim: 128,
            n_blocks: 4,
            n_heads: 4,
            ff_mult: 4,
            d_text: 64,
            n_mels: 40,
            max_frames: 512,
            ser_embed_dim: 64,
            time_embed_dim: 64,
            vocab_size: crate::text::CharVocab::default().size(),
            text_blocks: 2,
            text_kernel: 7,
            text_expansion: 2,
            positional_encoding: true,
            ser_embed_scale: SER_EMBED_SCALE,
        }
    }
}

impl DenoiserConfig {
    /// The gradient-check geometry: F = 8, d = 32, two blocks.
    pub fn tiny() -> Self {
        Self {
            model_dim: 32,
            n_blocks: 2,
            n_heads: 2,
            ff_mult: 2,
            d_text: 16,
            n_mels: 8,
            max_frames: 64,
            ser_embed_dim: 16,
            time_embed_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model_dim", self.model_dim),
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("ff_mult", self.ff_mult),
            ("d_text", self.d_text),
            ("n_mels", self.n_mels),
            ("max_frames", self.max_frames),
            ("ser_embed_dim", self.ser_embed_dim),
            ("time_embed_dim", self.time_embed_dim),
            ("vocab_size", self.vocab_size),
            ("text_kernel", self.text_kernel),
            ("text_expansion", self.text_expansion),
            ("ser_embed_scale", self.ser_embed_scale),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if !self.ser_embed_dim.is_multiple_of(2) || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig("embedding widths must be even".into()));
        }
        Ok(())
    }

    pub fn text_config(&self) -> TextEmbedderConfig {
        TextEmbedderConfig {
            vocab_size: self.vocab_size,
            dim: self.d_text,
            n_blocks: self.text_blocks,
            kernel: self.text_kernel,
            expansion: self.text_expansion,
        }
    }

    /// Per-frame features entering the input projection.
    pub fn input_features(&self) -> usize {
        3 * self.n_mels + self.d_text
    }
}

/// Input multiplier of the flow-time encoding.
pub const TIME_EMBED_SCALE: f64 = 1000.0;
/// Default input multiplier of the SER encoding.
pub const SER_EMBED_SCALE: usize = 10;

/// Sinusoidal encoding of a scalar: interleaved `(sin, cos)` pairs over
/// frequencies `10000^(-i / (dim/2))`, applied to `1000 * value`.
pub fn sinusoidal_embed(value: f64, dim: usize) -> Result<Array1<f64>> {
    sinusoidal_embed_scaled(value, dim, TIME_EMBED_SCALE)
}

/// [`sinusoidal_embed`] with an explicit input multiplier.
pub fn sinusoidal_embed_scaled(value: f64, dim: usize, scale: f64) -> Result<Array1<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("sinusoidal width {dim} must be even")));
    }
    let half = dim / 2;
    let x = scale * value;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        out[2 * i] = (x * freq).sin();
        out[2 * i + 1] = (x * freq).cos();
    }
    Ok(out)
}

/// Two-layer MLP with SiLU, mapping a sinusoidal embedding to model width.
#[derive(Debug, Clone, PartialEq)]
pub struct CondMlp {
    pub hidden: Linear,
    pub out: Linear,
}

pub(crate) struct CondMlpCache {
    input: Array1<f64>,
    pre: Array1<f64>,
    act: Array1<f64>,
}

impl CondMlp {
    fn init<R: Rng + ?Sized>(rng: &mut R, inputs: usize, dim: usize) -> Self {
        Self {
            hidden: Linear::init(rng, inputs, dim),
            out: Linear::init(rng, dim, dim),
        }
    }

    pub(crate) fn forward(&self, x: ArrayView1<f64>) -> (Array1<f64>, CondMlpCache) {
        let pre = self.hidden.forward_vec(x);
        let act = pre.mapv(silu);
        let y = self.out.forward_vec(act.view());
        let cache = CondMlpCache {
            input: x.to_owned(),
            pre,
            act,
        };
        (y, cache)
    }

    pub(crate) fn backward(&self, cache: &CondMlpCache, dy: ArrayView1<f64>, grad: &mut CondMlp) {
        let d_act = self.out.backward_vec(cache.act.view(), dy, &mut grad.out);
        let d_pre = d_act * &cache.pre.mapv(silu_grad);
        self.hidden.backward_vec(cache.input.view(), d_pre.view(), &mut grad.hidden);
    }
}

impl Params for CondMlp {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("hidden", self.hidden.tensors())
            .chain(prefixed("out", self.out.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("hidden", self.hidden.tensors_mut())
            .chain(prefixed("out", self.out.tensors_mut()))
            .collect()
    }
}

/// One transformer block. `modulation` regresses, from `silu(c)`, the six
/// vectors `[shift, scale, gate]` for the attention and feed-forward
/// sub-layers; it starts at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DitBlock {
    pub modulation: Linear,
    pub attn: Attention,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl DitBlock {
    fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &DenoiserConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            modulation: Linear::zeros(d, 6 * d),
            attn: Attention::init(rng, d, cfg.n_heads),
            ff_in: Linear::init(rng, d, cfg.ff_mult * d),
            ff_out: Linear::init(rng, cfg.ff_mult * d, d),
        }
    }
}

impl Params for DitBlock {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("modulation", self.modulation.tensors())
            .chain(prefixed("attn", self.attn.tensors()))
            .chain(prefixed("ff_in", self.ff_in.tensors()))
            .chain(prefixed("ff_out", self.ff_out.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("modulation", self.modulation.tensors_mut())
            .chain(prefixed("attn", self.attn.tensors_mut()))
            .chain(prefixed("ff_in", self.ff_in.tensors_mut()))
            .chain(prefixed("ff_out", self.ff_out.tensors_mut()))
            .collect()
    }
}

/// Every learnable tensor of the model, including the text embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub text: TextEmbedderParams,
    pub input: Linear,
    pub time_mlp: CondMlp,
    pub ser_mlp: CondMlp,
    pub blocks: Vec<DitBlock>,
    pub output: Linear,
}

impl DenoiserParams {
    /// Fresh parameters. Modulation heads are zero, so every block starts
    /// as an identity residual. Values are rounded to `f32`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let text = TextEmbedderParams::init(rng, &config.text_config());
        let input = Linear::init(rng, config.input_features(), d);
        let time_mlp = CondMlp::init(rng, config.time_embed_dim, d);
        let ser_mlp = CondMlp::init(rng, config.ser_embed_dim, d);
        let blocks = (0..config.n_blocks).map(|_| DitBlock::init(rng, &config)).collect();
        let output = Linear::init(rng, d, config.n_mels);
        let mut params = Self {
            config,
            text,
            input,
            time_mlp,
            ser_mlp,
            blocks,
            output,
        };
        params.round_to_f32();
        Ok(params)
    }
}

impl Params for DenoiserParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut v: Vec<_> = prefixed("text", self.text.tensors())
            .chain(prefixed("input", self.input.tensors()))
            .chain(prefixed("time_mlp", self.time_mlp.tensors()))
            .chain(prefixed("ser_mlp", self.ser_mlp.tensors()))
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.tensors()));
        }
        v.extend(prefixed("output", self.output.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut v: Vec<_> = prefixed("text", self.text.tensors_mut())
            .chain(prefixed("input", self.input.tensors_mut()))
            .chain(prefixed("time_mlp", self.time_mlp.tensors_mut()))
            .chain(prefixed("ser_mlp", self.ser_mlp.tensors_mut()))
            .collect();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.tensors_mut()));
        }
        v.extend(prefixed("output", self.output.tensors_mut()));
        v
    }
}

/// The combined conditioning vector `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector(pub Array1<f64>);

pub(crate) struct CondCache {
    time: CondMlpCache,
    ser: CondMlpCache,
}

pub(crate) fn cond_forward(
    params: &DenoiserParams,
    t: f64,
    ser: SerValue,
) -> Result<(ConditioningVector, CondCache)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("flow time {t} outside [0, 1]")));
    }
    let cfg = &params.config;
    let te = sinusoidal_embed(t, cfg.time_embed_dim)?;
    let se = sinusoidal_embed_scaled(ser.value(), cfg.ser_embed_dim, cfg.ser_embed_scale as f64)?;
    let (ct, time) = params.time_mlp.forward(te.view());
    let (cs, ser) = params.ser_mlp.forward(se.view());
    Ok((ConditioningVector(ct + cs), CondCache { time, ser }))
}

pub(crate) fn cond_backward(
    params: &DenoiserParams,
    cache: &CondCache,
    dc: ArrayView1<f64>,
    grad: &mut DenoiserParams,
) {
    params.time_mlp.backward(&cache.time, dc, &mut grad.time_mlp);
    params.ser_mlp.backward(&cache.ser, dc, &mut grad.ser_mlp);
}

/// `c = TimeMLP(sin(t)) + SerMLP(sin(ser))`.
pub fn cond_vector(t: f64, ser: SerValue, params: &DenoiserParams) -> Result<ConditioningVector> {
    Ok(cond_forward(params, t, ser)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DenoiserParams {
        DenoiserParams::init(&mut ChaCha8Rng::seed_from_u64(1), DenoiserConfig::tiny()).unwrap()
    }

    #[test]
    fn sinusoid_at_zero() {
        let e = sinusoidal_embed(0.0, 16).unwrap();
        for i in 0..8 {
            assert_eq!(e[2 * i], 0.0);
            assert_eq!(e[2 * i + 1], 1.0);
        }
        assert!(sinusoidal_embed(0.5, 15).is_err());
        assert_eq!(sinusoidal_embed(0.3, 16).unwrap(), sinusoidal_embed(0.3, 16).unwrap());
    }

    #[test]
    fn sinusoid_resolves_small_steps_at_slowest_frequency() {
        let a = sinusoidal_embed(0.0, 64).unwrap();
        let b = sinusoidal_embed(1e-3 * 2.0 * std::f64::consts::PI, 64).unwrap();
        assert_ne!(a[62], b[62]);
        assert_ne!(a[63], b[63]);
    }

    #[test]
    fn conditioning_is_additive() {
        let p = params();
        let ser = SerValue::new(0.4).unwrap();
        let c = cond_vector(0.7, ser, &p).unwrap();
        let cfg = p.config;
        let (ct, _) = p
            .time_mlp
            .forward(sinusoidal_embed(0.7, cfg.time_embed_dim).unwrap().view());
        let (cs, _) = p
            .ser_mlp
            .forward(sinusoidal_embed_scaled(0.4, cfg.ser_embed_dim, cfg.ser_embed_scale as f64).unwrap().view());
        assert_eq!(c.0, ct + cs);
    }

    #[test]
    fn zeroed_ser_branch_leaves_time_only() {
        let mut p = params();
        p.ser_mlp.out = Linear::zeros(p.config.model_dim, p.config.model_dim);
        let a = cond_vector(0.2, SerValue::new(0.0).unwrap(), &p).unwrap();
        let b = cond_vector(0.2, SerValue::new(0.9).unwrap(), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ser_changes_c() {
        let p = params();
        let a = cond_vector(0.3, SerValue::new(0.3).unwrap(), &p).unwrap();
        let b = cond_vector(0.3, SerValue::new(0.7).unwrap(), &p).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn time_outside_unit_interval_rejected() {
        let p = params();
        assert!(cond_vector(1.5, SerValue::new(0.3).unwrap(), &p).is_err());
        assert!(cond_vector(-0.1, SerValue::new(0.3).unwrap(), &p).is_err());
    }

    #[test]
    fn modulation_heads_start_at_zero() {
        let p = params();
        for b in &p.blocks {
            assert!(b.modulation.w.iter().all(|&v| v == 0.0));
            assert!(b.modulation.b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = DenoiserConfig::tiny();
        cfg.n_heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = DenoiserConfig::tiny();
        cfg.ser_embed_dim = 7;
        assert!(cfg.validate().is_err());
    }
}
