use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::{cond_backward, cond_forward, CondCache, ConditioningVector, DenoiserParams, DitBlock};
use crate::error::{Error, Result};
use crate::flow::TrainingDraw;
use crate::nn::{gelu, gelu_grad, layer_norm, layer_norm_backward, silu, silu_grad, sum_rows, AttentionCache, Params};
use crate::text::{ExtendedTokens, TextCache};

/// Predicted velocity, `F x N`.
pub type Velocity = Array2<f64>;

/// Fixed sinusoidal positions, `n x d`.
pub(crate) fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((n, d));
    for pos in 0..n {
        for i in 0..d / 2 {
            let freq = 10000f64.powf(-((2 * i) as f64) / d as f64);
            pe[[pos, 2 * i]] = (pos as f64 * freq).sin();
            pe[[pos, 2 * i + 1]] = (pos as f64 * freq).cos();
        }
    }
    pe
}

struct BlockCache {
    normed_a: Array2<f64>,
    inv_a: Array1<f64>,
    attn: AttentionCache,
    attn_out: Array2<f64>,
    normed_f: Array2<f64>,
    inv_f: Array1<f64>,
    ff_x: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_out: Array2<f64>,
    mods: Array1<f64>,
}

fn chunk(mods: &Array1<f64>, i: usize, d: usize) -> ndarray::ArrayView1<'_, f64> {
    mods.slice(s![i * d..(i + 1) * d])
}

fn block_forward(block: &DitBlock, h: Array2<f64>, sc: &Array1<f64>) -> (Array2<f64>, BlockCache) {
    let d = h.ncols();
    let mods = block.modulation.forward_vec(sc.view());
    let (shift_a, scale_a, gate_a) = (chunk(&mods, 0, d), chunk(&mods, 1, d), chunk(&mods, 2, d));
    let (shift_f, scale_f, gate_f) = (chunk(&mods, 3, d), chunk(&mods, 4, d), chunk(&mods, 5, d));

    let (normed_a, inv_a) = layer_norm(h.view());
    let attn_x = &normed_a * &(&scale_a + 1.0) + shift_a;
    let (attn_out, attn) = block.attn.forward(attn_x.view());
    let h = h + &(&attn_out * &gate_a);

    let (normed_f, inv_f) = layer_norm(h.view());
    let ff_x = &normed_f * &(&scale_f + 1.0) + shift_f;
    let ff_pre = block.ff_in.forward(ff_x.view());
    let ff_act = ff_pre.mapv(gelu);
    let ff_out = block.ff_out.forward(ff_act.view());
    let h = h + &(&ff_out * &gate_f);

    let cache = BlockCache {
        normed_a,
        inv_a,
        attn,
        attn_out,
        normed_f,
        inv_f,
        ff_x,
        ff_pre,
        ff_act,
        ff_out,
        mods,
    };
    (h, cache)
}

/// Returns the gradient w.r.t. the block input and accumulates into
/// `d_sc` the gradient w.r.t. `silu(c)`.
fn block_backward(
    block: &DitBlock,
    cache: &BlockCache,
    sc: &Array1<f64>,
    dh: Array2<f64>,
    grad: &mut DitBlock,
    d_sc: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dh.ncols();
    let mods = &cache.mods;
    let (scale_a, gate_a) = (chunk(mods, 1, d), chunk(mods, 2, d));
    let (scale_f, gate_f) = (chunk(mods, 4, d), chunk(mods, 5, d));
    let mut d_mods = Array1::zeros(6 * d);

    // Feed-forward sub-layer.
    d_mods
        .slice_mut(s![5 * d..6 * d])
        .assign(&sum_rows((&dh * &cache.ff_out).view()));
    let d_ff_out = &dh * &gate_f;
    let d_act = block.ff_out.backward(cache.ff_act.view(), d_ff_out.view(), &mut grad.ff_out);
    let d_pre = d_act * &cache.ff_pre.mapv(gelu_grad);
    let d_ff_x = block.ff_in.backward(cache.ff_x.view(), d_pre.view(), &mut grad.ff_in);
    d_mods
        .slice_mut(s![4 * d..5 * d])
        .assign(&sum_rows((&d_ff_x * &cache.normed_f).view()));
    d_mods.slice_mut(s![3 * d..4 * d]).assign(&sum_rows(d_ff_x.view()));
    let d_normed_f = d_ff_x * &(&scale_f + 1.0);
    let dh = dh + layer_norm_backward(cache.normed_f.view(), &cache.inv_f, d_normed_f.view());

    // Attention sub-layer.
    d_mods
        .slice_mut(s![2 * d..3 * d])
        .assign(&sum_rows((&dh * &cache.attn_out).view()));
    let d_attn_out = &dh * &gate_a;
    let d_attn_x = block.attn.backward(&cache.attn, d_attn_out.view(), &mut grad.attn);
    d_mods
        .slice_mut(s![d..2 * d])
        .assign(&sum_rows((&d_attn_x * &cache.normed_a).view()));
    d_mods.slice_mut(s![0..d]).assign(&sum_rows(d_attn_x.view()));
    let d_normed_a = d_attn_x * &(&scale_a + 1.0);
    let dh = dh + layer_norm_backward(cache.normed_a.view(), &cache.inv_a, d_normed_a.view());

    *d_sc += &block.modulation.backward_vec(sc.view(), d_mods.view(), &mut grad.modulation);
    dh
}

pub(crate) struct TrunkCache {
    features: Array2<f64>,
    c: Array1<f64>,
    sc: Array1<f64>,
    blocks: Vec<BlockCache>,
    last: Array2<f64>,
}

/// `features`: `N x (3F + d_text)`. Returns `N x F`.
fn trunk_forward(params: &DenoiserParams, features: Array2<f64>, c: &Array1<f64>) -> (Array2<f64>, TrunkCache) {
    let cfg = &params.config;
    let mut h = params.input.forward(features.view());
    if cfg.positional_encoding {
        h += &positional_encoding(h.nrows(), cfg.model_dim);
    }
    let sc = c.mapv(silu);
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = block_forward(block, h, &sc);
        caches.push(cache);
        h = next;
    }
    let out = params.output.forward(h.view());
    let cache = TrunkCache {
        features,
        c: c.clone(),
        sc,
        blocks: caches,
        last: h,
    };
    (out, cache)
}

/// Returns `(d_features, d_c)`.
fn trunk_backward(
    params: &DenoiserParams,
    cache: &TrunkCache,
    d_out: ArrayView2<f64>,
    grad: &mut DenoiserParams,
) -> (Array2<f64>, Array1<f64>) {
    let mut dh = params.output.backward(cache.last.view(), d_out, &mut grad.output);
    let mut d_sc = Array1::zeros(cache.sc.len());
    for ((block, bc), bg) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grad.blocks.iter_mut())
        .rev()
    {
        dh = block_backward(block, bc, &cache.sc, dh, bg, &mut d_sc);
    }
    let d_features = params.input.backward(cache.features.view(), dh.view(), &mut grad.input);
    let dc = d_sc * &cache.c.mapv(silu_grad);
    (d_features, dc)
}

fn check_mel_input(name: &str, m: &Array2<f64>, n_mels: usize, n: usize) -> Result<()> {
    if m.dim() != (n_mels, n) {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {:?}, expected ({n_mels}, {n})",
            m.dim()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

/// Per-frame concatenation `[x_t; speech; env; text]`, as `N x features`.
fn fuse(
    params: &DenoiserParams,
    x_t: &Array2<f64>,
    speech_ctx: &Array2<f64>,
    env_ctx: &Array2<f64>,
    text_rows: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let cfg = &params.config;
    let n = x_t.ncols();
    check_mel_input("x_t", x_t, cfg.n_mels, n)?;
    check_mel_input("speech context", speech_ctx, cfg.n_mels, n)?;
    check_mel_input("environment context", env_ctx, cfg.n_mels, n)?;
    if text_rows.dim() != (n, cfg.d_text) {
        return Err(Error::ShapeMismatch(format!(
            "text features are {:?} (frames x dim), expected ({n}, {})",
            text_rows.dim(),
            cfg.d_text
        )));
    }
    Ok(concatenate(
        Axis(1),
        &[x_t.t(), speech_ctx.t(), env_ctx.t(), text_rows],
    )
    .expect("shapes checked"))
}

/// One evaluation of the velocity field. Mels are `F x N`, `text_feat` is
/// `d_text x N`; the result is `F x N`.
pub fn denoise_forward(
    x_t: &Array2<f64>,
    speech_ctx: &Array2<f64>,
    env_ctx: &Array2<f64>,
    text_feat: ArrayView2<f64>,
    c: &ConditioningVector,
    params: &DenoiserParams,
) -> Result<Velocity> {
    if c.0.len() != params.config.model_dim {
        return Err(Error::ShapeMismatch("conditioning vector width".into()));
    }
    let features = fuse(params, x_t, speech_ctx, env_ctx, text_feat.t())?;
    let (out, _) = trunk_forward(params, features, &c.0);
    Ok(out.reversed_axes())
}

/// Everything needed to backpropagate one full forward evaluation.
pub struct ForwardCache {
    text: TextCache,
    cond: CondCache,
    trunk: TrunkCache,
}

/// Full forward from raw tokens and `(t, ser)`, keeping caches.
pub(crate) fn forward_full(
    params: &DenoiserParams,
    x_t: &Array2<f64>,
    speech_ctx: &Array2<f64>,
    env_ctx: &Array2<f64>,
    tokens: &ExtendedTokens,
    t: f64,
    ser: crate::audio::SerValue,
) -> Result<(Velocity, ForwardCache)> {
    let (text_rows, text) = params.text.forward(tokens)?;
    let (c, cond) = cond_forward(params, t, ser)?;
    let features = fuse(params, x_t, speech_ctx, env_ctx, text_rows.view())?;
    let (out, trunk) = trunk_forward(params, features, &c.0);
    Ok((out.reversed_axes(), ForwardCache { text, cond, trunk }))
}

/// Backward from `d_velocity` (`F x N`) into every parameter group.
pub(crate) fn backward_full(
    params: &DenoiserParams,
    cache: &ForwardCache,
    d_velocity: ArrayView2<f64>,
    grad: &mut DenoiserParams,
) {
    let (d_features, dc) = trunk_backward(params, &cache.trunk, d_velocity.t(), grad);
    let off = 3 * params.config.n_mels;
    params
        .text
        .backward(&cache.text, d_features.slice(s![.., off..]), &mut grad.text);
    cond_backward(params, &cache.cond, dc.view(), grad);
}

/// Masked flow-matching loss over a batch and its exact gradient.
pub fn loss_and_gradients(params: &DenoiserParams, batch: &[TrainingDraw]) -> Result<(f64, DenoiserParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    let b = batch.len() as f64;
    for draw in batch {
        let (v, cache) = forward_full(
            params,
            &draw.x_t,
            &draw.speech_ctx,
            &draw.env_ctx,
            &draw.tokens,
            draw.t,
            draw.ser,
        )?;
        let (loss, mut d_v) = crate::flow::masked_mse_with_grad(&v, &draw.target, &draw.mask)?;
        total += loss;
        d_v /= b;
        backward_full(params, &cache, d_v.view(), &mut grad);
    }
    let loss = total / b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}
