//! Character tokenization, filler extension, the convolutional text
//! embedder and the character-ratio duration rule.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::error::{format_err, Error, Result};
use crate::nn::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, normal_matrix, prefixed, sum_rows,
    uniform_matrix, Linear, Params,
};

/// Maps characters to token ids, with dedicated UNK and filler ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
    char_to_id: HashMap<char, usize>,
    unk_id: usize,
    filler_id: usize,
}

impl Default for CharVocab {
    /// Printable ASCII (space through `~`), then UNK, then filler.
    fn default() -> Self {
        Self::from_chars((0x20u8..=0x7e).map(char::from).collect()).expect("distinct ASCII")
    }
}

impl CharVocab {
    /// Characters take ids `0..len`; UNK is `len`, filler is `len + 1`.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let n = chars.len();
        Self::with_special(chars, n, n + 1)
    }

    fn with_special(chars: Vec<char>, unk_id: usize, filler_id: usize) -> Result<Self> {
        let mut char_to_id = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if char_to_id.insert(c, i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocab character {c:?}")));
            }
        }
        if unk_id == filler_id || unk_id < chars.len() || filler_id < chars.len() {
            return Err(Error::InvalidInput(
                "UNK and filler ids must be distinct and outside the character range".into(),
            ));
        }
        Ok(Self {
            chars,
            char_to_id,
            unk_id,
            filler_id,
        })
    }

    pub fn size(&self) -> usize {
        self.unk_id.max(self.filler_id) + 1
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn filler_id(&self) -> usize {
        self.filler_id
    }

    pub fn id(&self, c: char) -> usize {
        self.char_to_id.get(&c).copied().unwrap_or(self.unk_id)
    }

    /// Two header lines (`filler <id>`, `unk <id>`), then one character per
    /// line where the line index after the header is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "filler {}", self.filler_id);
        let _ = writeln!(out, "unk {}", self.unk_id);
        for c in &self.chars {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.split('\n');
        let mut filler = None;
        let mut unk = None;
        for _ in 0..2 {
            let line = lines
                .next()
                .ok_or_else(|| format_err(path, "missing header"))?
                .trim_end_matches('\r');
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| format_err(path, format!("bad header line {line:?}")))?;
            let id: usize = value
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("bad id in {line:?}")))?;
            match key {
                "filler" => filler = Some(id),
                "unk" => unk = Some(id),
                _ => return Err(format_err(path, format!("unknown header key {key:?}"))),
            }
        }
        let (Some(filler), Some(unk)) = (filler, unk) else {
            return Err(format_err(path, "header must declare filler and unk"));
        };
        let mut chars = Vec::new();
        let body: Vec<&str> = lines.collect();
        // A trailing newline leaves one empty segment.
        let body = match body.split_last() {
            Some((&"", rest)) => rest,
            _ => &body[..],
        };
        for (i, line) in body.iter().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(format_err(path, format!("line {i} must hold one character"))),
            }
        }
        Self::with_special(chars, unk, filler).map_err(|e| format_err(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

/// One id per character; unknown characters become UNK.
pub fn tokenize(text: &str, vocab: &CharVocab) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(text.chars().map(|c| vocab.id(c)).collect())
}

/// Character ids followed by filler up to the mel length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedTokens {
    ids: Vec<usize>,
    char_count: usize,
}

impl ExtendedTokens {
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn char_count(&self) -> usize {
        self.char_count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn extend_with_filler(ids: &[usize], n_frames: usize, vocab: &CharVocab) -> Result<ExtendedTokens> {
    if ids.len() > n_frames {
        return Err(Error::TextTooLong {
            chars: ids.len(),
            frames: n_frames,
        });
    }
    let mut out = ids.to_vec();
    out.resize(n_frames, vocab.filler_id());
    Ok(ExtendedTokens {
        ids: out,
        char_count: ids.len(),
    })
}

/// Frames to generate for `gen_text`, scaling the reference frame count by
/// the character-count ratio and rounding up.
pub fn estimate_target_length(gen_text: &str, ref_text: &str, ref_frames: usize) -> Result<usize> {
    let s_gen = gen_text.chars().count();
    let s_ref = ref_text.chars().count();
    if s_gen == 0 || s_ref == 0 {
        return Err(Error::EmptyText);
    }
    if ref_frames == 0 {
        return Err(Error::InvalidInput("reference needs at least one frame".into()));
    }
    Ok((ref_frames * s_gen).div_ceil(s_ref))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEmbedderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_blocks: usize,
    pub kernel: usize,
    pub expansion: usize,
}

impl TextEmbedderConfig {
    pub fn new(vocab_size: usize, dim: usize) -> Self {
        Self {
            vocab_size,
            dim,
            n_blocks: 2,
            kernel: 7,
            expansion: 2,
        }
    }

    /// Frames on either side that can influence one output column.
    pub fn receptive_radius(&self) -> usize {
        self.n_blocks * (self.kernel / 2)
    }
}

/// ConvNeXt-V2 style block: depthwise conv, layer norm, pointwise
/// expansion, GELU, global response normalization, projection, residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub dw_kernel: Array2<f64>,
    pub dw_bias: Array1<f64>,
    pub ln_scale: Array1<f64>,
    pub ln_shift: Array1<f64>,
    pub expand: Linear,
    pub grn_gamma: Array1<f64>,
    pub grn_beta: Array1<f64>,
    pub project: Linear,
}

const GRN_EPS: f64 = 1e-6;
const GRN_SQRT_EPS: f64 = 1e-12;

struct ConvBlockCache {
    input: Array2<f64>,
    normed: Array2<f64>,
    inv_std: Array1<f64>,
    affine: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    col_norm: Array1<f64>,
    mean_norm: f64,
    grn_out: Array2<f64>,
}

impl ConvBlock {
    fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, kernel: usize, expansion: usize) -> Self {
        let hidden = dim * expansion;
        Self {
            dw_kernel: uniform_matrix(rng, dim, kernel, 1.0 / (kernel as f64).sqrt()),
            dw_bias: Array1::zeros(dim),
            ln_scale: Array1::ones(dim),
            ln_shift: Array1::zeros(dim),
            expand: Linear::init(rng, dim, hidden),
            grn_gamma: Array1::zeros(hidden),
            grn_beta: Array1::zeros(hidden),
            project: Linear::init(rng, hidden, dim),
        }
    }

    fn depthwise(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        let k = self.dw_kernel.ncols();
        let r = k / 2;
        let mut y = Array2::zeros((n, d));
        for t in 0..n {
            let mut out = y.row_mut(t);
            out.assign(&self.dw_bias);
            for j in 0..k {
                let src = t as isize + j as isize - r as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let xr = x.row(src as usize);
                for c in 0..d {
                    out[c] += self.dw_kernel[[c, j]] * xr[c];
                }
            }
        }
        y
    }

    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, ConvBlockCache) {
        let conv = self.depthwise(x);
        let (normed, inv_std) = layer_norm(conv.view());
        let affine = &normed * &self.ln_scale + &self.ln_shift;
        let pre_act = self.expand.forward(affine.view());
        let act = pre_act.mapv(gelu);
        let col_norm = act
            .map_axis(Axis(0), |c| (c.iter().map(|v| v * v).sum::<f64>() + GRN_SQRT_EPS).sqrt());
        let mean_norm = col_norm.mean().unwrap_or(0.0);
        let nx = &col_norm / (mean_norm + GRN_EPS);
        let grn_out = &act * &(&nx * &self.grn_gamma + 1.0) + &self.grn_beta;
        let out = &x + &self.project.forward(grn_out.view());
        let cache = ConvBlockCache {
            input: x.to_owned(),
            normed,
            inv_std,
            affine,
            pre_act,
            act,
            col_norm,
            mean_norm,
            grn_out,
        };
        (out, cache)
    }

    fn backward(&self, cache: &ConvBlockCache, dout: ArrayView2<f64>, grad: &mut ConvBlock) -> Array2<f64> {
        let d_grn = self.project.backward(cache.grn_out.view(), dout, &mut grad.project);
        // Global response normalization.
        let denom = cache.mean_norm + GRN_EPS;
        let nx = &cache.col_norm / denom;
        let dy_act = &d_grn * &cache.act;
        let s = sum_rows(dy_act.view());
        grad.grn_gamma += &(&s * &nx);
        grad.grn_beta += &sum_rows(d_grn.view());
        let d_nx = &s * &self.grn_gamma;
        let c = nx.len() as f64;
        let mix: f64 = d_nx
            .iter()
            .zip(cache.col_norm.iter())
            .map(|(a, g)| a * g)
            .sum::<f64>()
            / (denom * denom * c);
        let d_norm = d_nx.mapv(|v| v / denom - mix);
        let mut d_act = &d_grn * &(&nx * &self.grn_gamma + 1.0);
        d_act += &(&cache.act * &(&d_norm / &cache.col_norm));
        let d_pre = d_act * &cache.pre_act.mapv(gelu_grad);
        let d_affine = self.expand.backward(cache.affine.view(), d_pre.view(), &mut grad.expand);
        grad.ln_scale += &sum_rows((&d_affine * &cache.normed).view());
        grad.ln_shift += &sum_rows(d_affine.view());
        let d_normed = d_affine * &self.ln_scale;
        let d_conv = layer_norm_backward(cache.normed.view(), &cache.inv_std, d_normed.view());
        // Depthwise convolution.
        let x = &cache.input;
        let (n, d) = x.dim();
        let k = self.dw_kernel.ncols();
        let r = k / 2;
        let mut dx = dout.to_owned();
        grad.dw_bias += &sum_rows(d_conv.view());
        for t in 0..n {
            let g = d_conv.row(t);
            for j in 0..k {
                let src = t as isize + j as isize - r as isize;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let src = src as usize;
                for ch in 0..d {
                    grad.dw_kernel[[ch, j]] += g[ch] * x[[src, ch]];
                    dx[[src, ch]] += self.dw_kernel[[ch, j]] * g[ch];
                }
            }
        }
        dx
    }
}

impl Params for ConvBlock {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut v = vec![
            ("dw_kernel".into(), self.dw_kernel.view().into_dyn()),
            ("dw_bias".into(), self.dw_bias.view().into_dyn()),
            ("ln_scale".into(), self.ln_scale.view().into_dyn()),
            ("ln_shift".into(), self.ln_shift.view().into_dyn()),
        ];
        v.extend(prefixed("expand", self.expand.tensors()));
        v.push(("grn_gamma".into(), self.grn_gamma.view().into_dyn()));
        v.push(("grn_beta".into(), self.grn_beta.view().into_dyn()));
        v.extend(prefixed("project", self.project.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut v = vec![
            ("dw_kernel".into(), self.dw_kernel.view_mut().into_dyn()),
            ("dw_bias".into(), self.dw_bias.view_mut().into_dyn()),
            ("ln_scale".into(), self.ln_scale.view_mut().into_dyn()),
            ("ln_shift".into(), self.ln_shift.view_mut().into_dyn()),
        ];
        v.extend(prefixed("expand", self.expand.tensors_mut()));
        v.push(("grn_gamma".into(), self.grn_gamma.view_mut().into_dyn()));
        v.push(("grn_beta".into(), self.grn_beta.view_mut().into_dyn()));
        v.extend(prefixed("project", self.project.tensors_mut()));
        v
    }
}

/// Learnable tensors of the text embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedderParams {
    pub table: Array2<f64>,
    pub blocks: Vec<ConvBlock>,
    pub out: Linear,
}

pub struct TextCache {
    ids: Vec<usize>,
    block_caches: Vec<ConvBlockCache>,
    last: Array2<f64>,
}

impl TextEmbedderParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, cfg: &TextEmbedderConfig) -> Self {
        let table = normal_matrix(rng, cfg.vocab_size, cfg.dim, 0.5);
        let blocks = (0..cfg.n_blocks)
            .map(|_| ConvBlock::init(rng, cfg.dim, cfg.kernel, cfg.expansion))
            .collect();
        let out = Linear::init(rng, cfg.dim, cfg.dim);
        Self { table, blocks, out }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.out.outputs()
    }

    /// `N x d_text` features plus what the backward pass needs.
    pub fn forward(&self, tokens: &ExtendedTokens) -> Result<(Array2<f64>, TextCache)> {
        let ids = tokens.ids();
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(Error::TokenOutOfRange(bad));
        }
        let mut x = Array2::zeros((ids.len(), self.table.ncols()));
        for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
            row.assign(&self.table.row(id));
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(x.view());
            block_caches.push(cache);
            x = y;
        }
        let out = self.out.forward(x.view());
        Ok((
            out,
            TextCache {
                ids: ids.to_vec(),
                block_caches,
                last: x,
            },
        ))
    }

    pub fn backward(&self, cache: &TextCache, dout: ArrayView2<f64>, grad: &mut TextEmbedderParams) {
        let mut dx = self.out.backward(cache.last.view(), dout, &mut grad.out);
        for ((block, bc), bg) in self
            .blocks
            .iter()
            .zip(&cache.block_caches)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            dx = block.backward(bc, dx.view(), bg);
        }
        for (row, &id) in dx.rows().into_iter().zip(&cache.ids) {
            let mut g = grad.table.row_mut(id);
            g += &row;
        }
    }
}

impl Params for TextEmbedderParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut v = vec![("table".to_string(), self.table.view().into_dyn())];
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.tensors()));
        }
        v.extend(prefixed("out", self.out.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut v = vec![("table".to_string(), self.table.view_mut().into_dyn())];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.tensors_mut()));
        }
        v.extend(prefixed("out", self.out.tensors_mut()));
        v
    }
}

/// Embeds the extended token sequence; returns a `d_text x N` matrix.
pub fn embed_text(z: &ExtendedTokens, params: &TextEmbedderParams) -> Result<Array2<f64>> {
    Ok(params.forward(z)?.0.reversed_axes())
}
