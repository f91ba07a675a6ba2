//! Binary parameter checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ETCK" | u32 version
//! u32 x 15 denoiser config fields (positional_encoding as 0/1)
//! u32 sample_rate | u32 n_fft | u32 hop | f32 fmin | f32 fmax
//! u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims... | f32 data
//! ```
//!
//! Optimizer moments, when present, are stored as extra tensors named
//! `adam.m.<param>` and `adam.v.<param>`, plus a rank-0 `adam.step`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use rand::SeedableRng;

use super::{DenoiserConfig, DenoiserParams};
use crate::audio::MelConfig;
use crate::error::{format_err, Error, Result};
use crate::nn::Params;
use crate::train::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub mel: MelConfig,
    pub optimizer: Option<OptimizerState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} does not fit in u32")))
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &ndarray::ArrayViewD<'_, f64>) -> Result<()> {
    put_u32(out, to_u32(name.len(), "tensor name length")?);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, to_u32(t.ndim(), "rank")?);
    for &d in t.shape() {
        put_u32(out, to_u32(d, "dimension")?);
    }
    for &v in t.iter() {
        put_f32(out, v as f32);
    }
    Ok(())
}

fn config_fields(c: &DenoiserConfig) -> [usize; 15] {
    [
        c.model_dim,
        c.n_blocks,
        c.n_heads,
        c.ff_mult,
        c.d_text,
        c.n_mels,
        c.max_frames,
        c.ser_embed_dim,
        c.time_embed_dim,
        c.vocab_size,
        c.text_blocks,
        c.text_kernel,
        c.text_expansion,
        c.positional_encoding as usize,
        c.ser_embed_scale,
    ]
}

pub(crate) fn encode(params: &DenoiserParams, mel: &MelConfig, optimizer: Option<&OptimizerState>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    for f in config_fields(&params.config) {
        put_u32(&mut out, to_u32(f, "config field")?);
    }
    put_u32(&mut out, mel.sample_rate);
    put_u32(&mut out, to_u32(mel.n_fft, "n_fft")?);
    put_u32(&mut out, to_u32(mel.hop, "hop")?);
    put_f32(&mut out, mel.fmin as f32);
    put_f32(&mut out, mel.fmax as f32);

    let tensors = params.tensors();
    let mut count = tensors.len();
    if optimizer.is_some() {
        count += 2 * tensors.len() + 1;
    }
    put_u32(&mut out, to_u32(count, "tensor count")?);
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t)?;
    }
    if let Some(opt) = optimizer {
        for (name, t) in opt.first.tensors() {
            put_tensor(&mut out, &format!("adam.m.{name}"), &t)?;
        }
        for (name, t) in opt.second.tensors() {
            put_tensor(&mut out, &format!("adam.v.{name}"), &t)?;
        }
        let step = ndarray::arr0(opt.step as f64).into_dyn();
        put_tensor(&mut out, "adam.step", &step.view())?;
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &DenoiserParams,
    mel: &MelConfig,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    let bytes = encode(params, mel, optimizer)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, ArrayD<f64>)> {
        let len = self.u32()? as usize;
        let path = self.path;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| format_err(path, "tensor name is not UTF-8"))?
            .to_owned();
        let rank = self.u32()? as usize;
        let dims: Vec<usize> = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let n: usize = dims.iter().product();
        let raw = self.take(n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let arr = ArrayD::from_shape_vec(dims, data).map_err(|e| format_err(self.path, e.to_string()))?;
        Ok((name, arr))
    }
}

fn fill(target: &mut DenoiserParams, stored: &mut HashMap<String, ArrayD<f64>>, prefix: &str, path: &Path) -> Result<()> {
    for (name, mut view) in target.tensors_mut() {
        let key = format!("{prefix}{name}");
        let t = stored
            .remove(&key)
            .ok_or_else(|| format_err(path, format!("missing tensor {key}")))?;
        if t.shape() != view.shape() {
            return Err(format_err(
                path,
                format!("tensor {key} has shape {:?}, expected {:?}", t.shape(), view.shape()),
            ));
        }
        view.assign(&t);
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(format_err(path, "bad magic, expected ETCK"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut f = [0usize; 15];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let config = DenoiserConfig {
        model_dim: f[0],
        n_blocks: f[1],
        n_heads: f[2],
        ff_mult: f[3],
        d_text: f[4],
        n_mels: f[5],
        max_frames: f[6],
        ser_embed_dim: f[7],
        time_embed_dim: f[8],
        vocab_size: f[9],
        text_blocks: f[10],
        text_kernel: f[11],
        text_expansion: f[12],
        positional_encoding: f[13] != 0,
        ser_embed_scale: f[14],
    };
    let mel = MelConfig {
        sample_rate: r.u32()?,
        n_fft: r.u32()? as usize,
        hop: r.u32()? as usize,
        n_mels: config.n_mels,
        fmin: r.f32()? as f64,
        fmax: r.f32()? as f64,
    };
    mel.validate()?;
    let count = r.u32()? as usize;
    let mut stored = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        if stored.insert(name.clone(), t).is_some() {
            return Err(format_err(path, format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(format_err(path, "trailing bytes after last tensor"));
    }

    // Shapes come from the config; values are overwritten below.
    let mut params = DenoiserParams::init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0), config)?;
    fill(&mut params, &mut stored, "", path)?;
    let optimizer = match stored.remove("adam.step") {
        Some(step) => {
            let mut first = params.zeros_like();
            let mut second = params.zeros_like();
            fill(&mut first, &mut stored, "adam.m.", path)?;
            fill(&mut second, &mut stored, "adam.v.", path)?;
            let step = step.iter().next().copied().unwrap_or(0.0) as usize;
            Some(OptimizerState { step, first, second })
        }
        None => None,
    };
    if let Some(name) = stored.keys().next() {
        return Err(format_err(path, format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint {
        params,
        mel,
        optimizer,
    })
}
