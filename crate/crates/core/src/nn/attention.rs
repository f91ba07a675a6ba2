use ndarray::{s, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::{prefixed, Linear, Params};

/// Multi-head self-attention over all frames (no causal mask).
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads: Array2<f64>,
}

impl Attention {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, n_heads: usize) -> Self {
        Self {
            q: Linear::init(rng, dim, dim),
            k: Linear::init(rng, dim, dim),
            v: Linear::init(rng, dim, dim),
            o: Linear::init(rng, dim, dim),
            n_heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.outputs() / self.n_heads
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let (n, dim) = (x.nrows(), self.q.outputs());
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let mut heads = Array2::zeros((n, dim));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let z = row.sum();
                row.mapv_inplace(|v| v / z);
            }
            heads.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.o.forward(heads.view());
        let cache = AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            heads,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &AttentionCache, dout: ArrayView2<f64>, grad: &mut Attention) -> Array2<f64> {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let dheads = self.o.backward(cache.heads.view(), dout, &mut grad.o);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &cache.probs[h];
            let dho = dheads.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dho));
            let mut ds = dho.dot(&cache.v.slice(cols).t());
            for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                for (g, &pv) in ds_row.iter_mut().zip(p_row.iter()) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.x.view();
        let mut dx = self.q.backward(x, dq.view(), &mut grad.q);
        dx += &self.k.backward(x, dk.view(), &mut grad.k);
        dx += &self.v.backward(x, dv.view(), &mut grad.v);
        dx
    }
}

impl Params for Attention {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("q", self.q.tensors())
            .chain(prefixed("k", self.k.tensors()))
            .chain(prefixed("v", self.v.tensors()))
            .chain(prefixed("o", self.o.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("q", self.q.tensors_mut())
            .chain(prefixed("k", self.k.tensors_mut()))
            .chain(prefixed("v", self.v.tensors_mut()))
            .chain(prefixed("o", self.o.tensors_mut()))
            .collect()
    }
}
