//! Minimal differentiable building blocks with explicit backward passes.
//!
//! Sequences are `N x features` matrices (one row per frame). Every layer
//! exposes `forward`, returning whatever the backward pass needs, and a
//! `backward` that accumulates parameter gradients into a same-shaped
//! gradient struct and returns the input gradient.

mod attention;
mod linear;

pub use attention::{Attention, AttentionCache};
pub use linear::Linear;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named access to every learnable tensor, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rounds every value to the nearest `f32`, so checkpoints are lossless.
    fn round_to_f32(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn prefixed<'a, T>(
    prefix: &str,
    items: Vec<(String, T)>,
) -> impl Iterator<Item = (String, T)> + 'a
where
    T: 'a,
{
    let prefix = prefix.to_owned();
    items
        .into_iter()
        .map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub(crate) const LN_EPS: f64 = 1e-6;

/// Per-row normalization without affine parameters. Returns the normalized
/// rows and each row's inverse standard deviation.
pub fn layer_norm(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut y = x.to_owned();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, inv_std) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv_std = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv_std;
        row.mapv_inplace(|v| v * s);
    }
    (y, inv)
}

/// Backward of [`layer_norm`] given its output and saved inverse std.
pub fn layer_norm_backward(
    normed: ArrayView2<f64>,
    inv_std: &Array1<f64>,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let d = normed.ncols() as f64;
    let mut dx = dy.to_owned();
    for ((mut dx_row, y_row), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(normed.rows())
        .zip(inv_std.iter())
    {
        let mean_dy = dx_row.sum() / d;
        let mean_dy_y = dx_row.iter().zip(y_row.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        for (g, &yv) in dx_row.iter_mut().zip(y_row.iter()) {
            *g = s * (*g - mean_dy - yv * mean_dy_y);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Column sums of a `N x d` matrix.
pub(crate) fn sum_rows(x: ArrayView2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}

pub(crate) fn normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

pub(crate) fn uniform_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    bound: f64,
) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}
