//! Host-side analytic gradients of the layer references, in f64.
//!
//! Training treats the spike encode/decode as an identity and
//! backpropagates through the decoded values, so the backward pass is
//! ordinary calculus against the forward formulas — no gate-level
//! backward circuits exist.  These functions give the exact Jacobian
//! products; the tests pin them against central finite differences.

/// `y = W x + b` (row-major `W`, `out_dim` rows).
pub fn linear_value(x: &[f64], w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    assert_eq!(w.len(), out_dim * in_dim);
    assert_eq!(b.len(), out_dim);
    (0..out_dim)
        .map(|j| {
            let row = &w[j * in_dim..(j + 1) * in_dim];
            row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b[j]
        })
        .collect()
}

/// Gradients of `sum(dy . y)` for `y = W x + b`:
/// `dx = W^T dy`, `dW = dy x^T`, `db = dy`.
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = x.len();
    let out_dim = dy.len();
    assert_eq!(w.len(), out_dim * in_dim);
    let dx = (0..in_dim)
        .map(|i| (0..out_dim).map(|j| w[j * in_dim + i] * dy[j]).sum())
        .collect();
    let mut dw = vec![0.0; out_dim * in_dim];
    for j in 0..out_dim {
        for i in 0..in_dim {
            dw[j * in_dim + i] = dy[j] * x[i];
        }
    }
    (dx, dw, dy.to_vec())
}

/// `y_i = gamma_i * x_i * r` with `r = (mean(x^2) + eps)^(-1/2)`.
pub fn rmsnorm_value(x: &[f64], gamma: &[f64], eps: f64) -> Vec<f64> {
    let r = rms_scale(x, eps);
    x.iter().zip(gamma).map(|(xi, gi)| gi * xi * r).collect()
}

/// Gradients of RMSNorm:
/// `dx_k = gamma_k r dy_k - (r^3 x_k / d) sum_i gamma_i x_i dy_i`,
/// `dgamma_i = x_i r dy_i`.
pub fn rmsnorm_backward(
    x: &[f64],
    gamma: &[f64],
    eps: f64,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = x.len() as f64;
    let r = rms_scale(x, eps);
    let proj: f64 = x
        .iter()
        .zip(gamma)
        .zip(dy)
        .map(|((xi, gi), di)| gi * xi * di)
        .sum();
    let dx = x
        .iter()
        .zip(gamma)
        .zip(dy)
        .map(|((xk, gk), dk)| gk * r * dk - r.powi(3) * xk / d * proj)
        .collect();
    let dgamma = x.iter().zip(dy).map(|(xi, di)| xi * r * di).collect();
    (dx, dgamma)
}

fn rms_scale(x: &[f64], eps: f64) -> f64 {
    let mean = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    1.0 / (mean + eps).sqrt()
}

/// `silu(x) = x * sigmoid(x)`.
pub fn silu_value(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `d silu/dx = sigmoid(x) * (1 + x * (1 - sigmoid(x)))`.
pub fn silu_backward(x: f64, dy: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s)) * dy
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax_value(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient of softmax: `dx_i = p_i * (dy_i - sum_j p_j dy_j)`.
pub fn softmax_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    let p = softmax_value(x);
    let dot: f64 = p.iter().zip(dy).map(|(pi, di)| pi * di).sum();
    p.iter().zip(dy).map(|(pi, di)| pi * (di - dot)).collect()
}
