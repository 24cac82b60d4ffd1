#![allow(dead_code)]

pub mod decomposition;
pub mod grad_cases;

use auxpixel::tensor::Tensor;

/// Central finite differences of `f` at `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn flatten(ts: &[Tensor<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

pub fn unflatten(flat: &[f64], like: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut off = 0;
    like.iter()
        .map(|t| {
            let n = t.numel();
            let out = Tensor::new(t.shape().to_vec(), flat[off..off + n].to_vec()).unwrap();
            off += n;
            out
        })
        .collect()
}
