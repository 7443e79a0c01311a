//! Central finite differences, used to audit the analytic reverse pass.

use crate::error::Result;
use crate::numerics::tensor::Tensor;

/// Central-difference estimate of `d f / d x` at `x`, one coordinate at a time.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.numel());
    let mut probe = x.to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&Tensor::new(x.shape(), probe.clone())?)?;
        probe[i] = orig - eps;
        let down = f(&Tensor::new(x.shape(), probe.clone())?)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    Tensor::new(x.shape(), grad)
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
