//! Central finite differences, used as the independent oracle for the
//! analytic gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)` for every element `i`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Result<Tensor> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite difference step must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Largest elementwise relative error, with an absolute floor so that
/// near-zero gradients compare on absolute terms.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &Tensor::scalar(3.0), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_gives_zeros() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let g = finite_diff_grad(|_| 4.2, &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        assert!(finite_diff_grad(|_| 0.0, &Tensor::scalar(0.0), 1e-2).is_err());
        assert!(finite_diff_grad(|_| 0.0, &Tensor::scalar(0.0), 1e-9).is_err());
    }
}
