use super::tensor::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let x = Tensor::scalar(2.0);
        let g = finite_difference_gradient(|t| t.item().powi(3), &x, 1e-5);
        assert!((g.item() - 12.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::row(vec![1.0, -3.0, 0.25]);
        let g = finite_difference_gradient(|_| 4.2, &x, 1e-4);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let x = Tensor::zeros(&[1, 5]);
        let g = finite_difference_gradient(
            |t| t.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).sum(),
            &x,
            1e-4,
        );
        for &v in g.data() {
            assert!((v - 0.25).abs() < 1e-8);
        }
    }
}
