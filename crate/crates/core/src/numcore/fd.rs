use super::tensor::Tensor;

/// Central finite differences:
/// (f(x + h e_i) - f(x - h e_i)) / (2h) for every coordinate.
///
/// This is the gradient-check oracle; it only evaluates `f` at shifted
/// constant tensors and never touches the reverse-mode machinery.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Vec<f64> {
    assert!(h > 0.0, "finite difference step must be positive");
    let shape = x.shape();
    let base = x.values();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::new(&shape, plus));
        let fm = f(&Tensor::new(&shape, minus));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_x() {
        let x = Tensor::new(&[1], vec![3.0]);
        let g = finite_difference_gradient(&mut |t| t.values()[0].powi(2), &x, 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6, "{}", g[0]);
    }

    #[test]
    fn sum_has_all_ones_gradient() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 5.0, 0.0]);
        let g = finite_difference_gradient(&mut |t| t.values().iter().sum(), &x, 1e-5);
        for v in g {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn kl_mean_derivative_at_unit_gaussian() {
        // d/dmu of 0.5 (mu^2 + sigma^2 - ln sigma^2 - 1) at mu=1, sigma=1 is 1
        let mu = Tensor::new(&[1], vec![1.0]);
        let g = finite_difference_gradient(
            &mut |t| {
                let m = t.values()[0];
                0.5 * (m * m + 1.0 - 0.0 - 1.0)
            },
            &mu,
            1e-5,
        );
        assert!((g[0] - 1.0).abs() < 1e-5, "{}", g[0]);
    }
}
