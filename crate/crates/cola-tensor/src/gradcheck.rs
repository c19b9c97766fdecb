/// Central finite-difference check against an analytic gradient.
///
/// `f` maps a flat parameter vector to a scalar; `analytic` is the gradient
/// to verify at `x0`. Returns the max over coordinates of
/// `|fd - analytic| / max(1, |analytic|)`.
pub fn finite_difference_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    let coords: Vec<usize> = (0..x0.len()).collect();
    finite_difference_check_at(f, x0, analytic, h, &coords)
}

/// Like [`finite_difference_check`] but probing only `coords`; used when
/// the parameter vector is too large to difference coordinate by
/// coordinate.
pub fn finite_difference_check_at(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be > 0");
    assert!(
        x0.len() == analytic.len(),
        "parameter vector has {} coordinates but gradient has {}",
        x0.len(),
        analytic.len()
    );
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_near_exact() {
        // f(x) = sum(x_i^2), grad = 2x
        let x0 = vec![0.3, -1.2, 2.5];
        let grad: Vec<f64> = x0.iter().map(|v| 2.0 * v).collect();
        let err = finite_difference_check(
            &mut |x| x.iter().map(|v| v * v).sum(),
            &x0,
            &grad,
            1e-5,
        );
        assert!(err < 1e-9, "quadratic gradcheck error {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x0 = vec![1.0, 2.0];
        let grad = vec![0.0, 0.0];
        let err = finite_difference_check(&mut |_| 7.5, &x0, &grad, 1e-5);
        assert!(err < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x0 = vec![1.0];
        let wrong = vec![3.0]; // true gradient is 2.0
        let err = finite_difference_check(&mut |x| x[0] * x[0], &x0, &wrong, 1e-5);
        assert!(err > 0.3);
    }
}
