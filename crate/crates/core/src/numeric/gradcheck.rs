//! Central-difference gradient checking (64-bit only).

use crate::numeric::Tensor;

/// Gradients smaller than this are compared absolutely, not relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`; zero when both are zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient returned by `f` with central differences
/// over every coordinate of `x` and returns the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> f64
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let (_, analytic) = f(x);
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(|p| f(p).0, &analytic, x, h, &all)
}

/// Central differences for the listed coordinates only.
pub fn grad_check_at<F>(f: F, analytic: &Tensor<f64>, x: &Tensor<f64>, h: f64, coords: &[usize]) -> f64
where
    F: Fn(&Tensor<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}
