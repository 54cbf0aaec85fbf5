//! Finite-difference oracle for checking analytic gradients.

use crate::nn::{flatten_params, unflatten_params, Model};

/// Denominator floor for relative error, so that gradients that are zero up
/// to finite-difference noise are judged by their absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
pub fn central_difference_vec(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Numeric gradient of `f` with respect to every parameter of `model`, in
/// [`flatten_params`] order.
pub fn central_difference(model: &Model, h: f64, f: impl Fn(&Model) -> f64) -> Vec<f64> {
    let flat = flatten_params(model);
    central_difference_vec(flat.data(), h, |p| {
        f(&unflatten_params(model, p).expect("same length"))
    })
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}
