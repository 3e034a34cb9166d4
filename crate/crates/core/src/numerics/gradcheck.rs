//! Central finite differences, used as an independent oracle for the tape.

use super::{ParamId, ParamStore};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative disagreement between two derivative estimates. Magnitudes below
/// `1e-6` are measured against that floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Numeric gradient of `f` with respect to every scalar of one stored tensor.
pub fn numeric_param_gradient(
    store: &ParamStore,
    id: ParamId,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Vec<f64> {
    let mut probe = store.clone();
    let n = store.get(id).len();
    (0..n)
        .map(|i| {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative error between paired gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}
