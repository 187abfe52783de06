//! Central finite differences, used to audit every analytic Jacobian.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use windcoh::fdiff;
//!
//! let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1], x[0].sin()]);
//! let x = DVector::from_vec(vec![0.3, 2.0]);
//! let exact = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3f64.cos(), 0.0]);
//! let num = fdiff::jacobian(f, &x, fdiff::STEP);
//! assert!(fdiff::max_rel_err(&exact, &num) < 1e-8);
//! ```

use nalgebra::{DMatrix, DVector};

/// Default step for Jacobian audits.
pub const STEP: f64 = 1e-6;

/// Central-difference Jacobian of `f` at `x`; the step is scaled by `max(1, |x_k|)`.
pub fn jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        let fp = f(&xp);
        xp[k] = x[k] - step;
        let fm = f(&xp);
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * step)));
    }
    jac
}

/// Worst entry-wise error relative to the magnitude of the analytic matrix.
///
/// Each entry is compared against `max(|a_ij|, 1e-3·max|a|)`: small entries
/// are judged at the scale of the matrix, which is where central differences
/// lose their relative accuracy to cancellation.
pub fn max_rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "Jacobian shape mismatch");
    let floor = 1e-3 * analytic.amax().max(numeric.amax()).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(floor))
        .fold(0.0, f64::max)
}
