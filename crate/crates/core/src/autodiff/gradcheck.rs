//! Central finite-difference gradient checking.
//!
//! Used by the test suites to validate every backward rule against an
//! independent numerical derivative. Kept in the library (not test-only) so
//! integration and acceptance tests can drive it against full models.

use ndarray::Array2;

/// Central difference of `f` along coordinate `(r,c)` of `x`, step `h`.
pub fn central_diff<F>(f: &mut F, x: &Array2<f64>, r: usize, c: usize, h: f64) -> f64
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut xp = x.clone();
    xp[(r, c)] += h;
    let mut xm = x.clone();
    xm[(r, c)] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error between an analytic and a numerical derivative.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Check `analytic` against central differences of `f` at every coordinate of
/// `x`. Returns the worst relative error.
pub fn max_rel_error<F>(f: &mut F, x: &Array2<f64>, analytic: &Array2<f64>, h: f64) -> f64
where
    F: FnMut(&Array2<f64>) -> f64,
{
    assert_eq!(x.dim(), analytic.dim());
    let mut worst = 0.0f64;
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let num = central_diff(f, x, r, c, h);
            worst = worst.max(rel_error(analytic[(r, c)], num));
        }
    }
    worst
}
