//! Adaptive Simpson quadrature for smooth one-dimensional integrands.

use crate::error::{Error, Result};

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`.
///
/// Classic adaptive Simpson with the |S_fine - S_coarse| / 15 error
/// estimate. Fails if the recursion depth budget is exhausted before the
/// tolerance is met or the integrand produces non-finite values.
pub fn adaptive_simpson<F>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(b > a) {
        return Err(Error::QuadratureFailure(format!(
            "empty or inverted interval [{a}, {b}]"
        )));
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut evals = 3usize;
    let v = recurse(
        &mut f, a, b, fa, fm, fb, whole, abs_tol, MAX_DEPTH, &mut evals,
    )?;
    Ok(v)
}

const MAX_DEPTH: usize = 48;
const MAX_EVALS: usize = 4_000_000;

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    evals: &mut usize,
) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !whole.is_finite() {
        return Err(Error::QuadratureFailure(
            "integrand produced a non-finite value".into(),
        ));
    }
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    if *evals > MAX_EVALS {
        return Err(Error::QuadratureFailure(
            "evaluation budget exhausted".into(),
        ));
    }
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol || (b - a) < 1e-14 * (b.abs() + a.abs() + 1.0) {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure(format!(
            "depth limit reached on [{a}, {b}] (error {err:.3e})"
        )));
    }
    let lv = recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, evals)?;
    let rv = recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, evals)?;
    Ok(lv + rv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        let v = adaptive_simpson(|x| x * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 4.0).abs() < 1e-10);
    }

    #[test]
    fn integrates_gaussian() {
        // int_-8^8 exp(-x^2/2) = sqrt(2 pi) to ~1e-14
        let v = adaptive_simpson(|x| (-x * x / 2.0).exp(), -8.0, 8.0, 1e-11).unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn integrates_oscillatory() {
        let v = adaptive_simpson(|x| (10.0 * x).sin(), 0.0, 3.0, 1e-11).unwrap();
        let exact = (1.0 - (30.0_f64).cos()) / 10.0;
        assert!((v - exact).abs() < 1e-9);
    }

    #[test]
    fn rejects_nan() {
        assert!(adaptive_simpson(|x| (x - 1.0).ln(), 0.0, 2.0, 1e-8).is_err());
    }
}
