//! Small, self-contained numerical kernels: dense linear solves, a
//! box-constrained quasi-Newton minimizer and adaptive quadrature. The
//! problems in this crate are low-dimensional (a handful of model
//! parameters, a few dozen Lagrange multipliers), so the implementations
//! favor robustness and determinism over scale.

pub mod bfgs;
pub mod levenberg;
pub mod quadrature;

/// Solves `A x = b` for dense square `A` (row-major) by LU with partial
/// pivoting. Returns `None` if the matrix is numerically singular.
pub(crate) fn lu_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = m[perm[col] * n + col].abs();
        for row in col + 1..n {
            let v = m[perm[row] * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if !(best > 1e-300) || !best.is_finite() {
            return None;
        }
        perm.swap(col, pivot);
        let prow = perm[col];
        let diag = m[prow * n + col];
        for row in col + 1..n {
            let r = perm[row];
            let factor = m[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            m[r * n + col] = 0.0;
            for k in col + 1..n {
                m[r * n + k] -= factor * m[prow * n + k];
            }
            x[r] -= factor * x[prow];
        }
    }
    let mut out = vec![0.0; n];
    for col in (0..n).rev() {
        let r = perm[col];
        let mut v = x[r];
        for k in col + 1..n {
            v -= m[r * n + k] * out[k];
        }
        out[col] = v / m[r * n + col];
        if !out[col].is_finite() {
            return None;
        }
    }
    Some(out)
}
