//! Box-constrained BFGS with numerical gradients.
//!
//! Gradients are central finite differences with a relative step, degrading
//! to one-sided differences at the box boundary or where the objective is
//! not finite on one side. The line search is backtracking Armijo on the
//! projected path `clip(x + alpha d)`, so every accepted iterate is feasible
//! and the objective is non-increasing. Everything is deterministic.

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Sup-norm threshold on the projected gradient.
    pub grad_tol: f64,
    /// Relative decrease below which the search stops.
    pub f_tol: f64,
    /// Relative finite-difference step.
    pub fd_rel_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-8,
            f_tol: 1e-13,
            fd_rel_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clip(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Central-difference gradient honoring the box.
pub fn fd_gradient<F>(f: &mut F, x: &[f64], fx: f64, bounds: &[(f64, f64)], rel_step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut probe = x.to_vec();
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let h = rel_step * x[i].abs().max(1e-2);
        let hp = h.min(hi - x[i]).max(0.0);
        let hm = h.min(x[i] - lo).max(0.0);
        if hp + hm <= 0.0 {
            grad[i] = 0.0;
            continue;
        }
        let fp = if hp > 0.0 {
            probe[i] = x[i] + hp;
            let v = f(&probe);
            probe[i] = x[i];
            v
        } else {
            fx
        };
        let fm = if hm > 0.0 {
            probe[i] = x[i] - hm;
            let v = f(&probe);
            probe[i] = x[i];
            v
        } else {
            fx
        };
        grad[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (hp + hm),
            (true, false) if hp > 0.0 => (fp - fx) / hp,
            (false, true) if hm > 0.0 => (fx - fm) / hm,
            _ => 0.0,
        };
    }
    grad
}

fn projected_gradient(x: &[f64], grad: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            let eps = 1e-12 * (hi - lo).abs().max(1.0);
            if (xi <= lo + eps && gi > 0.0) || (xi >= hi - eps && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn active_set(x: &[f64], bounds: &[(f64, f64)]) -> Vec<i8> {
    x.iter()
        .zip(bounds)
        .map(|(&xi, &(lo, hi))| {
            let eps = 1e-12 * (hi - lo).abs().max(1.0);
            if xi <= lo + eps {
                -1
            } else if xi >= hi - eps {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Minimizes `f` over a box. `f` may return `+inf` (or NaN) to mark
/// unevaluable points; such trial points are rejected by the line search.
pub fn minimize_bounded<F>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &BfgsOptions,
) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    debug_assert_eq!(bounds.len(), n);
    let mut x = x0.to_vec();
    clip(&mut x, bounds);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return BfgsOutcome {
            x,
            f: fx,
            iterations: 0,
            converged: false,
        };
    }

    // inverse Hessian approximation
    let mut h_inv = identity(n);
    let mut grad = fd_gradient(&mut f, &x, fx, bounds, opts.fd_rel_step);
    let mut active = active_set(&x, bounds);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let pg = projected_gradient(&x, &grad, bounds);
        if pg.iter().all(|g| g.abs() <= opts.grad_tol) {
            converged = true;
            break;
        }

        // search direction: -H g, zeroed where it would push through a bound
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h_inv[i * n + j] * grad[j]).sum::<f64>())
            .collect();
        for i in 0..n {
            if (active[i] == -1 && dir[i] < 0.0) || (active[i] == 1 && dir[i] > 0.0) {
                dir[i] = 0.0;
            }
        }
        let descent: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(descent < 0.0) {
            // fall back to projected steepest descent
            dir = pg.iter().map(|g| -g).collect();
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            converged = pg.iter().all(|g| g.abs() <= opts.grad_tol * 10.0);
            break;
        }

        // backtracking Armijo on the projected path
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            clip(&mut trial, bounds);
            let ft = f(&trial);
            let moved: f64 = trial
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .sum();
            if moved == 0.0 {
                break;
            }
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // no acceptable step along this direction
            converged = pg.iter().all(|g| g.abs() <= opts.grad_tol * 10.0);
            break;
        };

        let f_drop = fx - f_new;
        let grad_new = fd_gradient(&mut f, &x_new, f_new, bounds, opts.fd_rel_step);
        let active_new = active_set(&x_new, bounds);

        if active_new != active {
            h_inv = identity(n);
        } else {
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let yk: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&yk).map(|(a, b)| a * b).sum();
            let ss = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yy = yk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if sy > 1e-10 * ss * yy && sy.is_finite() {
                bfgs_update(&mut h_inv, &s, &yk, sy);
            }
        }

        x = x_new;
        fx = f_new;
        grad = grad_new;
        active = active_new;

        if f_drop.abs() <= opts.f_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }

    BfgsOutcome {
        x,
        f: fx,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Standard BFGS inverse-Hessian update.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    // H' = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}
