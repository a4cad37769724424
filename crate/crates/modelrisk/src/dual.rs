//! Entropy projection of a parametric reference measure onto bid/ask price
//! bands: the measure `q` of minimal relative entropy to `p` among all grid
//! measures pricing every instrument inside its band.
//!
//! The constrained problem is solved through its Lagrangian dual. After the
//! bid and ask multipliers are folded into their sum `lambda`, the dual is an
//! unconstrained concave maximization of
//!
//! ```text
//! G(lambda) = -ln E^p[exp(lambda . Z)] + lambda . mid - sum_j |lambda_j| half_j
//! ```
//!
//! whose stationary point tilts `p` exponentially onto the bands. The kink
//! `|lambda_j|` is smoothed by `2 delta ln cosh(x / (2 delta))`, whose
//! derivative is the logistic sign surrogate `tanh(x / (2 delta))`; the
//! smoothed system is solved by a trust-region dogleg Newton iteration with
//! the exact Hessian, and `delta` is driven to zero by continuation so the
//! answer converges to the true complementary-slackness solution.

use crate::error::{Error, Result};
use crate::measure::{exponential_tilt, log_tilt_normalizer, GridMeasure, PayoffMatrix};
use crate::solvers::lu_solve;

/// Bid/ask bands for a stack of instruments on one slice.
#[derive(Debug, Clone)]
pub struct PriceBands {
    instruments: PayoffMatrix,
    bids: Vec<f64>,
    asks: Vec<f64>,
}

impl PriceBands {
    pub fn new(instruments: PayoffMatrix, bids: Vec<f64>, asks: Vec<f64>) -> Result<Self> {
        let n = instruments.n_instruments();
        if bids.len() != n || asks.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} bids / {} asks for {} instruments",
                bids.len(),
                asks.len(),
                n
            )));
        }
        for (j, (b, a)) in bids.iter().zip(&asks).enumerate() {
            if !(b.is_finite() && a.is_finite()) || b > a {
                return Err(Error::InvalidInput(format!(
                    "instrument {j}: bid {b} / ask {a} is not a valid band"
                )));
            }
        }
        Ok(Self {
            instruments,
            bids,
            asks,
        })
    }

    pub fn instruments(&self) -> &PayoffMatrix {
        &self.instruments
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn asks(&self) -> &[f64] {
        &self.asks
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    fn mids(&self) -> Vec<f64> {
        self.bids
            .iter()
            .zip(&self.asks)
            .map(|(b, a)| 0.5 * (b + a))
            .collect()
    }
}

/// Tunables of the inner solve.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Newton iteration cap per continuation stage.
    pub max_iter_per_stage: usize,
    /// Sup-norm threshold on the dual gradient (spot-normalized units).
    pub gradient_tol: f64,
    /// First smoothing width as a fraction of the median bid/ask spread.
    pub delta_init_factor: f64,
    /// Final smoothing width as a fraction of the median spread.
    pub delta_min_factor: f64,
    /// Factor by which the smoothing width shrinks between stages.
    pub delta_shrink: f64,
    /// Run the linear-programming feasibility check before solving.
    pub check_feasibility: bool,
    /// Max band violation (spot-normalized) still considered feasible.
    pub feasibility_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter_per_stage: 200,
            gradient_tol: 1e-10,
            delta_init_factor: 1e-2,
            delta_min_factor: 1e-6,
            delta_shrink: 10.0,
            check_feasibility: true,
            feasibility_tol: 1e-8,
        }
    }
}

/// Converged output of [`solve_inner`].
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Per-instrument multiplier (bid multiplier plus ask multiplier).
    pub lambda_plus: Vec<f64>,
    /// The projected measure, an exponential tilt of the reference.
    pub q: GridMeasure,
    /// Dual objective at the solution; equals `D(q || p)` at optimality.
    pub dual_value: f64,
    /// Signed distance of each model price from its band (zero inside).
    pub residuals: Vec<f64>,
    /// Total Newton iterations across continuation stages.
    pub iterations: usize,
}

/// Logistic surrogate for the sign function: `1 - 2 / (1 + exp(x / delta))`,
/// equivalently `tanh(x / (2 delta))`. Odd, saturating at +-1, slope
/// `1 / (2 delta)` at the origin.
pub fn smoothed_sign(x: f64, delta: f64) -> f64 {
    (x / (2.0 * delta)).tanh()
}

/// Smooth companion of `|x|` whose derivative is exactly
/// [`smoothed_sign`]: `2 delta ln cosh(x / (2 delta))`.
fn smoothed_abs(x: f64, delta: f64) -> f64 {
    2.0 * delta * ln_cosh(x / (2.0 * delta))
}

/// `ln cosh` without overflow for large arguments.
fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `sech^2` without overflow.
fn sech2(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    let s = 2.0 * e / (1.0 + e * e);
    s * s
}

/// Dual objective and its gradient at `lambda`, with smoothing width
/// `delta`.
///
/// The gradient component `mid_j - sgn_delta(lambda_j) half_j - E^q[Z_j]`
/// (with `q` the tilt of `p` by `lambda`) is both the exact derivative of
/// the returned value and the smoothed stationarity residual of the
/// band-constrained problem.
pub fn dual_objective(
    lambda: &[f64],
    p: &GridMeasure,
    bands: &PriceBands,
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    let state = dual_state(lambda, p, bands, delta, false)?;
    Ok((state.value, state.gradient))
}

struct DualState {
    value: f64,
    gradient: Vec<f64>,
    /// Row-major Hessian of the dual objective; only filled when requested.
    hessian: Vec<f64>,
    q: GridMeasure,
}

fn dual_state(
    lambda: &[f64],
    p: &GridMeasure,
    bands: &PriceBands,
    delta: f64,
    with_hessian: bool,
) -> Result<DualState> {
    let z = bands.instruments();
    let m = z.n_instruments();
    if lambda.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} multipliers for {} instruments",
            lambda.len(),
            m
        )));
    }
    let q = exponential_tilt(p, lambda, z)?;
    let log_norm = log_tilt_normalizer(p, lambda, z)?;
    let prices = z.prices_under(&q)?;
    let mids = bands.mids();

    let mut value = -log_norm;
    let mut gradient = Vec::with_capacity(m);
    for j in 0..m {
        let half = 0.5 * (bands.asks[j] - bands.bids[j]);
        value += lambda[j] * mids[j];
        let mut g = mids[j] - prices[j];
        if half > 0.0 {
            value -= smoothed_abs(lambda[j], delta) * half;
            g -= smoothed_sign(lambda[j], delta) * half;
        }
        gradient.push(g);
    }

    let mut hessian = Vec::new();
    if with_hessian {
        // H = -Cov^q(Z) - diag(half_j sech^2(lambda_j / 2 delta) / (2 delta))
        hessian = vec![0.0; m * m];
        for j in 0..m {
            let zj = z.row(j);
            for k in j..m {
                let zk = z.row(k);
                let mut e_jk = 0.0;
                for ((w, a), b) in q.weights().iter().zip(zj).zip(zk) {
                    e_jk += w * a * b;
                }
                let cov = e_jk - prices[j] * prices[k];
                hessian[j * m + k] = -cov;
                hessian[k * m + j] = -cov;
            }
            let half = 0.5 * (bands.asks[j] - bands.bids[j]);
            if half > 0.0 {
                hessian[j * m + j] -= half * sech2(lambda[j] / (2.0 * delta)) / (2.0 * delta);
            }
        }
    }

    Ok(DualState {
        value,
        gradient,
        hessian,
        q,
    })
}

/// One continuation stage: adaptively damped Newton ascent on the concave
/// dual at a fixed smoothing width, warm-started from `lambda`.
///
/// Solves `(-H + mu diag(-H)) s = g` and takes the full step when it
/// improves the dual; a rejected step raises the Marquardt damping `mu` and
/// re-solves, a successful one lowers it. Payoff rows of neighboring strikes
/// are nearly collinear, so the Hessian routinely has a huge condition
/// number and the damping is what keeps progress steady. Returns the
/// iteration count; stops at the gradient tolerance or when no improving
/// step exists at any damping.
fn newton_ascent_stage(
    p: &GridMeasure,
    bands: &PriceBands,
    delta: f64,
    lambda: &mut Vec<f64>,
    config: &SolverConfig,
) -> Result<usize> {
    let m = lambda.len();
    let mut state = dual_state(lambda, p, bands, delta, true)?;
    let mut iterations = 0;
    let mut mu = 0.0_f64;
    'outer: for _ in 0..config.max_iter_per_stage {
        let g_norm = state.gradient.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        if g_norm <= config.gradient_tol {
            break;
        }
        iterations += 1;

        let a: Vec<f64> = state.hessian.iter().map(|v| -v).collect();
        let diag_scale = (0..m).fold(0.0_f64, |acc, i| acc.max(a[i * m + i])) * 1e-12 + 1e-300;
        loop {
            let mut damped = a.clone();
            if mu > 0.0 {
                for i in 0..m {
                    damped[i * m + i] += mu * a[i * m + i].max(diag_scale);
                }
            }
            let step = lu_solve(&damped, &state.gradient).filter(|s| {
                s.iter().all(|v| v.is_finite())
                    && s.iter().zip(&state.gradient).map(|(a, b)| a * b).sum::<f64>() > 0.0
            });
            if let Some(s) = step {
                let trial: Vec<f64> =
                    lambda.iter().zip(&s).map(|(l, d)| l + d).collect();
                if let Ok(st) = dual_state(&trial, p, bands, delta, true) {
                    if st.value.is_finite() && st.value > state.value {
                        state = st;
                        *lambda = trial;
                        mu = if mu < 1e-10 { 0.0 } else { mu / 5.0 };
                        continue 'outer;
                    }
                }
            }
            mu = if mu == 0.0 { 1e-8 } else { mu * 8.0 };
            if mu > 1e18 {
                break 'outer;
            }
        }
    }
    Ok(iterations)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-feasible-violation check over the grid simplex, as a small LP.
/// Returns the optimal max violation and the worst instrument.
fn feasibility_gap(z: &PayoffMatrix, bids: &[f64], asks: &[f64]) -> Result<(f64, usize)> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let n = z.grid().len();
    let m = z.n_instruments();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let ws: Vec<_> = (0..n)
        .map(|_| lp.add_var(0.0, (0.0, f64::INFINITY)))
        .collect();
    let mass: Vec<_> = ws.iter().map(|&w| (w, 1.0)).collect();
    lp.add_constraint(&mass, ComparisonOp::Eq, 1.0);
    for j in 0..m {
        let row = z.row(j);
        let mut ge: Vec<_> = ws.iter().zip(row).map(|(&w, &c)| (w, c)).collect();
        ge.push((t, 1.0));
        lp.add_constraint(&ge, ComparisonOp::Ge, bids[j]);
        let mut le: Vec<_> = ws.iter().zip(row).map(|(&w, &c)| (w, c)).collect();
        le.push((t, -1.0));
        lp.add_constraint(&le, ComparisonOp::Le, asks[j]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::InvalidInput(format!("feasibility LP failed: {e}")))?;
    let gap = sol.objective();
    // locate the binding instrument for the diagnostic
    let mut worst = (0.0_f64, 0usize);
    for j in 0..m {
        let price: f64 = ws
            .iter()
            .zip(z.row(j))
            .map(|(&w, &c)| sol[w] * c)
            .sum();
        let viol = (bids[j] - price).max(price - asks[j]).max(0.0);
        if viol > worst.0 {
            worst = (viol, j);
        }
    }
    Ok((gap, worst.1))
}

/// Minimal-entropy measure within the bands.
///
/// Runs the feasibility pre-check, then the smoothing continuation with a
/// dogleg Newton solve per stage (warm-started), and verifies that every
/// model price lands inside its band within `1e-6` of the quote mid.
/// Payoffs and bands are normalized by spot internally for conditioning.
pub fn solve_inner(
    p: &GridMeasure,
    bands: &PriceBands,
    config: &SolverConfig,
) -> Result<DualSolution> {
    let z = bands.instruments();
    if bands.is_empty() {
        return Err(Error::InvalidInput(
            "no instruments to project onto".into(),
        ));
    }
    if !p.grid().compatible(z.grid()) {
        return Err(Error::GridMismatch(
            "reference measure and payoffs live on different grids".into(),
        ));
    }
    let spot = z.spot();

    // spot-normalized copy of the problem
    let m_all = z.n_instruments();
    let mut active: Vec<usize> = Vec::with_capacity(m_all);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut bids = Vec::new();
    let mut asks = Vec::new();
    for j in 0..m_all {
        let row: Vec<f64> = z.row(j).iter().map(|v| v / spot).collect();
        let b = bands.bids[j] / spot;
        let a = bands.asks[j] / spot;
        if row.iter().all(|&v| v <= 0.0) {
            // payoff vanishes on the whole grid: the band is either vacuous
            // or impossible
            if b > 0.0 {
                return Err(Error::Infeasible {
                    violation: b * spot,
                    instrument: j,
                });
            }
            continue;
        }
        active.push(j);
        rows.push(row);
        bids.push(b);
        asks.push(a);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "all instruments have vanishing payoffs on this grid".into(),
        ));
    }
    let zn = PayoffMatrix::from_rows(z.grid().clone(), &rows, 1.0, z.discount())?;
    let nb = PriceBands::new(zn, bids.clone(), asks.clone())?;

    if config.check_feasibility {
        let (gap, worst) = feasibility_gap(nb.instruments(), &bids, &asks)?;
        if gap > config.feasibility_tol {
            return Err(Error::Infeasible {
                violation: gap * spot,
                instrument: active[worst],
            });
        }
    }

    // continuation schedule over the smoothing width
    let mut spreads: Vec<f64> = asks
        .iter()
        .zip(&bids)
        .map(|(a, b)| a - b)
        .filter(|s| *s > 0.0)
        .collect();
    let deltas: Vec<f64> = if spreads.is_empty() {
        // pure equality constraints: the spread penalty vanishes identically
        vec![1.0]
    } else {
        let med = median(&mut spreads);
        let mut d = config.delta_init_factor * med;
        let floor = config.delta_min_factor * med;
        let mut v = vec![d];
        while d > floor * (1.0 + 1e-12) {
            d /= config.delta_shrink;
            v.push(d);
        }
        v
    };

    let m = nb.len();
    let mut lambda = vec![0.0; m];
    let mut iterations = 0;
    for &delta in &deltas {
        iterations += newton_ascent_stage(p, &nb, delta, &mut lambda, config)?;
    }

    let delta_final = *deltas.last().unwrap();
    let final_state = dual_state(&lambda, p, &nb, delta_final, false)?;
    let prices = nb.instruments().prices_under(&final_state.q)?;
    for (j, &price) in prices.iter().enumerate() {
        let tol = 1e-6 * (0.5 * (bids[j] + asks[j])).max(1e-9);
        if price < bids[j] - tol || price > asks[j] + tol {
            return Err(Error::MaxIterations(format!(
                "inner solve left instrument {} outside its band by {:.3e} (spot units)",
                active[j],
                (bids[j] - price).max(price - asks[j]) * spot
            )));
        }
    }

    // re-inflate multipliers onto the original instrument list, in currency
    // units (lambda . Z is scale-invariant)
    let mut lambda_full = vec![0.0; m_all];
    for (slot, &j) in active.iter().enumerate() {
        lambda_full[j] = lambda[slot] / spot;
    }
    let q = exponential_tilt(p, &lambda_full, z)?;
    let full_prices = z.prices_under(&q)?;
    let residuals: Vec<f64> = full_prices
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            if e < bands.bids[j] {
                e - bands.bids[j]
            } else if e > bands.asks[j] {
                e - bands.asks[j]
            } else {
                0.0
            }
        })
        .collect();

    Ok(DualSolution {
        lambda_plus: lambda_full,
        q,
        dual_value: final_state.value,
        residuals,
        iterations,
    })
}
