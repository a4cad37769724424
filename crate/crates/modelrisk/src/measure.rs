//! Discrete probability measures on a uniform grid of log forward-moneyness
//! returns, `y = ln(B(t,T) * S_T / S_t)`, together with the handful of
//! measure-level operations everything else is built from: relative entropy,
//! expectations, exponential tilting and likelihood ratios.
//!
//! All risk-neutral laws in this crate (parametric or not) are represented as
//! a [`GridMeasure`]: a weight per node of a shared [`ReturnGrid`]. Keeping a
//! single concrete representation makes divergences and likelihood ratios
//! well-defined nodewise.

use crate::error::{Error, Result};

/// Weights below this are floored so that absolute continuity between any two
/// model densities holds by construction (floating-point underflow would
/// otherwise produce spurious zero-support nodes deep in the tails).
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// A uniform, strictly increasing grid of log-return values.
///
/// The node count must be a power of two (>= 64) so the same grid can feed
/// the FFT density inversion directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnGrid {
    points: Vec<f64>,
    spacing: f64,
}

impl ReturnGrid {
    /// Builds a grid from explicit node locations, validating uniformity.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < 64 || !n.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "grid size {n} must be a power of two >= 64"
            )));
        }
        let spacing = points[1] - points[0];
        if !(spacing > 0.0) {
            return Err(Error::InvalidInput("grid points must be increasing".into()));
        }
        for w in points.windows(2) {
            let d = w[1] - w[0];
            if (d - spacing).abs() > 1e-12 * spacing.max(1.0) {
                return Err(Error::InvalidInput(
                    "grid points must be uniformly spaced".into(),
                ));
            }
        }
        Ok(Self { points, spacing })
    }

    /// Uniform grid of `size` nodes spanning `span` standard deviations of a
    /// lognormal with volatility `sigma_hat` to either side of its mean
    /// log-return `-sigma_hat^2 tau / 2`.
    pub fn from_vol(sigma_hat: f64, tau: f64, size: usize, span: f64) -> Result<Self> {
        if !(sigma_hat > 0.0 && tau > 0.0 && span > 0.0) {
            return Err(Error::InvalidInput(
                "grid volatility, maturity and span must be positive".into(),
            ));
        }
        let sd = sigma_hat * tau.sqrt();
        let center = -sigma_hat * sigma_hat * tau / 2.0;
        let lo = center - span * sd;
        let hi = center + span * sd;
        let spacing = (hi - lo) / size as f64;
        let points = (0..size).map(|i| lo + spacing * i as f64).collect();
        Self::new(points)
    }

    /// Default production grid: 4096 nodes, 10 standard deviations.
    pub fn default_for_vol(sigma_hat: f64, tau: f64) -> Result<Self> {
        Self::from_vol(sigma_hat, tau, 4096, 10.0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Two grids are compatible when they describe the same nodes up to
    /// floating-point noise.
    pub fn compatible(&self, other: &ReturnGrid) -> bool {
        self.points.len() == other.points.len()
            && (self.points[0] - other.points[0]).abs() <= 1e-12 * self.spacing
            && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing
    }
}

/// A probability measure supported on the nodes of a [`ReturnGrid`].
#[derive(Debug, Clone)]
pub struct GridMeasure {
    grid: ReturnGrid,
    weights: Vec<f64>,
}

impl GridMeasure {
    /// Wraps validated weights: nonnegative, matching length, total mass 1
    /// within 1e-10.
    pub fn new(grid: ReturnGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} weights for a {}-node grid",
                weights.len(),
                grid.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidInput(
                "measure weights must be nonnegative and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "measure weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { grid, weights })
    }

    /// Normalizes arbitrary nonnegative mass into a probability measure.
    pub fn from_unnormalized(grid: ReturnGrid, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} weights for a {}-node grid",
                weights.len(),
                grid.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cannot normalize total mass {total}"
            )));
        }
        for w in &mut weights {
            if !(*w >= 0.0) {
                return Err(Error::InvalidInput(
                    "measure weights must be nonnegative and finite".into(),
                ));
            }
            *w /= total;
        }
        Ok(Self { grid, weights })
    }

    pub fn grid(&self) -> &ReturnGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `E[values]` under this measure. `values` must be given per grid node.
    pub fn expectation(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.weights.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}-node measure",
                values.len(),
                self.weights.len()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum())
    }

    /// Mean of the grid coordinate itself.
    pub fn mean_return(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.grid.points())
            .map(|(w, y)| w * y)
            .sum()
    }

    /// Probability mass above `threshold`, treating each node as a cell of
    /// width `spacing` centered on it (the straddling cell contributes its
    /// overlapping fraction). This is the grid-measure analogue of a tail
    /// probability and converges O(spacing^2) to the continuous tail.
    pub fn tail_mass_above(&self, threshold: f64) -> f64 {
        let dy = self.grid.spacing();
        let mut total = 0.0;
        for (w, y) in self.weights.iter().zip(self.grid.points()) {
            let hi = y + dy / 2.0;
            let frac = ((hi - threshold) / dy).clamp(0.0, 1.0);
            total += w * frac;
        }
        total
    }

    fn check_same_grid(&self, other: &GridMeasure) -> Result<()> {
        if !self.grid.compatible(&other.grid) {
            return Err(Error::GridMismatch(
                "measures live on different grids".into(),
            ));
        }
        Ok(())
    }
}

/// Relative entropy `D(q || p) = sum_i q_i ln(q_i / p_i)` with the convention
/// `0 ln 0 = 0`.
///
/// Requires `q` absolutely continuous with respect to `p` on the grid.
/// Nonnegative by Gibbs' inequality; tiny negative rounding residue is
/// clamped to zero.
pub fn kl_divergence(q: &GridMeasure, p: &GridMeasure) -> Result<f64> {
    q.check_same_grid(p)?;
    let mut sum = 0.0;
    for (i, (&qi, &pi)) in q.weights.iter().zip(&p.weights).enumerate() {
        if qi > 0.0 {
            if pi <= 0.0 {
                return Err(Error::SupportViolation { node: i });
            }
            sum += qi * (qi / pi).ln();
        }
    }
    Ok(sum.max(0.0))
}

/// Nodewise likelihood ratio `m_i = q_i / p_i` (`0` where both vanish).
pub fn radon_nikodym(q: &GridMeasure, p: &GridMeasure) -> Result<Vec<f64>> {
    q.check_same_grid(p)?;
    q.weights
        .iter()
        .zip(&p.weights)
        .enumerate()
        .map(|(i, (&qi, &pi))| {
            if pi > 0.0 {
                Ok(qi / pi)
            } else if qi > 0.0 {
                Err(Error::SupportViolation { node: i })
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// Matrix of discounted call payoffs evaluated on a grid: one row per strike,
/// `Z_j(y) = max(S e^y - B K_j, 0)`.
#[derive(Debug, Clone)]
pub struct PayoffMatrix {
    grid: ReturnGrid,
    /// Row-major, `n_instruments x grid.len()`.
    payoffs: Vec<f64>,
    strikes: Vec<f64>,
    spot: f64,
    discount: f64,
}

impl PayoffMatrix {
    /// Builds discounted call payoff rows for the given strikes.
    pub fn discounted_calls(
        grid: ReturnGrid,
        spot: f64,
        discount: f64,
        strikes: &[f64],
    ) -> Result<Self> {
        if !(spot > 0.0) || !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidInput(
                "spot must be positive and discount in (0, 1]".into(),
            ));
        }
        if strikes.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::InvalidInput("strikes must be positive".into()));
        }
        let n = grid.len();
        let mut payoffs = Vec::with_capacity(strikes.len() * n);
        for &k in strikes {
            let dk = discount * k;
            for &y in grid.points() {
                payoffs.push((spot * y.exp() - dk).max(0.0));
            }
        }
        Ok(Self {
            grid,
            payoffs,
            strikes: strikes.to_vec(),
            spot,
            discount,
        })
    }

    /// A payoff matrix from raw rows; used by tests and synthetic setups that
    /// need non-call payoffs.
    pub fn from_rows(grid: ReturnGrid, rows: &[Vec<f64>], spot: f64, discount: f64) -> Result<Self> {
        let n = grid.len();
        let mut payoffs = Vec::with_capacity(rows.len() * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::GridMismatch(format!(
                    "payoff row of {} values on a {}-node grid",
                    row.len(),
                    n
                )));
            }
            payoffs.extend_from_slice(row);
        }
        Ok(Self {
            grid,
            payoffs,
            strikes: vec![f64::NAN; rows.len()],
            spot,
            discount,
        })
    }

    pub fn grid(&self) -> &ReturnGrid {
        &self.grid
    }

    pub fn n_instruments(&self) -> usize {
        self.strikes.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.payoffs[j * n..(j + 1) * n]
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn spot(&self) -> f64 {
        self.spot
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Model price of every instrument under `m`: `E^m[Z_j]`.
    pub fn prices_under(&self, m: &GridMeasure) -> Result<Vec<f64>> {
        (0..self.n_instruments())
            .map(|j| m.expectation(self.row(j)))
            .collect()
    }
}

/// Exponential tilt `q_i ∝ p_i exp(sum_j lambda_j Z_{j,i})`, normalized.
///
/// The largest exponent over the support of `p` is subtracted before
/// exponentiation, so overflow can only occur for genuinely pathological
/// multipliers.
pub fn exponential_tilt(
    p: &GridMeasure,
    lambda: &[f64],
    payoffs: &PayoffMatrix,
) -> Result<GridMeasure> {
    if !p.grid().compatible(payoffs.grid()) {
        return Err(Error::GridMismatch(
            "payoff matrix grid differs from the measure grid".into(),
        ));
    }
    if lambda.len() != payoffs.n_instruments() {
        return Err(Error::GridMismatch(format!(
            "{} multipliers for {} instruments",
            lambda.len(),
            payoffs.n_instruments()
        )));
    }
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::NumericalOverflow);
    }
    let n = p.len();
    let mut exponent = vec![0.0; n];
    for (j, &lj) in lambda.iter().enumerate() {
        if lj == 0.0 {
            continue;
        }
        for (e, &z) in exponent.iter_mut().zip(payoffs.row(j)) {
            *e += lj * z;
        }
    }
    let mut shift = f64::NEG_INFINITY;
    for (e, &w) in exponent.iter().zip(p.weights()) {
        if w > 0.0 && *e > shift {
            shift = *e;
        }
    }
    if !shift.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    let mut weights = Vec::with_capacity(n);
    let mut total = 0.0;
    for (e, &w) in exponent.iter().zip(p.weights()) {
        let v = if w > 0.0 { w * (e - shift).exp() } else { 0.0 };
        total += v;
        weights.push(v);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    for w in &mut weights {
        *w /= total;
    }
    GridMeasure::new(p.grid().clone(), weights)
}

/// Log of the tilt normalizer, `ln E^p[exp(lambda . Z)]`, computed
/// overflow-safely. This is the cumulant term of the dual objective.
pub fn log_tilt_normalizer(
    p: &GridMeasure,
    lambda: &[f64],
    payoffs: &PayoffMatrix,
) -> Result<f64> {
    if lambda.len() != payoffs.n_instruments() {
        return Err(Error::GridMismatch(format!(
            "{} multipliers for {} instruments",
            lambda.len(),
            payoffs.n_instruments()
        )));
    }
    let n = p.len();
    let mut exponent = vec![0.0; n];
    for (j, &lj) in lambda.iter().enumerate() {
        if lj == 0.0 {
            continue;
        }
        for (e, &z) in exponent.iter_mut().zip(payoffs.row(j)) {
            *e += lj * z;
        }
    }
    let mut shift = f64::NEG_INFINITY;
    for (e, &w) in exponent.iter().zip(p.weights()) {
        if w > 0.0 && *e > shift {
            shift = *e;
        }
    }
    if !shift.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    let total: f64 = exponent
        .iter()
        .zip(p.weights())
        .map(|(e, &w)| if w > 0.0 { w * (e - shift).exp() } else { 0.0 })
        .sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    Ok(shift + total.ln())
}
