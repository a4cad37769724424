//! Black/Scholes: discretized return density, pricing, implied volatility,
//! delta, and the closed-form divergence between two lognormal calibrations.

use super::{norm_cdf, norm_pdf, SliceContext};
use crate::error::{Error, Result};
use crate::measure::{GridMeasure, ReturnGrid, WEIGHT_FLOOR};

/// Black/Scholes parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    /// Annualized volatility.
    pub sigma: f64,
}

impl BsParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma {sigma} must be positive"
            )));
        }
        Ok(Self { sigma })
    }
}

/// Discretized law of `y = ln(B S_T / S_t)` under geometric Brownian motion:
/// Normal with mean `-sigma^2 tau / 2` and variance `sigma^2 tau`, so that
/// `E[e^y] = 1`.
pub fn bs_density(params: BsParams, ctx: &SliceContext, grid: &ReturnGrid) -> Result<GridMeasure> {
    let s = params.sigma * ctx.tau.sqrt();
    let mu = -0.5 * s * s;
    let pts = grid.points();
    let dy = grid.spacing();
    // mass the window fails to cover
    let z_lo = (pts[0] - mu) / s;
    let z_hi = (pts[pts.len() - 1] + dy - mu) / s;
    let truncated = norm_cdf(z_lo) + norm_cdf(-z_hi);
    if truncated > 1e-8 {
        return Err(Error::GridTooNarrow {
            mass: truncated,
            limit: 1e-8,
        });
    }
    let weights: Vec<f64> = pts
        .iter()
        .map(|&y| (norm_pdf((y - mu) / s) / s * dy).max(WEIGHT_FLOOR))
        .collect();
    GridMeasure::from_unnormalized(grid.clone(), weights)
}

/// Undiscounted-forward form of the Black/Scholes call price:
/// `B (F N(d1) - K N(d2))`.
pub fn bs_call_price(params: BsParams, ctx: &SliceContext, strike: f64) -> Result<f64> {
    if !(strike > 0.0) {
        return Err(Error::InvalidInput(format!(
            "strike {strike} must be positive"
        )));
    }
    let f = ctx.forward();
    let sd = params.sigma * ctx.tau.sqrt();
    if sd < 1e-12 {
        return Ok(ctx.discount * (f - strike).max(0.0));
    }
    let d1 = ((f / strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    Ok(ctx.discount * (f * norm_cdf(d1) - strike * norm_cdf(d2)))
}

/// Call delta `N(d1)`.
pub fn bs_delta(params: BsParams, ctx: &SliceContext, strike: f64) -> Result<f64> {
    if !(strike > 0.0) {
        return Err(Error::InvalidInput(format!(
            "strike {strike} must be positive"
        )));
    }
    let f = ctx.forward();
    let sd = params.sigma * ctx.tau.sqrt();
    if sd < 1e-12 {
        return Ok(if f > strike { 1.0 } else { 0.0 });
    }
    let d1 = ((f / strike).ln() + 0.5 * sd * sd) / sd;
    Ok(norm_cdf(d1))
}

/// Volatility implied by a call price, via safeguarded Newton/bisection.
///
/// The price must lie strictly inside the static no-arbitrage bounds
/// `(max(S - B K, 0), S)`.
pub fn bs_implied_vol(ctx: &SliceContext, strike: f64, price: f64) -> Result<f64> {
    let lower = (ctx.spot - ctx.discount * strike).max(0.0);
    let upper = ctx.spot;
    if !(price > lower && price < upper) {
        return Err(Error::NoArbitrageViolation {
            price,
            lower,
            upper,
        });
    }
    let tol = 1e-10 * ctx.spot;
    let (mut lo, mut hi) = (1e-9, 10.0);
    let mut sigma = 0.3_f64;
    for _ in 0..200 {
        let params = BsParams { sigma };
        let value = bs_call_price(params, ctx, strike)? - price;
        if value.abs() <= tol {
            return Ok(sigma);
        }
        if value > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        // Newton step when it stays inside the bracket, else bisection
        let sd = sigma * ctx.tau.sqrt();
        let f = ctx.forward();
        let d1 = ((f / strike).ln() + 0.5 * sd * sd) / sd;
        let vega = ctx.discount * f * norm_pdf(d1) * ctx.tau.sqrt();
        let newton = sigma - value / vega;
        sigma = if vega > 1e-30 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    // bracket collapsed to machine width without meeting the price tolerance
    Err(Error::MaxIterations(format!(
        "implied vol solve stalled at sigma {sigma}"
    )))
}

/// Closed-form relative entropy between today's lognormal calibration
/// (`sigma_star`) and a previous one (`sigma_prev`), both conditioned on the
/// same state: `D(N(-s*^2 t/2, s*^2 t) || N(-s^2 t/2, s^2 t))`.
pub fn bs_recalibration_divergence(sigma_prev: f64, sigma_star: f64, tau: f64) -> f64 {
    let ratio = sigma_star * sigma_star / (sigma_prev * sigma_prev);
    (ratio - 1.0)
        * (0.5 + tau / 8.0 * (sigma_star * sigma_star - sigma_prev * sigma_prev))
        + (sigma_prev / sigma_star).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::kl_divergence;

    fn ctx() -> SliceContext {
        SliceContext::from_rate(100.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn density_moments() {
        let grid = ReturnGrid::default_for_vol(0.2, 1.0).unwrap();
        let m = bs_density(BsParams { sigma: 0.2 }, &ctx(), &grid).unwrap();
        let mass: f64 = m.weights().iter().sum();
        assert!((mass - 1.0).abs() < 1e-10);
        let mean = m.mean_return();
        assert!((mean + 0.02).abs() < 1e-6, "mean {mean}");
        let var: f64 = m
            .weights()
            .iter()
            .zip(m.grid().points())
            .map(|(w, y)| w * (y - mean) * (y - mean))
            .sum();
        assert!((var - 0.04).abs() < 1e-6, "var {var}");
        let ey: Vec<f64> = m.grid().points().iter().map(|y| y.exp()).collect();
        assert!((m.expectation(&ey).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_rejects_narrow_grid() {
        let grid = ReturnGrid::from_vol(0.05, 1.0, 64, 2.0).unwrap();
        assert!(matches!(
            bs_density(BsParams { sigma: 0.4 }, &ctx(), &grid),
            Err(Error::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn call_price_limits() {
        let c = ctx();
        let p = bs_call_price(BsParams { sigma: 1e-8 }, &c, 80.0).unwrap();
        assert!((p - 20.0).abs() < 1e-8 * c.spot);
        let p = bs_call_price(BsParams { sigma: 0.2 }, &c, 1e-10).unwrap();
        assert!((p - c.spot).abs() < 1e-6);
    }

    #[test]
    fn call_price_atm_value() {
        // S=100, B=1, tau=1, sigma=0.2, K=100
        let p = bs_call_price(BsParams { sigma: 0.2 }, &ctx(), 100.0).unwrap();
        assert!((p - 7.9656).abs() < 1e-3, "price {p}");
        // cross-check against the grid expectation of the discounted payoff
        let grid = ReturnGrid::default_for_vol(0.2, 1.0).unwrap();
        let m = bs_density(BsParams { sigma: 0.2 }, &ctx(), &grid).unwrap();
        let z: Vec<f64> = grid
            .points()
            .iter()
            .map(|&y| (100.0 * y.exp() - 100.0_f64).max(0.0))
            .collect();
        let grid_price = m.expectation(&z).unwrap();
        assert!((p - grid_price).abs() < 1e-3, "formula {p} grid {grid_price}");
    }

    #[test]
    fn call_price_convex_nonincreasing_in_strike() {
        let c = ctx();
        let params = BsParams { sigma: 0.3 };
        let strikes: Vec<f64> = (1..60).map(|i| 40.0 + 2.0 * i as f64).collect();
        let prices: Vec<f64> = strikes
            .iter()
            .map(|&k| bs_call_price(params, &c, k).unwrap())
            .collect();
        for w in prices.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for w in prices.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-10);
        }
    }

    #[test]
    fn implied_vol_round_trips() {
        let c = ctx();
        for (sigma, strike) in [(0.2, 100.0), (0.8, 200.0), (0.35, 70.0)] {
            let price = bs_call_price(BsParams { sigma }, &c, strike).unwrap();
            let iv = bs_implied_vol(&c, strike, price).unwrap();
            assert!((iv - sigma).abs() < 1e-6, "sigma {sigma} -> {iv}");
        }
    }

    #[test]
    fn implied_vol_monotone_near_lower_bound() {
        let c = ctx();
        let strike = 90.0;
        let lower = (c.spot - c.discount * strike).max(0.0);
        let mut last = 0.0;
        for i in 1..6 {
            let price = lower + 1e-4 * i as f64;
            let iv = bs_implied_vol(&c, strike, price).unwrap();
            assert!(iv > last, "monotone: {iv} after {last}");
            last = iv;
        }
        assert!(last < 0.05, "tiny premium over intrinsic means small vol");
    }

    #[test]
    fn implied_vol_rejects_out_of_bounds() {
        let c = ctx();
        assert!(matches!(
            bs_implied_vol(&c, 90.0, 9.0),
            Err(Error::NoArbitrageViolation { .. })
        ));
        assert!(bs_implied_vol(&c, 90.0, 101.0).is_err());
    }

    #[test]
    fn delta_limits_and_symmetry_point() {
        let c = ctx();
        let params = BsParams { sigma: 0.25 };
        assert!((bs_delta(params, &c, 1e-9).unwrap() - 1.0).abs() < 1e-12);
        assert!(bs_delta(params, &c, 1e9).unwrap() < 1e-12);
        let k = c.forward() * (0.25_f64 * 0.25 * 1.0 / 2.0).exp();
        assert!((bs_delta(params, &c, k).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recalibration_divergence_values() {
        assert_eq!(bs_recalibration_divergence(0.3, 0.3, 2.0), 0.0);
        let d = bs_recalibration_divergence(0.2, 0.3, 1.0);
        assert!((d - 0.227347).abs() < 1e-6, "got {d}");
        // asymmetric direction, frozen from the numerical KL oracle
        let d = bs_recalibration_divergence(0.3, 0.2, 1.0);
        assert!((d - 0.131160).abs() < 1e-6, "got {d}");
    }

    #[test]
    fn recalibration_divergence_matches_grid_kl() {
        let c = ctx();
        let grid = ReturnGrid::from_vol(0.3, 1.0, 4096, 10.0).unwrap();
        let p_star = bs_density(BsParams { sigma: 0.3 }, &c, &grid).unwrap();
        let p_prev = bs_density(BsParams { sigma: 0.2 }, &c, &grid).unwrap();
        let grid_kl = kl_divergence(&p_star, &p_prev).unwrap();
        let closed = bs_recalibration_divergence(0.2, 0.3, 1.0);
        assert!(
            (grid_kl - closed).abs() < 1e-4,
            "grid {grid_kl} closed {closed}"
        );
    }
}
