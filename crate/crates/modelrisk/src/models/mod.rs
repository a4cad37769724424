//! Parametric risk-neutral models on the return grid.

pub mod black_scholes;
pub mod heston;

use crate::error::{Error, Result};

/// Market observables shared by every quote of one (date, expiry) slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceContext {
    /// Spot price of the underlier.
    pub spot: f64,
    /// Zero-bond price B(t, T) for the option expiry.
    pub discount: f64,
    /// Time to expiry in years.
    pub tau: f64,
    /// Continuously compounded rate consistent with `discount`.
    pub rate: f64,
}

impl SliceContext {
    pub fn new(spot: f64, discount: f64, tau: f64, rate: f64) -> Result<Self> {
        if !(spot > 0.0) {
            return Err(Error::InvalidInput(format!("spot {spot} must be positive")));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau {tau} must be positive")));
        }
        if !(discount > 0.0 && discount <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "discount {discount} must lie in (0, 1]"
            )));
        }
        if (discount - (-rate * tau).exp()).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "discount {discount} inconsistent with rate {rate} at tau {tau}"
            )));
        }
        Ok(Self {
            spot,
            discount,
            tau,
            rate,
        })
    }

    /// Builds the context from (spot, rate, tau), deriving the discount.
    pub fn from_rate(spot: f64, rate: f64, tau: f64) -> Result<Self> {
        Self::new(spot, (-rate * tau).exp(), tau, rate)
    }

    /// Forward price F = S / B(t, T).
    pub fn forward(&self) -> f64 {
        self.spot / self.discount
    }

    /// Exercise threshold in grid coordinates: S_T > K iff y > ln(B K / S).
    pub fn log_moneyness_threshold(&self, strike: f64) -> f64 {
        (self.discount * strike / self.spot).ln()
    }
}

/// Standard normal CDF.
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_checks_discount_consistency() {
        assert!(SliceContext::new(100.0, 0.99, 1.0, 0.01).is_err());
        let ctx = SliceContext::from_rate(100.0, 0.02, 0.5).unwrap();
        assert!((ctx.discount - (-0.01_f64).exp()).abs() < 1e-15);
        assert!((ctx.forward() - 100.0 / ctx.discount).abs() < 1e-12);
    }

    #[test]
    fn norm_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        // the erfc backend is good to ~1e-11 absolute
        assert!((norm_cdf(1.0) - 0.8413447460685429).abs() < 5e-11);
        assert!((norm_cdf(-2.0) - 0.022750131948179212).abs() < 5e-11);
    }
}
