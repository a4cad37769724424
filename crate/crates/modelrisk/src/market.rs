//! Option-chain slices and the quote filter applied before calibration.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{PayoffMatrix, ReturnGrid};
use crate::models::black_scholes::{bs_delta, bs_implied_vol, BsParams};
use crate::models::SliceContext;

/// One call quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    pub volume: u64,
}

impl Quote {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// The option chain of one (observation date, expiry) pair.
///
/// Construction sorts quotes by strike and merges duplicate strikes into
/// their tightest band (max bid, min ask, pooled volume); a crossed merge
/// means contradictory data and drops the strike.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketSlice {
    pub date: NaiveDate,
    pub expiry: NaiveDate,
    pub spot: f64,
    /// Continuously compounded rate observed for this expiry.
    pub rate: f64,
    /// Zero-bond price, `exp(-rate * tau)`.
    pub discount: f64,
    pub quotes: Vec<Quote>,
}

impl MarketSlice {
    pub fn new(
        date: NaiveDate,
        expiry: NaiveDate,
        spot: f64,
        rate: f64,
        quotes: Vec<Quote>,
    ) -> Result<Self> {
        if expiry <= date {
            return Err(Error::InvalidInput(format!(
                "expiry {expiry} not after observation date {date}"
            )));
        }
        if !(spot > 0.0) {
            return Err(Error::InvalidInput(format!("spot {spot} must be positive")));
        }
        for q in &quotes {
            if !(q.strike > 0.0) || !(q.bid >= 0.0) || !(q.ask >= q.bid) {
                return Err(Error::InvalidInput(format!(
                    "bad quote at strike {}: bid {} ask {}",
                    q.strike, q.bid, q.ask
                )));
            }
        }
        let tau = year_fraction(date, expiry);
        let discount = (-rate * tau).exp();
        let mut slice = Self {
            date,
            expiry,
            spot,
            rate,
            discount,
            quotes,
        };
        slice.dedup_strikes();
        Ok(slice)
    }

    /// ACT/365 year fraction to expiry.
    pub fn tau(&self) -> f64 {
        year_fraction(self.date, self.expiry)
    }

    pub fn context(&self) -> SliceContext {
        SliceContext {
            spot: self.spot,
            discount: self.discount,
            tau: self.tau(),
            rate: self.rate,
        }
    }

    fn dedup_strikes(&mut self) {
        self.quotes
            .sort_by(|a, b| a.strike.partial_cmp(&b.strike).unwrap());
        let mut merged: Vec<Quote> = Vec::with_capacity(self.quotes.len());
        for q in self.quotes.drain(..) {
            match merged.last_mut() {
                Some(last) if last.strike == q.strike => {
                    last.bid = last.bid.max(q.bid);
                    last.ask = last.ask.min(q.ask);
                    last.volume += q.volume;
                }
                _ => merged.push(q),
            }
        }
        merged.retain(|q| q.bid <= q.ask);
        self.quotes = merged;
    }

    /// Discounted-payoff rows and bands for the retained quotes.
    pub fn bands_on(&self, grid: &ReturnGrid) -> Result<crate::dual::PriceBands> {
        let strikes: Vec<f64> = self.quotes.iter().map(|q| q.strike).collect();
        let payoffs =
            PayoffMatrix::discounted_calls(grid.clone(), self.spot, self.discount, &strikes)?;
        crate::dual::PriceBands::new(
            payoffs,
            self.quotes.iter().map(|q| q.bid).collect(),
            self.quotes.iter().map(|q| q.ask).collect(),
        )
    }
}

fn year_fraction(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / 365.0
}

/// Quote-filter settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Keep quotes whose call delta lies in `[delta_lo, delta_hi]`.
    pub delta_lo: f64,
    pub delta_hi: f64,
    /// Drop quotes that traded less than this.
    pub min_volume: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            delta_lo: 0.025,
            delta_hi: 0.975,
            min_volume: 1,
        }
    }
}

/// Drops stale and extreme quotes: zero traded volume, mids outside the
/// static no-arbitrage bounds `max(S - B K, 0) < mid < S`, and strikes whose
/// delta (at the quote's own mid implied vol) falls outside the configured
/// band. Idempotent.
pub fn filter_quotes(slice: &MarketSlice, config: &FilterConfig) -> MarketSlice {
    let ctx = slice.context();
    let kept: Vec<Quote> = slice
        .quotes
        .iter()
        .filter(|q| {
            if q.volume < config.min_volume {
                return false;
            }
            let mid = q.mid();
            let lower = (ctx.spot - ctx.discount * q.strike).max(0.0);
            if !(mid > lower && mid < ctx.spot) {
                return false;
            }
            let Ok(iv) = bs_implied_vol(&ctx, q.strike, mid) else {
                return false;
            };
            let Ok(delta) = bs_delta(BsParams { sigma: iv }, &ctx, q.strike) else {
                return false;
            };
            (config.delta_lo..=config.delta_hi).contains(&delta)
        })
        .copied()
        .collect();
    MarketSlice {
        quotes: kept,
        ..slice.clone()
    }
}

/// Implied volatility of the quote nearest the forward; the scale used to
/// size grids. Falls back through the chain ordered by forward-moneyness
/// until a quote yields a vol.
pub fn atm_implied_vol(slice: &MarketSlice) -> Option<f64> {
    let ctx = slice.context();
    let f = ctx.forward();
    let mut order: Vec<&Quote> = slice.quotes.iter().collect();
    order.sort_by(|a, b| {
        (a.strike - f)
            .abs()
            .partial_cmp(&(b.strike - f).abs())
            .unwrap()
    });
    order
        .iter()
        .find_map(|q| bs_implied_vol(&ctx, q.strike, q.mid()).ok())
}
