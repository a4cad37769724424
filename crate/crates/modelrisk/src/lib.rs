//! Measures how much model risk an option desk takes on when it calibrates
//! and recalibrates a parametric pricing model.
//!
//! The library represents every risk-neutral law (Black/Scholes, Heston, or
//! the non-parametric market-consistent reference) as a discrete measure on
//! a shared log-return grid, then quantifies in nats of relative entropy:
//!
//! * **calibration error** — divergence between the closest market-consistent
//!   measure and the best parametric fit at one point in time;
//! * **recalibration risk** — divergence between today's parameters and the
//!   previously calibrated ones, conditioned on today's state;
//! * **aggregate risk** — divergence of the market-consistent reference from
//!   the stale model, which decomposes exactly into the first two plus a
//!   covariance residual.
//!
//! On top sit a calibration engine (entropy projection onto bid/ask bands
//! alternating with bounded quasi-Newton parameter fits), a schedule runner
//! that replays recalibration policies over a time series, and the data
//! plumbing for CSV option chains and synthetic market generation.

pub mod calibrate;
pub mod dual;
pub mod error;
pub mod market;
pub mod measure;
pub mod models;
pub mod solvers;

pub use calibrate::{
    alternating_calibrate, default_bounds, fit_reference_to_frozen_model, initial_fit,
    minimize_divergence_over_params, minimize_divergence_over_state, slice_grid,
    CalibrationConfig, CalibrationResult, FrozenFit, IterationTrace, ModelKind, ModelParams,
    ModelSpec,
};
pub use dual::{dual_objective, smoothed_sign, solve_inner, DualSolution, PriceBands, SolverConfig};
pub use error::{Error, Result};
pub use market::{atm_implied_vol, filter_quotes, FilterConfig, MarketSlice, Quote};
pub use measure::{
    exponential_tilt, kl_divergence, radon_nikodym, GridMeasure, PayoffMatrix, ReturnGrid,
};
pub use models::black_scholes::{
    bs_call_price, bs_delta, bs_density, bs_implied_vol, bs_recalibration_divergence, BsParams,
};
pub use models::heston::{
    heston_cf_coeffs, heston_density, heston_exercise_prob, HestonParams, HestonState,
};
pub use models::SliceContext;
