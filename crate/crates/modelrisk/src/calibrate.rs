//! Joint calibration of a parametric model and a market-consistent
//! reference measure by alternating minimization.
//!
//! One round trip of the outer loop:
//! 1. project the current model density onto the quote bands
//!    ([`crate::dual::solve_inner`]) to get the closest market-consistent
//!    measure, then
//! 2. re-fit the model parameters (and the latent variance for Heston) to
//!    that measure by bounded quasi-Newton on the relative entropy.
//!
//! Both half-steps are exact minimizations of the same divergence in one
//! argument, so the divergence decreases monotonically; iteration stops once
//! no parameter moves by more than 0.1% (the recalibration threshold used
//! everywhere in this crate).

use serde::{Deserialize, Serialize};

use crate::dual::{solve_inner, DualSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::market::{atm_implied_vol, MarketSlice};
use crate::measure::{kl_divergence, GridMeasure, ReturnGrid};
use crate::models::black_scholes::{bs_density, bs_implied_vol, BsParams};
use crate::models::heston::{heston_density, HestonParams, HestonState};
use crate::models::SliceContext;
use crate::solvers::bfgs::{minimize_bounded, BfgsOptions};
use crate::solvers::levenberg::{least_squares_box, LmOptions};

/// Which parametric family a slice is calibrated to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    BlackScholes,
    Heston,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::BlackScholes => "bs",
            ModelKind::Heston => "heston",
        }
    }

    /// Minimum quote count that identifies the parameters.
    fn min_quotes(&self) -> usize {
        match self {
            ModelKind::BlackScholes => 1,
            ModelKind::Heston => 5,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bs" | "black-scholes" | "blackscholes" => Ok(ModelKind::BlackScholes),
            "heston" => Ok(ModelKind::Heston),
            other => Err(Error::InvalidInput(format!("unknown model '{other}'"))),
        }
    }
}

/// Parameter values of one model instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelParams {
    BlackScholes(BsParams),
    Heston {
        params: HestonParams,
        state: HestonState,
    },
}

/// A model instance together with the box the optimizer may move it in.
///
/// Parameter vector layout: `[sigma]` for Black/Scholes,
/// `[kappa, theta, vol_of_vol, rho, v]` for Heston.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model: ModelParams,
    pub bounds: Vec<(f64, f64)>,
}

/// Generous economic ranges keeping densities computable.
pub fn default_bounds(kind: ModelKind) -> Vec<(f64, f64)> {
    match kind {
        ModelKind::BlackScholes => vec![(1e-3, 5.0)],
        ModelKind::Heston => vec![
            (1e-3, 50.0),
            (1e-6, 4.0),
            (1e-3, 10.0),
            (-0.999, 0.999),
            (1e-6, 4.0),
        ],
    }
}

impl ModelSpec {
    pub fn black_scholes(sigma: f64) -> Result<Self> {
        Ok(Self {
            model: ModelParams::BlackScholes(BsParams::new(sigma)?),
            bounds: default_bounds(ModelKind::BlackScholes),
        })
    }

    pub fn heston(kappa: f64, theta: f64, vol_of_vol: f64, rho: f64, v: f64) -> Result<Self> {
        Ok(Self {
            model: ModelParams::Heston {
                params: HestonParams::new(kappa, theta, vol_of_vol, rho)?,
                state: HestonState::new(v)?,
            },
            bounds: default_bounds(ModelKind::Heston),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self.model {
            ModelParams::BlackScholes(_) => ModelKind::BlackScholes,
            ModelParams::Heston { .. } => ModelKind::Heston,
        }
    }

    pub fn params_vec(&self) -> Vec<f64> {
        match &self.model {
            ModelParams::BlackScholes(p) => vec![p.sigma],
            ModelParams::Heston { params, state } => vec![
                params.kappa,
                params.theta,
                params.vol_of_vol,
                params.rho,
                state.v,
            ],
        }
    }

    pub fn with_params_vec(&self, x: &[f64]) -> Result<Self> {
        let model = match self.kind() {
            ModelKind::BlackScholes => ModelParams::BlackScholes(BsParams::new(x[0])?),
            ModelKind::Heston => ModelParams::Heston {
                params: HestonParams::new(x[0], x[1], x[2], x[3])?,
                state: HestonState::new(x[4])?,
            },
        };
        Ok(Self {
            model,
            bounds: self.bounds.clone(),
        })
    }

    /// The latent variance, for Heston instances.
    pub fn state(&self) -> Option<HestonState> {
        match self.model {
            ModelParams::BlackScholes(_) => None,
            ModelParams::Heston { state, .. } => Some(state),
        }
    }

    pub fn density(&self, ctx: &SliceContext, grid: &ReturnGrid) -> Result<GridMeasure> {
        match &self.model {
            ModelParams::BlackScholes(p) => bs_density(*p, ctx, grid),
            ModelParams::Heston { params, state } => heston_density(params, state, ctx, grid),
        }
    }
}

/// Largest relative parameter move between two instances, with an absolute
/// comparison for parameters that are essentially zero.
pub fn max_param_change(old: &ModelSpec, new: &ModelSpec) -> f64 {
    old.params_vec()
        .iter()
        .zip(new.params_vec())
        .map(|(&a, b)| {
            if a.abs() < 1e-8 {
                (b - a).abs()
            } else {
                ((b - a) / a).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Settings shared by every calibration entry point.
#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub grid_size: usize,
    /// Grid half-width in standard deviations of the slice's ATM vol.
    pub grid_span: f64,
    /// Outer alternation cap.
    pub max_outer_iters: usize,
    /// Convergence threshold on the relative parameter move (0.001 = 0.1%).
    pub param_tol: f64,
    pub solver: SolverConfig,
    pub quasi_newton: BfgsOptions,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            grid_size: 4096,
            grid_span: 10.0,
            max_outer_iters: 50,
            param_tol: 1e-3,
            solver: SolverConfig::default(),
            quasi_newton: BfgsOptions {
                max_iter: 200,
                grad_tol: 1e-9,
                f_tol: 1e-13,
                fd_rel_step: 1e-6,
            },
        }
    }
}

/// The grid every measure of one slice evaluation lives on: sized by the
/// slice's own ATM implied vol so reference, recalibrated and stale
/// densities share nodes.
pub fn slice_grid(slice: &MarketSlice, config: &CalibrationConfig) -> Result<ReturnGrid> {
    let iv = atm_implied_vol(slice).ok_or_else(|| {
        Error::InvalidInput("no quote yields an implied vol to size the grid".into())
    })?;
    ReturnGrid::from_vol(iv, slice.tau(), config.grid_size, config.grid_span)
}

/// Joint calibration output for one slice.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub spec: ModelSpec,
    pub q_star: GridMeasure,
    /// `D(q_star || density(spec))`: the calibration error.
    pub divergence: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationTrace>,
}

/// Divergences along one outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationTrace {
    /// `D(Q^n || P^n)` right after the measure half-step.
    pub divergence_after_reference: f64,
    /// `D(Q^n || P^{n+1})` after the parameter half-step.
    pub divergence_after_params: f64,
    pub max_param_change: f64,
}

fn price_residuals(
    spec: &ModelSpec,
    x: &[f64],
    ctx: &SliceContext,
    grid: &ReturnGrid,
    payoff_rows: &[Vec<f64>],
    mids: &[f64],
) -> Option<Vec<f64>> {
    let candidate = spec.with_params_vec(x).ok()?;
    let density = candidate.density(ctx, grid).ok()?;
    let scale = ctx.spot;
    payoff_rows
        .iter()
        .zip(mids)
        .map(|(row, &mid)| {
            let price = density.expectation(row).ok()?;
            price.is_finite().then(|| (price - mid) / scale)
        })
        .collect()
}

/// Deterministic starting points for the mean-squared-error fit, seeded by
/// the slice's ATM implied vol.
fn fit_starts(kind: ModelKind, atm_iv: f64) -> Vec<Vec<f64>> {
    match kind {
        ModelKind::BlackScholes => {
            vec![vec![atm_iv], vec![0.5 * atm_iv], vec![2.0 * atm_iv]]
        }
        ModelKind::Heston => {
            let var = atm_iv * atm_iv;
            vec![
                vec![2.0, var, 0.5, -0.5, var],
                vec![1.0, 1.5 * var, 1.0, -0.7, 0.75 * var],
                vec![4.0, 0.75 * var, 0.25, 0.0, 1.25 * var],
            ]
        }
    }
}

/// Least-squares pre-fit of the model to quote mids (prices computed as grid
/// expectations of the discounted payoffs), from a fixed multi-start.
///
/// `warm_start` joins the start list when provided; schedule runs pass the
/// previous day's calibration through it.
pub fn initial_fit(
    slice: &MarketSlice,
    kind: ModelKind,
    config: &CalibrationConfig,
    warm_start: Option<&ModelSpec>,
) -> Result<ModelSpec> {
    if slice.quotes.len() < kind.min_quotes() {
        return Err(Error::InsufficientQuotes {
            have: slice.quotes.len(),
            need: kind.min_quotes(),
        });
    }
    let ctx = slice.context();
    let grid = slice_grid(slice, config)?;
    let bands = slice.bands_on(&grid)?;
    let payoff_rows: Vec<Vec<f64>> = (0..bands.instruments().n_instruments())
        .map(|j| bands.instruments().row(j).to_vec())
        .collect();
    let mids: Vec<f64> = slice.quotes.iter().map(|q| q.mid()).collect();
    let atm_iv = atm_implied_vol(slice).ok_or_else(|| {
        Error::InvalidInput("no quote yields an implied vol for fit seeding".into())
    })?;

    let template = match kind {
        ModelKind::BlackScholes => ModelSpec::black_scholes(atm_iv.clamp(1.1e-3, 4.9))?,
        ModelKind::Heston => {
            let var = (atm_iv * atm_iv).clamp(2e-6, 3.9);
            ModelSpec::heston(2.0, var, 0.5, -0.5, var)?
        }
    };
    let bounds = template.bounds.clone();
    let mut starts = fit_starts(kind, atm_iv);
    if let Some(w) = warm_start {
        if w.kind() == kind {
            starts.push(w.params_vec());
        }
    }

    let lm = LmOptions::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let clipped: Vec<f64> = start
            .iter()
            .zip(&bounds)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect();
        let outcome = least_squares_box(
            |x| price_residuals(&template, x, &ctx, &grid, &payoff_rows, &mids),
            &clipped,
            &bounds,
            &lm,
        );
        if let Some(out) = outcome {
            if out.cost.is_finite() && best.as_ref().is_none_or(|(c, _)| out.cost < *c) {
                best = Some((out.cost, out.x));
            }
        }
    }
    let (_, x) = best.ok_or_else(|| {
        Error::FitDiverged("every multi-start failed to produce a finite price fit".into())
    })?;
    template.with_params_vec(&x)
}

/// Coordinates the quasi-Newton step may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FreeVars {
    /// Model parameters only (latent variance pinned).
    Params,
    /// Parameters plus the latent variance.
    ParamsAndState,
    /// Latent variance only (parameters frozen).
    StateOnly,
}

fn free_mask(kind: ModelKind, free: FreeVars) -> Vec<bool> {
    match (kind, free) {
        (ModelKind::BlackScholes, _) => vec![true],
        (ModelKind::Heston, FreeVars::Params) => vec![true, true, true, true, false],
        (ModelKind::Heston, FreeVars::ParamsAndState) => vec![true; 5],
        (ModelKind::Heston, FreeVars::StateOnly) => vec![false, false, false, false, true],
    }
}

fn minimize_kl_masked(
    q: &GridMeasure,
    init: &ModelSpec,
    ctx: &SliceContext,
    free: FreeVars,
    config: &CalibrationConfig,
) -> Result<ModelSpec> {
    let mask = free_mask(init.kind(), free);
    let full0 = init.params_vec();
    let grid = q.grid().clone();

    let x0: Vec<f64> = full0
        .iter()
        .zip(&mask)
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect();
    let bounds: Vec<(f64, f64)> = init
        .bounds
        .iter()
        .zip(&mask)
        .filter_map(|(&b, &m)| m.then_some(b))
        .collect();

    let objective = |x: &[f64]| {
        let mut full = full0.clone();
        let mut it = x.iter();
        for (slot, &m) in full.iter_mut().zip(&mask) {
            if m {
                *slot = *it.next().unwrap();
            }
        }
        let Ok(candidate) = init.with_params_vec(&full) else {
            return f64::INFINITY;
        };
        let Ok(p) = candidate.density(ctx, &grid) else {
            return f64::INFINITY;
        };
        kl_divergence(q, &p).unwrap_or(f64::INFINITY)
    };

    let f0 = objective(&x0);
    if !f0.is_finite() {
        return Err(Error::FitDiverged(
            "divergence is not finite at the initial parameters".into(),
        ));
    }
    let outcome = minimize_bounded(objective, &x0, &bounds, &config.quasi_newton);
    if !outcome.f.is_finite() || outcome.f > f0 + 1e-12 {
        return Err(Error::FitDiverged(format!(
            "divergence minimization went from {f0} to {}",
            outcome.f
        )));
    }
    let mut full = full0;
    let mut it = outcome.x.iter();
    for (slot, &m) in full.iter_mut().zip(&mask) {
        if m {
            *slot = *it.next().unwrap();
        }
    }
    init.with_params_vec(&full)
}

/// Minimizes `D(q || density(params))` over the model parameters
/// (`free_state` additionally frees the Heston latent variance), by bounded
/// quasi-Newton with central-difference gradients.
pub fn minimize_divergence_over_params(
    q: &GridMeasure,
    init: &ModelSpec,
    ctx: &SliceContext,
    free_state: bool,
    config: &CalibrationConfig,
) -> Result<ModelSpec> {
    let free = if free_state {
        FreeVars::ParamsAndState
    } else {
        FreeVars::Params
    };
    minimize_kl_masked(q, init, ctx, free, config)
}

/// Minimizes the divergence over the latent variance only, holding model
/// parameters frozen (Heston instances only).
pub fn minimize_divergence_over_state(
    q: &GridMeasure,
    init: &ModelSpec,
    ctx: &SliceContext,
    config: &CalibrationConfig,
) -> Result<ModelSpec> {
    if init.kind() != ModelKind::Heston {
        return Err(Error::InvalidInput(
            "state-only refit applies to models with a latent state".into(),
        ));
    }
    minimize_kl_masked(q, init, ctx, FreeVars::StateOnly, config)
}

/// Full joint calibration of one slice: least-squares pre-fit, then
/// alternating entropy projection and parameter refit until no parameter
/// moves more than `param_tol`.
pub fn alternating_calibrate(
    slice: &MarketSlice,
    kind: ModelKind,
    config: &CalibrationConfig,
    warm_start: Option<&ModelSpec>,
) -> Result<CalibrationResult> {
    let ctx = slice.context();
    let grid = slice_grid(slice, config)?;
    let bands = slice.bands_on(&grid)?;

    let mut spec = initial_fit(slice, kind, config, warm_start)?;
    let free_state = kind == ModelKind::Heston;

    let mut solver = config.solver.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut q_last: Option<DualSolution> = None;

    for _ in 0..config.max_outer_iters {
        let p = spec.density(&ctx, &grid)?;
        let sol = solve_inner(&p, &bands, &solver)?;
        // bands don't change across iterations, one feasibility check suffices
        solver.check_feasibility = false;
        let div_q = kl_divergence(&sol.q, &p)?;

        let next = minimize_divergence_over_params(&sol.q, &spec, &ctx, free_state, config)?;
        let p_next = next.density(&ctx, &grid)?;
        let div_p = kl_divergence(&sol.q, &p_next)?;
        let change = max_param_change(&spec, &next);

        trace.push(IterationTrace {
            divergence_after_reference: div_q,
            divergence_after_params: div_p,
            max_param_change: change,
        });
        spec = next;
        q_last = Some(sol);
        if change <= config.param_tol {
            converged = true;
            break;
        }
    }

    // final projection against the converged parameters so the reported
    // reference is optimal for the reported model
    let p_final = spec.density(&ctx, &grid)?;
    let sol = match q_last {
        // reuse nothing: the last parameter step may have moved the density
        _ => solve_inner(&p_final, &bands, &solver)?,
    };
    let divergence = kl_divergence(&sol.q, &p_final)?;
    Ok(CalibrationResult {
        spec,
        q_star: sol.q,
        divergence,
        iterations: trace.len(),
        converged,
        trace,
    })
}

/// Result of projecting the market onto a frozen (non-recalibrated) model.
#[derive(Debug, Clone)]
pub struct FrozenFit {
    pub q_hat: GridMeasure,
    /// Refit latent variance, when the model has one and it was freed.
    pub state: Option<HestonState>,
    /// `D(q_hat || frozen density)` at the refit state.
    pub divergence: f64,
}

/// Closest market-consistent measure to a model with frozen parameters.
///
/// For Black/Scholes (or `free_state = false`) this is a single entropy
/// projection. For Heston with `free_state = true` the latent variance is
/// co-optimized by the same alternation as the full calibration, since a
/// changing variance state is consistent with the model.
pub fn fit_reference_to_frozen_model(
    slice: &MarketSlice,
    frozen: &ModelSpec,
    free_state: bool,
    config: &CalibrationConfig,
) -> Result<FrozenFit> {
    let ctx = slice.context();
    let grid = slice_grid(slice, config)?;
    let bands = slice.bands_on(&grid)?;
    let mut solver = config.solver.clone();

    if frozen.kind() == ModelKind::BlackScholes || !free_state {
        let p = frozen.density(&ctx, &grid)?;
        let sol = solve_inner(&p, &bands, &solver)?;
        return Ok(FrozenFit {
            divergence: kl_divergence(&sol.q, &p)?,
            q_hat: sol.q,
            state: frozen.state(),
        });
    }

    let mut spec = frozen.clone();
    for _ in 0..config.max_outer_iters {
        let p = spec.density(&ctx, &grid)?;
        let sol = solve_inner(&p, &bands, &solver)?;
        solver.check_feasibility = false;
        let next = minimize_divergence_over_state(&sol.q, &spec, &ctx, config)?;
        let change = max_param_change(&spec, &next);
        spec = next;
        if change <= config.param_tol {
            break;
        }
    }
    let p_final = spec.density(&ctx, &grid)?;
    let sol = solve_inner(&p_final, &bands, &solver)?;
    Ok(FrozenFit {
        divergence: kl_divergence(&sol.q, &p_final)?,
        q_hat: sol.q,
        state: spec.state(),
    })
}

/// Recovers the single-quote implied vol as a Black/Scholes "calibration"
/// (used in tests and the CLI for exactly identified slices).
pub fn single_quote_sigma(slice: &MarketSlice) -> Result<f64> {
    if slice.quotes.len() != 1 {
        return Err(Error::InvalidInput("expected exactly one quote".into()));
    }
    let q = slice.quotes[0];
    bs_implied_vol(&slice.context(), q.strike, q.mid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Quote;
    use crate::models::black_scholes::bs_call_price;
    use chrono::NaiveDate;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn test_config() -> CalibrationConfig {
        CalibrationConfig {
            grid_size: 1024,
            ..Default::default()
        }
    }

    fn bs_market(sigma: f64, strikes: &[f64], spread: f64) -> MarketSlice {
        let d = date("2024-01-02");
        let e = date("2024-07-02");
        let tau = (e - d).num_days() as f64 / 365.0;
        let ctx = SliceContext::from_rate(100.0, 0.02, tau).unwrap();
        let quotes = strikes
            .iter()
            .map(|&k| {
                let p = bs_call_price(BsParams { sigma }, &ctx, k).unwrap();
                Quote {
                    strike: k,
                    bid: p - spread / 2.0,
                    ask: p + spread / 2.0,
                    volume: 100,
                }
            })
            .collect();
        MarketSlice::new(d, e, 100.0, 0.02, quotes).unwrap()
    }

    /// Heston market priced on the same grid construction the calibrator
    /// uses (two passes to fix the ATM-vol-sized grid), so quotes are the
    /// model's own grid expectations.
    fn heston_market(
        kappa: f64,
        theta: f64,
        vol_of_vol: f64,
        rho: f64,
        v: f64,
        moneyness: &[f64],
        spread: f64,
        config: &CalibrationConfig,
    ) -> MarketSlice {
        let d = date("2024-01-02");
        let e = date("2025-01-02");
        let spot = 700.0;
        let tau = (e - d).num_days() as f64 / 365.0;
        let ctx = SliceContext::from_rate(spot, 0.02, tau).unwrap();
        let params = HestonParams::new(kappa, theta, vol_of_vol, rho).unwrap();
        let state = HestonState::new(v).unwrap();
        let strikes: Vec<f64> = moneyness.iter().map(|m| m * spot).collect();
        let price_on = |grid: &ReturnGrid| -> Vec<f64> {
            let density = heston_density(&params, &state, &ctx, grid).unwrap();
            strikes
                .iter()
                .map(|&k| {
                    let z: Vec<f64> = grid
                        .points()
                        .iter()
                        .map(|&y| (spot * y.exp() - ctx.discount * k).max(0.0))
                        .collect();
                    density.expectation(&z).unwrap()
                })
                .collect()
        };
        let mk = |prices: &[f64]| -> MarketSlice {
            let quotes = strikes
                .iter()
                .zip(prices)
                .map(|(&k, &p)| Quote {
                    strike: k,
                    bid: p - spread / 2.0,
                    ask: p + spread / 2.0,
                    volume: 100,
                })
                .collect();
            MarketSlice::new(d, e, spot, 0.02, quotes).unwrap()
        };
        let g1 =
            ReturnGrid::from_vol(theta.sqrt().max(v.sqrt()), tau, config.grid_size, config.grid_span)
                .unwrap();
        let provisional = mk(&price_on(&g1));
        let g2 = slice_grid(&provisional, config).unwrap();
        mk(&price_on(&g2))
    }

    fn ladder(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize + 1;
        (0..n).map(|i| lo + step * i as f64).collect()
    }

    #[test]
    fn initial_fit_recovers_bs_sigma() {
        let slice = bs_market(0.25, &[80.0, 90.0, 100.0, 110.0, 120.0], 0.0);
        let spec = initial_fit(&slice, ModelKind::BlackScholes, &test_config(), None).unwrap();
        let sigma = spec.params_vec()[0];
        assert!((sigma - 0.25).abs() < 1e-4, "sigma {sigma}");
    }

    #[test]
    fn initial_fit_single_quote_matches_implied_vol() {
        // default 4096 grid: quadrature bias on the payoff kink must stay
        // below the vol tolerance
        let slice = bs_market(0.32, &[100.0], 0.0);
        let spec =
            initial_fit(&slice, ModelKind::BlackScholes, &CalibrationConfig::default(), None)
                .unwrap();
        let iv = single_quote_sigma(&slice).unwrap();
        assert!((spec.params_vec()[0] - iv).abs() < 1e-6);
    }

    #[test]
    fn initial_fit_needs_enough_quotes() {
        let slice = bs_market(0.2, &[90.0, 100.0], 0.0);
        assert!(matches!(
            initial_fit(&slice, ModelKind::Heston, &test_config(), None),
            Err(Error::InsufficientQuotes { have: 2, need: 5 })
        ));
    }

    #[test]
    fn initial_fit_recovers_heston_params() {
        let truth = [2.0, 0.04, 0.5, -0.6, 0.05];
        let cfg = CalibrationConfig::default();
        let slice = heston_market(
            2.0, 0.04, 0.5, -0.6, 0.05,
            &ladder(0.55, 1.60, 0.05), 0.0, &cfg,
        );
        let spec = initial_fit(&slice, ModelKind::Heston, &cfg, None).unwrap();
        for (got, want) in spec.params_vec().iter().zip(truth) {
            assert!(
                ((got - want) / want).abs() < 0.01,
                "{:?} vs {truth:?}",
                spec.params_vec()
            );
        }
    }

    #[test]
    fn divergence_minimizer_recovers_member_of_family() {
        let ctx = SliceContext::from_rate(100.0, 0.0, 1.0).unwrap();
        let grid = ReturnGrid::from_vol(0.3, 1.0, 1024, 10.0).unwrap();
        let q = bs_density(BsParams { sigma: 0.3 }, &ctx, &grid).unwrap();
        let init = ModelSpec::black_scholes(0.2).unwrap();
        let fitted =
            minimize_divergence_over_params(&q, &init, &ctx, false, &test_config()).unwrap();
        let sigma = fitted.params_vec()[0];
        assert!((sigma - 0.3).abs() < 1e-5, "sigma {sigma}");
        let d = kl_divergence(&q, &fitted.density(&ctx, &grid).unwrap()).unwrap();
        assert!(d < 1e-10, "divergence {d}");
    }

    #[test]
    fn divergence_minimizer_is_stationary_outside_family() {
        // bimodal target measure: mixture of two lognormals
        let ctx = SliceContext::from_rate(100.0, 0.0, 1.0).unwrap();
        let grid = ReturnGrid::from_vol(0.4, 1.0, 1024, 10.0).unwrap();
        let a = bs_density(BsParams { sigma: 0.15 }, &ctx, &grid).unwrap();
        let b = bs_density(BsParams { sigma: 0.45 }, &ctx, &grid).unwrap();
        let w: Vec<f64> = a
            .weights()
            .iter()
            .zip(b.weights())
            .map(|(x, y)| 0.5 * x + 0.5 * y)
            .collect();
        let q = GridMeasure::new(grid.clone(), w).unwrap();
        let init = ModelSpec::black_scholes(0.2).unwrap();
        let cfg = test_config();
        let fitted = minimize_divergence_over_params(&q, &init, &ctx, false, &cfg).unwrap();
        let sigma = fitted.params_vec()[0];
        // first-order stationarity of the divergence in sigma
        let h = 1e-5 * sigma;
        let kl_at = |s: f64| {
            let m = bs_density(BsParams { sigma: s }, &ctx, &grid).unwrap();
            kl_divergence(&q, &m).unwrap()
        };
        let deriv = (kl_at(sigma + h) - kl_at(sigma - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-5, "d KL/d sigma = {deriv} at {sigma}");
    }

    #[test]
    fn alternating_calibration_on_exact_bs_market() {
        let slice = bs_market(0.25, &[80.0, 90.0, 100.0, 110.0, 120.0], 0.0);
        let result = alternating_calibrate(
            &slice,
            ModelKind::BlackScholes,
            &CalibrationConfig::default(),
            None,
        )
        .unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2, "iterations {}", result.iterations);
        assert!(result.divergence < 1e-10, "divergence {}", result.divergence);
        let sigma = result.spec.params_vec()[0];
        assert!((sigma - 0.25).abs() < 1e-6, "sigma {sigma}");
    }

    #[test]
    fn alternating_divergence_is_monotone() {
        let cfg = test_config();
        let slice = heston_market(
            1.5, 0.05, 0.6, -0.5, 0.04,
            &ladder(0.70, 1.30, 0.05), 0.14, &cfg,
        );
        let result =
            alternating_calibrate(&slice, ModelKind::BlackScholes, &cfg, None).unwrap();
        let mut prev_after_params = f64::INFINITY;
        for step in &result.trace {
            assert!(
                step.divergence_after_reference <= prev_after_params + 1e-12,
                "reference step increased divergence"
            );
            assert!(
                step.divergence_after_params <= step.divergence_after_reference + 1e-12,
                "parameter step increased divergence"
            );
            prev_after_params = step.divergence_after_params;
        }
    }

    #[test]
    fn calibrating_wrong_family_beats_its_own_initial_fit() {
        let cfg = test_config();
        let slice = heston_market(
            1.5, 0.05, 0.6, -0.5, 0.04,
            &ladder(0.70, 1.30, 0.05), 0.14, &cfg,
        );
        let result =
            alternating_calibrate(&slice, ModelKind::BlackScholes, &cfg, None).unwrap();
        assert!(result.divergence > 0.0);
        // entropy calibration cannot lose to the pure least-squares fit in
        // the entropy metric
        let first = result.trace.first().unwrap();
        assert!(result.divergence <= first.divergence_after_reference + 1e-12);
    }

    #[test]
    fn frozen_fit_of_todays_optimum_is_todays_reference() {
        let slice = bs_market(0.25, &[85.0, 95.0, 105.0, 115.0], 0.04);
        let cfg = test_config();
        let result =
            alternating_calibrate(&slice, ModelKind::BlackScholes, &cfg, None).unwrap();
        let frozen =
            fit_reference_to_frozen_model(&slice, &result.spec, false, &cfg).unwrap();
        assert!((frozen.divergence - result.divergence).abs() < 1e-9);
        for (a, b) in frozen.q_hat.weights().iter().zip(result.q_star.weights()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_fit_beats_full_divergence_bound() {
        // market priced by BS(0.25), frozen model BS(0.2): the projection can
        // only be closer than the full lognormal-to-lognormal divergence
        let slice = bs_market(0.25, &[80.0, 90.0, 100.0, 110.0, 120.0], 0.0);
        let cfg = test_config();
        let frozen_model = ModelSpec::black_scholes(0.2).unwrap();
        let fit = fit_reference_to_frozen_model(&slice, &frozen_model, false, &cfg).unwrap();
        let bound = crate::models::black_scholes::bs_recalibration_divergence(
            0.2,
            0.25,
            slice.tau(),
        );
        assert!(
            fit.divergence <= bound + 1e-9,
            "projected {} vs family bound {bound}",
            fit.divergence
        );
        assert!(fit.divergence > 0.0);
    }
}
