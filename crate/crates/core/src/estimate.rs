//! Likelihood-based inference for the selection parameter from an observed
//! path.
//!
//! With the mutation rates known, the log likelihood in `s` against the
//! reference `s = 0` collapses to the quadratic `A s - B s^2 / 2`, where
//! `A = dX/2 - M/4` and `B = S/4` are built from the three path statistics
//! `dX = X_T - X_0`, `M = int (-theta2 X + theta1 (1-X)) dt`, and
//! `S = int X(1-X) dt`. Two estimator variants are kept: the score maximizer
//! `A/B` and the plain Riemann form `(dX - M)/S`; they differ by exactly
//! `dX/S`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::InitialLaw;
use crate::quad::{adaptive_quad, Interval, QuadConfig};
use crate::simulate::{riemann_functional, Rule, SamplePath, SimError};
use crate::stats::{neumaier_sum, Curve};
use crate::wright_fisher::{fisher_matrix, FisherMatrix, StationaryDensity, WfError, WfParams};
use crate::Diffusion;

#[derive(Debug, Error)]
pub enum EstError {
    #[error("degenerate-path: the selection integral vanishes")]
    DegeneratePath,
    #[error("local-parameter-out-of-range: s + u/sqrt(T) = {0} leaves the parameter space")]
    LocalParameterOutOfRange(f64),
    #[error("posterior-degenerate: the prior carries no mass where the likelihood lives")]
    PosteriorDegenerate,
    #[error("loss failed validation: {0:?}")]
    LossRejected(LossValidation),
    #[error("prior failed validation: {0:?}")]
    PriorRejected(PriorValidation),
    #[error("information-infinite: a required Fisher entry diverges (mutation rate <= 1)")]
    InformationInfinite,
    #[error("bad input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Wf(#[from] WfError),
}

/// The three path integrals the selection likelihood depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// `X_T - X_0`
    pub delta_x: f64,
    /// `int (-theta2 X + theta1 (1 - X)) dt`
    pub mut_integral: f64,
    /// `int X (1 - X) dt`
    pub sel_integral: f64,
}

impl SufficientStats {
    /// `A`: the intercept of the score in `s`.
    pub fn score_intercept(&self) -> f64 {
        0.5 * self.delta_x - 0.25 * self.mut_integral
    }

    /// `B`: the observed information for `s`.
    pub fn observed_information(&self) -> f64 {
        0.25 * self.sel_integral
    }

    /// Path part of `log dP^{s'}/dP^{s}`, the quadratic
    /// `A (s' - s) - B (s'^2 - s^2) / 2`.
    pub fn log_ratio(&self, s_prime: f64, s: f64) -> f64 {
        self.score_intercept() * (s_prime - s)
            - 0.5 * self.observed_information() * (s_prime * s_prime - s * s)
    }
}

/// Sufficient statistics of `path` under the given mutation rates.
pub fn sufficient_stats(
    path: &SamplePath,
    theta1: f64,
    theta2: f64,
    rule: Rule,
) -> Result<SufficientStats, EstError> {
    let delta_x = path.x_end() - path.x0();
    let mut_integral = riemann_functional(path, |x| -theta2 * x + theta1 * (1.0 - x), rule)?;
    let sel_integral = riemann_functional(path, |x| x * (1.0 - x), rule)?;
    if sel_integral == 0.0 {
        return Err(EstError::DegeneratePath);
    }
    Ok(SufficientStats {
        delta_x,
        mut_integral,
        sel_integral,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MleRiemann,
    MleScore,
    Bayes,
}

/// Estimator output together with the statistics it was computed from.
///
/// Serializes flat: `{method, estimate, T, A, B, delta_x, mut_integral,
/// sel_integral}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatResult", try_from = "FlatResult")]
pub struct EstimationResult {
    pub method: Method,
    pub estimate: f64,
    pub t_end: f64,
    pub stats: SufficientStats,
}

#[derive(Serialize, Deserialize)]
struct FlatResult {
    method: Method,
    estimate: f64,
    #[serde(rename = "T")]
    t_end: f64,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    delta_x: f64,
    mut_integral: f64,
    sel_integral: f64,
}

impl From<EstimationResult> for FlatResult {
    fn from(r: EstimationResult) -> Self {
        FlatResult {
            method: r.method,
            estimate: r.estimate,
            t_end: r.t_end,
            a: r.stats.score_intercept(),
            b: r.stats.observed_information(),
            delta_x: r.stats.delta_x,
            mut_integral: r.stats.mut_integral,
            sel_integral: r.stats.sel_integral,
        }
    }
}

impl TryFrom<FlatResult> for EstimationResult {
    type Error = String;
    fn try_from(f: FlatResult) -> Result<Self, String> {
        Ok(EstimationResult {
            method: f.method,
            estimate: f.estimate,
            t_end: f.t_end,
            stats: SufficientStats {
                delta_x: f.delta_x,
                mut_integral: f.mut_integral,
                sel_integral: f.sel_integral,
            },
        })
    }
}

/// The Riemann-sum estimator `(dX - M) / S` (right-endpoint sums).
pub fn mle_riemann(path: &SamplePath, theta1: f64, theta2: f64) -> Result<EstimationResult, EstError> {
    let stats = sufficient_stats(path, theta1, theta2, Rule::Right)?;
    Ok(EstimationResult {
        method: Method::MleRiemann,
        estimate: (stats.delta_x - stats.mut_integral) / stats.sel_integral,
        t_end: path.t_end,
        stats,
    })
}

/// The score-equation maximizer `A / B` of the quadratic log likelihood.
pub fn mle_score(path: &SamplePath, theta1: f64, theta2: f64) -> Result<EstimationResult, EstError> {
    let stats = sufficient_stats(path, theta1, theta2, Rule::Right)?;
    let b = stats.observed_information();
    if b == 0.0 {
        return Err(EstError::DegeneratePath);
    }
    Ok(EstimationResult {
        method: Method::MleScore,
        estimate: stats.score_intercept() / b,
        t_end: path.t_end,
        stats,
    })
}

/// `log dP^{s'}/dP^{s}` of the observed path. For a `Fixed` start the
/// initial-law ratio is 1; for a `Stationary` start the ratio of stationary
/// densities at `X_0` is included.
pub fn log_likelihood_ratio(
    path: &SamplePath,
    s_prime: f64,
    s: f64,
    theta1: f64,
    theta2: f64,
    start: InitialLaw,
) -> Result<f64, EstError> {
    let stats = sufficient_stats(path, theta1, theta2, Rule::Right)?;
    let mut ll = stats.log_ratio(s_prime, s);
    if let InitialLaw::Stationary = start {
        ll += log_stationary_ratio(path.x0(), s_prime, s, theta1, theta2)?;
    }
    Ok(ll)
}

fn log_stationary_ratio(
    x0: f64,
    s_prime: f64,
    s: f64,
    theta1: f64,
    theta2: f64,
) -> Result<f64, EstError> {
    let g_prime = StationaryDensity::new(&WfParams::new(s_prime, theta1, theta2)?)?.normalizer();
    let g = StationaryDensity::new(&WfParams::new(s, theta1, theta2)?)?.normalizer();
    Ok((s_prime - s) * x0 - (g_prime.ln() - g.ln()))
}

/// Likelihood ratio `Z_{T,s}(u)` at local parameter `u`, requiring
/// `s + u/sqrt(T)` to stay inside the parameter space `s_space`.
pub fn likelihood_ratio_z(
    path: &SamplePath,
    s: f64,
    u: f64,
    theta1: f64,
    theta2: f64,
    start: InitialLaw,
    s_space: Interval,
) -> Result<f64, EstError> {
    let s_new = s + u / path.t_end.sqrt();
    if !s_space.contains_closed(s_new) {
        return Err(EstError::LocalParameterOutOfRange(s_new));
    }
    Ok(log_likelihood_ratio(path, s_new, s, theta1, theta2, start)?.exp())
}

// ---------------------------------------------------------------------------
// Priors and losses
// ---------------------------------------------------------------------------

/// Polynomial majorant `u -> scale (1 + |u|^power)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Majorant {
    pub scale: f64,
    pub power: f64,
}

impl Majorant {
    pub fn eval(&self, u: f64) -> f64 {
        self.scale * (1.0 + u.abs().powf(self.power))
    }
}

/// A prior density on a bounded open parameter interval.
pub struct Prior {
    pub support: Interval,
    pub majorant: Majorant,
    density: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Prior {
    pub fn new(
        support: Interval,
        majorant: Majorant,
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            support,
            majorant,
            density: Box::new(density),
        }
    }

    /// Uniform density on the closure of the support.
    pub fn flat(support: Interval) -> Self {
        let inv = 1.0 / support.width();
        Self::new(support, Majorant { scale: inv, power: 1.0 }, move |_| inv)
    }

    pub fn density(&self, s: f64) -> f64 {
        (self.density)(s)
    }
}

/// A loss function with its polynomial majorant constants.
pub struct Loss {
    pub majorant: Majorant,
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Loss {
    pub fn new(majorant: Majorant, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            majorant,
            f: Box::new(f),
        }
    }

    pub fn quadratic() -> Self {
        Self::new(Majorant { scale: 1.0, power: 2.0 }, |u| u * u)
    }

    pub fn absolute() -> Self {
        Self::new(Majorant { scale: 1.0, power: 1.0 }, f64::abs)
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }
}

/// Per-condition outcome of the loss-class checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossValidation {
    /// even, nonnegative, zero and continuous at 0, not identically zero
    pub a1: bool,
    /// nondecreasing on the positive half-grid
    pub a2: bool,
    /// dominated by the declared polynomial majorant
    pub a3: bool,
    /// far values dominate near values at the supplied threshold
    pub a4: bool,
}

impl LossValidation {
    pub fn pass(&self) -> bool {
        self.a1 && self.a2 && self.a3 && self.a4
    }
}

/// Check the loss conditions on a finite symmetric grid.
pub fn validate_loss(loss: &Loss, h_threshold: f64, gamma: f64, grid: &[f64]) -> LossValidation {
    const TOL: f64 = 1e-12;
    let mut even = true;
    let mut nonneg = true;
    let mut max_val = 0.0f64;
    let mut scale = 0.0f64;
    for &u in grid {
        let v = loss.eval(u);
        even &= (v - loss.eval(-u)).abs() <= TOL * (1.0 + v.abs());
        nonneg &= v >= 0.0;
        max_val = max_val.max(v);
        scale = scale.max(u.abs());
    }
    let zero_at_origin = loss.eval(0.0).abs() <= TOL;
    let continuous_at_zero = loss.eval(1e-9 * scale.max(1.0)).abs() <= 1e-6 * (1.0 + max_val);
    let a1 = even && nonneg && zero_at_origin && continuous_at_zero && max_val > 0.0;

    let mut pos: Vec<f64> = grid.iter().copied().filter(|&u| u >= 0.0).collect();
    pos.sort_by(f64::total_cmp);
    let mut a2 = true;
    for w in pos.windows(2) {
        a2 &= loss.eval(w[1]) >= loss.eval(w[0]) - TOL * (1.0 + loss.eval(w[0]).abs());
    }

    let a3 = grid
        .iter()
        .all(|&u| loss.eval(u) <= loss.majorant.eval(u) * (1.0 + TOL) + TOL);

    let far: Vec<f64> = grid.iter().copied().filter(|u| u.abs() > h_threshold).collect();
    let near_bound = h_threshold.powf(gamma);
    let near: Vec<f64> = grid.iter().copied().filter(|u| u.abs() <= near_bound).collect();
    let a4 = if far.is_empty() || near.is_empty() {
        true // vacuous on this grid
    } else {
        let inf_far = far.iter().map(|&u| loss.eval(u)).fold(f64::INFINITY, f64::min);
        let sup_near = near.iter().map(|&u| loss.eval(u)).fold(f64::NEG_INFINITY, f64::max);
        inf_far - sup_near >= -TOL
    };

    LossValidation { a1, a2, a3, a4 }
}

/// Per-condition outcome of the prior-class checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorValidation {
    pub nonnegative: bool,
    pub continuous: bool,
    pub majorant_ok: bool,
    pub unit_mass: bool,
}

impl PriorValidation {
    pub fn pass(&self) -> bool {
        self.nonnegative && self.continuous && self.majorant_ok && self.unit_mass
    }
}

/// Check prior-class membership on a grid over the closure of the support;
/// total mass is evaluated by adaptive quadrature, continuity by an
/// adjacent-difference modulus at the grid's resolution.
pub fn validate_prior(prior: &Prior, grid: &[f64]) -> PriorValidation {
    let mut nonnegative = true;
    let mut majorant_ok = true;
    let mut max_p = 0.0f64;
    let mut max_jump = 0.0f64;
    let mut prev: Option<f64> = None;
    for &s in grid {
        let p = prior.density(s);
        nonnegative &= p >= 0.0;
        majorant_ok &= p <= prior.majorant.eval(s) * (1.0 + 1e-12) + 1e-12;
        max_p = max_p.max(p);
        if let Some(q) = prev {
            max_jump = max_jump.max((p - q).abs());
        }
        prev = Some(p);
    }
    let continuous = max_jump <= 0.05 * (1.0 + max_p);
    let mass = adaptive_quad(
        |s| prior.density(s),
        prior.support.l,
        prior.support.r,
        &QuadConfig::default(),
    )
    .map(|r| r.value)
    .unwrap_or(f64::NAN);
    let unit_mass = (mass - 1.0).abs() <= 1e-8;
    PriorValidation {
        nonnegative,
        continuous,
        majorant_ok,
        unit_mass,
    }
}

// ---------------------------------------------------------------------------
// Posterior and Bayes estimator
// ---------------------------------------------------------------------------

/// Normalized posterior density `pi(s) proportional to p(s) exp(A s - B s^2/2)`
/// on a uniform grid over the closure of the prior support, normalized by the
/// trapezoid rule on that grid.
pub fn posterior_density(
    stats: &SufficientStats,
    prior: &Prior,
    grid_size: usize,
) -> Result<Curve, EstError> {
    let n = grid_size.max(8);
    let (lo, hi) = (prior.support.l, prior.support.r);
    let a = stats.score_intercept();
    let b = stats.observed_information();
    let mut x = Vec::with_capacity(n);
    let mut logw = Vec::with_capacity(n);
    let mut max_lw = f64::NEG_INFINITY;
    for i in 0..n {
        let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let p = prior.density(s);
        let lw = if p > 0.0 {
            p.ln() + a * s - 0.5 * b * s * s
        } else {
            f64::NEG_INFINITY
        };
        max_lw = max_lw.max(lw);
        x.push(s);
        logw.push(lw);
    }
    if !max_lw.is_finite() {
        return Err(EstError::PosteriorDegenerate);
    }
    let mut y: Vec<f64> = logw.iter().map(|&lw| (lw - max_lw).exp()).collect();
    let mass = {
        let mut acc = 0.0;
        for i in 1..n {
            acc += 0.5 * (y[i - 1] + y[i]) * (x[i] - x[i - 1]);
        }
        acc
    };
    if !(mass.is_finite() && mass > 0.0) {
        return Err(EstError::PosteriorDegenerate);
    }
    for v in &mut y {
        *v /= mass;
    }
    Ok(Curve { x, y })
}

const BAYES_GRID: usize = 512;

/// Bayes estimator: minimizer over the closure of the support of the
/// posterior expected loss `v -> int loss(sqrt(T)(v - s)) pi(s) ds`,
/// located by a coarse grid scan refined with golden-section search.
pub fn bayes_estimator(
    stats: &SufficientStats,
    prior: &Prior,
    loss: &Loss,
    t_end: f64,
) -> Result<EstimationResult, EstError> {
    let width = prior.support.width();
    let sqrt_t = t_end.sqrt();

    // validate classes on default grids before using them
    let arg_range = sqrt_t * width;
    let loss_grid: Vec<f64> = (-400..=400).map(|i| arg_range * i as f64 / 400.0).collect();
    let lv = validate_loss(loss, (0.25 * arg_range).max(2.0), 0.5, &loss_grid);
    if !lv.pass() {
        return Err(EstError::LossRejected(lv));
    }
    let prior_grid: Vec<f64> = (0..=1000)
        .map(|i| prior.support.l + width * i as f64 / 1000.0)
        .collect();
    let pv = validate_prior(prior, &prior_grid);
    if !pv.pass() {
        return Err(EstError::PriorRejected(pv));
    }

    let posterior = posterior_density(stats, prior, BAYES_GRID)?;
    let n = posterior.x.len();
    let step = posterior.x[1] - posterior.x[0];
    // trapezoid weights against the normalized posterior
    let weight = |i: usize| -> f64 {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        w * step * posterior.y[i]
    };
    let objective = |v: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            acc += loss.eval(sqrt_t * (v - posterior.x[i])) * weight(i);
        }
        acc
    };

    // coarse scan
    let mut best_i = 0;
    let mut best = f64::INFINITY;
    for (i, &v) in posterior.x.iter().enumerate() {
        let r = objective(v);
        if r < best {
            best = r;
            best_i = i;
        }
    }
    let mut lo = posterior.x[best_i.saturating_sub(1)];
    let mut hi = posterior.x[(best_i + 1).min(n - 1)];

    // golden-section refinement
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let tol = 1e-8 * width;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = objective(d);
        }
    }
    Ok(EstimationResult {
        method: Method::Bayes,
        estimate: 0.5 * (lo + hi),
        t_end,
        stats: *stats,
    })
}

// ---------------------------------------------------------------------------
// LAN statistics
// ---------------------------------------------------------------------------

/// The normalized score vector `(1/sqrt(T)) sum grad mu / sigma^2 (dX - mu dt)`
/// in parameter order `(s, theta1, theta2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LanStatistic {
    pub components: [f64; 3],
    /// Mutation components require both rates at least 1; otherwise they are
    /// reported as NaN with this flag cleared.
    pub mutation_valid: bool,
}

/// Discretized score statistic. The `1/x` and `1/(1-x)` factors of the
/// mutation components are evaluated at states clamped `dt` away from the
/// boundaries.
pub fn lan_statistic(path: &SamplePath, params: &WfParams) -> LanStatistic {
    let dt = path.dt;
    let mutation_valid = params.lan_regime();
    let n = path.n_steps();
    let mut inc = Vec::with_capacity(n);
    for i in 0..n {
        let x = path.values[i];
        let dx = path.values[i + 1] - x - params.drift(x) * dt;
        inc.push((x, dx));
    }
    let c1 = neumaier_sum(inc.iter().map(|&(_, dx)| 0.5 * dx));
    let (c2, c3) = if mutation_valid {
        let lo = dt;
        let hi = 1.0 - dt;
        (
            neumaier_sum(inc.iter().map(|&(x, dx)| 0.5 / x.clamp(lo, hi) * dx)),
            neumaier_sum(inc.iter().map(|&(x, dx)| -0.5 / (1.0 - x.clamp(lo, hi)) * dx)),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    let scale = 1.0 / path.t_end.sqrt();
    LanStatistic {
        components: [c1 * scale, c2 * scale, c3 * scale],
        mutation_valid,
    }
}

/// LAN remainder
/// `r_T = log nu-ratio + <I u, u>/2 - (1/2T) int <u, grad mu>^2 / sigma^2 dt`,
/// with the Fisher matrix recomputed at `params`.
pub fn lan_remainder(
    path: &SamplePath,
    params: &WfParams,
    u: [f64; 3],
    start: InitialLaw,
) -> Result<f64, EstError> {
    let fisher = fisher_matrix(params)?;
    lan_remainder_with(path, params, u, start, &fisher)
}

/// As [`lan_remainder`], reusing a precomputed Fisher matrix.
pub fn lan_remainder_with(
    path: &SamplePath,
    params: &WfParams,
    u: [f64; 3],
    start: InitialLaw,
    fisher: &FisherMatrix,
) -> Result<f64, EstError> {
    let t_end = path.t_end;
    let sqrt_t = t_end.sqrt();

    let mut quad_form = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if u[i] != 0.0 && u[j] != 0.0 {
                let e = fisher.entries[i][j];
                if !e.is_finite() {
                    return Err(EstError::InformationInfinite);
                }
                quad_form += e * u[i] * u[j];
            }
        }
    }

    let nu_term = match start {
        InitialLaw::Fixed(_) => 0.0,
        InitialLaw::Stationary => {
            let shifted = WfParams::new(
                params.s + u[0] / sqrt_t,
                params.theta1 + u[1] / sqrt_t,
                params.theta2 + u[2] / sqrt_t,
            )?;
            let f_new = StationaryDensity::new(&shifted)?;
            let f_old = StationaryDensity::new(params)?;
            f_new.log_density(path.x0()) - f_old.log_density(path.x0())
        }
    };

    let dt = path.dt;
    let integrand = |x: f64| {
        let xc = x.clamp(dt, 1.0 - dt);
        let root = (xc * (1.0 - xc)).sqrt();
        let v = u[0] * 0.5 * root + u[1] * 0.5 * ((1.0 - xc) / xc).sqrt()
            - u[2] * 0.5 * (xc / (1.0 - xc)).sqrt();
        v * v
    };
    let time_integral = riemann_functional(path, integrand, Rule::Left)?;

    Ok(nu_term + 0.5 * quad_form - time_integral / (2.0 * t_end))
}
