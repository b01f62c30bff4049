//! Analytics for a scalar diffusion on a bounded interval.
//!
//! Everything here is driven by the scale/speed decomposition. Writing
//! `A(x)` for an antiderivative of `2 mu / sigma^2`, the speed density is
//! `m(x) = 2 exp(A(x)) / sigma^2(x)` and the scale derivative is
//! `exp(-A(x))`. The invariant density is `m / G` with `G = int m`; the
//! kappa integrals, hitting-time moment recursions, and the unbounded-h
//! ergodicity conditions are nested integrals of these two densities with an
//! optional weight `h`.
//!
//! The additive constant in `A` is arbitrary; it cancels in every normalized
//! or nested quantity computed here (covered by a regression test against
//! the quadrature fallback).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{
    adaptive_quad, boundary_integral, integral_with_endpoints, ErrCell, Interval, QuadConfig,
    QuadError, QuadratureResult,
};

/// A time-homogeneous scalar diffusion on a bounded interval, presented
/// through its drift and squared diffusion coefficient.
pub trait Diffusion {
    fn interval(&self) -> Interval;
    fn drift(&self, x: f64) -> f64;
    fn diffusion_sq(&self, x: f64) -> f64;

    /// `2 mu(x) / sigma^2(x)`, the derivative of the log scale exponent.
    fn log_scale_integrand(&self, x: f64) -> f64 {
        2.0 * self.drift(x) / self.diffusion_sq(x)
    }

    /// Closed-form antiderivative of [`Diffusion::log_scale_integrand`],
    /// when one is available. Implementations may pick any additive
    /// constant.
    fn log_scale_antiderivative(&self, _x: f64) -> Option<f64> {
        None
    }

    /// Coordinates of the parameter point, used in grid reports.
    fn parameters(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Initial law of the process: a point mass or the stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    Fixed(f64),
    Stationary,
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("not-positive-recurrent: the invariant-measure normalizer diverges")]
    NotPositiveRecurrent,
    #[error("boundary-not-accessible-integrable: inner scale/speed integral diverges")]
    BoundaryNotIntegrable,
    #[error("moment-infinite: the hitting-time functional diverges")]
    MomentInfinite,
    #[error("degenerate-cycle: regeneration levels must satisfy a < b")]
    DegenerateCycle,
    #[error("empty-parameter-grid")]
    EmptyParameterGrid,
    #[error("input out of range: {0}")]
    BadInput(String),
}

/// `A(x)`: the antiderivative of `2 mu / sigma^2`, from the closed form when
/// the diffusion supplies one, otherwise by quadrature from the interval
/// midpoint.
pub fn log_scale<D: Diffusion + ?Sized>(
    d: &D,
    x: f64,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    if let Some(v) = d.log_scale_antiderivative(x) {
        return Ok(v);
    }
    let x_ref = d.interval().midpoint();
    if x == x_ref {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if x > x_ref {
        (x_ref, x, 1.0)
    } else {
        (x, x_ref, -1.0)
    };
    let r = adaptive_quad(|y| d.log_scale_integrand(y), lo, hi, cfg)?;
    Ok(sign * r.value)
}

/// Speed density `m(x) = 2 exp(A(x)) / sigma^2(x)` (unnormalized).
fn speed_density<D: Diffusion + ?Sized>(d: &D, x: f64, cfg: &QuadConfig) -> Result<f64, CoreError> {
    let a = log_scale(d, x, cfg)?;
    Ok(2.0 * a.exp() / d.diffusion_sq(x))
}

/// The invariant density of a positive-recurrent diffusion, with its
/// normalizer computed once and cached.
pub struct InvariantDensity<'a, D: Diffusion + ?Sized> {
    diffusion: &'a D,
    normalizer: f64,
    cfg: QuadConfig,
}

impl<'a, D: Diffusion + ?Sized> InvariantDensity<'a, D> {
    pub fn new(diffusion: &'a D, cfg: &QuadConfig) -> Result<Self, CoreError> {
        let iv = diffusion.interval();
        let errs = ErrCell::new();
        let integrand = |x: f64| match speed_density(diffusion, x, cfg) {
            Ok(v) => v,
            Err(e) => {
                errs.store(e);
                f64::NAN
            }
        };
        let g = integral_with_endpoints(&integrand, iv.l, iv.r, true, true, cfg);
        if let Some(e) = errs.take() {
            return Err(e);
        }
        let g = match g {
            Ok(r) => r.value,
            Err(QuadError::Divergent { .. }) => return Err(CoreError::NotPositiveRecurrent),
            Err(e) => return Err(e.into()),
        };
        if !(g.is_finite() && g > 0.0) {
            return Err(CoreError::NotPositiveRecurrent);
        }
        Ok(Self {
            diffusion,
            normalizer: g,
            cfg: *cfg,
        })
    }

    /// The normalizer `G = int_l^r m(x) dx`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn density(&self, x: f64) -> Result<f64, CoreError> {
        if !self.diffusion.interval().contains(x) {
            return Err(CoreError::BadInput(format!(
                "x = {x} outside the open state interval"
            )));
        }
        Ok(speed_density(self.diffusion, x, &self.cfg)? / self.normalizer)
    }
}

/// One-shot evaluation of the invariant density `f(x) = m(x)/G`.
pub fn invariant_density<D: Diffusion + ?Sized>(
    d: &D,
    x: f64,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    InvariantDensity::new(d, cfg)?.density(x)
}

enum Branch {
    /// target above the start: inner integrals run to the left endpoint
    Left,
    /// target below the start: inner integrals run to the right endpoint
    Right,
}

/// Signed inner integral of `w` from the interval edge to `xi`, oriented so
/// the result is `int_l^xi w` (Left) or `int_xi^r w` (Right).
fn inner_from_edge<F: Fn(f64) -> f64>(
    w: &F,
    branch: &Branch,
    iv: Interval,
    xi: f64,
    cfg: &QuadConfig,
) -> Result<f64, QuadError> {
    match branch {
        Branch::Left => boundary_integral(w, iv.l, xi, cfg).map(|r| r.value),
        Branch::Right => boundary_integral(w, iv.r, xi, cfg).map(|r| -r.value),
    }
}

/// kappa^l(a, b): the double integral of the scale derivative against the
/// cumulative speed measure from the left endpoint. `a` may equal the left
/// endpoint itself (the integrand stays integrable whenever the boundary is
/// entrance or regular).
pub fn kappa_l<D: Diffusion + ?Sized>(
    d: &D,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    kappa_impl(d, a, b, Branch::Left, cfg)
}

/// kappa^r(a, b): mirror image of [`kappa_l`] with the cumulative speed
/// measure taken from the right endpoint. `b` may equal the right endpoint.
pub fn kappa_r<D: Diffusion + ?Sized>(
    d: &D,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    kappa_impl(d, a, b, Branch::Right, cfg)
}

fn kappa_impl<D: Diffusion + ?Sized>(
    d: &D,
    a: f64,
    b: f64,
    branch: Branch,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    let iv = d.interval();
    if !(iv.contains_closed(a) && iv.contains_closed(b) && a < b) {
        return Err(CoreError::BadInput(format!(
            "kappa limits must satisfy l <= a < b <= r, got a = {a}, b = {b}"
        )));
    }
    let inner_cfg = cfg.relaxed(10.0);
    let errs = ErrCell::new();
    let m = |eta: f64| match speed_density(d, eta, &inner_cfg) {
        Ok(v) => v,
        Err(e) => {
            errs.store(e);
            f64::NAN
        }
    };
    let outer = |xi: f64| {
        let inner = match inner_from_edge(&m, &branch, iv, xi, &inner_cfg) {
            Ok(v) => v,
            Err(QuadError::Divergent { .. }) => {
                errs.store(CoreError::BoundaryNotIntegrable);
                return f64::NAN;
            }
            Err(e) => {
                errs.store(e.into());
                return f64::NAN;
            }
        };
        let a_xi = match log_scale(d, xi, &inner_cfg) {
            Ok(v) => v,
            Err(e) => {
                errs.store(e);
                return f64::NAN;
            }
        };
        if inner > 0.0 {
            (inner.ln() - a_xi).exp()
        } else {
            0.0
        }
    };
    let res = integral_with_endpoints(&outer, a, b, a == iv.l, b == iv.r, cfg);
    if let Some(e) = errs.take() {
        return Err(e);
    }
    Ok(res?.value)
}

// ---------------------------------------------------------------------------
// Hitting-time moments
// ---------------------------------------------------------------------------

/// `E_x[(int_0^{T_b} h(Y_t) dt)^q]` via the backward-equation recursion.
///
/// `q = 0` returns 1, `q = 1` is evaluated by nested adaptive quadrature
/// (accurate to the configured tolerances), and `q >= 2` runs the recursion
/// on a graded grid with cumulative sweeps, giving roughly six significant
/// digits. `h` must be nonnegative and bounded on compacts of the open
/// interval.
pub fn hitting_moment<D: Diffusion + ?Sized>(
    d: &D,
    x: f64,
    b: f64,
    q: u32,
    h: &dyn Fn(f64) -> f64,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    if q == 0 {
        return Ok(1.0);
    }
    let iv = d.interval();
    if !(iv.contains(x) || x == iv.l || x == iv.r) || !iv.contains(b) {
        return Err(CoreError::BadInput(format!(
            "hitting moment requires x in [l, r] and b in (l, r); got x = {x}, b = {b}"
        )));
    }
    if x == b {
        return Ok(0.0);
    }
    let branch = if x < b { Branch::Left } else { Branch::Right };
    if q == 1 {
        weighted_passage_integral(d, x, b, &branch, h, None, cfg)
    } else {
        let table = moment_sweep(d, b, q, h, &branch, cfg)?;
        Ok(table.interp(x))
    }
}

/// First-moment integral `int e^{-A(xi)} [int w(eta) u(eta) d eta] d xi`
/// between `x` and `b`, with `w = 2 h e^{A} / sigma^2` and an optional inner
/// factor `u` (used by the level-2 unbounded-condition check).
fn weighted_passage_integral<D: Diffusion + ?Sized>(
    d: &D,
    x: f64,
    b: f64,
    branch: &Branch,
    h: &dyn Fn(f64) -> f64,
    inner_factor: Option<&dyn Fn(f64) -> f64>,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    let iv = d.interval();
    let inner_cfg = cfg.relaxed(10.0);
    let errs = ErrCell::new();
    let w = |eta: f64| {
        let a_eta = match log_scale(d, eta, &inner_cfg) {
            Ok(v) => v,
            Err(e) => {
                errs.store(e);
                return f64::NAN;
            }
        };
        let factor = inner_factor.map_or(1.0, |u| u(eta));
        2.0 * h(eta) * factor * a_eta.exp() / d.diffusion_sq(eta)
    };
    let outer = |xi: f64| {
        let inner = match inner_from_edge(&w, branch, iv, xi, &inner_cfg) {
            Ok(v) => v,
            Err(QuadError::Divergent { .. }) => {
                errs.store(CoreError::MomentInfinite);
                return f64::NAN;
            }
            Err(e) => {
                errs.store(e.into());
                return f64::NAN;
            }
        };
        let a_xi = match log_scale(d, xi, &inner_cfg) {
            Ok(v) => v,
            Err(e) => {
                errs.store(e);
                return f64::NAN;
            }
        };
        if inner > 0.0 {
            (inner.ln() - a_xi).exp()
        } else {
            0.0
        }
    };
    let (lo, hi) = if x < b { (x, b) } else { (b, x) };
    let res = integral_with_endpoints(&outer, lo, hi, lo == iv.l, hi == iv.r, cfg);
    if let Some(e) = errs.take() {
        return Err(e);
    }
    Ok(res?.value)
}

/// Piecewise-linear table of a moment function on a graded grid.
struct SweepTable {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl SweepTable {
    fn interp(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return self.values[0];
        }
        if x >= self.nodes[n - 1] {
            return self.values[n - 1];
        }
        let idx = self.nodes.partition_point(|&v| v < x);
        let (x0, x1) = (self.nodes[idx - 1], self.nodes[idx]);
        let (y0, y1) = (self.values[idx - 1], self.values[idx]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Graded grid between a (possibly singular) `edge` and `far`, dyadically
/// clustered toward the edge, sorted ascending.
fn graded_grid(edge: f64, far: f64) -> Vec<f64> {
    const LEVELS: i32 = 45;
    let w = far - edge;
    let mut nodes = Vec::with_capacity(2400);
    for k in (0..LEVELS).rev() {
        let lo = 0.5f64.powi(k + 1);
        let hi = 0.5f64.powi(k);
        let sub = if k >= 7 { 8 } else { 1usize << (10 - k) };
        for j in 0..sub {
            let t = lo + (hi - lo) * j as f64 / sub as f64;
            nodes.push(edge + w * t);
        }
    }
    nodes.push(far);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    // innermost offsets can round onto the edge itself on wide intervals
    nodes.retain(|&x| x != edge);
    nodes
}

/// Run the moment recursion up to level `q` by cumulative trapezoid sweeps
/// on a graded grid, returning the level-`q` table.
fn moment_sweep<D: Diffusion + ?Sized>(
    d: &D,
    b: f64,
    q: u32,
    h: &dyn Fn(f64) -> f64,
    branch: &Branch,
    cfg: &QuadConfig,
) -> Result<SweepTable, CoreError> {
    let iv = d.interval();
    let (edge, probe) = match branch {
        Branch::Left => (iv.l, 0.5 * (iv.l + b)),
        Branch::Right => (iv.r, 0.5 * (b + iv.r)),
    };
    let inner_cfg = cfg.relaxed(10.0);

    // The integrability of w near the singular edge decides whether every
    // level is finite; check it once up front.
    {
        let errs = ErrCell::new();
        let w_probe = |eta: f64| {
            let a_eta = match log_scale(d, eta, &inner_cfg) {
                Ok(v) => v,
                Err(e) => {
                    errs.store(e);
                    return f64::NAN;
                }
            };
            2.0 * h(eta) * a_eta.exp() / d.diffusion_sq(eta)
        };
        let check = boundary_integral(&w_probe, edge, probe, &inner_cfg);
        if let Some(e) = errs.take() {
            return Err(e);
        }
        match check {
            Err(QuadError::Divergent { .. }) => return Err(CoreError::MomentInfinite),
            Err(e) => return Err(e.into()),
            Ok(_) => {}
        }
    }

    let nodes = graded_grid(edge, b);
    let n = nodes.len();
    let mut w_vals = Vec::with_capacity(n);
    let mut a_vals = Vec::with_capacity(n);
    for &eta in &nodes {
        let a_eta = log_scale(d, eta, &inner_cfg)?;
        a_vals.push(a_eta);
        w_vals.push(2.0 * h(eta) * a_eta.exp() / d.diffusion_sq(eta));
    }

    // distance from the edge to the innermost node, for the head correction
    let head_gap = (nodes[0] - edge).abs().min((nodes[n - 1] - edge).abs());

    let mut u_prev = vec![1.0f64; n]; // level 0
    let mut u_cur = vec![0.0f64; n];
    for level in 1..=q {
        // cumulative integral of w * u_prev from the edge, at each node
        let mut wcum = vec![0.0f64; n];
        match branch {
            Branch::Left => {
                let mut acc = w_vals[0] * u_prev[0] * head_gap;
                wcum[0] = acc;
                for i in 1..n {
                    acc += 0.5
                        * (w_vals[i - 1] * u_prev[i - 1] + w_vals[i] * u_prev[i])
                        * (nodes[i] - nodes[i - 1]);
                    wcum[i] = acc;
                }
            }
            Branch::Right => {
                let mut acc = w_vals[n - 1] * u_prev[n - 1] * head_gap;
                wcum[n - 1] = acc;
                for i in (0..n - 1).rev() {
                    acc += 0.5
                        * (w_vals[i] * u_prev[i] + w_vals[i + 1] * u_prev[i + 1])
                        * (nodes[i + 1] - nodes[i]);
                    wcum[i] = acc;
                }
            }
        }
        // g = e^{-A} * wcum, assembled in log space to dodge overflow of
        // either factor near the edge
        let g = |i: usize| -> f64 {
            if wcum[i] > 0.0 {
                (wcum[i].ln() - a_vals[i]).exp()
            } else {
                0.0
            }
        };
        // reverse cumulative from b (where the moment vanishes) toward the edge
        match branch {
            Branch::Left => {
                u_cur[n - 1] = 0.0;
                for i in (0..n - 1).rev() {
                    u_cur[i] = u_cur[i + 1]
                        + 0.5 * (g(i) + g(i + 1)) * (nodes[i + 1] - nodes[i]) * level as f64;
                }
            }
            Branch::Right => {
                u_cur[0] = 0.0;
                for i in 1..n {
                    u_cur[i] = u_cur[i - 1]
                        + 0.5 * (g(i - 1) + g(i)) * (nodes[i] - nodes[i - 1]) * level as f64;
                }
            }
        }
        if u_cur.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::MomentInfinite);
        }
        std::mem::swap(&mut u_prev, &mut u_cur);
    }

    Ok(SweepTable {
        nodes,
        values: u_prev,
    })
}

/// Long-run regeneration rate `1 / (E_a[T_b] + E_b[T_a])` of the
/// b-then-back-to-a excursion cycle.
pub fn regeneration_rate<D: Diffusion + ?Sized>(
    d: &D,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    if a >= b {
        return Err(CoreError::DegenerateCycle);
    }
    let one = |_: f64| 1.0;
    let up = hitting_moment(d, a, b, 1, &one, cfg)?;
    let down = hitting_moment(d, b, a, 1, &one, cfg)?;
    Ok(1.0 / (up + down))
}

// ---------------------------------------------------------------------------
// Ergodicity-condition reports
// ---------------------------------------------------------------------------

/// Supremum of one unbounded-h condition over a parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConditionSupremum {
    Finite { sup: f64 },
    Divergent { grid_index: usize },
}

impl ConditionSupremum {
    pub fn is_finite(&self) -> bool {
        matches!(self, ConditionSupremum::Finite { .. })
    }
}

/// Outcome of the uniform-ergodicity hypothesis checks over a parameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicityReport {
    /// Parameter coordinates of every grid point checked.
    pub grid: Vec<Vec<f64>>,
    pub kappa_l_min: f64,
    pub kappa_r_min: f64,
    /// Suprema of the three unbounded-h conditions, when evaluated.
    pub unbounded_suprema: Option<[ConditionSupremum; 3]>,
    pub pass: bool,
}

/// Evaluate both kappa integrals at every grid point; the grid passes when
/// both minima are strictly positive.
pub fn check_uniform_ergodicity<D: Diffusion>(
    grid: &[D],
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<ErgodicityReport, CoreError> {
    if grid.is_empty() {
        return Err(CoreError::EmptyParameterGrid);
    }
    let mut kappa_l_min = f64::INFINITY;
    let mut kappa_r_min = f64::INFINITY;
    let mut coords = Vec::with_capacity(grid.len());
    for d in grid {
        coords.push(d.parameters());
        kappa_l_min = kappa_l_min.min(kappa_l(d, a, b, cfg)?);
        kappa_r_min = kappa_r_min.min(kappa_r(d, a, b, cfg)?);
    }
    let pass = kappa_l_min > 0.0 && kappa_r_min > 0.0;
    Ok(ErgodicityReport {
        grid: coords,
        kappa_l_min,
        kappa_r_min,
        unbounded_suprema: None,
        pass,
    })
}

/// Evaluate the three unbounded-h conditions over a parameter grid:
/// the h-weighted passage integral from `x` to `b`, its second-level
/// counterpart with the inner expected-passage factor, and the same
/// functional integrated against the initial law `nu`.
///
/// Both boundaries must be entrance at every grid point (the caller asserts
/// this; it is what makes unbounded `h` integrable along paths). Divergence
/// of any condition is reported in the result, not raised as an error.
pub fn check_unbounded_conditions<D: Diffusion>(
    grid: &[D],
    h: &dyn Fn(f64) -> f64,
    b: f64,
    x: f64,
    nu: &InitialLaw,
    cfg: &QuadConfig,
) -> Result<ErgodicityReport, CoreError> {
    if grid.is_empty() {
        return Err(CoreError::EmptyParameterGrid);
    }
    if x >= b {
        return Err(CoreError::BadInput(format!(
            "unbounded-condition check requires x < b, got x = {x}, b = {b}"
        )));
    }

    let mut kappa_l_min = f64::INFINITY;
    let mut kappa_r_min = f64::INFINITY;
    let mut sup = [f64::NEG_INFINITY; 3];
    let mut failed: [Option<usize>; 3] = [None; 3];
    let mut coords = Vec::with_capacity(grid.len());

    for (idx, d) in grid.iter().enumerate() {
        coords.push(d.parameters());
        kappa_l_min = kappa_l_min.min(kappa_l(d, x, b, cfg)?);
        kappa_r_min = kappa_r_min.min(kappa_r(d, x, b, cfg)?);

        let one = hitting_moment(d, x, b, 1, h, cfg);
        record_condition(0, idx, one, &mut sup, &mut failed)?;

        let two = hitting_moment(d, x, b, 2, h, cfg).map(|v| 0.5 * v);
        record_condition(1, idx, two, &mut sup, &mut failed)?;

        let three = expected_passage_under_law(d, b, h, nu, cfg);
        record_condition(2, idx, three, &mut sup, &mut failed)?;
    }

    let suprema = [0, 1, 2].map(|i| match failed[i] {
        Some(grid_index) => ConditionSupremum::Divergent { grid_index },
        None => ConditionSupremum::Finite { sup: sup[i] },
    });
    let pass = kappa_l_min > 0.0
        && kappa_r_min > 0.0
        && suprema.iter().all(ConditionSupremum::is_finite);
    Ok(ErgodicityReport {
        grid: coords,
        kappa_l_min,
        kappa_r_min,
        unbounded_suprema: Some(suprema),
        pass,
    })
}

fn record_condition(
    slot: usize,
    idx: usize,
    value: Result<f64, CoreError>,
    sup: &mut [f64; 3],
    failed: &mut [Option<usize>; 3],
) -> Result<(), CoreError> {
    match value {
        Ok(v) => {
            sup[slot] = sup[slot].max(v);
            Ok(())
        }
        Err(CoreError::MomentInfinite) => {
            if failed[slot].is_none() {
                failed[slot] = Some(idx);
            }
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// `E_nu[int_0^{T_b} h(Y_t) dt]` for a point-mass or stationary initial law.
fn expected_passage_under_law<D: Diffusion + ?Sized>(
    d: &D,
    b: f64,
    h: &dyn Fn(f64) -> f64,
    nu: &InitialLaw,
    cfg: &QuadConfig,
) -> Result<f64, CoreError> {
    match nu {
        InitialLaw::Fixed(x0) => hitting_moment(d, *x0, b, 1, h, cfg),
        InitialLaw::Stationary => {
            let iv = d.interval();
            let density = InvariantDensity::new(d, cfg)?;
            let left = moment_sweep(d, b, 1, h, &Branch::Left, cfg)?;
            let right = moment_sweep(d, b, 1, h, &Branch::Right, cfg)?;
            let errs = ErrCell::new();
            let integrand = |y: f64| {
                let f = match density.density(y) {
                    Ok(v) => v,
                    Err(e) => {
                        errs.store(e);
                        return f64::NAN;
                    }
                };
                let u = if y < b { left.interp(y) } else { right.interp(y) };
                f * u
            };
            let res = integral_with_endpoints(&integrand, iv.l, iv.r, true, true, cfg);
            if let Some(e) = errs.take() {
                return Err(e);
            }
            match res {
                Ok(r) => Ok(r.value),
                Err(QuadError::Divergent { .. }) => Err(CoreError::MomentInfinite),
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Convenience wrapper retaining the quadrature diagnostics of the
/// normalizer computation.
pub fn invariant_normalizer<D: Diffusion + ?Sized>(
    d: &D,
    cfg: &QuadConfig,
) -> Result<QuadratureResult, CoreError> {
    let iv = d.interval();
    let errs = ErrCell::new();
    let integrand = |x: f64| match speed_density(d, x, cfg) {
        Ok(v) => v,
        Err(e) => {
            errs.store(e);
            f64::NAN
        }
    };
    let res = integral_with_endpoints(&integrand, iv.l, iv.r, true, true, cfg);
    if let Some(e) = errs.take() {
        return Err(e);
    }
    match res {
        Ok(r) => Ok(r),
        Err(QuadError::Divergent { .. }) => Err(CoreError::NotPositiveRecurrent),
        Err(e) => Err(e.into()),
    }
}
