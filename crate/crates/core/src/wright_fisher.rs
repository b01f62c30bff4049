//! The two-allele Wright-Fisher diffusion with selection and mutation.
//!
//! State is the frequency of the favoured allele on `[0, 1]`; drift is
//! `(s x(1-x) - theta2 x + theta1 (1-x)) / 2` and the squared diffusion
//! coefficient is `x(1-x)`. The stationary law has the closed form
//! `f(x) = e^{s x} x^{theta1 - 1} (1-x)^{theta2 - 1} / G`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::CoreError;
use crate::quad::{boundary_integral, integral_with_endpoints, Interval, QuadConfig, QuadError};
use crate::special::ln_beta;
use crate::Diffusion;

#[derive(Debug, Error)]
pub enum WfError {
    #[error("invalid-parameters: {0}")]
    InvalidParameters(String),
    #[error("state-out-of-range: x = {0} is outside [0, 1]")]
    StateOutOfRange(f64),
    #[error("moment-infinite: expectation diverges under the stationary law")]
    MomentInfinite,
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl From<QuadError> for WfError {
    fn from(e: QuadError) -> Self {
        WfError::Core(CoreError::Quad(e))
    }
}

/// Selection coefficient `s` and mutation rates `theta1`, `theta2` (twice
/// the per-timescale rates; both must be strictly positive for the diffusion
/// to be ergodic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWfParams")]
pub struct WfParams {
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Deserialize)]
struct RawWfParams {
    s: f64,
    theta1: f64,
    theta2: f64,
}

impl TryFrom<RawWfParams> for WfParams {
    type Error = WfError;
    fn try_from(raw: RawWfParams) -> Result<Self, WfError> {
        WfParams::new(raw.s, raw.theta1, raw.theta2)
    }
}

impl WfParams {
    pub fn new(s: f64, theta1: f64, theta2: f64) -> Result<Self, WfError> {
        if !s.is_finite() {
            return Err(WfError::InvalidParameters(format!(
                "s must be finite (got {s})"
            )));
        }
        for (name, v) in [("theta1", theta1), ("theta2", theta2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(WfError::InvalidParameters(format!(
                    "{name} must be strictly positive and finite (got {v})"
                )));
            }
        }
        Ok(Self { s, theta1, theta2 })
    }

    /// Both mutation rates at least 1: boundaries are entrance and the
    /// likelihood-ratio machinery (mutation components included) is defined.
    pub fn lan_regime(&self) -> bool {
        self.theta1 >= 1.0 && self.theta2 >= 1.0
    }

    /// Strict version of [`WfParams::lan_regime`]: the mutation entries of
    /// the information matrix are finite only for rates strictly above 1.
    pub fn finite_mutation_information(&self) -> bool {
        self.theta1 > 1.0 && self.theta2 > 1.0
    }
}

impl Diffusion for WfParams {
    fn interval(&self) -> Interval {
        Interval { l: 0.0, r: 1.0 }
    }

    fn drift(&self, x: f64) -> f64 {
        0.5 * (self.s * x * (1.0 - x) - self.theta2 * x + self.theta1 * (1.0 - x))
    }

    fn diffusion_sq(&self, x: f64) -> f64 {
        x * (1.0 - x)
    }

    fn log_scale_integrand(&self, x: f64) -> f64 {
        self.s + self.theta1 / x - self.theta2 / (1.0 - x)
    }

    fn log_scale_antiderivative(&self, x: f64) -> Option<f64> {
        Some(self.s * x + self.theta1 * x.ln() + self.theta2 * (-x).ln_1p())
    }

    fn parameters(&self) -> Vec<f64> {
        vec![self.s, self.theta1, self.theta2]
    }
}

/// Drift and squared diffusion coefficient at `x`.
pub fn wf_coefficients(params: &WfParams, x: f64) -> Result<(f64, f64), WfError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(WfError::StateOutOfRange(x));
    }
    Ok((params.drift(x), params.diffusion_sq(x)))
}

/// Gradient of the drift in `(s, theta1, theta2)`; it does not depend on the
/// parameter point.
pub fn drift_gradient(x: f64) -> [f64; 3] {
    [0.5 * x * (1.0 - x), 0.5 * (1.0 - x), -0.5 * x]
}

/// Boundary type of an endpoint reachable by the diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// attainable and leavable (mutation rate below 1)
    Regular,
    /// unattainable but startable (mutation rate at least 1)
    Entrance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryClass {
    pub at_zero: Boundary,
    pub at_one: Boundary,
}

/// Classify both endpoints from the mutation rates.
pub fn classify_boundaries(params: &WfParams) -> BoundaryClass {
    let class = |theta: f64| {
        if theta < 1.0 {
            Boundary::Regular
        } else {
            Boundary::Entrance
        }
    };
    BoundaryClass {
        at_zero: class(params.theta1),
        at_one: class(params.theta2),
    }
}

/// Stationary density `f(x) = e^{s x} x^{theta1-1} (1-x)^{theta2-1} / G`
/// with the normalizer computed once by quadrature.
pub struct StationaryDensity {
    params: WfParams,
    normalizer: f64,
    cfg: QuadConfig,
}

impl StationaryDensity {
    pub fn new(params: &WfParams) -> Result<Self, WfError> {
        Self::with_config(params, &QuadConfig::default())
    }

    pub fn with_config(params: &WfParams, cfg: &QuadConfig) -> Result<Self, WfError> {
        let p = *params;
        let kernel = move |x: f64| log_kernel(&p, x).exp();
        let g = integral_with_endpoints(&kernel, 0.0, 1.0, true, true, cfg)?;
        Ok(Self {
            params: p,
            normalizer: g.value,
            cfg: *cfg,
        })
    }

    /// The normalizer `G`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Closed-form upper bound `max(e^s, 1) B(theta1, theta2)` on `G`.
    pub fn normalizer_bound(&self) -> f64 {
        self.params.s.max(0.0).exp() * ln_beta(self.params.theta1, self.params.theta2).exp()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        log_kernel(&self.params, x) - self.normalizer.ln()
    }

    /// CDF by quadrature of the kernel toward the nearer endpoint.
    pub fn cdf(&self, x: f64) -> Result<f64, WfError> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x >= 1.0 {
            return Ok(1.0);
        }
        let p = self.params;
        let kernel = move |y: f64| log_kernel(&p, y).exp();
        if x <= 0.5 {
            let part = boundary_integral(&kernel, 0.0, x, &self.cfg)?;
            Ok((part.value / self.normalizer).clamp(0.0, 1.0))
        } else {
            let part = boundary_integral(&kernel, 1.0, x, &self.cfg)?;
            Ok((1.0 + part.value / self.normalizer).clamp(0.0, 1.0))
        }
    }

    /// `E[h(xi)]` under the stationary law.
    pub fn expectation<F: Fn(f64) -> f64>(&self, h: F) -> Result<f64, WfError> {
        self.expectation_with(h, &self.cfg)
    }

    pub(crate) fn expectation_with<F: Fn(f64) -> f64>(
        &self,
        h: F,
        cfg: &QuadConfig,
    ) -> Result<f64, WfError> {
        let p = self.params;
        let g = self.normalizer;
        let integrand = move |x: f64| h(x) * (log_kernel(&p, x) - g.ln()).exp();
        match integral_with_endpoints(&integrand, 0.0, 1.0, true, true, cfg) {
            Ok(r) => Ok(r.value),
            Err(QuadError::Divergent { .. }) => Err(WfError::MomentInfinite),
            Err(e) => Err(e.into()),
        }
    }
}

fn log_kernel(params: &WfParams, x: f64) -> f64 {
    params.s * x + (params.theta1 - 1.0) * x.ln() + (params.theta2 - 1.0) * (-x).ln_1p()
}

/// One-shot stationary density evaluation (the struct caches the normalizer
/// for repeated use).
pub fn stationary_density(params: &WfParams, x: f64) -> Result<f64, WfError> {
    if !(0.0 < x && x < 1.0) {
        return Err(WfError::StateOutOfRange(x));
    }
    Ok(StationaryDensity::new(params)?.density(x))
}

/// `E[h(xi)]` under the stationary law at `params`.
pub fn stationary_expectation<F: Fn(f64) -> f64>(params: &WfParams, h: F) -> Result<f64, WfError> {
    StationaryDensity::new(params)?.expectation(h)
}

/// Fisher information matrix in parameter order `(s, theta1, theta2)`, with
/// `+inf` marking the mutation diagonal entries when the corresponding rate
/// is at most 1 (the stationary expectation diverges there).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub entries: [[f64; 3]; 3],
}

impl FisherMatrix {
    /// `I(s)`, the selection-selection entry.
    pub fn selection_information(&self) -> f64 {
        self.entries[0][0]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().flatten().all(|v| v.is_finite())
    }
}

/// Quarter of the stationary expectation of the drift-gradient outer product
/// over the diffusion coefficient.
pub fn fisher_matrix(params: &WfParams) -> Result<FisherMatrix, WfError> {
    let sd = StationaryDensity::new(params)?;
    let e_x = sd.expectation(|x| x)?;
    let e_x1mx = sd.expectation(|x| x * (1.0 - x))?;

    // Rates above 1 make these expectations finite by the closed form of the
    // integrand; detection is off because exponents just above the
    // divergence boundary decay too slowly to classify numerically.
    let trusting = QuadConfig {
        detect_divergence: false,
        ..QuadConfig::default()
    };
    let e_ratio0 = if params.theta1 > 1.0 {
        sd.expectation_with(|x| (1.0 - x) / x, &trusting)?
    } else {
        f64::INFINITY
    };
    let e_ratio1 = if params.theta2 > 1.0 {
        sd.expectation_with(|x| x / (1.0 - x), &trusting)?
    } else {
        f64::INFINITY
    };

    let q = 0.25;
    Ok(FisherMatrix {
        entries: [
            [q * e_x1mx, q * (1.0 - e_x), -q * e_x],
            [q * (1.0 - e_x), q * e_ratio0, -0.25],
            [-q * e_x, -0.25, q * e_ratio1],
        ],
    })
}

/// Exact draw from the stationary law: Beta(theta1, theta2) proposals from
/// the gamma-ratio construction, accepted with probability
/// `exp(s x - max(s, 0))`.
pub fn sample_stationary<R: Rng + ?Sized>(params: &WfParams, rng: &mut R) -> f64 {
    sample_stationary_counted(params, rng).0
}

/// As [`sample_stationary`], also reporting how many Beta proposals were
/// consumed (for acceptance-rate diagnostics).
pub fn sample_stationary_counted<R: Rng + ?Sized>(params: &WfParams, rng: &mut R) -> (f64, u64) {
    let cap = params.s.max(0.0);
    let mut proposals = 0u64;
    loop {
        let x = sample_beta(params.theta1, params.theta2, rng);
        proposals += 1;
        let u: f64 = rng.random();
        if u < (params.s * x - cap).exp() {
            return (x, proposals);
        }
    }
}

/// Marsaglia-Tsang squeeze sampler for Gamma(shape, 1).
pub(crate) fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        // boost: Gamma(a) = Gamma(a + 1) * U^{1/a}
        let u: f64 = rng.random();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * z * z * z * z {
            return d * v3;
        }
        if u.ln() < 0.5 * z * z + d - d * v3 + d * v3.ln() {
            return d * v3;
        }
    }
}

pub(crate) fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let g1 = sample_gamma(a, rng);
        let g2 = sample_gamma(b, rng);
        let x = g1 / (g1 + g2);
        if x > 0.0 && x < 1.0 {
            return x;
        }
    }
}
