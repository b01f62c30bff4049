//! Euler-Maruyama simulation of the Wright-Fisher SDE and path functionals.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::InitialLaw;
use crate::wright_fisher::{sample_stationary, WfParams};
use crate::Diffusion;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("functional-singular: h is not finite at attained value x = {x}")]
    FunctionalSingular { x: f64 },
    #[error("upcrossing levels must satisfy a < b")]
    BadLevels,
    #[error("path csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A uniformly time-gridded trajectory on `[0, T]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    /// terminal time `T`
    pub t_end: f64,
    /// uniform step
    pub dt: f64,
    /// `floor(T/dt) + 1` states, starting at time 0
    pub values: Vec<f64>,
    /// number of boundary projections applied by the integrator
    pub clamp_count: usize,
    pub seed: u64,
}

impl SamplePath {
    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn x0(&self) -> f64 {
        self.values[0]
    }

    pub fn x_end(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// CSV export: header `t,x`, one row per grid point, 17 significant
    /// digits (round-trips f64 exactly).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        writeln!(w, "t,x")?;
        for (i, &x) in self.values.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", self.time(i), x)?;
        }
        Ok(())
    }

    /// Parse a path written by [`SamplePath::write_csv`]. Times may carry a
    /// constant offset; only the (uniform) spacing matters.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let reader = BufReader::new(r);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                if line != "t,x" {
                    return Err(SimError::Csv(format!("expected header 't,x', got '{line}'")));
                }
                continue;
            }
            let (t, x) = line
                .split_once(',')
                .ok_or_else(|| SimError::Csv(format!("line {}: missing comma", lineno + 1)))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|e| SimError::Csv(format!("line {}: bad t: {e}", lineno + 1)))?;
            let x: f64 = x
                .trim()
                .parse()
                .map_err(|e| SimError::Csv(format!("line {}: bad x: {e}", lineno + 1)))?;
            times.push(t);
            values.push(x);
        }
        if values.len() < 2 {
            return Err(SimError::Csv("need at least two grid points".into()));
        }
        let dt = times[1] - times[0];
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SimError::Csv(format!("non-positive time step {dt}")));
        }
        let t0 = times[0];
        for (i, &t) in times.iter().enumerate() {
            if ((t - t0) - i as f64 * dt).abs() > 1e-9 * (1.0 + times.last().unwrap().abs()) {
                return Err(SimError::Csv(format!("non-uniform grid at row {}", i + 2)));
            }
        }
        Ok(SamplePath {
            t_end: dt * (values.len() - 1) as f64,
            dt,
            values,
            clamp_count: 0,
            seed: 0,
        })
    }
}

/// Simulation setup: horizon, step, initial law, and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub start: InitialLaw,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0 && self.t_end.is_finite() && self.dt <= self.t_end)
        {
            return Err(SimError::BadConfig(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.t_end
            )));
        }
        if let InitialLaw::Fixed(x0) = self.start {
            if !(0.0..=1.0).contains(&x0) {
                return Err(SimError::BadConfig(format!(
                    "fixed start x0 = {x0} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Euler-Maruyama with clamping to `[0, 1]`:
/// `X_{i+1} = clamp(X_i + mu dt + sqrt(max(X_i(1-X_i), 0) dt) Z_i)`.
///
/// The whole path is a deterministic function of `(params, config)`; the
/// stationary start consumes draws from the same seeded stream.
pub fn simulate_path(params: &WfParams, config: &SimConfig) -> Result<SamplePath, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x0 = match config.start {
        InitialLaw::Fixed(v) => v,
        InitialLaw::Stationary => sample_stationary(params, &mut rng),
    };
    let n = (config.t_end / config.dt + 1e-9).floor() as usize;
    let sqrt_dt = config.dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    values.push(x0);
    let mut clamp_count = 0usize;
    let mut x = x0;
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let noise = (x * (1.0 - x)).max(0.0).sqrt();
        let next = x + params.drift(x) * config.dt + noise * sqrt_dt * z;
        let clamped = next.clamp(0.0, 1.0);
        if clamped != next {
            clamp_count += 1;
        }
        x = clamped;
        values.push(x);
    }
    Ok(SamplePath {
        t_end: config.t_end,
        dt: config.dt,
        values,
        clamp_count,
        seed: config.seed,
    })
}

/// Riemann-sum endpoint rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Left,
    Right,
}

/// `sum_i h(X_{t_i}) dt` over the grid, with the sum index starting at 1
/// (`Right`) or 0 (`Left`). Compensated summation keeps the reduction
/// order-insensitive.
pub fn riemann_functional<F: Fn(f64) -> f64>(
    path: &SamplePath,
    h: F,
    rule: Rule,
) -> Result<f64, SimError> {
    let vals = &path.values;
    let range = match rule {
        Rule::Right => &vals[1..],
        Rule::Left => &vals[..vals.len() - 1],
    };
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in range {
        let v = h(x);
        if !v.is_finite() {
            return Err(SimError::FunctionalSingular { x });
        }
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    Ok((sum + comp) * path.dt)
}

/// Wrap `h` so it is evaluated at arguments clamped `dt` away from both
/// endpoints; entrance boundaries are unattained in continuous time and the
/// clamp vanishes as `dt -> 0`.
pub fn boundary_clamped<F: Fn(f64) -> f64>(h: F, dt: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| h(x.clamp(dt, 1.0 - dt))
}

/// First passage of the level `b`, linearly interpolated between the
/// straddling grid points; `None` when the level is not reached by `t_max`.
pub fn first_hitting_time<R: Rng + ?Sized>(
    params: &WfParams,
    x0: f64,
    b: f64,
    dt: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<Option<f64>, SimError> {
    if !(0.0 < x0 && x0 < 1.0 && 0.0 < b && b < 1.0) {
        return Err(SimError::BadConfig(format!(
            "hitting time needs x0, b in (0, 1); got x0 = {x0}, b = {b}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::BadConfig(format!("bad dt = {dt}")));
    }
    if x0 == b {
        return Ok(Some(0.0));
    }
    let sqrt_dt = dt.sqrt();
    let mut x = x0;
    let mut t = 0.0f64;
    while t + dt <= t_max + 1e-12 * t_max {
        let z: f64 = rng.sample(StandardNormal);
        let noise = (x * (1.0 - x)).max(0.0).sqrt();
        let next = (x + params.drift(x) * dt + noise * sqrt_dt * z).clamp(0.0, 1.0);
        if (x - b) * (next - b) <= 0.0 {
            let frac = if next == x { 1.0 } else { (b - x) / (next - x) };
            return Ok(Some(t + dt * frac.clamp(0.0, 1.0)));
        }
        x = next;
        t += dt;
    }
    Ok(None)
}

/// Number of completed up-then-down regeneration cycles on the grid: the
/// path must reach `b` (from the start or from a previous visit to `a`) and
/// then return to `a` for one count.
pub fn upcrossing_count(path: &SamplePath, a: f64, b: f64) -> Result<usize, SimError> {
    if !(a < b) {
        return Err(SimError::BadLevels);
    }
    let mut waiting_for_b = true;
    let mut count = 0usize;
    for &x in &path.values {
        if waiting_for_b {
            if x >= b {
                waiting_for_b = false;
            }
        } else if x <= a {
            count += 1;
            waiting_for_b = true;
        }
    }
    Ok(count)
}
