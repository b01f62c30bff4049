//! Replicated Monte Carlo experiments: the asymptotic-normality study for
//! the selection estimators, ergodic-average checks, and likelihood-ratio
//! (martingale / Hellinger) diagnostics.
//!
//! Replicate `r` at horizon index `ti` always draws from the stream
//! `mix_seed(mix_seed(master_seed, ti), r)`, and reductions run in replicate
//! order, so reports are bit-identical at any thread count.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::InitialLaw;
use crate::estimate::{
    bayes_estimator, mle_riemann, mle_score, sufficient_stats, EstError, Loss, Prior,
};
use crate::quad::Interval;
use crate::rng::mix_seed;
use crate::simulate::{
    boundary_clamped, riemann_functional, simulate_path, Rule, SimConfig, SimError,
};
use crate::special::ln_gamma;
use crate::stats::{kde_gaussian, ks_distance, mean_variance, neumaier_sum, normal_cdf, Bandwidth, Curve};
use crate::wright_fisher::{fisher_matrix, StationaryDensity, WfError, WfParams};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("all replicates degenerate at T = {0}")]
    AllDegenerate(f64),
    #[error(transparent)]
    Est(#[from] EstError),
    #[error(transparent)]
    Wf(#[from] WfError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loss functions available to the Bayes estimator in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Quadratic,
    Absolute,
}

impl LossKind {
    pub fn build(&self) -> Loss {
        match self {
            LossKind::Quadratic => Loss::quadratic(),
            LossKind::Absolute => Loss::absolute(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorChoice {
    MleRiemann,
    MleScore,
    Bayes { s_min: f64, s_max: f64, loss: LossKind },
}

/// Design of one replicated normality experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: WfParams,
    pub t_list: Vec<f64>,
    pub dt: f64,
    /// replicate count per horizon, aligned with `t_list`
    pub replicates: Vec<usize>,
    pub master_seed: u64,
    pub estimator: EstimatorChoice,
    pub start: InitialLaw,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        if self.t_list.is_empty() {
            return Err(LabError::BadConfig("empty T list".into()));
        }
        if self.t_list.len() != self.replicates.len() {
            return Err(LabError::BadConfig(format!(
                "replicates ({}) and T list ({}) lengths differ",
                self.replicates.len(),
                self.t_list.len()
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(LabError::BadConfig(format!("dt = {} must be positive", self.dt)));
        }
        for (&t, &n) in self.t_list.iter().zip(&self.replicates) {
            if t < self.dt {
                return Err(LabError::BadConfig(format!("T = {t} below dt = {}", self.dt)));
            }
            if n < 2 {
                return Err(LabError::BadConfig(format!("need >= 2 replicates at T = {t}")));
            }
        }
        Ok(())
    }
}

/// Desk-scale replicate schedule: the requested count for short horizons,
/// capped at 2000 once `T` exceeds 2 (keeps the default study near 2e8
/// integrator steps).
pub fn resolve_replicates(requested: usize, t_list: &[f64]) -> Vec<usize> {
    t_list
        .iter()
        .map(|&t| if t <= 2.0 { requested } else { requested.min(2000) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Per-horizon summaries; the raw samples and the KDE curve stay in memory
/// and are written to the CSV side files rather than the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct TReport {
    pub t_end: f64,
    pub requested: usize,
    pub excluded: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_abs_error: f64,
    pub ks_distance: f64,
    pub moment_table: Vec<MomentRow>,
    #[serde(skip)]
    pub replicate_ids: Vec<usize>,
    #[serde(skip)]
    pub estimates: Vec<f64>,
    #[serde(skip)]
    pub rescaled_errors: Vec<f64>,
    #[serde(skip)]
    pub kde: Curve,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// quadrature `I(s)` at the true parameters
    pub fisher_information: f64,
    pub per_t: Vec<TReport>,
}

fn estimate_one(
    path: &crate::simulate::SamplePath,
    params: &WfParams,
    estimator: &EstimatorChoice,
) -> Result<f64, EstError> {
    match estimator {
        EstimatorChoice::MleRiemann => {
            mle_riemann(path, params.theta1, params.theta2).map(|r| r.estimate)
        }
        EstimatorChoice::MleScore => {
            mle_score(path, params.theta1, params.theta2).map(|r| r.estimate)
        }
        EstimatorChoice::Bayes { s_min, s_max, loss } => {
            let stats = sufficient_stats(path, params.theta1, params.theta2, Rule::Right)?;
            let support = Interval::new(*s_min, *s_max)
                .map_err(|e| EstError::BadInput(e.to_string()))?;
            bayes_estimator(&stats, &Prior::flat(support), &loss.build(), path.t_end)
                .map(|r| r.estimate)
        }
    }
}

/// Simulate, estimate, rescale, and summarize every horizon of the study.
/// Replicates that fail with a degenerate path are excluded and counted.
pub fn run_normality_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, LabError> {
    config.validate()?;
    let i_s = fisher_matrix(&config.params)?.selection_information();
    let s_true = config.params.s;
    let mut per_t = Vec::with_capacity(config.t_list.len());

    for (ti, (&t_end, &n)) in config.t_list.iter().zip(&config.replicates).enumerate() {
        let t_seed = mix_seed(config.master_seed, ti as u64);
        let outcomes: Result<Vec<Option<f64>>, LabError> = (0..n)
            .into_par_iter()
            .map(|r| {
                let sim = SimConfig {
                    t_end,
                    dt: config.dt,
                    start: config.start,
                    seed: mix_seed(t_seed, r as u64),
                };
                let path = simulate_path(&config.params, &sim)?;
                match estimate_one(&path, &config.params, &config.estimator) {
                    Ok(v) => Ok(Some(v)),
                    Err(EstError::DegeneratePath) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            })
            .collect();
        let outcomes = outcomes?;

        let mut replicate_ids = Vec::with_capacity(n);
        let mut estimates = Vec::with_capacity(n);
        for (r, v) in outcomes.into_iter().enumerate() {
            if let Some(v) = v {
                replicate_ids.push(r);
                estimates.push(v);
            }
        }
        let excluded = n - estimates.len();
        if estimates.len() < 2 {
            return Err(LabError::AllDegenerate(t_end));
        }

        let rescaled: Vec<f64> = estimates.iter().map(|&e| t_end.sqrt() * (e - s_true)).collect();
        let (mean, variance) = mean_variance(&rescaled);
        let mean_abs_error =
            neumaier_sum(estimates.iter().map(|&e| (e - s_true).abs())) / estimates.len() as f64;
        let ks = ks_distance(&rescaled, |x| normal_cdf(x, 0.0, 1.0 / i_s));
        let kde = kde_gaussian(&rescaled, Bandwidth::Silverman);
        let moment_table = moment_convergence_table(&rescaled, &[1.0, 2.0], i_s);

        per_t.push(TReport {
            t_end,
            requested: n,
            excluded,
            mean,
            variance,
            mean_abs_error,
            ks_distance: ks,
            moment_table,
            replicate_ids,
            estimates,
            rescaled_errors: rescaled,
            kde,
        });
    }

    Ok(ExperimentReport {
        config: config.clone(),
        fisher_information: i_s,
        per_t,
    })
}

/// `E|zeta|^p` for standard normal `zeta`: `2^{p/2} Gamma((p+1)/2) / sqrt(pi)`.
pub fn absolute_normal_moment(p: f64) -> f64 {
    2.0f64.powf(0.5 * p) * ln_gamma(0.5 * (p + 1.0)).exp() / std::f64::consts::PI.sqrt()
}

/// Empirical absolute moments of the rescaled errors next to the limit
/// values `E|I(s)^{-1/2} zeta|^p`.
pub fn moment_convergence_table(rescaled_errors: &[f64], p_list: &[f64], i_s: f64) -> Vec<MomentRow> {
    let n = rescaled_errors.len() as f64;
    p_list
        .iter()
        .map(|&p| {
            let empirical =
                neumaier_sum(rescaled_errors.iter().map(|&x| x.abs().powf(p))) / n;
            let theoretical = absolute_normal_moment(p) * i_s.powf(-0.5 * p);
            MomentRow {
                p,
                empirical,
                theoretical,
            }
        })
        .collect()
}

/// Named state functionals used by the ergodic and condition checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HFunction {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "x")]
    X,
    #[serde(rename = "x(1-x)")]
    XTimesOneMinusX,
    #[serde(rename = "(1-x)/x")]
    OneMinusXOverX,
    #[serde(rename = "x/(1-x)")]
    XOverOneMinusX,
}

impl HFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            HFunction::One => 1.0,
            HFunction::X => x,
            HFunction::XTimesOneMinusX => x * (1.0 - x),
            HFunction::OneMinusXOverX => (1.0 - x) / x,
            HFunction::XOverOneMinusX => x / (1.0 - x),
        }
    }

    /// Bounded on the closed unit interval?
    pub fn is_bounded(&self) -> bool {
        matches!(
            self,
            HFunction::One | HFunction::X | HFunction::XTimesOneMinusX
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicReport {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// pooled left-rule time average of the boundary-clamped functional
    pub time_average: f64,
    /// quadrature expectation under the stationary law
    pub stationary_expectation: f64,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
}

/// Pooled time average of `h` along simulated paths against its stationary
/// expectation. Unbounded functionals are evaluated at states clamped `dt`
/// from the boundary along paths (the stationary integral uses the raw `h`).
pub fn run_ergodic_check<F: Fn(f64) -> f64 + Sync>(
    params: &WfParams,
    h: F,
    t_end: f64,
    dt: f64,
    n_paths: usize,
    start: InitialLaw,
    master_seed: u64,
) -> Result<ErgodicReport, LabError> {
    if n_paths == 0 {
        return Err(LabError::BadConfig("need at least one path".into()));
    }
    let target = StationaryDensity::new(params)?.expectation(&h)?;
    let averages: Result<Vec<f64>, LabError> = (0..n_paths)
        .into_par_iter()
        .map(|r| {
            let sim = SimConfig {
                t_end,
                dt,
                start,
                seed: mix_seed(master_seed, r as u64),
            };
            let path = simulate_path(params, &sim)?;
            let integral = riemann_functional(&path, boundary_clamped(&h, dt), Rule::Left)?;
            Ok(integral / t_end)
        })
        .collect();
    let averages = averages?;
    let time_average = neumaier_sum(averages.iter().copied()) / n_paths as f64;
    let abs_deviation = (time_average - target).abs();
    Ok(ErgodicReport {
        t_end,
        dt,
        n_paths,
        time_average,
        stationary_expectation: target,
        abs_deviation,
        rel_deviation: abs_deviation / target.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct UStat {
    pub u: f64,
    pub mean_z: f64,
    pub se_z: f64,
    pub mean_sqrt_z: f64,
    pub se_sqrt_z: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairStat {
    pub u: f64,
    pub v: f64,
    pub separation: f64,
    /// Monte Carlo mean of `|Z^{1/2}(u) - Z^{1/2}(v)|^2`
    pub mean_sq_diff: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub t_end: f64,
    pub replicates: usize,
    pub per_u: Vec<UStat>,
    pub pairs: Vec<PairStat>,
    /// least-squares slope of `ln E|Z^{1/2}(u)-Z^{1/2}(v)|^2` against
    /// `ln |u - v|` over the pair list (NaN with fewer than two pairs)
    pub hellinger_slope: f64,
}

/// Monte Carlo moments of the likelihood ratio: `E[Z(u)]` (martingale
/// check), `E[Z^{1/2}(u)]` (decay in `u`), and the Hellinger-type squared
/// differences over `(u, v)` pairs, with a log-log slope diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn run_martingale_and_hellinger(
    params: &WfParams,
    u_list: &[f64],
    v_list: &[f64],
    t_end: f64,
    dt: f64,
    replicates: usize,
    start: InitialLaw,
    s_space: Interval,
    master_seed: u64,
) -> Result<MartingaleReport, LabError> {
    if replicates < 2 {
        return Err(LabError::BadConfig("need >= 2 replicates".into()));
    }
    if u_list.len() != v_list.len() && !v_list.is_empty() {
        return Err(LabError::BadConfig(
            "v list must be empty or match the u list length".into(),
        ));
    }
    let sqrt_t = t_end.sqrt();
    let mut all_u: Vec<f64> = u_list.to_vec();
    all_u.extend_from_slice(v_list);
    for &u in &all_u {
        let s_new = params.s + u / sqrt_t;
        if !s_space.contains_closed(s_new) {
            return Err(EstError::LocalParameterOutOfRange(s_new).into());
        }
    }

    // initial-law ratio pieces, precomputed per local parameter
    let log_g = |u: f64| -> Result<f64, LabError> {
        let shifted = WfParams::new(params.s + u / sqrt_t, params.theta1, params.theta2)?;
        Ok(StationaryDensity::new(&shifted)?.normalizer().ln())
    };
    let nu_adjust: Option<(f64, Vec<f64>)> = match start {
        InitialLaw::Fixed(_) => None,
        InitialLaw::Stationary => {
            let base = log_g(0.0)?;
            let per_u: Result<Vec<f64>, LabError> = all_u.iter().map(|&u| log_g(u)).collect();
            Some((base, per_u?))
        }
    };

    // per replicate: log Z at every local parameter in all_u
    let rows: Result<Vec<Vec<f64>>, LabError> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sim = SimConfig {
                t_end,
                dt,
                start,
                seed: mix_seed(master_seed, r as u64),
            };
            let path = simulate_path(params, &sim)?;
            let stats = sufficient_stats(&path, params.theta1, params.theta2, Rule::Right)?;
            let row = all_u
                .iter()
                .enumerate()
                .map(|(k, &u)| {
                    let mut lz = stats.log_ratio(params.s + u / sqrt_t, params.s);
                    if let Some((base, per_u)) = &nu_adjust {
                        lz += (u / sqrt_t) * path.x0() - (per_u[k] - base);
                    }
                    lz
                })
                .collect();
            Ok(row)
        })
        .collect();
    let rows = rows?;

    let column = |k: usize| -> Vec<f64> { rows.iter().map(|row| row[k]).collect() };
    let summarize = |vals: &[f64]| -> (f64, f64) {
        let (m, v) = mean_variance(vals);
        (m, (v / vals.len() as f64).sqrt())
    };

    let per_u: Vec<UStat> = u_list
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let lz = column(k);
            let z: Vec<f64> = lz.iter().map(|&v| v.exp()).collect();
            let sqrt_z: Vec<f64> = lz.iter().map(|&v| (0.5 * v).exp()).collect();
            let (mean_z, se_z) = summarize(&z);
            let (mean_sqrt_z, se_sqrt_z) = summarize(&sqrt_z);
            UStat {
                u,
                mean_z,
                se_z,
                mean_sqrt_z,
                se_sqrt_z,
            }
        })
        .collect();

    let mut pairs = Vec::new();
    if !v_list.is_empty() {
        for (i, (&u, &v)) in u_list.iter().zip(v_list).enumerate() {
            let lu = column(i);
            let lv = column(u_list.len() + i);
            let diffs: Vec<f64> = lu
                .iter()
                .zip(&lv)
                .map(|(&a, &b)| {
                    let d = (0.5 * a).exp() - (0.5 * b).exp();
                    d * d
                })
                .collect();
            let (mean_sq_diff, se) = summarize(&diffs);
            pairs.push(PairStat {
                u,
                v,
                separation: (u - v).abs(),
                mean_sq_diff,
                se,
            });
        }
    }

    let hellinger_slope = if pairs.len() >= 2 {
        let xs: Vec<f64> = pairs.iter().map(|p| p.separation.ln()).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.mean_sq_diff.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };

    Ok(MartingaleReport {
        t_end,
        replicates,
        per_u,
        pairs,
        hellinger_slope,
    })
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// Format a horizon for use in file names (`1`, `2`, `0.5`, ...).
pub fn format_t(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Write `report.json`, `errors_T<t>.csv`, and `kde_T<t>.csv` into `dir`.
pub fn write_report_files(report: &ExperimentReport, dir: &Path) -> Result<(), LabError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(dir.join("report.json"), json)?;
    for t in &report.per_t {
        let tag = format_t(t.t_end);
        let mut errors = Vec::new();
        writeln!(errors, "replicate,estimate,rescaled_error")?;
        for ((id, est), resc) in t
            .replicate_ids
            .iter()
            .zip(&t.estimates)
            .zip(&t.rescaled_errors)
        {
            writeln!(errors, "{id},{est:.16e},{resc:.16e}")?;
        }
        fs::write(dir.join(format!("errors_T{tag}.csv")), errors)?;

        let mut kde = Vec::new();
        writeln!(kde, "x,density")?;
        for (x, y) in t.kde.x.iter().zip(&t.kde.y) {
            writeln!(kde, "{x:.16e},{y:.16e}")?;
        }
        fs::write(dir.join(format!("kde_T{tag}.csv")), kde)?;
    }
    Ok(())
}
