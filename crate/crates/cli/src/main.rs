//! `wflab`: config-driven driver for the Wright-Fisher inference laboratory.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on numeric
//! failures (divergence flags, degenerate paths, failed condition checks).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use wflab_core::diffusion::{
    check_unbounded_conditions, check_uniform_ergodicity, hitting_moment, CoreError, InitialLaw,
};
use wflab_core::estimate::{mle_riemann, mle_score, EstError};
use wflab_core::lab::{
    format_t, resolve_replicates, run_ergodic_check, run_normality_experiment, write_report_files,
    EstimatorChoice, ExperimentConfig, LabError,
};
use wflab_core::quad::{QuadConfig, QuadError};
use wflab_core::simulate::{first_hitting_time, simulate_path, SamplePath, SimConfig, SimError};
use wflab_core::stats::mean_variance;
use wflab_core::wright_fisher::{classify_boundaries, fisher_matrix, sample_stationary, WfError, WfParams};

use config::{parse_config, resolve_start, Command, MethodSpec, ReplicatesSpec};
use config::{DEFAULT_DT, DEFAULT_SEED};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl From<WfError> for CliError {
    fn from(e: WfError) -> Self {
        match e {
            WfError::InvalidParameters(_) | WfError::StateOutOfRange(_) => {
                CliError::Config(e.to_string())
            }
            WfError::MomentInfinite => CliError::Numeric(e.to_string()),
            WfError::Core(c) => c.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::BadInput(_) | CoreError::EmptyParameterGrid | CoreError::DegenerateCycle => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<QuadError> for CliError {
    fn from(e: QuadError) -> Self {
        match e {
            QuadError::BadInterval { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::FunctionalSingular { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EstError> for CliError {
    fn from(e: EstError) -> Self {
        match e {
            EstError::BadInput(_) => CliError::Config(e.to_string()),
            EstError::Sim(s) => s.into(),
            EstError::Wf(w) => w.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::BadConfig(_) => CliError::Config(e.to_string()),
            LabError::Io(io) => CliError::Config(format!("io: {io}")),
            LabError::Est(inner) => inner.into(),
            LabError::Wf(inner) => inner.into(),
            LabError::Sim(inner) => inner.into(),
            LabError::AllDegenerate(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "wflab", about = "Wright-Fisher diffusion laboratory", version)]
struct Cli {
    /// JSON config file selecting the subcommand and its parameters
    #[arg(long)]
    config: PathBuf,
    /// Output directory for generated files
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let text = fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let command = parse_config(&text)?;
    fs::create_dir_all(&cli.out)?;
    match command {
        Command::Simulate(c) => cmd_simulate(cli, c),
        Command::Estimate(c) => cmd_estimate(cli, c),
        Command::Experiment(c) => cmd_experiment(cli, c),
        Command::ErgodicCheck(c) => cmd_ergodic_check(cli, c),
        Command::Hitting(c) => cmd_hitting(cli, c),
        Command::Fisher(c) => cmd_fisher(cli, c),
        Command::CheckConditions(c) => cmd_check_conditions(cli, c),
        Command::StationarySample(c) => cmd_stationary_sample(cli, c),
    }
}

fn params_from(s: f64, theta1: f64, theta2: f64) -> Result<WfParams, CliError> {
    WfParams::new(s, theta1, theta2).map_err(CliError::from)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    fs::write(path, format!("{:#}\n", value))?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, c: config::SimulateCfg) -> Result<(), CliError> {
    let params = params_from(c.s, c.theta1, c.theta2)?;
    let sim = SimConfig {
        t_end: c.t_end,
        dt: c.dt.unwrap_or(DEFAULT_DT),
        start: resolve_start(&c.start)?,
        seed: cli.seed.or(c.seed).unwrap_or(DEFAULT_SEED),
    };
    let path = simulate_path(&params, &sim)?;
    let out = cli.out.join(c.out_file.as_deref().unwrap_or("path.csv"));
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    fs::write(&out, buf)?;
    println!(
        "simulate: {} points (T = {}, dt = {}, {} clamps) -> {}",
        path.values.len(),
        path.t_end,
        path.dt,
        path.clamp_count,
        out.display()
    );
    Ok(())
}

fn cmd_estimate(cli: &Cli, c: config::EstimateCfg) -> Result<(), CliError> {
    let file = fs::File::open(&c.input)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", c.input)))?;
    let path = SamplePath::read_csv(file)?;
    let result = match c.method.unwrap_or(MethodSpec::MleRiemann) {
        MethodSpec::MleRiemann => mle_riemann(&path, c.theta1, c.theta2)?,
        MethodSpec::MleScore => mle_score(&path, c.theta1, c.theta2)?,
    };
    let out = cli.out.join(c.out_file.as_deref().unwrap_or("estimate.json"));
    let value = serde_json::to_value(result).expect("estimation result serializes");
    write_json(&out, &value)?;
    println!("estimate: {} -> {}", result.estimate, out.display());
    Ok(())
}

fn cmd_experiment(cli: &Cli, c: config::ExperimentCfg) -> Result<(), CliError> {
    let params = params_from(c.s, c.theta1, c.theta2)?;
    let replicates = match &c.replicates {
        ReplicatesSpec::Uniform(n) => resolve_replicates(*n, &c.t_list),
        ReplicatesSpec::PerT(v) => v.clone(),
    };
    let config = ExperimentConfig {
        params,
        t_list: c.t_list,
        dt: c.dt.unwrap_or(DEFAULT_DT),
        replicates,
        master_seed: cli.seed.or(c.seed).unwrap_or(DEFAULT_SEED),
        estimator: c.estimator.unwrap_or(EstimatorChoice::MleScore),
        start: resolve_start(&c.start)?,
    };
    let report = run_normality_experiment(&config)?;
    write_report_files(&report, &cli.out)?;
    for t in &report.per_t {
        println!(
            "experiment T = {}: n = {} ({} excluded), mean = {:.4}, var = {:.4}, KS = {:.4}",
            format_t(t.t_end),
            t.requested - t.excluded,
            t.excluded,
            t.mean,
            t.variance,
            t.ks_distance
        );
    }
    println!(
        "experiment: I(s) = {:.6}, report files in {}",
        report.fisher_information,
        cli.out.display()
    );
    Ok(())
}

fn cmd_ergodic_check(cli: &Cli, c: config::ErgodicCheckCfg) -> Result<(), CliError> {
    let params = params_from(c.s, c.theta1, c.theta2)?;
    let h = c.h;
    let report = run_ergodic_check(
        &params,
        move |x| h.eval(x),
        c.t_end.unwrap_or(500.0),
        c.dt.unwrap_or(DEFAULT_DT),
        c.n_paths.unwrap_or(10),
        resolve_start(&c.start)?,
        cli.seed.or(c.seed).unwrap_or(DEFAULT_SEED),
    )?;
    let out = cli.out.join("ergodic_check.json");
    write_json(&out, &serde_json::to_value(&report).expect("report serializes"))?;
    println!(
        "ergodic-check: time average {:.6} vs stationary {:.6} (abs dev {:.2e}) -> {}",
        report.time_average,
        report.stationary_expectation,
        report.abs_deviation,
        out.display()
    );
    Ok(())
}

fn cmd_hitting(cli: &Cli, c: config::HittingCfg) -> Result<(), CliError> {
    let params = params_from(c.s, c.theta1, c.theta2)?;
    let q_max = c.q_max.unwrap_or(2).max(1);
    let dt = c.dt.unwrap_or(1e-4);
    let t_max = c.t_max.unwrap_or(1_000.0);
    let replicates = c.replicates.unwrap_or(10_000);
    let seed = cli.seed.or(c.seed).unwrap_or(DEFAULT_SEED);
    let quad_cfg = QuadConfig::default();

    let mut quadrature = Vec::new();
    for q in 1..=q_max {
        quadrature.push(hitting_moment(&params, c.x, c.b, q, &|_| 1.0, &quad_cfg)?);
    }

    use rayon::prelude::*;
    let samples: Result<Vec<Option<f64>>, CliError> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = wflab_core::rng::replicate_rng(seed, r as u64);
            first_hitting_time(&params, c.x, c.b, dt, t_max, &mut rng).map_err(CliError::from)
        })
        .collect();
    let samples = samples?;
    let not_hit = samples.iter().filter(|s| s.is_none()).count();
    let hits: Vec<f64> = samples.into_iter().flatten().collect();
    if hits.len() < 2 {
        return Err(CliError::Numeric(format!(
            "only {} of {} replicates reached the level before t_max",
            hits.len(),
            replicates
        )));
    }

    let mut rows = Vec::new();
    for (qi, &quad_val) in quadrature.iter().enumerate() {
        let q = qi as u32 + 1;
        let powed: Vec<f64> = hits.iter().map(|&t| t.powi(q as i32)).collect();
        let (mean, var) = mean_variance(&powed);
        rows.push(json!({
            "q": q,
            "quadrature": quad_val,
            "mc_mean": mean,
            "mc_se": (var / powed.len() as f64).sqrt(),
        }));
    }
    let value = json!({
        "x": c.x,
        "b": c.b,
        "dt": dt,
        "t_max": t_max,
        "replicates": replicates,
        "not_hit": not_hit,
        "moments": rows,
    });
    let out = cli.out.join("hitting.json");
    write_json(&out, &value)?;
    println!(
        "hitting: E[T_b] quadrature {:.6} vs MC {:.6} -> {}",
        quadrature[0],
        value["moments"][0]["mc_mean"].as_f64().unwrap(),
        out.display()
    );
    Ok(())
}

fn cmd_fisher(cli: &Cli, c: config::FisherCfg) -> Result<(), CliError> {
    let params = params_from(c.s, c.theta1, c.theta2)?;
    let matrix = fisher_matrix(&params)?;
    let boundaries = classify_boundaries(&params);
    let entry = |v: f64| -> serde_json::Value {
        if v.is_finite() {
            json!(v)
        } else {
            json!("infinite")
        }
    };
    let value = json!({
        "parameter_order": ["s", "theta1", "theta2"],
        "entries": matrix.entries.iter()
            .map(|row| row.iter().map(|&v| entry(v)).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "selection_information": matrix.selection_information(),
        "lan_regime": params.lan_regime(),
        "boundaries": serde_json::to_value(boundaries).expect("serializes"),
    });
    let out = cli.out.join("fisher.json");
    write_json(&out, &value)?;
    println!(
        "fisher: I(s) = {:.6} -> {}",
        matrix.selection_information(),
        out.display()
    );
    Ok(())
}

fn cmd_check_conditions(cli: &Cli, c: config::CheckConditionsCfg) -> Result<(), CliError> {
    let mut grid = Vec::new();
    for &s in &c.s.values() {
        for &t1 in &c.theta1.values() {
            for &t2 in &c.theta2.values() {
                grid.push(params_from(s, t1, t2)?);
            }
        }
    }
    let quad_cfg = QuadConfig::default();
    let report = match c.h {
        None => {
            let a = c.a.unwrap_or(0.25);
            let b = c.b.unwrap_or(0.75);
            check_uniform_ergodicity(&grid, a, b, &quad_cfg)?
        }
        Some(h) => {
            let b = c.b.unwrap_or(0.5);
            let x = c.x.unwrap_or(0.25);
            let nu = match &c.nu {
                None => InitialLaw::Stationary,
                Some(spec) => spec.resolve()?,
            };
            check_unbounded_conditions(&grid, &|y| h.eval(y), b, x, &nu, &quad_cfg)?
        }
    };
    let out = cli.out.join("conditions.json");
    write_json(&out, &serde_json::to_value(&report).expect("report serializes"))?;
    println!(
        "check-conditions: {} grid points, kappa_l_min = {:.6}, kappa_r_min = {:.6}, pass = {} -> {}",
        report.grid.len(),
        report.kappa_l_min,
        report.kappa_r_min,
        report.pass,
        out.display()
    );
    if !report.pass {
        return Err(CliError::Numeric(
            "ergodicity conditions failed on the supplied grid".into(),
        ));
    }
    Ok(())
}

fn cmd_stationary_sample(cli: &Cli, c: config::StationarySampleCfg) -> Result<(), CliError> {
    let params = params_from(c.s, c.theta1, c.theta2)?;
    let seed = cli.seed.or(c.seed).unwrap_or(DEFAULT_SEED);
    let mut out = String::from("x\n");
    for r in 0..c.n {
        let mut rng = wflab_core::rng::replicate_rng(seed, r as u64);
        let x = sample_stationary(&params, &mut rng);
        out.push_str(&format!("{x:.16e}\n"));
    }
    let file = cli.out.join(c.out_file.as_deref().unwrap_or("draws.csv"));
    fs::write(&file, out)?;
    println!("stationary-sample: {} draws -> {}", c.n, file.display());
    Ok(())
}
