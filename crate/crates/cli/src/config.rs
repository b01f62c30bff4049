//! JSON config schemas for the subcommands.
//!
//! Every payload is strict (`deny_unknown_fields`) and carries a `cmd` tag
//! that selects the subcommand. Defaults follow the reference experiment:
//! `dt = 0.001`, fixed start at `0.25`, seed 42.

use serde::Deserialize;
use serde_json::Value;

use wflab_core::diffusion::InitialLaw;
use wflab_core::lab::{EstimatorChoice, HFunction};
use crate::CliError;

pub const DEFAULT_DT: f64 = 0.001;
pub const DEFAULT_START: f64 = 0.25;
pub const DEFAULT_SEED: u64 = 42;

/// Start specification: a number (fixed point) or the string "stationary".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Fixed(f64),
    Named(String),
}

impl StartSpec {
    pub fn resolve(&self) -> Result<InitialLaw, CliError> {
        match self {
            StartSpec::Fixed(x) => Ok(InitialLaw::Fixed(*x)),
            StartSpec::Named(s) if s == "stationary" => Ok(InitialLaw::Stationary),
            StartSpec::Named(s) => Err(CliError::Config(format!(
                "start: expected a number in [0,1] or \"stationary\", got \"{s}\""
            ))),
        }
    }
}

pub fn resolve_start(spec: &Option<StartSpec>) -> Result<InitialLaw, CliError> {
    match spec {
        None => Ok(InitialLaw::Fixed(DEFAULT_START)),
        Some(s) => s.resolve(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridAxis {
    Scalar(f64),
    List(Vec<f64>),
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridAxis::Scalar(v) => vec![*v],
            GridAxis::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ReplicatesSpec {
    Uniform(usize),
    PerT(Vec<usize>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    MleRiemann,
    MleScore,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: Option<f64>,
    pub start: Option<StartSpec>,
    pub seed: Option<u64>,
    pub out_file: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateCfg {
    #[allow(dead_code)]
    pub cmd: String,
    /// path CSV produced by `simulate` (or any `t,x` file)
    pub input: String,
    pub theta1: f64,
    pub theta2: f64,
    pub method: Option<MethodSpec>,
    pub out_file: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
    #[serde(rename = "T")]
    pub t_list: Vec<f64>,
    pub dt: Option<f64>,
    pub replicates: ReplicatesSpec,
    pub seed: Option<u64>,
    pub estimator: Option<EstimatorChoice>,
    pub start: Option<StartSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicCheckCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub h: HFunction,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub start: Option<StartSpec>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub x: f64,
    pub b: f64,
    pub q_max: Option<u32>,
    pub dt: Option<f64>,
    pub replicates: Option<usize>,
    pub t_max: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConditionsCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: GridAxis,
    pub theta1: GridAxis,
    pub theta2: GridAxis,
    /// present: evaluate the unbounded-h conditions; absent: kappa check only
    pub h: Option<HFunction>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub x: Option<f64>,
    pub nu: Option<StartSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySampleCfg {
    #[allow(dead_code)]
    pub cmd: String,
    pub s: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub n: usize,
    pub seed: Option<u64>,
    pub out_file: Option<String>,
}

pub enum Command {
    Simulate(SimulateCfg),
    Estimate(EstimateCfg),
    Experiment(ExperimentCfg),
    ErgodicCheck(ErgodicCheckCfg),
    Hitting(HittingCfg),
    Fisher(FisherCfg),
    CheckConditions(CheckConditionsCfg),
    StationarySample(StationarySampleCfg),
}

/// Parse and validate a JSON config document into a subcommand payload.
pub fn parse_config(text: &str) -> Result<Command, CliError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    let cmd = value
        .get("cmd")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Config("config needs a string field \"cmd\"".into()))?
        .to_owned();
    let strict = |e: serde_json::Error| CliError::Config(format!("{cmd}: {e}"));
    match cmd.as_str() {
        "simulate" => Ok(Command::Simulate(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "estimate" => Ok(Command::Estimate(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "experiment" => Ok(Command::Experiment(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "ergodic-check" => Ok(Command::ErgodicCheck(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "hitting" => Ok(Command::Hitting(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "fisher" => Ok(Command::Fisher(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "check-conditions" => Ok(Command::CheckConditions(
            serde_json::from_value(value).map_err(strict)?,
        )),
        "stationary-sample" => Ok(Command::StationarySample(
            serde_json::from_value(value).map_err(strict)?,
        )),
        other => Err(CliError::Config(format!(
            "unknown cmd \"{other}\" (expected simulate, estimate, experiment, \
             ergodic-check, hitting, fisher, check-conditions, or stationary-sample)"
        ))),
    }
}
