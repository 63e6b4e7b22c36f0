//! `asep`: command-line front end for the open ASEP laboratory.
//!
//! Every flag can also be set through an environment variable named
//! `ASEP_<FLAG>` (upper case, dashes as underscores), e.g. `ASEP_SEED`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 malformed
//! config, 4 parameters outside the supported domain (e.g. `a*b >= 1`),
//! 5 an experiment ran but its verdict failed.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use asep_core::{AsepError, NumericMode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_251_018;

#[derive(Debug, Parser)]
#[command(name = "asep", version, about = "Stationary measures of open ASEP in the fan region")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// TOML file with [params], [profile] and [experiment] sections.
    #[arg(long, global = true, env = "ASEP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory for CSV/JSON/data outputs; without it the main table goes to stdout.
    #[arg(long, global = true, env = "ASEP_OUT")]
    pub out: Option<PathBuf>,
    /// Random seed.
    #[arg(long, global = true, env = "ASEP_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ASEP_THREADS")]
    pub threads: Option<usize>,
    /// Arithmetic for computations with an exact route.
    #[arg(long, global = true, env = "ASEP_MODE", value_enum, default_value_t = Mode::Float)]
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rational,
    Float,
}

impl Mode {
    pub fn numeric(self) -> NumericMode {
        match self {
            Mode::Rational => NumericMode::ExactRational,
            Mode::Float => NumericMode::float(),
        }
    }
}

/// Overrides for the `[params]` section; unset values fall back to the
/// config file, then to 0.
#[derive(Debug, Clone, Args, Serialize, Default)]
pub struct ParamArgs {
    #[arg(long, env = "ASEP_A", allow_hyphen_values = true)]
    pub a: Option<f64>,
    #[arg(long, env = "ASEP_B", allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, env = "ASEP_C", allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[arg(long, env = "ASEP_D", allow_hyphen_values = true)]
    pub d: Option<f64>,
    #[arg(long, env = "ASEP_Q")]
    pub q: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stationary probabilities of all 2^N configurations.
    Stationary {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        args: commands::StationaryArgs,
    },
    /// First-layer marginal of the two-layer measure against the stationary law.
    TwoLayer {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        args: commands::TwoLayerArgs,
    },
    /// Exact two-layer samples, uniform bridges, or a Gillespie run.
    Sample {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        args: commands::SampleArgs,
    },
    /// Randomized exact checks of the bridge inequalities.
    Bridges {
        #[command(flatten)]
        args: commands::BridgesArgs,
    },
    /// Rate function of line profiles or of the config profile.
    RateFn {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        args: commands::RateArgs,
    },
    /// Exact endpoint-height log-probabilities against the rate function.
    LdpCheck {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        args: commands::LdpArgs,
    },
    /// Named experiment plan from the config's [experiment] section.
    Experiments {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        args: commands::ExperimentArgs,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<AsepError> for Failure {
    fn from(e: AsepError) -> Self {
        let code = match e {
            AsepError::Config(_) | AsepError::InvalidConfig(_) => 3,
            AsepError::OutsideFan { .. } | AsepError::Domain(_) => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("asep: {}", text.lines().next().unwrap_or("usage error"));
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("asep: error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
