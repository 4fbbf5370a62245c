//! `pedcross` command-line driver.
//!
//! Subcommands: `train`, `simulate`, `calibrate`, `report`, `compare-variants`.
//! Each one resolves its settings from bundled defaults, an optional JSON
//! `--config` file and flags (in that order), writes into an output directory
//! (`--out`, else `$PEDCROSS_OUT/<command>`, else `pedcross-out/<command>`) and
//! leaves a `manifest.json` there describing the run.
//!
//! Exit codes: 0 success, 2 usage, 3 missing input, 4 numeric failure, 1 other
//! I/O errors.

pub mod commands;
pub mod error;
pub mod output;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pedcross::{NonPolicyParams, ParamPoint, Variant};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "pedcross", version, about = "Pedestrian road-crossing model: train, simulate, calibrate, report")]
pub struct Cli {
    /// JSON settings for the subcommand; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory (default: $PEDCROSS_OUT/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Run on one thread. Every command already does, so outputs are always
    /// reproducible; the flag is accepted for scripts that request it.
    #[arg(long, global = true)]
    pub single_thread: bool,

    /// Print progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO and write a checkpoint and learning curve.
    Train(TrainArgs),
    /// Greedy rollouts over the scenario table, day and night.
    Simulate(SimulateArgs),
    /// Fit the non-policy parameters to an observed metric table.
    Calibrate(CalibrateArgs),
    /// Phenomenon checklist and plot-ready tables from a simulate run.
    Report(ReportArgs),
    /// Simulate several checkpoints on matched scenarios and compare them.
    CompareVariants(CompareArgs),
}

/// Parses `a,b,c,d,e` as σ_day, σ_night, α, β, c.
pub fn parse_params(s: &str) -> Result<NonPolicyParams, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("expected 5 comma-separated values, got {}", parts.len()));
    }
    let mut a = [0.0; 5];
    for (slot, p) in a.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|e| format!("'{p}': {e}"))?;
    }
    let params = NonPolicyParams::from_array(a);
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: pedcross::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model variant: SM, S or M.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Total environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Seed for training; every random stream derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel environments per rollout.
    #[arg(long)]
    pub n_envs: Option<usize>,
    /// Steps per environment per PPO update.
    #[arg(long)]
    pub rollout_len: Option<usize>,
    /// Train with fixed parameters `σ_day,σ_night,α,β,c` instead of sampling them.
    #[arg(long, value_parser = parse_params, value_name = "PARAMS")]
    pub fixed_params: Option<NonPolicyParams>,
    /// Train on an empty road.
    #[arg(long)]
    pub no_traffic: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Policy checkpoint (default: $PEDCROSS_OUT/train/policy.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Scenario table JSON (default: the bundled table).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Episodes per condition.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed for episode seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameters `σ_day,σ_night,α,β,c`.
    #[arg(long, value_parser = parse_params, value_name = "PARAMS")]
    pub params: Option<NonPolicyParams>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Policy checkpoint (default: $PEDCROSS_OUT/train/policy.ckpt).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Observed metric table CSV. Without it a synthetic table is generated at `--truth`.
    #[arg(long)]
    pub observed: Option<PathBuf>,
    /// Parameters for the synthetic observed table.
    #[arg(long, value_parser = parse_params, value_name = "PARAMS")]
    pub truth: Option<NonPolicyParams>,
    /// Seed for the synthetic observed table.
    #[arg(long)]
    pub truth_seed: Option<u64>,
    /// Scenario table JSON (default: the bundled table).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Total discrepancy evaluations.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Evaluations in the initial space-filling design.
    #[arg(long)]
    pub init_points: Option<usize>,
    /// Episodes per condition per evaluation.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed for the optimiser and simulations.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a simulate run (default: $PEDCROSS_OUT/simulate).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Position bin width for speed profiles, metres.
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Checkpoints to compare (repeat the flag); the first is the reference.
    #[arg(long = "checkpoint", required = false)]
    pub checkpoints: Vec<PathBuf>,
    /// Scenario table JSON (default: the bundled table).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Episodes per condition.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed for episode seeds, shared by all checkpoints.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameters `σ_day,σ_night,α,β,c`.
    #[arg(long, value_parser = parse_params, value_name = "PARAMS")]
    pub params: Option<NonPolicyParams>,
    /// Position bin width for speed profiles, metres.
    #[arg(long)]
    pub bin_width: Option<f64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    execute(&cli)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => commands::train::run(cli, a),
        Command::Simulate(a) => commands::simulate::run(cli, a),
        Command::Calibrate(a) => commands::calibrate::run(cli, a),
        Command::Report(a) => commands::report::run(cli, a),
        Command::CompareVariants(a) => commands::compare::run(cli, a),
    }
}

/// Point helper used by several commands.
pub fn point(p: &NonPolicyParams) -> ParamPoint {
    ParamPoint::from_params(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_parsing() {
        let p = parse_params("1,2,3,4,5").unwrap();
        assert_eq!(p.to_array(), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(parse_params("1,2,3").is_err());
        assert!(parse_params("1,2,3,4,x").is_err());
        assert!(parse_params("1,2,30,4,5").is_err());
    }

    #[test]
    fn bad_variant_is_usage_error() {
        let err = run(["pedcross", "train", "--variant", "X"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
