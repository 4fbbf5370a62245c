use log::info;
use pedcross::metrics::aggregate;
use pedcross::ppo::greedy_rollout_in;
use pedcross::rng::derive_seed;
use pedcross::scenario::ScenarioTable;
use pedcross::{Checkpoint, EnvConfig, EpisodeRecord, NonPolicyParams, PedestrianEnv};

use super::{default_checkpoint, load_checkpoint, out_dir};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_episodes, write_records, write_ticks, Manifest};
use crate::settings::{load_config, load_table, SimulateSettings};
use crate::{Cli, SimulateArgs};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const TICKS_FILE: &str = "ticks.csv";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";

/// Greedy rollouts of every table row, daylight then night, `reps` times each.
///
/// Episode seeds depend on `seed`, the condition index and the repetition, so
/// two checkpoints simulated with the same arguments see identical traffic
/// and noise.
pub fn rollouts(
    checkpoint: &Checkpoint,
    table: &ScenarioTable,
    params: NonPolicyParams,
    reps: usize,
    seed: u64,
    env: &EnvConfig,
) -> CliResult<Vec<EpisodeRecord>> {
    if reps == 0 {
        return Err(CliError::Usage("reps must be >= 1".into()));
    }
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let config = EnvConfig { record_ticks: true, ..env.clone() };
    let mut env = PedestrianEnv::new(config)?;
    let specs = table.day_night_specs()?;
    let mut records = Vec::with_capacity(specs.len() * reps);
    for (ci, spec) in specs.into_iter().enumerate() {
        for rep in 0..reps {
            let episode_seed = derive_seed(seed, (ci * reps + rep) as u64);
            records.push(greedy_rollout_in(&mut env, checkpoint, spec, params, episode_seed)?);
        }
    }
    Ok(records)
}

pub fn resolve(cli: &Cli, args: &SimulateArgs) -> CliResult<SimulateSettings> {
    let mut s: SimulateSettings = load_config(cli.config.as_deref())?;
    if let Some(p) = &args.checkpoint {
        s.checkpoint = Some(p.clone());
    }
    if let Some(p) = &args.table {
        s.table = Some(p.clone());
    }
    if let Some(r) = args.reps {
        s.reps = r;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(p) = args.params {
        s.params = p;
    }
    s.checkpoint.get_or_insert_with(default_checkpoint);
    s.out = Some(out_dir(cli, &s.out, "simulate"));
    Ok(s)
}

pub fn run(cli: &Cli, args: &SimulateArgs) -> CliResult<()> {
    let s = resolve(cli, args)?;
    let ck_path = s.checkpoint.clone().expect("resolved");
    let checkpoint = load_checkpoint(&ck_path)?;
    let table = load_table(s.table.as_deref())?;
    let dir = s.out.clone().expect("resolved");
    ensure_dir(&dir)?;
    info!("simulating {} conditions x {} reps", 2 * table.len(), s.reps);
    let records = rollouts(&checkpoint, &table, s.params, s.reps, s.seed, &s.env)?;

    let mut manifest = Manifest::new("simulate", s.seed, &s);
    manifest.input("checkpoint", &ck_path)?;
    if let Some(t) = &s.table {
        manifest.input("table", t)?;
    }
    write_episodes(&dir.join(EPISODES_FILE), &records)?;
    write_ticks(&dir.join(TICKS_FILE), &records)?;
    write_records(&dir.join(RECORDS_FILE), &records)?;
    aggregate(&records).to_observed().save(&dir.join(METRICS_FILE))?;
    for f in [EPISODES_FILE, TICKS_FILE, RECORDS_FILE, METRICS_FILE] {
        manifest.output(f);
    }
    manifest.write(&dir)?;
    println!("{} episodes -> {}", records.len(), dir.display());
    Ok(())
}
