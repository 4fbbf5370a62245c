use log::info;
use pedcross::ppo::train_with;

use super::out_dir;
use crate::error::{CliError, CliResult};
use crate::output::{csv_writer, ensure_dir, Manifest};
use crate::settings::{load_config, TrainSettings};
use crate::{Cli, TrainArgs};

pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const CURVE_FILE: &str = "learning_curve.csv";

pub fn resolve(cli: &Cli, args: &TrainArgs) -> CliResult<TrainSettings> {
    let mut s: TrainSettings = load_config(cli.config.as_deref())?;
    if let Some(v) = args.variant {
        s.variant = v;
    }
    if let Some(n) = args.steps {
        s.ppo.total_env_steps = n;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(n) = args.n_envs {
        s.ppo.n_envs = n;
    }
    if let Some(n) = args.rollout_len {
        s.ppo.rollout_len = n;
    }
    if let Some(p) = args.fixed_params {
        s.fixed_params(p);
    }
    if args.no_traffic {
        s.ppo.env.traffic = false;
    }
    s.out = Some(out_dir(cli, &s.out, "train"));
    s.ppo.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

pub fn run(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let s = resolve(cli, args)?;
    let dir = s.out.clone().expect("resolved");
    ensure_dir(&dir)?;
    info!("training {} for {} steps, seed {}", s.variant, s.ppo.total_env_steps, s.seed);
    let outcome = train_with(s.variant, &s.ppo, s.seed, |t| {
        if let Some(row) = t.curve().last() {
            info!(
                "update {} steps {} return {:?} collisions {:?}",
                row.update, row.env_steps, row.mean_return, row.collision_rate
            );
        }
        Ok(())
    })?;

    let mut manifest = Manifest::new("train", s.seed, &s);
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    manifest.output(CHECKPOINT_FILE);
    let path = dir.join(CURVE_FILE);
    let mut w = csv_writer(&path)?;
    for row in &outcome.curve {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    manifest.output(CURVE_FILE);
    manifest.write(&dir)?;
    println!("{}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}
