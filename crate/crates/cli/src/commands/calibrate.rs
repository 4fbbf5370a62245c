use log::info;
use pedcross::calibration::{bolfi_run, discrepancy, simulate_participant, ObservedMetrics};
use pedcross::ParamPoint;
use serde::Serialize;

use super::{default_checkpoint, load_checkpoint, out_dir};
use crate::error::{require_file, CliError, CliResult};
use crate::output::{csv_writer, ensure_dir, write_json, Manifest};
use crate::settings::{load_config, load_table, CalibrateSettings};
use crate::{CalibrateArgs, Cli};

pub const BEST_FILE: &str = "best.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const OBSERVED_FILE: &str = "observed.csv";

#[derive(Debug, Serialize)]
pub struct BestPoint {
    pub params: pedcross::NonPolicyParams,
    pub discrepancy: f64,
    pub evaluations: usize,
    /// Present when the observed table was synthesized.
    pub truth: Option<pedcross::NonPolicyParams>,
    pub truth_discrepancy: Option<f64>,
}

pub fn resolve(cli: &Cli, args: &CalibrateArgs) -> CliResult<CalibrateSettings> {
    let mut s: CalibrateSettings = load_config(cli.config.as_deref())?;
    if let Some(p) = &args.checkpoint {
        s.checkpoint = Some(p.clone());
    }
    if let Some(p) = &args.observed {
        s.observed = Some(p.clone());
    }
    if let Some(p) = args.truth {
        s.truth = p;
    }
    if let Some(v) = args.truth_seed {
        s.truth_seed = v;
    }
    if let Some(p) = &args.table {
        s.table = Some(p.clone());
    }
    if let Some(v) = args.budget {
        s.bolfi.budget = v;
    }
    if let Some(v) = args.init_points {
        s.bolfi.init_points = v;
    }
    if let Some(v) = args.reps {
        s.bolfi.reps = v;
    }
    if let Some(v) = args.seed {
        s.bolfi.seed = v;
    }
    s.checkpoint.get_or_insert_with(default_checkpoint);
    s.out = Some(out_dir(cli, &s.out, "calibrate"));
    s.bolfi.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    s.truth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(s)
}

pub fn run(cli: &Cli, args: &CalibrateArgs) -> CliResult<()> {
    let s = resolve(cli, args)?;
    let ck_path = s.checkpoint.clone().expect("resolved");
    let checkpoint = load_checkpoint(&ck_path)?;
    let table = load_table(s.table.as_deref())?;
    let dir = s.out.clone().expect("resolved");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("calibrate", s.bolfi.seed, &s);
    manifest.input("checkpoint", &ck_path)?;

    let truth = ParamPoint::from_params(&s.truth);
    let (observed, synthetic) = match &s.observed {
        Some(path) => {
            require_file(path, "observed metrics")?;
            manifest.input("observed", path)?;
            (ObservedMetrics::load(path)?, false)
        }
        None => {
            info!("synthesizing observed table at {truth}");
            let obs = simulate_participant(&checkpoint, &truth, &table, s.bolfi.reps, s.truth_seed, &s.env)?;
            obs.save(&dir.join(OBSERVED_FILE))?;
            manifest.output(OBSERVED_FILE);
            (obs, true)
        }
    };
    let truth_discrepancy = if synthetic {
        let sim = simulate_participant(&checkpoint, &truth, &table, s.bolfi.reps, s.bolfi.simulation_seed(), &s.env)?;
        Some(discrepancy(&observed, &sim)?)
    } else {
        None
    };

    let trace_path = dir.join(TRACE_FILE);
    let mut w = csv_writer(&trace_path)?;
    let result = bolfi_run(&checkpoint, &observed, &table, &s.env, &s.bolfi, |row| {
        info!("eval {} ({}) discrepancy {:.4} best {:.4}", row.iteration, row.phase, row.discrepancy, row.best_so_far);
        w.serialize(row)?;
        Ok(())
    })?;
    w.flush().map_err(|e| CliError::io(&trace_path, e))?;
    manifest.output(TRACE_FILE);

    let best = BestPoint {
        params: result.best.to_params(),
        discrepancy: result.best_discrepancy,
        evaluations: result.trace.len(),
        truth: synthetic.then_some(s.truth),
        truth_discrepancy,
    };
    write_json(&dir.join(BEST_FILE), &best)?;
    manifest.output(BEST_FILE);
    manifest.write(&dir)?;
    println!("best {} discrepancy {:.4}", result.best, result.best_discrepancy);
    Ok(())
}
