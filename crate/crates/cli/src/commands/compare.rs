use log::info;
use pedcross::metrics::{aggregate, effect_sizes};
use serde::Serialize;

use super::{load_checkpoint, out_dir};
use crate::commands::report::write_profiles;
use crate::commands::simulate::rollouts;
use crate::error::{CliError, CliResult};
use crate::output::{csv_writer, ensure_dir, roughness_row, write_roughness, Manifest};
use crate::settings::{load_config, load_table, CompareSettings};
use crate::{Cli, CompareArgs};

pub const ROUGHNESS_FILE: &str = "roughness.csv";
pub const EFFECT_FILE: &str = "effect_sizes.csv";

#[derive(Serialize)]
struct EffectRow<'a> {
    variant: &'a str,
    reference: &'a str,
    v0_mps: f64,
    tau0_s: f64,
    yielding: bool,
    ehmi: bool,
    night: bool,
    h_g: Option<f64>,
    h_e: Option<f64>,
    d_cit: Option<f64>,
    d_speed: Option<f64>,
}

pub fn resolve(cli: &Cli, args: &CompareArgs) -> CliResult<CompareSettings> {
    let mut s: CompareSettings = load_config(cli.config.as_deref())?;
    if !args.checkpoints.is_empty() {
        s.checkpoints = args.checkpoints.clone();
    }
    if let Some(p) = &args.table {
        s.table = Some(p.clone());
    }
    if let Some(r) = args.reps {
        s.reps = r;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    if let Some(p) = args.params {
        s.params = p;
    }
    if let Some(b) = args.bin_width {
        s.bin_width = b;
    }
    if s.checkpoints.len() < 2 {
        return Err(CliError::Usage("compare-variants needs at least two --checkpoint values".into()));
    }
    if !(s.bin_width > 0.0 && s.bin_width.is_finite()) {
        return Err(CliError::Usage(format!("bin width must be > 0, got {}", s.bin_width)));
    }
    s.out = Some(out_dir(cli, &s.out, "compare-variants"));
    Ok(s)
}

pub fn run(cli: &Cli, args: &CompareArgs) -> CliResult<()> {
    let s = resolve(cli, args)?;
    let checkpoints = s
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<CliResult<Vec<_>>>()?;
    let table = load_table(s.table.as_deref())?;
    let dir = s.out.clone().expect("resolved");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("compare-variants", s.seed, &s);

    let mut rough = Vec::new();
    let mut tables = Vec::new();
    for (i, (path, ck)) in s.checkpoints.iter().zip(&checkpoints).enumerate() {
        manifest.input(&format!("checkpoint_{i}"), path)?;
        info!("simulating checkpoint {} ({})", i, ck.variant);
        let records = rollouts(ck, &table, s.params, s.reps, s.seed, &s.env)?;
        let label = format!("{i}_{}", ck.variant);
        rough.push(roughness_row(&label, &records));
        for f in write_profiles(&dir.join(format!("speed_profiles_{label}")), &records, s.bin_width)? {
            manifest.output(&format!("speed_profiles_{label}/{}", f.trim_start_matches("speed_profiles/")));
        }
        tables.push((label, aggregate(&records)));
    }
    write_roughness(&dir.join(ROUGHNESS_FILE), &rough)?;
    manifest.output(ROUGHNESS_FILE);

    let path = dir.join(EFFECT_FILE);
    let mut w = csv_writer(&path)?;
    let (ref_label, reference) = &tables[0];
    for (label, other) in &tables[1..] {
        for r in effect_sizes(other, reference) {
            w.serialize(EffectRow {
                variant: label,
                reference: ref_label,
                v0_mps: r.v0,
                tau0_s: r.tau0,
                yielding: r.yielding,
                ehmi: r.ehmi,
                night: r.night,
                h_g: r.h_g,
                h_e: r.h_e,
                d_cit: r.d_cit,
                d_speed: r.d_speed,
            })?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    manifest.output(EFFECT_FILE);
    manifest.write(&dir)?;
    for r in &rough {
        println!("{}: roughness {:?} m/s per tick over {} episodes", r.label, r.mean_roughness_mps, r.episodes);
    }
    Ok(())
}
