use std::collections::BTreeMap;
use std::path::Path;

use pedcross::metrics::{aggregate, format_checklist, phenomenon_checklist};
use pedcross::{ConditionKey, CrossingClass, EpisodeRecord, MetricTable};

use super::out_dir;
use crate::commands::simulate::RECORDS_FILE;
use crate::error::{CliError, CliResult};
use crate::output::{
    condition_label, csv_writer, ensure_dir, read_records, roughness_row, write_cit_distribution, write_json,
    write_roughness, write_speed_profile, write_text, Manifest,
};
use crate::settings::{default_out, load_config, ReportSettings};
use crate::{Cli, ReportArgs};

pub const CHECKLIST_JSON: &str = "checklist.json";
pub const CHECKLIST_TXT: &str = "checklist.txt";
pub const CONDITIONS_FILE: &str = "conditions.csv";
pub const CIT_FILE: &str = "cit_distribution.csv";
pub const ROUGHNESS_FILE: &str = "roughness.csv";
pub const PROFILE_DIR: &str = "speed_profiles";

pub fn resolve(cli: &Cli, args: &ReportArgs) -> CliResult<ReportSettings> {
    let mut s: ReportSettings = load_config(cli.config.as_deref())?;
    if let Some(p) = &args.input {
        s.input = Some(p.clone());
    }
    if let Some(b) = args.bin_width {
        s.bin_width = b;
    }
    if !(s.bin_width > 0.0 && s.bin_width.is_finite()) {
        return Err(CliError::Usage(format!("bin width must be > 0, got {}", s.bin_width)));
    }
    s.input.get_or_insert_with(|| default_out("simulate"));
    s.out = Some(out_dir(cli, &s.out, "report"));
    Ok(s)
}

/// Per-condition table with class counts and per-class means.
pub fn write_conditions(path: &Path, table: &MetricTable) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["v0_mps", "tau0_s", "yielding", "ehmi", "night", "n", "g", "e", "cit", "speed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in CrossingClass::ALL {
        header.push(format!("n_{c}"));
    }
    for c in [CrossingClass::AcceptedGap, CrossingClass::EarlyCross, CrossingClass::LateCross] {
        header.push(format!("cit_{c}"));
        header.push(format!("speed_{c}"));
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (k, m) in &table.conditions {
        let mut rec = vec![
            k.v0().to_string(),
            k.tau0().to_string(),
            k.yielding.to_string(),
            k.ehmi.to_string(),
            k.night.to_string(),
            m.n.to_string(),
            opt(m.g()),
            opt(m.e()),
            opt(m.cit()),
            opt(m.speed()),
        ];
        for c in CrossingClass::ALL {
            rec.push(m.count(c).to_string());
        }
        for c in [CrossingClass::AcceptedGap, CrossingClass::EarlyCross, CrossingClass::LateCross] {
            rec.push(opt(m.class_cit(c)));
            rec.push(opt(m.class_speed(c)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One speed-profile CSV per condition, crossing episodes only.
pub fn write_profiles(dir: &Path, records: &[EpisodeRecord], bin: f64) -> CliResult<Vec<String>> {
    ensure_dir(dir)?;
    let mut groups: BTreeMap<ConditionKey, (Vec<&EpisodeRecord>, Vec<usize>)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.crossed() {
            let g = groups.entry(r.key()).or_default();
            g.0.push(r);
            g.1.push(i);
        }
    }
    let mut written = Vec::new();
    for (key, (recs, ids)) in groups {
        let name = format!("{}.csv", condition_label(&key));
        write_speed_profile(&dir.join(&name), &recs, &ids, bin)?;
        written.push(format!("{PROFILE_DIR}/{name}"));
    }
    Ok(written)
}

pub fn run(cli: &Cli, args: &ReportArgs) -> CliResult<()> {
    let s = resolve(cli, args)?;
    let input = s.input.clone().expect("resolved");
    let records_path = input.join(RECORDS_FILE);
    let records = read_records(&records_path)?;
    let dir = s.out.clone().expect("resolved");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("report", 0, &s);
    manifest.input("records", &records_path)?;

    let table = aggregate(&records);
    let checks = phenomenon_checklist(&table);
    write_json(&dir.join(CHECKLIST_JSON), &checks)?;
    write_text(&dir.join(CHECKLIST_TXT), &format_checklist(&checks))?;
    write_conditions(&dir.join(CONDITIONS_FILE), &table)?;
    write_cit_distribution(&dir.join(CIT_FILE), &records)?;
    let variant = records.first().map_or("", |r| r.variant.as_str());
    write_roughness(&dir.join(ROUGHNESS_FILE), &[roughness_row(variant, &records)])?;
    for f in [CHECKLIST_JSON, CHECKLIST_TXT, CONDITIONS_FILE, CIT_FILE, ROUGHNESS_FILE] {
        manifest.output(f);
    }
    for f in write_profiles(&dir.join(PROFILE_DIR), &records, s.bin_width)? {
        manifest.output(&f);
    }
    manifest.write(&dir)?;
    print!("{}", format_checklist(&checks));
    Ok(())
}
