//! File writers shared by the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pedcross::metrics::{avg_speed, cit, classify_crossing, roughness};
use pedcross::{ConditionKey, EpisodeRecord};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{require_file, CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Tool version, extended with `PEDCROSS_GIT_DESCRIBE` when set at build time.
pub fn version() -> String {
    match option_env!("PEDCROSS_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("{}-{d}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Debug, Serialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command. Contains no timestamps so reruns
/// produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, S: Serialize> {
    pub tool: &'static str,
    pub version: String,
    pub command: &'static str,
    pub seed: u64,
    pub single_thread: bool,
    pub settings: &'a S,
    pub inputs: BTreeMap<String, InputRef>,
    pub outputs: Vec<String>,
}

impl<'a, S: Serialize> Manifest<'a, S> {
    pub fn new(command: &'static str, seed: u64, settings: &'a S) -> Self {
        Self {
            tool: "pedcross",
            version: version(),
            command,
            seed,
            single_thread: true,
            settings,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(name.to_string(), InputRef { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn write(&mut self, dir: &Path) -> CliResult<()> {
        self.outputs.sort();
        write_json(&dir.join("manifest.json"), self)
    }
}

#[derive(Debug, Serialize)]
struct EpisodeRow {
    episode: usize,
    v0_mps: f64,
    tau0_s: f64,
    yielding: bool,
    ehmi: bool,
    night: bool,
    variant: &'static str,
    seed: u64,
    outcome: &'static str,
    class: &'static str,
    decisions: u32,
    duration_s: f64,
    movement_onset_s: Option<f64>,
    cit_s: Option<f64>,
    avg_speed_mps: Option<f64>,
    roughness_mps: Option<f64>,
    r_arrival: f64,
    r_collision: f64,
    r_effort: f64,
    r_looming: f64,
    r_clamp: f64,
    r_total: f64,
}

fn outcome_str(r: &EpisodeRecord) -> &'static str {
    match r.outcome {
        pedcross::TerminalState::Crossed => "crossed",
        pedcross::TerminalState::Collision => "collision",
        pedcross::TerminalState::Timeout => "timeout",
        pedcross::TerminalState::Running => "running",
    }
}

/// One summary row per episode.
pub fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for (i, r) in records.iter().enumerate() {
        w.serialize(EpisodeRow {
            episode: i,
            v0_mps: r.spec.v0,
            tau0_s: r.spec.tau0,
            yielding: r.spec.yielding,
            ehmi: r.spec.ehmi,
            night: r.spec.night,
            variant: r.variant.as_str(),
            seed: r.seed,
            outcome: outcome_str(r),
            class: classify_crossing(r).as_str(),
            decisions: r.decisions,
            duration_s: r.ticks.last().map_or(0.0, |t| t.t),
            movement_onset_s: r.movement_onset_time(),
            cit_s: cit(r),
            avg_speed_mps: avg_speed(r),
            roughness_mps: roughness(r),
            r_arrival: r.totals.arrival,
            r_collision: r.totals.collision,
            r_effort: r.totals.effort,
            r_looming: r.totals.looming,
            r_clamp: r.totals.clamp_adjustment,
            r_total: r.totals.total(),
        })?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Every tick of every episode; the `episode` column indexes `episodes.csv`.
pub fn write_ticks(path: &Path, records: &[EpisodeRecord]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for (i, r) in records.iter().enumerate() {
        for row in &r.ticks {
            let mut row = *row;
            row.episode = i as u64;
            w.serialize(row)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Full records, one JSON object per line; `report` reads these back.
pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> CliResult<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_records(path: &Path) -> CliResult<Vec<EpisodeRecord>> {
    require_file(path, "episode records")?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// File-name stem for a condition, e.g. `v11.176_t3_yield_ehmi_night`.
pub fn condition_label(key: &ConditionKey) -> String {
    let mut s = format!("v{}_t{}", key.v0(), key.tau0());
    if key.yielding {
        s.push_str("_yield");
    }
    if key.ehmi {
        s.push_str("_ehmi");
    }
    if key.night {
        s.push_str("_night");
    }
    s
}

/// Mean walking speed of each episode inside position bins of width `bin`
/// over the crossing distance.
///
/// Returns the bin lower edges and one speed per (bin, episode); bins an
/// episode never visited are `None`.
pub fn speed_profile(records: &[&EpisodeRecord], bin: f64) -> (Vec<f64>, Vec<Vec<Option<f64>>>) {
    let length = records
        .iter()
        .map(|r| r.spec.geometry.crossing_distance())
        .fold(0.0, f64::max);
    let n_bins = ((length / bin).ceil() as usize).max(1);
    let edges: Vec<f64> = (0..n_bins).map(|i| i as f64 * bin).collect();
    let mut table = vec![vec![None; records.len()]; n_bins];
    for (j, r) in records.iter().enumerate() {
        let mut sums = vec![(0.0, 0usize); n_bins];
        for t in &r.ticks {
            if t.ped_position <= 0.0 || t.ped_position > length {
                continue;
            }
            let b = (((t.ped_position / bin).ceil() as usize).max(1) - 1).min(n_bins - 1);
            sums[b].0 += t.ped_speed;
            sums[b].1 += 1;
        }
        for (b, (s, n)) in sums.into_iter().enumerate() {
            if n > 0 {
                table[b][j] = Some(s / n as f64);
            }
        }
    }
    (edges, table)
}

/// Writes a speed profile with columns `position_bin`, `mean_speed`, `n`,
/// then one column per episode.
pub fn write_speed_profile(path: &Path, records: &[&EpisodeRecord], ids: &[usize], bin: f64) -> CliResult<()> {
    let (edges, table) = speed_profile(records, bin);
    let mut w = csv_writer(path)?;
    let mut header = vec!["position_bin".to_string(), "mean_speed".to_string(), "n".to_string()];
    header.extend(ids.iter().map(|i| format!("episode_{i}")));
    w.write_record(&header)?;
    for (edge, row) in edges.iter().zip(&table) {
        let vals: Vec<f64> = row.iter().flatten().copied().collect();
        let mean = if vals.is_empty() { String::new() } else { (vals.iter().sum::<f64>() / vals.len() as f64).to_string() };
        let mut rec = vec![(edge + 0.5 * bin).to_string(), mean, vals.len().to_string()];
        rec.extend(row.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
struct CitRow {
    v0_mps: f64,
    tau0_s: f64,
    yielding: bool,
    ehmi: bool,
    night: bool,
    class: &'static str,
    cit_s: f64,
}

/// Long-format crossing initiation times, one row per crossing episode.
pub fn write_cit_distribution(path: &Path, records: &[EpisodeRecord]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for r in records {
        if let Some(c) = cit(r) {
            let class = classify_crossing(r);
            if !class.counts_for_means() {
                continue;
            }
            w.serialize(CitRow {
                v0_mps: r.spec.v0,
                tau0_s: r.spec.tau0,
                yielding: r.spec.yielding,
                ehmi: r.spec.ehmi,
                night: r.spec.night,
                class: class.as_str(),
                cit_s: c,
            })?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct RoughnessRow {
    pub label: String,
    pub variant: &'static str,
    pub episodes: usize,
    pub mean_roughness_mps: Option<f64>,
    pub mean_speed_mps: Option<f64>,
    pub crossed_rate: f64,
    pub collision_rate: f64,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn roughness_row(label: &str, records: &[EpisodeRecord]) -> RoughnessRow {
    let rough: Vec<f64> = records.iter().filter_map(roughness).collect();
    let speed: Vec<f64> = records.iter().filter_map(avg_speed).collect();
    let n = records.len().max(1) as f64;
    let count = |s: pedcross::TerminalState| records.iter().filter(|r| r.outcome == s).count() as f64 / n;
    RoughnessRow {
        label: label.to_string(),
        variant: records.first().map_or("", |r| r.variant.as_str()),
        episodes: records.len(),
        mean_roughness_mps: mean(&rough),
        mean_speed_mps: mean(&speed),
        crossed_rate: count(pedcross::TerminalState::Crossed),
        collision_rate: count(pedcross::TerminalState::Collision),
    }
}

pub fn write_roughness(path: &Path, rows: &[RoughnessRow]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
