//! Likelihood-free fitting of the non-policy parameters.
//!
//! A participant is summarized by per-condition gap acceptance, early-crossing
//! rate, mean CIT and mean crossing speed. The discrepancy between two such
//! tables is the log of the normalized absolute differences; a Gaussian-process
//! surrogate of the discrepancy over the parameter box guides where to simulate next.

mod bolfi;
mod gp;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bolfi::{bolfi_minimize, bolfi_run, halton, BolfiConfig, BolfiResult, TraceRow};
pub use gp::{GpHyper, GpSurrogate};

use crate::env::{EnvConfig, NonPolicyParams};
use crate::error::{Error, Result};
use crate::metrics::{ConditionKey, MetricTable};
use crate::ppo::{greedy_rollout_in, Checkpoint};
use crate::rng::derive_seed;
use crate::scenario::ScenarioTable;

/// Floor applied to the summed discrepancy before taking the log.
pub const DISCREPANCY_FLOOR: f64 = 1e-9;

/// One condition of an observed (or simulated) metric summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRow {
    pub key: ConditionKey,
    pub g: Option<f64>,
    pub e: Option<f64>,
    pub cit: Option<f64>,
    pub speed: Option<f64>,
    pub n: usize,
    pub n_ny: usize,
    pub n_y: usize,
}

/// CSV form of [`ObservedRow`]; empty cells are absent values.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CsvRow {
    v0_mps: f64,
    tau0_s: f64,
    yielding: bool,
    ehmi: bool,
    night: bool,
    g: Option<f64>,
    e: Option<f64>,
    cit: Option<f64>,
    speed: Option<f64>,
    n: usize,
    n_ny: usize,
    n_y: usize,
}

pub const OBSERVED_HEADER: [&str; 12] = [
    "v0_mps", "tau0_s", "yielding", "ehmi", "night", "g", "e", "cit", "speed", "n", "n_ny", "n_y",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservedMetrics {
    pub rows: Vec<ObservedRow>,
}

impl ObservedMetrics {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.key) {
                return Err(Error::invalid(format!("duplicate condition {}", r.key)));
            }
            for (name, rate) in [("g", r.g), ("e", r.e)] {
                if let Some(x) = rate {
                    if !(0.0..=1.0).contains(&x) {
                        return Err(Error::invalid(format!("{name}={x} outside [0, 1] at {}", r.key)));
                    }
                }
            }
            for (name, v) in [("cit", r.cit), ("speed", r.speed)] {
                if v.is_some_and(|x| !x.is_finite()) {
                    return Err(Error::invalid(format!("{name} is not finite at {}", r.key)));
                }
            }
        }
        Ok(())
    }

    pub fn by_key(&self) -> BTreeMap<ConditionKey, &ObservedRow> {
        self.rows.iter().map(|r| (r.key, r)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(CsvRow {
                v0_mps: r.key.v0(),
                tau0_s: r.key.tau0(),
                yielding: r.key.yielding,
                ehmi: r.key.ehmi,
                night: r.key.night,
                g: r.g,
                e: r.e,
                cit: r.cit,
                speed: r.speed,
                n: r.n,
                n_ny: r.n_ny,
                n_y: r.n_y,
            })?;
        }
        if self.rows.is_empty() {
            w.write_record(OBSERVED_HEADER)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let c: CsvRow = rec?;
            rows.push(ObservedRow {
                key: ConditionKey::new(c.v0_mps, c.tau0_s, c.yielding, c.ehmi, c.night),
                g: c.g,
                e: c.e,
                cit: c.cit,
                speed: c.speed,
                n: c.n,
                n_ny: c.n_ny,
                n_y: c.n_y,
            });
        }
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// The five calibrated parameters: σ_day, σ_night, α, β, c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint(pub [f64; 5]);

impl ParamPoint {
    pub const NAMES: [&'static str; 5] = [
        "sigma_v_day",
        "sigma_v_night",
        "time_pressure_gain",
        "effort_weight",
        "looming_weight",
    ];

    pub fn from_params(p: &NonPolicyParams) -> Self {
        Self(p.to_array())
    }

    pub fn to_params(&self) -> NonPolicyParams {
        NonPolicyParams::from_array(self.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.to_params().validate()
    }

    /// Maps a point of the unit cube onto the parameter box.
    pub fn from_unit(u: &[f64]) -> Self {
        let mut x = [0.0; 5];
        for (i, (lo, hi)) in NonPolicyParams::BOUNDS.iter().enumerate() {
            x[i] = lo + u[i].clamp(0.0, 1.0) * (hi - lo);
        }
        Self(x)
    }

    pub fn to_unit(&self) -> [f64; 5] {
        let mut u = [0.0; 5];
        for (i, (lo, hi)) in NonPolicyParams::BOUNDS.iter().enumerate() {
            u[i] = (self.0[i] - lo) / (hi - lo);
        }
        u
    }
}

impl fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Self::NAMES
            .iter()
            .zip(self.0)
            .map(|(n, v)| format!("{n}={v:.4}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Per-condition count weights n_i / mean(n); all ones when counts are zero.
fn count_weights(table: &ObservedMetrics) -> BTreeMap<ConditionKey, f64> {
    let mean_n = table.rows.iter().map(|r| r.n as f64).sum::<f64>() / table.rows.len().max(1) as f64;
    table
        .rows
        .iter()
        .map(|r| (r.key, if mean_n > 0.0 { r.n as f64 / mean_n } else { 1.0 }))
        .collect()
}

/// log(Σ|Δg|/g_max + Σ|Δe|/e_max + Σ|ΔCIT|/CIT_max + Σ|Δv|/v_max), floored.
///
/// Sums run over conditions where both tables define the metric, weighted by
/// relative trial counts. Maxima are taken over both tables so the value is
/// symmetric in its arguments; a zero maximum falls back to 1.
pub fn discrepancy(observed: &ObservedMetrics, simulated: &ObservedMetrics) -> Result<f64> {
    let a = observed.by_key();
    let b = simulated.by_key();
    if a.len() != observed.rows.len() || b.len() != simulated.rows.len() {
        return Err(Error::ConditionMismatch("duplicate condition keys".into()));
    }
    if !a.keys().eq(b.keys()) {
        let missing: Vec<String> = a
            .keys()
            .filter(|k| !b.contains_key(k))
            .chain(b.keys().filter(|k| !a.contains_key(k)))
            .map(|k| k.to_string())
            .collect();
        return Err(Error::ConditionMismatch(format!(
            "condition sets differ: {}",
            missing.join("; ")
        )));
    }

    type Pick = fn(&ObservedRow) -> Option<f64>;
    let metrics: [Pick; 4] = [|r| r.g, |r| r.e, |r| r.cit, |r| r.speed];
    let wa = count_weights(observed);
    let wb = count_weights(simulated);

    let mut total = 0.0;
    for pick in metrics {
        let max = a
            .values()
            .chain(b.values())
            .filter_map(|r| pick(r))
            .map(f64::abs)
            .fold(0.0, f64::max);
        let divisor = if max > 0.0 { max } else { 1.0 };
        for (key, ra) in &a {
            let rb = b[key];
            if let (Some(x), Some(y)) = (pick(ra), pick(rb)) {
                let w = 0.5 * (wa[key] + wb[key]);
                total += w * (x - y).abs() / divisor;
            }
        }
    }
    Ok(total.max(DISCREPANCY_FLOOR).ln())
}

/// Greedy-policy behavior of a simulated participant at `point`.
///
/// Every scenario-table row is run `reps` times in daylight and at night. Episode seeds
/// depend only on `seed`, the condition and the repetition, so every point is
/// evaluated against the same noise draws.
pub fn simulate_participant(
    checkpoint: &Checkpoint,
    point: &ParamPoint,
    table: &ScenarioTable,
    reps: usize,
    seed: u64,
    env_config: &EnvConfig,
) -> Result<ObservedMetrics> {
    Ok(simulate_metric_table(checkpoint, point, table, reps, seed, env_config)?.to_observed())
}

pub fn simulate_metric_table(
    checkpoint: &Checkpoint,
    point: &ParamPoint,
    table: &ScenarioTable,
    reps: usize,
    seed: u64,
    env_config: &EnvConfig,
) -> Result<MetricTable> {
    if reps == 0 {
        return Err(Error::invalid("reps must be >= 1"));
    }
    point.validate()?;
    let params = point.to_params();
    let config = EnvConfig { record_ticks: true, ..env_config.clone() };
    let mut env = crate::env::PedestrianEnv::new(config)?;
    let mut metrics = MetricTable::default();
    for (ci, spec) in table.day_night_specs()?.into_iter().enumerate() {
        metrics.ensure(ConditionKey::from_spec(&spec));
        for rep in 0..reps {
            let episode_seed = derive_seed(seed, (ci * reps + rep) as u64);
            let record = greedy_rollout_in(&mut env, checkpoint, spec, params, episode_seed)?;
            metrics.add(&record);
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn row(v0: f64, tau: f64, yielding: bool, g: Option<f64>, e: Option<f64>, cit: Option<f64>, speed: Option<f64>) -> ObservedRow {
        ObservedRow {
            key: ConditionKey::new(v0, tau, yielding, false, false),
            g,
            e,
            cit,
            speed,
            n: 20,
            n_ny: if yielding { 0 } else { 20 },
            n_y: if yielding { 20 } else { 0 },
        }
    }

    fn table() -> ObservedMetrics {
        ObservedMetrics {
            rows: vec![
                row(11.176, 3.0, false, Some(0.4), None, Some(1.2), Some(1.5)),
                row(11.176, 5.0, false, Some(0.8), None, Some(1.9), Some(1.3)),
                row(13.4112, 3.0, true, None, Some(0.3), Some(4.0), None),
            ],
        }
    }

    #[test]
    fn identical_tables_hit_the_floor() {
        let d = discrepancy(&table(), &table()).unwrap();
        assert!((d - 1e-9f64.ln()).abs() < 1e-12);
        assert!((d + 20.7233).abs() < 1e-4);
    }

    #[test]
    fn single_condition_hand_value() {
        let obs = ObservedMetrics { rows: vec![row(11.176, 3.0, false, Some(0.7), None, Some(1.0), Some(1.4))] };
        let sim = ObservedMetrics { rows: vec![row(11.176, 3.0, false, Some(0.5), None, Some(1.0), Some(1.4))] };
        let d = discrepancy(&obs, &sim).unwrap();
        assert!((d - (0.2f64 / 0.7).ln()).abs() < 1e-12);
        assert!((d + 1.2528).abs() < 1e-4);
    }

    #[test]
    fn mismatched_conditions_rejected() {
        let mut other = table();
        other.rows.pop();
        assert!(matches!(discrepancy(&table(), &other), Err(Error::ConditionMismatch(_))));
    }

    #[test]
    fn zero_maxima_fall_back_to_one() {
        let obs = ObservedMetrics { rows: vec![row(11.176, 3.0, false, Some(0.0), None, None, None)] };
        let d = discrepancy(&obs, &obs).unwrap();
        assert!(d.is_finite());
    }

    #[test]
    fn csv_round_trip_with_absent_cells() {
        let mut buf = Vec::new();
        table().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&OBSERVED_HEADER.join(",")));
        assert!(text.contains(",,"));
        let back = ObservedMetrics::read_csv(&buf[..]).unwrap();
        assert_eq!(back, table());
    }

    #[test]
    fn csv_rejects_bad_rates() {
        let text = format!("{}\n11.176,3,false,false,false,1.5,,,,10,10,0\n", OBSERVED_HEADER.join(","));
        assert!(ObservedMetrics::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn unit_cube_mapping() {
        let p = ParamPoint::from_unit(&[0.5, 0.0, 1.0, 0.25, 0.1]);
        assert_eq!(p.0, [5.0, 0.0, 4.0, 2.5, 1.0]);
        assert_eq!(p.to_unit(), [0.5, 0.0, 1.0, 0.25, 0.1]);
    }

    proptest! {
        #[test]
        fn discrepancy_is_symmetric(g in proptest::collection::vec(0.0f64..=1.0, 4),
                                    cit in proptest::collection::vec(-2.0f64..8.0, 4),
                                    n in proptest::collection::vec(1usize..50, 4)) {
            let mut a = table();
            let mut b = table();
            a.rows[0].g = Some(g[0]);
            b.rows[0].g = Some(g[1]);
            a.rows[1].cit = Some(cit[0]);
            b.rows[1].cit = Some(cit[1]);
            b.rows[2].e = Some(g[2]);
            a.rows[0].n = n[0];
            b.rows[1].n = n[1];
            b.rows[2].speed = Some(g[3] + 0.5);
            let ab = discrepancy(&a, &b).unwrap();
            let ba = discrepancy(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= DISCREPANCY_FLOOR.ln() - 1e-12);
        }

        #[test]
        fn discrepancy_is_unit_free(scale in 0.1f64..10.0) {
            // rescaling CIT in both tables leaves the value unchanged
            let a = table();
            let mut b = table();
            b.rows[0].cit = Some(2.5);
            let base = discrepancy(&a, &b).unwrap();
            let rescale = |t: &ObservedMetrics| ObservedMetrics {
                rows: t.rows.iter().map(|r| ObservedRow { cit: r.cit.map(|c| c * scale), ..*r }).collect(),
            };
            let scaled = discrepancy(&rescale(&a), &rescale(&b)).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }
}
