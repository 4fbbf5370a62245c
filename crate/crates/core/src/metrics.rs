//! Behavioral metrics: crossing classification, crossing initiation time (CIT),
//! walking speed, per-condition aggregation, effect sizes and the directional
//! phenomenon checklist.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{ObservedMetrics, ObservedRow};
use crate::env::{NonPolicyParams, RewardBreakdown, TerminalState, TickRow, Variant};
use crate::scenario::ScenarioSpec;

/// Cumulative displacement that marks movement onset, m.
pub const MOVEMENT_ONSET_THRESHOLD: f64 = 0.05;

/// A yielding vehicle still above this fraction of its initial speed at movement
/// onset makes the crossing "early".
pub const EARLY_SPEED_FRACTION: f64 = 2.0 / 3.0;

/// Everything logged for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub spec: ScenarioSpec,
    /// Parameters in effect (after variant masking).
    pub params: NonPolicyParams,
    pub variant: Variant,
    pub seed: u64,
    pub outcome: TerminalState,
    pub totals: RewardBreakdown,
    pub decisions: u32,
    pub ticks: Vec<TickRow>,
}

/// First time the pedestrian position reaches `level`, linearly interpolated
/// between ticks. The walk starts at position 0 at t = 0.
fn first_time_at(ticks: &[TickRow], level: f64) -> Option<f64> {
    let (mut t_prev, mut p_prev) = (0.0, 0.0);
    if p_prev >= level {
        return Some(0.0);
    }
    for row in ticks {
        if row.ped_position >= level {
            let dp = row.ped_position - p_prev;
            let frac = if dp > 0.0 { (level - p_prev) / dp } else { 1.0 };
            return Some(t_prev + frac.clamp(0.0, 1.0) * (row.t - t_prev));
        }
        t_prev = row.t;
        p_prev = row.ped_position;
    }
    None
}

impl EpisodeRecord {
    pub fn key(&self) -> ConditionKey {
        ConditionKey::from_spec(&self.spec)
    }

    pub fn crossed(&self) -> bool {
        self.outcome == TerminalState::Crossed
    }

    pub fn gap_onset_time(&self) -> f64 {
        self.spec.gap_onset_time()
    }

    /// Time at which cumulative displacement first exceeds the onset threshold.
    pub fn movement_onset_time(&self) -> Option<f64> {
        first_time_at(&self.ticks, MOVEMENT_ONSET_THRESHOLD)
    }

    pub fn road_entry_time(&self) -> Option<f64> {
        first_time_at(&self.ticks, self.spec.geometry.ped_start_offset)
    }

    /// Time at which the pedestrian is clear of the vehicle lane.
    pub fn lane_clear_time(&self) -> Option<f64> {
        first_time_at(&self.ticks, self.spec.geometry.lane_clear_position())
    }

    /// Arrival at the far curb.
    pub fn exit_time(&self) -> Option<f64> {
        first_time_at(&self.ticks, self.spec.geometry.crossing_distance())
    }

    /// Vehicle 2 speed at the first tick at or after movement onset.
    pub fn vehicle2_speed_at_onset(&self) -> Option<f64> {
        let onset = self.movement_onset_time()?;
        self.ticks
            .iter()
            .find(|r| r.t >= onset - 1e-12)
            .map(|r| r.v2_speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrossingClass {
    AcceptedGap,
    RejectedGap,
    EarlyCross,
    LateCross,
    NoCross,
}

impl CrossingClass {
    pub const ALL: [CrossingClass; 5] = [
        CrossingClass::AcceptedGap,
        CrossingClass::RejectedGap,
        CrossingClass::EarlyCross,
        CrossingClass::LateCross,
        CrossingClass::NoCross,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CrossingClass::AcceptedGap => "accepted_gap",
            CrossingClass::RejectedGap => "rejected_gap",
            CrossingClass::EarlyCross => "early_cross",
            CrossingClass::LateCross => "late_cross",
            CrossingClass::NoCross => "no_cross",
        }
    }

    /// Crossings that enter the condition-level CIT and speed means.
    pub fn counts_for_means(self) -> bool {
        matches!(
            self,
            CrossingClass::AcceptedGap | CrossingClass::EarlyCross | CrossingClass::LateCross
        )
    }
}

impl fmt::Display for CrossingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifies a completed episode. Collisions and timeouts are `NoCross`.
pub fn classify_crossing(record: &EpisodeRecord) -> CrossingClass {
    if !record.crossed() {
        return CrossingClass::NoCross;
    }
    if record.spec.yielding {
        match record.vehicle2_speed_at_onset() {
            Some(v) if v > EARLY_SPEED_FRACTION * record.spec.v0 => CrossingClass::EarlyCross,
            _ => CrossingClass::LateCross,
        }
    } else {
        match record.lane_clear_time() {
            Some(t) if t < record.spec.second_vehicle_arrival() => CrossingClass::AcceptedGap,
            _ => CrossingClass::RejectedGap,
        }
    }
}

/// Movement onset minus gap onset; absent when no crossing happened.
pub fn cit(record: &EpisodeRecord) -> Option<f64> {
    if !record.crossed() {
        return None;
    }
    Some(record.movement_onset_time()? - record.gap_onset_time())
}

/// Full crossing distance over the time from movement onset to far-curb arrival.
pub fn avg_speed(record: &EpisodeRecord) -> Option<f64> {
    if !record.crossed() {
        return None;
    }
    let duration = record.exit_time()? - record.movement_onset_time()?;
    (duration > 0.0).then(|| record.spec.geometry.crossing_distance() / duration)
}

/// Mean absolute speed change per tick, starting from rest.
pub fn roughness(record: &EpisodeRecord) -> Option<f64> {
    if record.ticks.is_empty() {
        return None;
    }
    let mut prev = 0.0;
    let mut total = 0.0;
    for row in &record.ticks {
        total += (row.ped_speed - prev).abs();
        prev = row.ped_speed;
    }
    Some(total / record.ticks.len() as f64)
}

/// Trial condition. Speeds and gaps are stored in thousandths so keys order and
/// compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionKey {
    v0_milli: i64,
    tau0_milli: i64,
    pub yielding: bool,
    pub ehmi: bool,
    pub night: bool,
}

impl ConditionKey {
    pub fn new(v0: f64, tau0: f64, yielding: bool, ehmi: bool, night: bool) -> Self {
        Self {
            v0_milli: (v0 * 1000.0).round() as i64,
            tau0_milli: (tau0 * 1000.0).round() as i64,
            yielding,
            ehmi,
            night,
        }
    }

    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        Self::new(spec.v0, spec.tau0, spec.yielding, spec.ehmi, spec.night)
    }

    pub fn v0(&self) -> f64 {
        self.v0_milli as f64 / 1000.0
    }

    pub fn tau0(&self) -> f64 {
        self.tau0_milli as f64 / 1000.0
    }
}

impl fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "v0={:.3} tau0={:.3} {}{}{}",
            self.v0(),
            self.tau0(),
            if self.yielding { "yielding" } else { "constant" },
            if self.ehmi { " ehmi" } else { "" },
            if self.night { " night" } else { " day" },
        )
    }
}

/// Per-class CIT and speed samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassSamples {
    pub cit: Vec<f64>,
    pub speed: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionMetrics {
    pub n: usize,
    pub n_ny: usize,
    pub n_y: usize,
    pub class_counts: BTreeMap<CrossingClass, usize>,
    pub samples: BTreeMap<CrossingClass, ClassSamples>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl ConditionMetrics {
    pub fn count(&self, class: CrossingClass) -> usize {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }

    /// Gap acceptance rate over non-yielding trials.
    pub fn g(&self) -> Option<f64> {
        (self.n_ny > 0).then(|| self.count(CrossingClass::AcceptedGap) as f64 / self.n_ny as f64)
    }

    /// Early-crossing rate over yielding trials.
    pub fn e(&self) -> Option<f64> {
        (self.n_y > 0).then(|| self.count(CrossingClass::EarlyCross) as f64 / self.n_y as f64)
    }

    fn pooled(&self, pick: impl Fn(&ClassSamples) -> &Vec<f64>) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|(c, _)| c.counts_for_means())
            .flat_map(|(_, s)| pick(s).iter().copied())
            .collect()
    }

    pub fn cit_samples(&self) -> Vec<f64> {
        self.pooled(|s| &s.cit)
    }

    pub fn speed_samples(&self) -> Vec<f64> {
        self.pooled(|s| &s.speed)
    }

    /// Mean CIT over accepted-gap (non-yielding) or early/late (yielding) crossings.
    pub fn cit(&self) -> Option<f64> {
        mean(&self.cit_samples())
    }

    pub fn speed(&self) -> Option<f64> {
        mean(&self.speed_samples())
    }

    pub fn class_cit(&self, class: CrossingClass) -> Option<f64> {
        self.samples.get(&class).and_then(|s| mean(&s.cit))
    }

    pub fn class_speed(&self, class: CrossingClass) -> Option<f64> {
        self.samples.get(&class).and_then(|s| mean(&s.speed))
    }
}

/// Aggregated metrics keyed by condition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    pub conditions: BTreeMap<ConditionKey, ConditionMetrics>,
}

impl MetricTable {
    pub fn get(&self, key: &ConditionKey) -> Option<&ConditionMetrics> {
        self.conditions.get(key)
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Declares a condition so that it appears (with zero counts) even without records.
    pub fn ensure(&mut self, key: ConditionKey) {
        self.conditions.entry(key).or_default();
    }

    pub fn add(&mut self, record: &EpisodeRecord) {
        let class = classify_crossing(record);
        let entry = self.conditions.entry(record.key()).or_default();
        entry.n += 1;
        if record.spec.yielding {
            entry.n_y += 1;
        } else {
            entry.n_ny += 1;
        }
        *entry.class_counts.entry(class).or_insert(0) += 1;
        if let (Some(c), Some(v)) = (cit(record), avg_speed(record)) {
            let s = entry.samples.entry(class).or_default();
            s.cit.push(c);
            s.speed.push(v);
        }
    }

    pub fn to_observed(&self) -> ObservedMetrics {
        let rows = self
            .conditions
            .iter()
            .map(|(key, m)| ObservedRow {
                key: *key,
                g: m.g(),
                e: m.e(),
                cit: m.cit(),
                speed: m.speed(),
                n: m.n,
                n_ny: m.n_ny,
                n_y: m.n_y,
            })
            .collect();
        ObservedMetrics { rows }
    }

    /// Pools samples of `class` across conditions selected by `filter`.
    fn pooled_class<F>(&self, filter: F, class: CrossingClass, speed: bool) -> Vec<f64>
    where
        F: Fn(&ConditionKey) -> bool,
    {
        self.conditions
            .iter()
            .filter(|(k, _)| filter(k))
            .filter_map(|(_, m)| m.samples.get(&class))
            .flat_map(|s| if speed { s.speed.iter() } else { s.cit.iter() }.copied())
            .collect()
    }

    fn pooled_all<F>(&self, filter: F, speed: bool) -> Vec<f64>
    where
        F: Fn(&ConditionKey) -> bool,
    {
        self.conditions
            .iter()
            .filter(|(k, _)| filter(k))
            .flat_map(|(_, m)| if speed { m.speed_samples() } else { m.cit_samples() })
            .collect()
    }

    /// Pooled rate `numer / denom` over the selected conditions.
    fn pooled_rate<F, N, D>(&self, filter: F, numer: N, denom: D) -> Option<f64>
    where
        F: Fn(&ConditionKey) -> bool,
        N: Fn(&ConditionMetrics) -> usize,
        D: Fn(&ConditionMetrics) -> usize,
    {
        let (mut num, mut den) = (0usize, 0usize);
        for (_, m) in self.conditions.iter().filter(|(k, _)| filter(k)) {
            num += numer(m);
            den += denom(m);
        }
        (den > 0).then(|| num as f64 / den as f64)
    }

    /// Gap acceptance pooled over non-yielding conditions passing `filter`.
    pub fn pooled_g<F: Fn(&ConditionKey) -> bool>(&self, filter: F) -> Option<f64> {
        self.pooled_rate(
            |k| !k.yielding && filter(k),
            |m| m.count(CrossingClass::AcceptedGap),
            |m| m.n_ny,
        )
    }

    /// Early-crossing rate pooled over yielding conditions passing `filter`.
    pub fn pooled_e<F: Fn(&ConditionKey) -> bool>(&self, filter: F) -> Option<f64> {
        self.pooled_rate(
            |k| k.yielding && filter(k),
            |m| m.count(CrossingClass::EarlyCross),
            |m| m.n_y,
        )
    }

    /// Mean speed of the selected crossing samples.
    pub fn pooled_speed<F: Fn(&ConditionKey) -> bool>(&self, filter: F) -> Option<f64> {
        mean(&self.pooled_all(filter, true))
    }

    pub fn pooled_cit<F: Fn(&ConditionKey) -> bool>(&self, filter: F) -> Option<f64> {
        mean(&self.pooled_all(filter, false))
    }

    pub fn pooled_class_speed(&self, class: CrossingClass) -> Option<f64> {
        mean(&self.pooled_class(|_| true, class, true))
    }

    fn extremes(&self, f: impl Fn(&ConditionKey) -> i64) -> Option<(i64, i64)> {
        let lo = self.conditions.keys().map(&f).min()?;
        let hi = self.conditions.keys().map(&f).max()?;
        (lo != hi).then_some((lo, hi))
    }
}

pub fn aggregate<'a, I>(records: I) -> MetricTable
where
    I: IntoIterator<Item = &'a EpisodeRecord>,
{
    let mut table = MetricTable::default();
    for r in records {
        table.add(r);
    }
    table
}

/// Cohen's d with pooled standard deviation; absent when it is zero or undefined.
pub fn cohen_d(a: &[f64], b: &[f64]) -> Option<f64> {
    let (n1, n2) = (a.len(), b.len());
    if n1 + n2 < 3 || n1 == 0 || n2 == 0 {
        return None;
    }
    let (m1, m2) = (mean(a)?, mean(b)?);
    let ss = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let pooled_var = (ss(a, m1) + ss(b, m2)) / (n1 + n2 - 2) as f64;
    cohen_d_from_stats(m1, m2, pooled_var.sqrt())
}

pub fn cohen_d_from_stats(mean_a: f64, mean_b: f64, pooled_sd: f64) -> Option<f64> {
    (pooled_sd > 0.0 && pooled_sd.is_finite()).then(|| (mean_a - mean_b) / pooled_sd)
}

pub fn cohen_h(p1: f64, p2: f64) -> f64 {
    2.0 * p1.clamp(0.0, 1.0).sqrt().asin() - 2.0 * p2.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeRow {
    pub v0: f64,
    pub tau0: f64,
    pub yielding: bool,
    pub ehmi: bool,
    pub night: bool,
    pub h_g: Option<f64>,
    pub h_e: Option<f64>,
    pub d_cit: Option<f64>,
    pub d_speed: Option<f64>,
}

/// Effect sizes of `a` relative to `b` for every condition present in both.
pub fn effect_sizes(a: &MetricTable, b: &MetricTable) -> Vec<EffectSizeRow> {
    a.conditions
        .iter()
        .filter_map(|(key, ma)| {
            let mb = b.get(key)?;
            let h = |x: Option<f64>, y: Option<f64>| Some(cohen_h(x?, y?));
            Some(EffectSizeRow {
                v0: key.v0(),
                tau0: key.tau0(),
                yielding: key.yielding,
                ehmi: key.ehmi,
                night: key.night,
                h_g: h(ma.g(), mb.g()),
                h_e: h(ma.e(), mb.e()),
                d_cit: cohen_d(&ma.cit_samples(), &mb.cit_samples()),
                d_speed: cohen_d(&ma.speed_samples(), &mb.speed_samples()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenomenonCheck {
    pub name: String,
    pub description: String,
    /// `None` when the table lacks the cells needed to evaluate the claim.
    pub holds: Option<bool>,
    /// Signed difference in the claimed direction (positive when it holds).
    pub magnitude: Option<f64>,
}

impl PhenomenonCheck {
    fn new(name: &str, description: &str, magnitude: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            holds: magnitude.map(|m| m > 0.0),
            magnitude,
        }
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// A pooled statistic over the conditions a key filter selects.
type PooledStat<'a> = &'a dyn Fn(&dyn Fn(&ConditionKey) -> bool) -> Option<f64>;

/// Directional behavioral claims evaluated on a metric table. "Long" and
/// "short" gaps (and "fast"/"slow" vehicles) are the extremes present in the table.
pub fn phenomenon_checklist(table: &MetricTable) -> Vec<PhenomenonCheck> {
    let gaps = table.extremes(|k| k.tau0_milli);
    let speeds = table.extremes(|k| k.v0_milli);
    let by_gap = |f: PooledStat| {
        gaps.and_then(|(lo, hi)| diff(f(&|k| k.tau0_milli == hi), f(&|k| k.tau0_milli == lo)))
    };
    let by_speed = |f: PooledStat| {
        speeds.and_then(|(lo, hi)| diff(f(&|k| k.v0_milli == hi), f(&|k| k.v0_milli == lo)))
    };

    let crossing_rate = |night: bool| {
        table.pooled_rate(
            |k| k.night == night,
            |m| m.count(CrossingClass::AcceptedGap) + m.count(CrossingClass::EarlyCross),
            |m| m.n,
        )
    };
    let late_cit = |ehmi: bool| {
        mean(&table.pooled_class(|k| k.yielding && k.ehmi == ehmi, CrossingClass::LateCross, false))
    };

    vec![
        PhenomenonCheck::new(
            "gap_acceptance_increases_with_gap",
            "gap acceptance is higher for the longer time gap",
            by_gap(&|f| table.pooled_g(f)),
        ),
        PhenomenonCheck::new(
            "gap_acceptance_increases_with_speed",
            "gap acceptance is higher for the faster approach speed",
            by_speed(&|f| table.pooled_g(f)),
        ),
        PhenomenonCheck::new(
            "early_crossing_increases_with_gap",
            "early crossing is more frequent for the longer time gap",
            by_gap(&|f| table.pooled_e(f)),
        ),
        PhenomenonCheck::new(
            "early_crossing_increases_with_speed",
            "early crossing is more frequent for the faster approach speed",
            by_speed(&|f| table.pooled_e(f)),
        ),
        PhenomenonCheck::new(
            "cit_increases_with_gap",
            "non-yielding crossing initiation time is longer for the longer gap",
            by_gap(&|f| table.pooled_cit(|k| !k.yielding && f(k))),
        ),
        PhenomenonCheck::new(
            "cit_increases_with_speed",
            "non-yielding crossing initiation time is longer for the faster approach speed",
            by_speed(&|f| table.pooled_cit(|k| !k.yielding && f(k))),
        ),
        PhenomenonCheck::new(
            "speed_decreases_with_gap",
            "mean crossing speed is lower for the longer gap",
            by_gap(&|f| table.pooled_speed(f)).map(|d| -d),
        ),
        PhenomenonCheck::new(
            "early_faster_than_late",
            "early crossings are walked faster than late crossings",
            diff(
                table.pooled_class_speed(CrossingClass::EarlyCross),
                table.pooled_class_speed(CrossingClass::LateCross),
            ),
        ),
        PhenomenonCheck::new(
            "ehmi_shortens_late_cit",
            "eHMI lowers crossing initiation time of late crossings",
            diff(late_cit(false), late_cit(true)),
        ),
        PhenomenonCheck::new(
            "day_crossing_rate_exceeds_night",
            "crossing rate (accepted gaps plus early crossings) is higher by day",
            diff(crossing_rate(false), crossing_rate(true)),
        ),
    ]
}

/// Human-readable rendering of a checklist.
pub fn format_checklist(checks: &[PhenomenonCheck]) -> String {
    let mut out = String::new();
    for c in checks {
        let status = match c.holds {
            Some(true) => "HOLDS",
            Some(false) => "FAILS",
            None => "N/A  ",
        };
        let mag = c.magnitude.map_or_else(|| "-".to_string(), |m| format!("{m:+.4}"));
        out.push_str(&format!("[{status}] {:<38} {:>9}  {}\n", c.name, mag, c.description));
    }
    out
}
