//! Trial geometry, scripted vehicle kinematics and scenario sampling.
//!
//! Distances are measured along the road axis as distance-to-crossing-line:
//! positive while a vehicle approaches, negative once its front has passed the
//! pedestrian's crossing line. Vehicle 1 always drives at constant speed;
//! vehicle 2 optionally yields with constant deceleration.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MPH_TO_MPS: f64 = 0.44704;

/// Deceleration magnitude used by the yielding vehicle in the experiment table.
pub const TABLE_DECEL: f64 = 2.3;

pub const DEFAULT_LEAD_TIME: f64 = 2.0;

/// Training-scenario sampling bounds.
pub const TRAIN_SPEED_RANGE: (f64, f64) = (8.0, 17.0);
pub const TRAIN_GAP_RANGE: (f64, f64) = (0.1, 10.0);

const BUNDLED_TABLE: &str = include_str!("../data/table1.json");

pub fn mph_to_mps(mph: f64) -> f64 {
    mph * MPH_TO_MPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadGeometry {
    pub road_width: f64,
    /// Pedestrian start position behind the near curb.
    pub ped_start_offset: f64,
    /// Lane centre measured from the near curb.
    pub lane_center: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub ped_radius: f64,
    /// Distance before the crossing line at which a yielding vehicle stops.
    pub stop_margin: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            road_width: 3.5,
            ped_start_offset: 0.5,
            lane_center: 1.75,
            vehicle_length: 4.5,
            vehicle_width: 1.8,
            ped_radius: 0.25,
            stop_margin: 3.0,
        }
    }
}

impl RoadGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("road_width", self.road_width),
            ("ped_start_offset", self.ped_start_offset),
            ("lane_center", self.lane_center),
            ("vehicle_length", self.vehicle_length),
            ("vehicle_width", self.vehicle_width),
            ("ped_radius", self.ped_radius),
            ("stop_margin", self.stop_margin),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("geometry {name} must be > 0, got {value}")));
            }
        }
        if self.lane_center + self.vehicle_width / 2.0 > self.road_width {
            return Err(Error::invalid("vehicle lane extends beyond the road width"));
        }
        Ok(())
    }

    /// Pedestrian position (from the start point) at which the far curb is reached.
    pub fn crossing_distance(&self) -> f64 {
        self.ped_start_offset + self.road_width
    }

    /// Lateral extent of the vehicle lane, measured from the near curb.
    pub fn lane_band(&self) -> (f64, f64) {
        let half = self.vehicle_width / 2.0;
        (self.lane_center - half, self.lane_center + half)
    }

    /// Pedestrian position at which its disc has fully left the lane band.
    pub fn lane_clear_position(&self) -> f64 {
        self.ped_start_offset + self.lane_band().1 + self.ped_radius
    }
}

/// One vehicle-approach trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub v0: f64,
    pub tau0: f64,
    pub yielding: bool,
    pub decel: f64,
    pub ehmi: bool,
    pub night: bool,
    pub lead_time: f64,
    #[serde(default)]
    pub geometry: RoadGeometry,
}

impl ScenarioSpec {
    pub fn constant_speed(v0: f64, tau0: f64) -> Self {
        Self {
            v0,
            tau0,
            yielding: false,
            decel: TABLE_DECEL,
            ehmi: false,
            night: false,
            lead_time: DEFAULT_LEAD_TIME,
            geometry: RoadGeometry::default(),
        }
    }

    pub fn yielding(v0: f64, tau0: f64, ehmi: bool) -> Self {
        Self {
            yielding: true,
            ehmi,
            ..Self::constant_speed(v0, tau0)
        }
    }

    pub fn with_night(mut self, night: bool) -> Self {
        self.night = night;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return Err(Error::invalid(format!("v0 must be > 0, got {}", self.v0)));
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::invalid(format!("tau0 must be > 0, got {}", self.tau0)));
        }
        if !(self.lead_time > 0.0 && self.lead_time.is_finite()) {
            return Err(Error::invalid(format!("lead_time must be > 0, got {}", self.lead_time)));
        }
        if self.yielding && !(self.decel > 0.0) {
            return Err(Error::invalid("yielding scenario needs decel > 0"));
        }
        if self.ehmi && !self.yielding {
            return Err(Error::invalid("eHMI is only defined for yielding scenarios"));
        }
        self.geometry.validate()
    }

    /// Time at which vehicle 1's rear clears the crossing line (the gap opens).
    pub fn gap_onset_time(&self) -> f64 {
        self.lead_time + self.geometry.vehicle_length / self.v0
    }

    /// Time at which vehicle 2 would reach the crossing line at constant speed.
    pub fn second_vehicle_arrival(&self) -> f64 {
        self.lead_time + self.tau0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialWorldState {
    /// Distances-to-crossing-line of vehicle 1 and vehicle 2.
    pub distances: [f64; 2],
    pub speeds: [f64; 2],
    /// Distance at which vehicle 2 starts braking (yielding trials only).
    pub yield_onset_distance: Option<f64>,
    /// Pedestrian position along the crossing axis, measured from its start point.
    pub ped_position: f64,
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<InitialWorldState> {
    spec.validate()?;
    let d1 = spec.v0 * spec.lead_time;
    let d2 = d1 + spec.v0 * spec.tau0;
    let onset = if spec.yielding {
        Some(yield_onset_distance(spec.v0, spec.decel, spec.geometry.stop_margin)?)
    } else {
        None
    };
    Ok(InitialWorldState {
        distances: [d1, d2],
        speeds: [spec.v0, spec.v0],
        yield_onset_distance: onset,
        ped_position: 0.0,
    })
}

/// Distance-to-line at which braking with `decel` stops the vehicle `stop_margin`
/// before the crossing line.
pub fn yield_onset_distance(v0: f64, decel: f64, stop_margin: f64) -> Result<f64> {
    if !(decel > 0.0) {
        return Err(Error::invalid(format!("decel must be > 0, got {decel}")));
    }
    Ok(v0 * v0 / (2.0 * decel) + stop_margin)
}

/// Samples a scenario from the wide training distribution.
pub fn sample_training_scenario<R: Rng + ?Sized>(rng: &mut R) -> ScenarioSpec {
    let v0 = rng.random_range(TRAIN_SPEED_RANGE.0..=TRAIN_SPEED_RANGE.1);
    let tau0 = rng.random_range(TRAIN_GAP_RANGE.0..=TRAIN_GAP_RANGE.1);
    let yielding = rng.random_bool(0.5);
    let ehmi = yielding && rng.random_bool(0.5);
    let night = rng.random_bool(0.5);
    ScenarioSpec {
        v0,
        tau0,
        yielding,
        decel: TABLE_DECEL,
        ehmi,
        night,
        lead_time: DEFAULT_LEAD_TIME,
        geometry: RoadGeometry::default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum YieldPhase {
    Cruising,
    Braking,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleKinematics {
    pub distance: f64,
    pub speed: f64,
    pub phase: YieldPhase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Braking {
    /// Time at which braking starts.
    start: f64,
    /// Distance-to-line when braking starts.
    distance: f64,
    decel: f64,
}

/// Closed-form trajectory of one scripted vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleScript {
    d0: f64,
    v0: f64,
    braking: Option<Braking>,
}

impl VehicleScript {
    pub fn constant(d0: f64, v0: f64) -> Self {
        Self { d0, v0, braking: None }
    }

    /// A vehicle that starts braking at `onset_distance` and stops `stop_margin`
    /// before the line. If it starts inside the braking zone it brakes from t = 0
    /// with whatever deceleration still stops it at the margin.
    pub fn yielding(d0: f64, v0: f64, decel: f64, onset_distance: f64, stop_margin: f64) -> Self {
        let braking = if d0 > onset_distance {
            Braking {
                start: (d0 - onset_distance) / v0,
                distance: onset_distance,
                decel,
            }
        } else {
            let room = (d0 - stop_margin).max(1e-3);
            Braking {
                start: 0.0,
                distance: d0,
                decel: (v0 * v0 / (2.0 * room)).max(decel),
            }
        };
        Self { d0, v0, braking: Some(braking) }
    }

    pub fn state_at(&self, t: f64) -> VehicleKinematics {
        match self.braking {
            Some(b) if t > b.start => {
                let tau = t - b.start;
                let stop_time = self.v0 / b.decel;
                if tau < stop_time {
                    VehicleKinematics {
                        distance: b.distance - (self.v0 * tau - 0.5 * b.decel * tau * tau),
                        speed: self.v0 - b.decel * tau,
                        phase: YieldPhase::Braking,
                    }
                } else {
                    VehicleKinematics {
                        distance: b.distance - self.v0 * self.v0 / (2.0 * b.decel),
                        speed: 0.0,
                        phase: YieldPhase::Stopped,
                    }
                }
            }
            _ => VehicleKinematics {
                distance: self.d0 - self.v0 * t,
                speed: self.v0,
                phase: YieldPhase::Cruising,
            },
        }
    }

    /// Vehicle 1 and vehicle 2 of a built scenario.
    pub fn pair(spec: &ScenarioSpec, init: &InitialWorldState) -> [VehicleScript; 2] {
        let lead = VehicleScript::constant(init.distances[0], init.speeds[0]);
        let trailing = match init.yield_onset_distance {
            Some(onset) => VehicleScript::yielding(
                init.distances[1],
                init.speeds[1],
                spec.decel,
                onset,
                spec.geometry.stop_margin,
            ),
            None => VehicleScript::constant(init.distances[1], init.speeds[1]),
        };
        [lead, trailing]
    }
}

/// One row of a scenario table config. Speed may be given in mph or m/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0_mph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    pub tau0: f64,
    #[serde(default)]
    pub yielding: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decel: Option<f64>,
    #[serde(default)]
    pub ehmi: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioTable {
    #[serde(default = "default_lead_time")]
    pub lead_time: f64,
    #[serde(default)]
    pub geometry: RoadGeometry,
    pub scenarios: Vec<ScenarioRow>,
}

fn default_lead_time() -> f64 {
    DEFAULT_LEAD_TIME
}

impl ScenarioTable {
    /// The eight vehicle-approach conditions of the experiment (eHMI off).
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_TABLE).expect("bundled scenario table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: ScenarioTable = serde_json::from_str(text)?;
        table.specs(false)?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Scenario specs for every row, with the given day/night flag.
    pub fn specs(&self, night: bool) -> Result<Vec<ScenarioSpec>> {
        self.scenarios
            .iter()
            .map(|row| {
                let v0 = match (row.v0, row.v0_mph) {
                    (Some(v), _) => v,
                    (None, Some(mph)) => mph_to_mps(mph),
                    (None, None) => return Err(Error::invalid("scenario row needs v0 or v0_mph")),
                };
                let spec = ScenarioSpec {
                    v0,
                    tau0: row.tau0,
                    yielding: row.yielding,
                    decel: row.decel.unwrap_or(TABLE_DECEL),
                    ehmi: row.ehmi,
                    night,
                    lead_time: self.lead_time,
                    geometry: self.geometry,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// Day block followed by night block.
    pub fn day_night_specs(&self) -> Result<Vec<ScenarioSpec>> {
        let mut specs = self.specs(false)?;
        specs.extend(self.specs(true)?);
        Ok(specs)
    }
}
