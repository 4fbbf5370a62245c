//! The crossing environment: a partially observable decision process.
//!
//! The world advances in fixed 0.1 s ticks. In the full (SM) and motor-only (M)
//! variants one agent decision commits a walking step and the world is ticked
//! until the step completes; in the sensory-only (S) variant one decision sets
//! the walking speed directly for a single tick.
//!
//! Per-decision reward: arrival bonus (20 − α·t) on reaching the far curb,
//! −20 on collision, −β·u walking effort for the committed step and −c/τ̂ per
//! tick of movement for every approaching vehicle, clamped to [−20, 20].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locomotion::{self, BodyParams, GaitState};
use crate::metrics::EpisodeRecord;
use crate::perception::{self, AngularNoiseModel, PerceptionConfig, VehicleTracker};
use crate::rng::{rng_from_seed, SimRng};
use crate::scenario::{
    build_scenario, RoadGeometry, ScenarioSpec, VehicleKinematics, VehicleScript, YieldPhase,
};

pub const REWARD_BOUND: f64 = 20.0;
pub const ARRIVAL_REWARD: f64 = 20.0;
pub const COLLISION_PENALTY: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Sensory and motor constraints.
    SM,
    /// Sensory constraints only; speed is controlled directly every tick.
    S,
    /// Motor constraints only; perception is exact and looming is off.
    M,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SM, Variant::S, Variant::M];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SM => "SM",
            Variant::S => "S",
            Variant::M => "M",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::SM => 0,
            Variant::S => 1,
            Variant::M => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Variant::SM),
            1 => Ok(Variant::S),
            2 => Ok(Variant::M),
            other => Err(Error::invalid(format!("unknown variant code {other}"))),
        }
    }

    pub fn ballistic(self) -> bool {
        !matches!(self, Variant::S)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SM" => Ok(Variant::SM),
            "S" => Ok(Variant::S),
            "M" => Ok(Variant::M),
            other => Err(Error::invalid(format!("unknown variant '{other}' (expected SM, S or M)"))),
        }
    }
}

/// Sensory-motor constants the policy is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonPolicyParams {
    /// Angular noise in daylight, degrees.
    pub sigma_v_day: f64,
    /// Angular noise at night, degrees.
    pub sigma_v_night: f64,
    /// Time-pressure gain α, 1/s.
    pub time_pressure_gain: f64,
    /// Walking-effort weight β.
    pub effort_weight: f64,
    /// Looming-aversion weight c.
    pub looming_weight: f64,
}

impl NonPolicyParams {
    pub const SIGMA_RANGE: (f64, f64) = (0.0, 10.0);
    pub const TIME_PRESSURE_RANGE: (f64, f64) = (0.0, 4.0);
    pub const EFFORT_RANGE: (f64, f64) = (0.0, 10.0);
    pub const LOOMING_RANGE: (f64, f64) = (0.0, 10.0);

    /// Per-field bounds in field order.
    pub const BOUNDS: [(f64, f64); 5] = [
        Self::SIGMA_RANGE,
        Self::SIGMA_RANGE,
        Self::TIME_PRESSURE_RANGE,
        Self::EFFORT_RANGE,
        Self::LOOMING_RANGE,
    ];

    pub fn zeros() -> Self {
        Self::from_array([0.0; 5])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.sigma_v_day,
            self.sigma_v_night,
            self.time_pressure_gain,
            self.effort_weight,
            self.looming_weight,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            sigma_v_day: a[0],
            sigma_v_night: a[1],
            time_pressure_gain: a[2],
            effort_weight: a[3],
            looming_weight: a[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 5] = [
            "sigma_v_day",
            "sigma_v_night",
            "time_pressure_gain",
            "effort_weight",
            "looming_weight",
        ];
        for ((value, (lo, hi)), name) in self.to_array().into_iter().zip(Self::BOUNDS).zip(NAMES) {
            if !(value >= lo && value <= hi) {
                return Err(Error::invalid(format!("{name}={value} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut a = [0.0; 5];
        for (slot, (lo, hi)) in a.iter_mut().zip(Self::BOUNDS) {
            *slot = rng.random_range(lo..=hi);
        }
        Self::from_array(a)
    }

    pub fn sigma_for(&self, night: bool) -> f64 {
        if night {
            self.sigma_v_night
        } else {
            self.sigma_v_day
        }
    }

    /// Parameters as seen by a model variant (switched-off mechanisms are zeroed).
    pub fn masked(&self, variant: Variant) -> Self {
        let mut p = *self;
        match variant {
            Variant::SM => {}
            Variant::S => p.effort_weight = 0.0,
            Variant::M => {
                p.sigma_v_day = 0.0;
                p.sigma_v_night = 0.0;
                p.looming_weight = 0.0;
            }
        }
        p
    }
}

/// Discrete desired walking speeds, m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    speeds: Vec<f64>,
}

impl ActionSet {
    pub fn new(speeds: Vec<f64>) -> Result<Self> {
        if speeds.is_empty() {
            return Err(Error::invalid("action set is empty"));
        }
        if speeds.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("action speeds must be finite and >= 0"));
        }
        if speeds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("action speeds must be sorted and unique"));
        }
        Ok(Self { speeds })
    }

    /// {0.0, 0.1, …, 2.0}: the literal set plus an explicit wait action.
    pub fn with_wait() -> Self {
        Self {
            speeds: (0..=20).map(|i| i as f64 / 10.0).collect(),
        }
    }

    /// {0.1, …, 2.0} without a wait action.
    pub fn literal() -> Self {
        Self {
            speeds: (1..=20).map(|i| i as f64 / 10.0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn speed(&self, index: usize) -> Option<f64> {
        self.speeds.get(index).copied()
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::with_wait()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dt: f64,
    /// Episodes are truncated once this much time has elapsed.
    pub timeout: f64,
    pub action_set: ActionSet,
    pub body: BodyParams,
    pub perception: PerceptionConfig,
    /// When false the road is empty (used for sanity training).
    pub traffic: bool,
    /// Keep a per-tick log for episode records.
    pub record_ticks: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            timeout: 30.0,
            action_set: ActionSet::default(),
            body: BodyParams::default(),
            perception: PerceptionConfig::default(),
            traffic: true,
            record_ticks: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Arrival bonus 20 − α·t (0 unless the far curb was reached).
    pub arrival: f64,
    /// Collision penalty (positive magnitude, subtracted).
    pub collision: f64,
    /// Effort penalty β·u (positive magnitude, subtracted).
    pub effort: f64,
    /// Looming penalty Σ c/τ̂ (positive magnitude, subtracted).
    pub looming: f64,
    /// Correction that brings the raw sum into [−20, 20].
    pub clamp_adjustment: f64,
}

impl RewardBreakdown {
    pub fn raw(&self) -> f64 {
        self.arrival - self.collision - self.effort - self.looming
    }

    pub fn total(&self) -> f64 {
        self.raw() + self.clamp_adjustment
    }

    /// Sets the clamp correction so that the total lies in the reward bounds.
    pub fn apply_clamp(&mut self) {
        let raw = self.raw();
        self.clamp_adjustment = raw.clamp(-REWARD_BOUND, REWARD_BOUND) - raw;
    }

    pub fn accumulate(&mut self, other: &RewardBreakdown) {
        self.arrival += other.arrival;
        self.collision += other.collision;
        self.effort += other.effort;
        self.looming += other.looming;
        self.clamp_adjustment += other.clamp_adjustment;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminalState {
    Crossed,
    Collision,
    Timeout,
    Running,
}

impl TerminalState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, TerminalState::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub t: f64,
    pub pedestrian: GaitState,
    pub vehicles: [VehicleKinematics; 2],
}

/// Pedestrian disc against the vehicle rectangles.
pub fn collision_check(world: &WorldState, geometry: &RoadGeometry) -> bool {
    let lateral = world.pedestrian.position - geometry.ped_start_offset;
    let (lane_lo, lane_hi) = geometry.lane_band();
    let r = geometry.ped_radius;
    world.vehicles.iter().any(|v| {
        let dx = 0.0f64.clamp(v.distance, v.distance + geometry.vehicle_length);
        let dy = lateral.clamp(lane_lo, lane_hi) - lateral;
        dx * dx + dy * dy < r * r
    })
}

pub fn terminal_state(world: &WorldState, geometry: &RoadGeometry, timeout: f64) -> TerminalState {
    if collision_check(world, geometry) {
        TerminalState::Collision
    } else if world.pedestrian.position >= geometry.crossing_distance() {
        TerminalState::Crossed
    } else if world.t >= timeout - 1e-9 {
        TerminalState::Timeout
    } else {
        TerminalState::Running
    }
}

pub const OBS_DIM: usize = 16;

/// Names of the observation slots, in order.
pub const OBS_LAYOUT: [&str; OBS_DIM] = [
    "ped_position",
    "ped_speed",
    "veh1_distance_est",
    "veh1_speed_est",
    "veh1_distance_std",
    "veh1_speed_std",
    "veh2_distance_est",
    "veh2_speed_est",
    "veh2_distance_std",
    "veh2_speed_std",
    "elapsed_time",
    "ehmi",
    "sigma_v_active",
    "time_pressure_gain",
    "effort_weight",
    "looming_weight",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        OBS_LAYOUT.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

/// One 0.1 s tick of an episode log.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickRow {
    pub episode: u64,
    pub t: f64,
    pub ped_position: f64,
    pub ped_speed: f64,
    pub target_speed: f64,
    pub step_accel: f64,
    pub v1_distance: f64,
    pub v1_speed: f64,
    pub v1_distance_est: f64,
    pub v1_speed_est: f64,
    pub v2_distance: f64,
    pub v2_speed: f64,
    pub v2_distance_est: f64,
    pub v2_speed_est: f64,
    pub r_arrival: f64,
    pub r_collision: f64,
    pub r_effort: f64,
    pub r_looming: f64,
    pub r_clamp: f64,
    pub r_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// Episode ended (crossing, collision or timeout).
    pub done: bool,
    /// Episode ended by the time limit rather than a true terminal state.
    pub truncated: bool,
    pub terminal: TerminalState,
    pub breakdown: RewardBreakdown,
    /// Ticks simulated for this decision.
    pub ticks: u32,
}

/// Single-pedestrian, two-vehicle crossing environment.
#[derive(Debug, Clone)]
pub struct PedestrianEnv {
    config: EnvConfig,
    spec: ScenarioSpec,
    params: NonPolicyParams,
    variant: Variant,
    seed: u64,
    scripts: [VehicleScript; 2],
    world: WorldState,
    trackers: [VehicleTracker; 2],
    noise: AngularNoiseModel,
    rng: SimRng,
    status: TerminalState,
    totals: RewardBreakdown,
    decisions: u32,
    ticks: Vec<TickRow>,
}

impl PedestrianEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.body.validate()?;
        if !(config.dt > 0.0 && config.timeout > 0.0) {
            return Err(Error::invalid("dt and timeout must be > 0"));
        }
        let spec = ScenarioSpec::constant_speed(10.0, 3.0);
        let mut env = Self {
            config,
            spec,
            params: NonPolicyParams::zeros(),
            variant: Variant::SM,
            seed: 0,
            scripts: [VehicleScript::constant(0.0, 0.0); 2],
            world: WorldState {
                tick: 0,
                t: 0.0,
                pedestrian: GaitState::default(),
                vehicles: [VehicleKinematics {
                    distance: 0.0,
                    speed: 0.0,
                    phase: YieldPhase::Cruising,
                }; 2],
            },
            trackers: [VehicleTracker::init(
                -1.0,
                0.0,
                &AngularNoiseModel { sigma_v: 0.0, vehicle_width: 1.8 },
                &PerceptionConfig::default(),
                &mut rng_from_seed(0),
            ); 2],
            noise: AngularNoiseModel { sigma_v: 0.0, vehicle_width: 1.8 },
            rng: rng_from_seed(0),
            status: TerminalState::Timeout,
            totals: RewardBreakdown::default(),
            decisions: 0,
            ticks: Vec::new(),
        };
        env.reset(spec, NonPolicyParams::zeros(), Variant::SM, 0)?;
        env.status = TerminalState::Timeout;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// Parameters in effect after variant masking.
    pub fn params(&self) -> &NonPolicyParams {
        &self.params
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn trackers(&self) -> &[VehicleTracker; 2] {
        &self.trackers
    }

    pub fn status(&self) -> TerminalState {
        self.status
    }

    pub fn is_done(&self) -> bool {
        self.status.is_terminal()
    }

    pub fn totals(&self) -> &RewardBreakdown {
        &self.totals
    }

    pub fn reset(
        &mut self,
        spec: ScenarioSpec,
        params: NonPolicyParams,
        variant: Variant,
        seed: u64,
    ) -> Result<Observation> {
        params.validate()?;
        let init = build_scenario(&spec)?;
        self.spec = spec;
        self.variant = variant;
        self.params = params.masked(variant);
        self.seed = seed;
        self.rng = rng_from_seed(seed);
        self.scripts = if self.config.traffic {
            VehicleScript::pair(&spec, &init)
        } else {
            // Empty road: both vehicles parked far behind the crossing line.
            [VehicleScript::constant(-1000.0, 0.0); 2]
        };
        self.noise = AngularNoiseModel::new(
            self.params.sigma_for(spec.night),
            spec.geometry.vehicle_width,
        )?;
        let vehicles = [self.scripts[0].state_at(0.0), self.scripts[1].state_at(0.0)];
        self.world = WorldState {
            tick: 0,
            t: 0.0,
            pedestrian: GaitState::at_rest(init.ped_position),
            vehicles,
        };
        let perception_cfg = self.config.perception;
        let noise = self.noise;
        let rng = &mut self.rng;
        self.trackers = vehicles.map(|v| VehicleTracker::init(v.distance, v.speed, &noise, &perception_cfg, rng));
        self.status = TerminalState::Running;
        self.totals = RewardBreakdown::default();
        self.decisions = 0;
        self.ticks.clear();
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        let mut o = [0.0; OBS_DIM];
        let g = &self.world.pedestrian;
        o[0] = g.position;
        o[1] = g.speed;
        let show_uncertainty = self.variant != Variant::M;
        for (i, tracker) in self.trackers.iter().enumerate() {
            let b = tracker.belief();
            let base = 2 + 4 * i;
            o[base] = b.distance();
            o[base + 1] = b.speed();
            if show_uncertainty {
                o[base + 2] = b.distance_std();
                o[base + 3] = b.speed_std();
            }
        }
        o[10] = self.world.t;
        o[11] = if self.spec.ehmi { 1.0 } else { 0.0 };
        o[12] = self.params.sigma_for(self.spec.night);
        o[13] = self.params.time_pressure_gain;
        o[14] = self.params.effort_weight;
        o[15] = self.params.looming_weight;
        Observation(o)
    }

    /// Executes one agent decision.
    pub fn step(&mut self, action_index: usize) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        let target = self.config.action_set.speed(action_index).ok_or_else(|| {
            Error::invalid(format!(
                "action index {action_index} out of range for {} actions",
                self.config.action_set.len()
            ))
        })?;
        self.decisions += 1;
        let mut step_reward = RewardBreakdown::default();
        let first_tick = self.ticks.len();
        let mut ticks = 0u32;

        if self.variant.ballistic() {
            let body = self.config.body;
            let u = locomotion::decision_effort(self.world.pedestrian.speed, target, &body)?;
            step_reward.effort = self.params.effort_weight * u;
            self.world.pedestrian = locomotion::apply_step_command(&self.world.pedestrian, target, &body);
            loop {
                let tick_reward = self.tick(None);
                step_reward.accumulate(&tick_reward);
                ticks += 1;
                if self.status.is_terminal() || self.world.pedestrian.step_complete() {
                    break;
                }
            }
        } else {
            let tick_reward = self.tick(Some(target));
            step_reward.accumulate(&tick_reward);
            ticks = 1;
        }

        step_reward.apply_clamp();
        self.totals.accumulate(&step_reward);

        if self.config.record_ticks {
            let rows = &mut self.ticks[first_tick..];
            if let Some(first) = rows.first_mut() {
                first.r_effort = step_reward.effort;
            }
            if let Some(last) = rows.last_mut() {
                last.r_clamp = step_reward.clamp_adjustment;
            }
            for row in rows.iter_mut() {
                row.r_total = row.r_arrival - row.r_collision - row.r_effort - row.r_looming + row.r_clamp;
            }
        }

        Ok(StepOutcome {
            observation: self.observation(),
            reward: step_reward.total(),
            done: self.status.is_terminal(),
            truncated: self.status == TerminalState::Timeout,
            terminal: self.status,
            breakdown: step_reward,
            ticks,
        })
    }

    /// Advances the world by one tick. `instant` sets the speed directly.
    fn tick(&mut self, instant: Option<f64>) -> RewardBreakdown {
        let dt = self.config.dt;
        let before = self.world.pedestrian.position;
        self.world.pedestrian = match instant {
            Some(target) => locomotion::set_speed_instant(&self.world.pedestrian, target, dt),
            None => locomotion::advance(&self.world.pedestrian, dt),
        };
        let moving = self.world.pedestrian.position > before;

        self.world.tick += 1;
        self.world.t = self.world.tick as f64 * dt;
        let t = self.world.t;
        self.world.vehicles = [self.scripts[0].state_at(t), self.scripts[1].state_at(t)];

        let perception_cfg = self.config.perception;
        let noise = self.noise;
        for (tracker, v) in self.trackers.iter_mut().zip(self.world.vehicles.iter()) {
            tracker.tick(v.distance, v.speed, dt, &noise, &perception_cfg, &mut self.rng);
        }

        let mut reward = RewardBreakdown::default();
        for tracker in &self.trackers {
            reward.looming += perception::looming_penalty(tracker.tta(), self.params.looming_weight, moving);
        }

        self.status = terminal_state(&self.world, &self.spec.geometry, self.config.timeout);
        match self.status {
            TerminalState::Crossed => {
                reward.arrival = ARRIVAL_REWARD - self.params.time_pressure_gain * t;
            }
            TerminalState::Collision => reward.collision = COLLISION_PENALTY,
            _ => {}
        }

        if self.config.record_ticks {
            let g = &self.world.pedestrian;
            let [b1, b2] = [self.trackers[0].belief(), self.trackers[1].belief()];
            let [k1, k2] = self.world.vehicles;
            self.ticks.push(TickRow {
                episode: 0,
                t,
                ped_position: g.position,
                ped_speed: g.speed,
                target_speed: g.step_target_speed,
                step_accel: g.step_accel,
                v1_distance: k1.distance,
                v1_speed: k1.speed,
                v1_distance_est: b1.distance(),
                v1_speed_est: b1.speed(),
                v2_distance: k2.distance,
                v2_speed: k2.speed,
                v2_distance_est: b2.distance(),
                v2_speed_est: b2.speed(),
                r_arrival: reward.arrival,
                r_collision: reward.collision,
                r_effort: 0.0,
                r_looming: reward.looming,
                r_clamp: 0.0,
                r_total: 0.0,
            });
        }
        reward
    }

    /// Snapshot of the episode so far as a record for metric extraction.
    pub fn record(&self) -> EpisodeRecord {
        EpisodeRecord {
            spec: self.spec,
            params: self.params,
            variant: self.variant,
            seed: self.seed,
            outcome: self.status,
            totals: self.totals,
            decisions: self.decisions,
            ticks: self.ticks.clone(),
        }
    }
}
