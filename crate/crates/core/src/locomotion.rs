//! Pendulum walking model with ballistic within-step speed control.
//!
//! Step length follows s = v^0.42, so a step at speed v lasts v^-0.58 seconds.
//! A speed change from v⁻ to v⁺ over one step with inter-leg angle 2α costs
//! u = (v⁻·cos 2α − v⁺)² / (2·sin² 2α) per unit mass, the inverse of
//! v⁺ = v⁻·cos 2α + √(2u)·sin 2α. Once a target speed is committed the walker
//! accelerates linearly to it and cannot re-decide until the step completes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEP_LENGTH_EXPONENT: f64 = 0.42;

/// Remaining step time below which a step counts as complete.
const STEP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub leg_length: f64,
    /// Decision interval while standing, where the step-duration law diverges.
    pub standing_redecision_interval: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            leg_length: 0.9,
            standing_redecision_interval: 0.5,
        }
    }
}

impl BodyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.leg_length > 0.0 && self.standing_redecision_interval > 0.0) {
            return Err(Error::invalid("leg length and standing interval must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaitState {
    pub position: f64,
    pub speed: f64,
    pub step_target_speed: f64,
    pub step_accel: f64,
    pub step_time_remaining: f64,
}

impl GaitState {
    pub fn at_rest(position: f64) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    pub fn step_complete(&self) -> bool {
        self.step_time_remaining <= STEP_EPS
    }
}

pub fn step_length(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v.powf(STEP_LENGTH_EXPONENT)
    }
}

pub fn step_duration(v: f64, body: &BodyParams) -> f64 {
    if v <= 0.0 {
        body.standing_redecision_interval
    } else {
        v.powf(STEP_LENGTH_EXPONENT - 1.0)
    }
}

/// Full inter-leg angle 2α for a stride of `step_len` with legs of `leg_length`.
pub fn leg_angle(step_len: f64, leg_length: f64) -> Result<f64> {
    if !(step_len >= 0.0) {
        return Err(Error::invalid(format!("step length must be >= 0, got {step_len}")));
    }
    if step_len >= 2.0 * leg_length {
        return Err(Error::invalid(format!(
            "step length {step_len} m is impossible with {leg_length} m legs"
        )));
    }
    Ok(2.0 * (step_len / (2.0 * leg_length)).asin())
}

/// Effort per unit mass to go from `v_minus` to `v_plus` in one step.
pub fn effort(v_minus: f64, v_plus: f64, two_alpha: f64) -> Result<f64> {
    if !(two_alpha > 0.0 && two_alpha < std::f64::consts::PI) {
        return Err(Error::invalid(format!("leg angle must lie in (0, pi), got {two_alpha}")));
    }
    let (sin, cos) = two_alpha.sin_cos();
    let residual = v_minus * cos - v_plus;
    Ok(residual * residual / (2.0 * sin * sin))
}

/// Speed after one step that spends effort `u` (inverse of [`effort`] for v⁺ ≥ v⁻·cos 2α).
pub fn speed_after_effort(v_minus: f64, u: f64, two_alpha: f64) -> f64 {
    v_minus * two_alpha.cos() + (2.0 * u).sqrt() * two_alpha.sin()
}

/// Effort charged when a walker at `v_minus` commits to `target`.
///
/// The leg angle comes from the stride of the commanded speed; a stop uses the
/// stride of the outgoing speed, and standing still costs nothing.
pub fn decision_effort(v_minus: f64, target: f64, body: &BodyParams) -> Result<f64> {
    let stride_speed = if target > 0.0 { target } else { v_minus };
    if stride_speed <= 0.0 {
        return Ok(0.0);
    }
    let two_alpha = leg_angle(step_length(stride_speed), body.leg_length)?;
    effort(v_minus, target, two_alpha)
}

/// Commits a ballistic step towards `target`.
pub fn apply_step_command(gait: &GaitState, target: f64, body: &BodyParams) -> GaitState {
    let duration = step_duration(target, body);
    GaitState {
        step_target_speed: target,
        step_accel: (target - gait.speed) / duration,
        step_time_remaining: duration,
        ..*gait
    }
}

/// Integrates the committed step for `dt` seconds.
///
/// If the step completes inside the interval the walker holds the target speed
/// for the rest of it.
pub fn advance(gait: &GaitState, dt: f64) -> GaitState {
    let mut next = *gait;
    let ramp = gait.step_time_remaining.min(dt).max(0.0);
    let mut speed = gait.speed + gait.step_accel * ramp;
    let target = gait.step_target_speed;
    if (gait.step_accel > 0.0 && speed > target) || (gait.step_accel < 0.0 && speed < target) {
        speed = target;
    }
    next.step_time_remaining = (gait.step_time_remaining - dt).max(0.0);
    if next.step_complete() {
        speed = target;
        next.step_time_remaining = 0.0;
    }
    let cruise = dt - ramp;
    next.position = gait.position + 0.5 * (gait.speed + speed) * ramp + speed * cruise;
    next.speed = speed.max(0.0);
    next
}

/// Direct speed control used by the sensory-only variant: the new speed applies
/// immediately for the whole interval.
pub fn set_speed_instant(gait: &GaitState, target: f64, dt: f64) -> GaitState {
    GaitState {
        position: gait.position + target * dt,
        speed: target,
        step_target_speed: target,
        step_accel: 0.0,
        step_time_remaining: 0.0,
    }
}
