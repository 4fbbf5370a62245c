//! Noisy visual perception of approaching vehicles.
//!
//! The agent sees a vehicle through the angle it subtends, corrupted by
//! constant Gaussian angular noise. Distance measurements recovered from that
//! angle feed a two-state (distance, closing speed) Kalman filter whose
//! measurement variance is the angular noise linearised at the current
//! estimate. The filtered time-to-arrival drives the looming penalty.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical floor/ceiling applied to the noisy subtended angle.
pub const ANGLE_CLAMP: f64 = 1e-6;

/// Closing speeds below this are treated as "not approaching".
pub const MIN_CLOSING_SPEED: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularNoiseModel {
    /// Standard deviation of the angular noise, degrees.
    pub sigma_v: f64,
    pub vehicle_width: f64,
}

impl AngularNoiseModel {
    pub fn new(sigma_v: f64, vehicle_width: f64) -> Result<Self> {
        if !(sigma_v >= 0.0 && sigma_v.is_finite()) {
            return Err(Error::invalid(format!("sigma_v must be >= 0, got {sigma_v}")));
        }
        Ok(Self { sigma_v, vehicle_width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    /// Process noise intensity of the constant-speed model, m²/s³.
    pub process_noise_q: f64,
    /// Prior variance of the closing speed when a vehicle is first seen.
    pub initial_speed_variance: f64,
    /// Measured distances are capped at this range.
    pub max_range: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            process_noise_q: 0.5,
            initial_speed_variance: 1e4,
            max_range: 300.0,
        }
    }
}

/// Kalman belief over (distance-to-line, closing speed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleBelief {
    pub mean: Vector2<f64>,
    pub covariance: Matrix2<f64>,
}

impl VehicleBelief {
    pub fn new(distance: f64, speed: f64, covariance: Matrix2<f64>) -> Self {
        Self {
            mean: Vector2::new(distance, speed),
            covariance,
        }
    }

    /// A belief with no uncertainty.
    pub fn exact(distance: f64, speed: f64) -> Self {
        Self::new(distance, speed, Matrix2::zeros())
    }

    /// Mean moved into the physical region: 0 ≤ d̂ ≤ `max_range`, v̂ ≥ 0.
    pub fn projected(&self, max_range: f64) -> Self {
        let mut out = *self;
        out.mean[0] = out.mean[0].clamp(0.0, max_range);
        out.mean[1] = out.mean[1].max(0.0);
        out
    }

    pub fn distance(&self) -> f64 {
        self.mean[0]
    }

    pub fn speed(&self) -> f64 {
        self.mean[1]
    }

    pub fn distance_std(&self) -> f64 {
        self.covariance[(0, 0)].max(0.0).sqrt()
    }

    pub fn speed_std(&self) -> f64 {
        self.covariance[(1, 1)].max(0.0).sqrt()
    }

    /// Smallest eigenvalue of the symmetrised covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.covariance)
    }
}

fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let a = m[(0, 0)];
    let c = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let half_diff = 0.5 * (a - c);
    0.5 * (a + c) - (half_diff * half_diff + b * b).sqrt()
}

/// Inverse time-to-arrival, floored at zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LoomingSignal(f64);

impl LoomingSignal {
    pub fn from_tta(tta: f64) -> Self {
        if tta.is_finite() && tta > 0.0 {
            Self(1.0 / tta)
        } else {
            Self(0.0)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Full visual angle subtended by a vehicle of `width` at distance `d`.
pub fn subtended_angle(d: f64, width: f64) -> f64 {
    2.0 * (width / (2.0 * d)).atan()
}

/// Distance implied by a (possibly noisy) subtended angle.
pub fn distance_from_angle(theta: f64, width: f64) -> f64 {
    let theta = theta.clamp(ANGLE_CLAMP, std::f64::consts::PI - ANGLE_CLAMP);
    width / (2.0 * (theta / 2.0).tan())
}

/// Noisy distance measurement through Gaussian angular noise.
pub fn observe_distance<R: Rng + ?Sized>(
    true_d: f64,
    width: f64,
    sigma_v: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(true_d > 0.0) {
        return Err(Error::invalid(format!("true distance must be > 0, got {true_d}")));
    }
    let eps: f64 = rng.sample(StandardNormal);
    Ok(noisy_distance(true_d, width, sigma_v, eps))
}

/// Deterministic core of [`observe_distance`] for a given standard-normal draw.
pub fn noisy_distance(true_d: f64, width: f64, sigma_v: f64, standard_normal: f64) -> f64 {
    if sigma_v == 0.0 {
        return true_d;
    }
    let theta = subtended_angle(true_d, width) + standard_normal * sigma_v.to_radians();
    distance_from_angle(theta, width)
}

/// Distance reading of an observed angle under the tangent-line approximation
/// of the angle-distance relation at `d_lin`.
///
/// Used as the filter measurement in place of the exact inverse, whose heavy
/// tail (small angles map to huge distances) makes a linear update diverge.
/// Its error is Gaussian with variance `measurement_variance(d_lin, ..)`.
pub fn linearized_distance(theta: f64, d_lin: f64, width: f64) -> f64 {
    let slope = -width / (d_lin * d_lin + width * width / 4.0);
    d_lin + (theta - subtended_angle(d_lin, width)) / slope
}

/// Distance-domain variance of the angular noise, linearised at `d_hat`.
pub fn measurement_variance(d_hat: f64, width: f64, sigma_v: f64) -> f64 {
    let jacobian = (d_hat * d_hat + width * width / 4.0) / width;
    let sigma = sigma_v.to_radians();
    jacobian * jacobian * sigma * sigma
}

/// Constant-closing-speed prediction: d ← d − v·dt.
pub fn kalman_predict(belief: &VehicleBelief, dt: f64, q: f64) -> VehicleBelief {
    let f = Matrix2::new(1.0, -dt, 0.0, 1.0);
    // White acceleration noise enters the distance with the opposite sign.
    let q_mat = Matrix2::new(
        dt * dt * dt / 3.0,
        -dt * dt / 2.0,
        -dt * dt / 2.0,
        dt,
    ) * q;
    let covariance = f * belief.covariance * f.transpose() + q_mat;
    VehicleBelief {
        mean: f * belief.mean,
        covariance: symmetrize(covariance),
    }
}

/// Scalar distance-measurement update (Joseph form).
pub fn kalman_update(belief: &VehicleBelief, measurement: f64, r: f64) -> Result<VehicleBelief> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("measurement variance must be >= 0, got {r}")));
    }
    let p = belief.covariance;
    let scale = p[(0, 0)].abs().max(p[(1, 1)].abs()).max(1.0);
    if (p[(0, 1)] - p[(1, 0)]).abs() > 1e-9 * scale || min_eigenvalue(&p) < -1e-9 * scale {
        return Err(Error::invalid("belief covariance is not positive semi-definite"));
    }
    let s = p[(0, 0)] + r;
    let innovation = measurement - belief.mean[0];
    if !(s > 0.0) {
        // Both prior and measurement are exact; trust the measurement.
        let mut mean = belief.mean;
        mean[0] = measurement;
        return Ok(VehicleBelief { mean, covariance: p });
    }
    let gain = Vector2::new(p[(0, 0)] / s, p[(1, 0)] / s);
    let mean = belief.mean + gain * innovation;
    let i_kh = Matrix2::new(1.0 - gain[0], 0.0, -gain[1], 1.0);
    let covariance = i_kh * p * i_kh.transpose() + gain * gain.transpose() * r;
    Ok(VehicleBelief {
        mean,
        covariance: symmetrize(covariance),
    })
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Estimated time to arrival; `f64::INFINITY` when the vehicle is not approaching.
pub fn estimate_tta(belief: &VehicleBelief) -> f64 {
    let (d, v) = (belief.distance(), belief.speed());
    if v > MIN_CLOSING_SPEED && d > 0.0 {
        d / v
    } else {
        f64::INFINITY
    }
}

/// Per-tick looming penalty c/τ̂ for one vehicle.
pub fn looming_penalty(tau_hat: f64, c: f64, pedestrian_moving: bool) -> f64 {
    if pedestrian_moving {
        c * LoomingSignal::from_tta(tau_hat).value()
    } else {
        0.0
    }
}

/// Perception pipeline for a single vehicle: measure, predict, update.
///
/// Once the vehicle's front has passed the crossing line the pedestrian is
/// assumed to know its state exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleTracker {
    belief: VehicleBelief,
    passed: bool,
}

impl VehicleTracker {
    pub fn init<R: Rng + ?Sized>(
        true_d: f64,
        true_v: f64,
        noise: &AngularNoiseModel,
        config: &PerceptionConfig,
        rng: &mut R,
    ) -> Self {
        let eps: f64 = rng.sample(StandardNormal);
        if true_d <= 0.0 {
            return Self {
                belief: VehicleBelief::exact(true_d, true_v),
                passed: true,
            };
        }
        let z = noisy_distance(true_d, noise.vehicle_width, noise.sigma_v, eps).min(config.max_range);
        let r = measurement_variance(z, noise.vehicle_width, noise.sigma_v);
        let covariance = Matrix2::new(r, 0.0, 0.0, config.initial_speed_variance);
        Self {
            belief: VehicleBelief::new(z, 0.0, covariance),
            passed: false,
        }
    }

    /// Advances the belief by `dt` and folds in one new measurement.
    pub fn tick<R: Rng + ?Sized>(
        &mut self,
        true_d: f64,
        true_v: f64,
        dt: f64,
        noise: &AngularNoiseModel,
        config: &PerceptionConfig,
        rng: &mut R,
    ) {
        let eps: f64 = rng.sample(StandardNormal);
        if self.passed || true_d <= 0.0 {
            self.passed = true;
            self.belief = VehicleBelief::exact(true_d, true_v);
            return;
        }
        let predicted = kalman_predict(&self.belief, dt, config.process_noise_q);
        let (z, r) = if noise.sigma_v == 0.0 {
            (true_d, 0.0)
        } else {
            let width = noise.vehicle_width;
            let d_lin = predicted.distance().clamp(width / 2.0, config.max_range);
            let theta = (subtended_angle(true_d, width) + eps * noise.sigma_v.to_radians())
                .clamp(ANGLE_CLAMP, std::f64::consts::PI - ANGLE_CLAMP);
            (linearized_distance(theta, d_lin, width), measurement_variance(d_lin, width, noise.sigma_v))
        };
        // The predicted covariance is PSD by construction, so the update cannot fail.
        let updated = kalman_update(&predicted, z, r).unwrap_or(predicted);
        self.belief = updated.projected(config.max_range);
    }

    pub fn belief(&self) -> &VehicleBelief {
        &self.belief
    }

    pub fn passed(&self) -> bool {
        self.passed
    }

    pub fn tta(&self) -> f64 {
        if self.passed {
            f64::INFINITY
        } else {
            estimate_tta(&self.belief)
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_noise_observation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [0.5, 3.0, 30.0, 250.0] {
            assert_eq!(observe_distance(d, 1.8, 0.0, &mut rng).unwrap(), d);
        }
    }

    #[test]
    fn forced_angle_draw_inverts_by_hand() {
        assert!((distance_from_angle(0.0648, 1.8) - 27.77).abs() < 5e-3);
    }

    #[test]
    fn observe_rejects_non_positive_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(observe_distance(0.0, 1.8, 1.0, &mut rng).is_err());
        assert!(observe_distance(-2.0, 1.8, 1.0, &mut rng).is_err());
    }

    #[test]
    fn noisy_distance_median_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| observe_distance(30.0, 1.8, 1.0, &mut rng).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        let median = 0.5 * (draws[4999] + draws[5000]);
        assert!((median - 30.0).abs() < 0.5, "median {median}");
    }

    #[test]
    fn measurement_variance_examples() {
        assert!((measurement_variance(30.0, 1.8, 1.0) - 76.3).abs() < 0.05);
        assert_eq!(measurement_variance(30.0, 1.8, 0.0), 0.0);
        assert!(measurement_variance(60.0, 1.8, 1.0) > measurement_variance(30.0, 1.8, 1.0));
    }

    #[test]
    fn predict_without_process_noise() {
        let p = Matrix2::new(4.0, 1.0, 1.0, 2.0);
        let b = VehicleBelief::new(30.0, 10.0, p);
        let out = kalman_predict(&b, 0.1, 0.0);
        assert!((out.distance() - 29.0).abs() < 1e-12);
        assert_eq!(out.speed(), 10.0);
        // F P Fᵀ with F = [[1, -0.1], [0, 1]].
        assert!((out.covariance[(0, 0)] - (4.0 - 0.2 + 0.02)).abs() < 1e-12);
        assert!((out.covariance[(0, 1)] - (1.0 - 0.2)).abs() < 1e-12);
        assert!((out.covariance[(1, 1)] - 2.0).abs() < 1e-12);

        let z = VehicleBelief::exact(30.0, 10.0);
        assert_eq!(kalman_predict(&z, 0.1, 0.0).covariance, Matrix2::zeros());
    }

    #[test]
    fn exact_and_uninformative_updates() {
        let b = VehicleBelief::new(30.0, 10.0, Matrix2::new(9.0, 1.0, 1.0, 4.0));
        let exact = kalman_update(&b, 27.5, 0.0).unwrap();
        assert!((exact.distance() - 27.5).abs() < 1e-12);
        let vague = kalman_update(&b, 27.5, 1e12).unwrap();
        assert!(((vague.distance() - 30.0) / 30.0).abs() < 1e-6);
        assert!(((vague.speed() - 10.0) / 10.0).abs() < 1e-6);
        let mid = kalman_update(&b, 27.5, 9.0).unwrap();
        assert!(mid.covariance[(0, 0)] <= b.covariance[(0, 0)]);
    }

    #[test]
    fn update_rejects_non_psd_covariance() {
        let b = VehicleBelief::new(30.0, 10.0, Matrix2::new(1.0, 5.0, 5.0, 1.0));
        assert!(kalman_update(&b, 30.0, 1.0).is_err());
        let ok = VehicleBelief::new(30.0, 10.0, Matrix2::identity());
        assert!(kalman_update(&ok, 30.0, -1.0).is_err());
    }

    #[test]
    fn zero_noise_tracker_converges_in_five_ticks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = AngularNoiseModel::new(0.0, 1.8).unwrap();
        let cfg = PerceptionConfig::default();
        let (d0, v) = (60.0, 11.176);
        let mut tracker = VehicleTracker::init(d0, v, &noise, &cfg, &mut rng);
        for k in 1..=5 {
            let d = d0 - v * 0.1 * k as f64;
            tracker.tick(d, v, 0.1, &noise, &cfg, &mut rng);
        }
        let b = tracker.belief();
        assert!((b.distance() - (d0 - v * 0.5)).abs() < 1e-6);
        assert!((b.speed() - v).abs() < 1e-6, "speed error {}", b.speed() - v);
    }

    #[test]
    fn linearized_distance_is_tangent() {
        let (w, d) = (1.8, 30.0);
        assert!((linearized_distance(subtended_angle(d, w), d, w) - d).abs() < 1e-9);
        let h = 1e-7;
        let slope = (linearized_distance(subtended_angle(d, w) + h, d, w) - d) / h;
        let exact = (distance_from_angle(subtended_angle(d, w) + h, w) - d) / h;
        assert!((slope - exact).abs() / exact.abs() < 1e-4);
        // the variance of the reading matches the linearised noise
        let s = 1f64.to_radians();
        let spread = linearized_distance(subtended_angle(d, w) + s, d, w) - d;
        assert!((spread * spread - measurement_variance(d, w, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn noisy_tracker_stays_physical_and_converges() {
        let cfg = PerceptionConfig::default();
        let noise = AngularNoiseModel::new(1.0, 1.8).unwrap();
        let v = 11.176;
        let mut errs = Vec::new();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = 60.0;
            let mut tracker = VehicleTracker::init(d, v, &noise, &cfg, &mut rng);
            for _ in 0..30 {
                d -= v * 0.1;
                tracker.tick(d, v, 0.1, &noise, &cfg, &mut rng);
                let b = tracker.belief();
                assert!(b.distance() >= 0.0 && b.distance() <= cfg.max_range);
                assert!(b.speed() >= 0.0);
            }
            errs.push(tracker.belief().distance() - d);
        }
        errs.sort_by(f64::total_cmp);
        // true distance is 26.5 m here
        assert!(errs[100].abs() < 3.0, "median error {}", errs[100]);
    }

    #[test]
    fn tta_and_looming() {
        assert_eq!(estimate_tta(&VehicleBelief::exact(20.0, 10.0)), 2.0);
        assert!(estimate_tta(&VehicleBelief::exact(20.0, 0.0)).is_infinite());
        assert!(estimate_tta(&VehicleBelief::exact(-1.0, 10.0)).is_infinite());
        assert_eq!(looming_penalty(2.0, 5.0, true), 2.5);
        assert_eq!(looming_penalty(2.0, 5.0, false), 0.0);
        assert_eq!(looming_penalty(f64::INFINITY, 5.0, true), 0.0);
    }

    #[test]
    fn passed_vehicle_tracks_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = AngularNoiseModel::new(3.0, 1.8).unwrap();
        let cfg = PerceptionConfig::default();
        let mut tracker = VehicleTracker::init(2.0, 10.0, &noise, &cfg, &mut rng);
        tracker.tick(-0.5, 10.0, 0.1, &noise, &cfg, &mut rng);
        assert!(tracker.passed());
        assert_eq!(tracker.belief().distance(), -0.5);
        assert!(tracker.tta().is_infinite());
    }
}
