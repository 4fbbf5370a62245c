//! Surrogate-guided minimization of the discrepancy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gp::GpSurrogate;
use super::{discrepancy, simulate_participant, ObservedMetrics, ParamPoint};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ppo::Checkpoint;
use crate::rng::derived_rng;
use crate::scenario::ScenarioTable;

const DIM: usize = 5;
const PRIMES: [u32; DIM] = [2, 3, 5, 7, 11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BolfiConfig {
    /// Total evaluations, including the initial design.
    pub budget: usize,
    pub init_points: usize,
    /// LCB exploration weight.
    pub kappa: f64,
    /// Episodes per condition per evaluation.
    pub reps: usize,
    pub seed: u64,
    /// Random candidates scored before local refinement.
    pub candidates: usize,
    pub local_starts: usize,
    pub gp_restarts: usize,
}

impl Default for BolfiConfig {
    fn default() -> Self {
        Self {
            budget: 80,
            init_points: 20,
            kappa: 2.0,
            reps: 20,
            seed: 0,
            candidates: 2000,
            local_starts: 5,
            gp_restarts: 3,
        }
    }
}

impl BolfiConfig {
    /// Seed of the simulations behind every discrepancy evaluation.
    pub fn simulation_seed(&self) -> u64 {
        crate::rng::derive_seed(self.seed, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_points < 2 {
            return Err(Error::invalid("at least 2 initial points are required"));
        }
        if self.budget < self.init_points {
            return Err(Error::invalid(format!(
                "budget {} is smaller than the {} initial points",
                self.budget, self.init_points
            )));
        }
        if self.reps == 0 || self.candidates == 0 || self.local_starts == 0 {
            return Err(Error::invalid("reps, candidates and local_starts must be > 0"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid("kappa must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub phase: String,
    pub sigma_v_day: f64,
    pub sigma_v_night: f64,
    pub time_pressure_gain: f64,
    pub effort_weight: f64,
    pub looming_weight: f64,
    pub discrepancy: f64,
    pub best_so_far: f64,
    /// Surrogate state at the proposed point (acquisition phase only).
    pub gp_mean: Option<f64>,
    pub gp_std: Option<f64>,
    pub lcb: Option<f64>,
}

impl TraceRow {
    pub fn point(&self) -> ParamPoint {
        ParamPoint([
            self.sigma_v_day,
            self.sigma_v_night,
            self.time_pressure_gain,
            self.effort_weight,
            self.looming_weight,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BolfiResult {
    pub best: ParamPoint,
    pub best_discrepancy: f64,
    pub trace: Vec<TraceRow>,
}

/// Radical inverse of `index` in `base`.
pub fn halton(index: u64, base: u32) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    let b = base as u64;
    while i > 0 {
        f /= base as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

fn halton_point(index: u64) -> [f64; DIM] {
    let mut u = [0.0; DIM];
    for (slot, base) in u.iter_mut().zip(PRIMES) {
        *slot = halton(index, base);
    }
    u
}

/// Compass search on the LCB inside the unit cube.
fn refine(gp: &GpSurrogate, start: [f64; DIM], kappa: f64) -> ([f64; DIM], f64) {
    let mut x = start;
    let mut fx = gp.lcb(&x, kappa);
    let mut step = 0.1;
    let mut evals = 0;
    while step > 1e-3 && evals < 400 {
        let mut improved = false;
        for d in 0..DIM {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[d] = (y[d] + dir * step).clamp(0.0, 1.0);
                if y[d] == x[d] {
                    continue;
                }
                let fy = gp.lcb(&y, kappa);
                evals += 1;
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Minimizes `objective` over the parameter box.
///
/// The first `init_points` evaluations follow a Halton sequence; every later one
/// evaluates the minimizer of the GP lower confidence bound μ − κσ. `on_row`
/// sees each trace row as soon as it exists.
pub fn bolfi_minimize<F, C>(mut objective: F, config: &BolfiConfig, mut on_row: C) -> Result<BolfiResult>
where
    F: FnMut(&ParamPoint) -> Result<f64>,
    C: FnMut(&TraceRow) -> Result<()>,
{
    config.validate()?;
    let mut rng = derived_rng(config.seed, 0);
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(config.budget);
    let mut ys: Vec<f64> = Vec::with_capacity(config.budget);
    let mut trace: Vec<TraceRow> = Vec::with_capacity(config.budget);
    let mut best = f64::INFINITY;
    let mut best_point = ParamPoint::from_unit(&[0.5; DIM]);

    for iteration in 0..config.budget {
        let (u, phase, surrogate) = if iteration < config.init_points {
            (halton_point(iteration as u64 + 1), "init", None)
        } else {
            let gp = GpSurrogate::fit(&xs, &ys, config.gp_restarts, config.seed.wrapping_add(iteration as u64))?;
            let mut scored: Vec<([f64; DIM], f64)> = (0..config.candidates)
                .map(|_| {
                    let mut u = [0.0; DIM];
                    for v in u.iter_mut() {
                        *v = rng.random::<f64>();
                    }
                    (u, gp.lcb(&u, config.kappa))
                })
                .chain(xs.iter().map(|x| {
                    let u: [f64; DIM] = x.as_slice().try_into().expect("5-d point");
                    (u, gp.lcb(&u, config.kappa))
                }))
                .collect();
            scored.sort_by(|a, b| a.1.total_cmp(&b.1));
            let mut chosen = scored[0];
            for (start, _) in scored.iter().take(config.local_starts) {
                let refined = refine(&gp, *start, config.kappa);
                if refined.1 < chosen.1 {
                    chosen = refined;
                }
            }
            let duplicate = xs.iter().any(|x| {
                x.iter().zip(&chosen.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < 1e-12
            });
            if duplicate {
                // the surrogate is confident here already; explore instead
                for v in chosen.0.iter_mut() {
                    *v = rng.random::<f64>();
                }
            }
            let (m, var) = gp.predict(&chosen.0);
            (chosen.0, "lcb", Some((m, var.sqrt(), m - config.kappa * var.sqrt())))
        };

        let point = ParamPoint::from_unit(&u);
        let value = objective(&point)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("discrepancy is not finite at {point}")));
        }
        if value < best {
            best = value;
            best_point = point;
        }
        xs.push(u.to_vec());
        ys.push(value);
        let row = TraceRow {
            iteration: iteration + 1,
            phase: phase.to_string(),
            sigma_v_day: point.0[0],
            sigma_v_night: point.0[1],
            time_pressure_gain: point.0[2],
            effort_weight: point.0[3],
            looming_weight: point.0[4],
            discrepancy: value,
            best_so_far: best,
            gp_mean: surrogate.map(|s| s.0),
            gp_std: surrogate.map(|s| s.1),
            lcb: surrogate.map(|s| s.2),
        };
        on_row(&row)?;
        trace.push(row);
    }
    Ok(BolfiResult { best: best_point, best_discrepancy: best, trace })
}

/// Fits a checkpoint's non-policy parameters to an observed metric table.
///
/// Every evaluation simulates with the same seed so candidate points are
/// compared under common random numbers.
pub fn bolfi_run<C>(
    checkpoint: &Checkpoint,
    observed: &ObservedMetrics,
    table: &ScenarioTable,
    env_config: &EnvConfig,
    config: &BolfiConfig,
    on_row: C,
) -> Result<BolfiResult>
where
    C: FnMut(&TraceRow) -> Result<()>,
{
    observed.validate()?;
    let sim_seed = config.simulation_seed();
    bolfi_minimize(
        |p| {
            let sim = simulate_participant(checkpoint, p, table, config.reps, sim_seed, env_config)?;
            discrepancy(observed, &sim)
        },
        config,
        on_row,
    )
}
