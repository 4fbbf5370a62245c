//! Gaussian-process regression with a squared-exponential ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const JITTERS: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];
const LOG_LENGTH_BOUNDS: (f64, f64) = (-2.0 * std::f64::consts::LN_10, std::f64::consts::LN_10); // ln 0.01, ln 10
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091);
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, 0.0); // ln 1e-6, ln 1

/// Kernel hyperparameters in standardized-output units.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_var: theta[d].exp(),
            noise_var: theta[d + 1].exp(),
        }
    }

    fn clamp_log(theta: &mut [f64]) {
        let d = theta.len() - 2;
        for t in theta[..d].iter_mut() {
            *t = t.clamp(LOG_LENGTH_BOUNDS.0, LOG_LENGTH_BOUNDS.1);
        }
        theta[d] = theta[d].clamp(LOG_SIGNAL_BOUNDS.0, LOG_SIGNAL_BOUNDS.1);
        theta[d + 1] = theta[d + 1].clamp(LOG_NOISE_BOUNDS.0, LOG_NOISE_BOUNDS.1);
    }
}

fn sq_dist_scaled(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum()
}

/// Noise-free part of the kernel.
fn kernel(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    h.signal_var * (-0.5 * sq_dist_scaled(a, b, &h.length_scales)).exp()
}

fn gram(x: &[Vec<f64>], h: &GpHyper) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel(&x[i], &x[j], h) + if i == j { h.noise_var } else { 0.0 }
    })
}

fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    for jitter in JITTERS {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter));
        }
    }
    Err(Error::Numeric("kernel matrix is not positive definite even with 1e-4 jitter".into()))
}

/// Log marginal likelihood and its gradient w.r.t. the log hyperparameters.
fn lml_and_grad(x: &[Vec<f64>], y: &DVector<f64>, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let h = GpHyper::from_log(theta);
    let n = x.len();
    let d = h.length_scales.len();
    let k = gram(x, &h);
    let (chol, _) = cholesky_with_jitter(&k)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = ααᵀ − K⁻¹; ∂LML/∂θ = ½ tr(W ∂K/∂θ)
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let kf = kernel(&x[i], &x[j], &h);
            let wij = w[(i, j)];
            for (dim, g) in grad.iter_mut().take(d).enumerate() {
                let diff = (x[i][dim] - x[j][dim]) / h.length_scales[dim];
                *g += 0.5 * wij * kf * diff * diff;
            }
            grad[d] += 0.5 * wij * kf;
            if i == j {
                grad[d + 1] += 0.5 * wij * h.noise_var;
            }
        }
    }
    Ok((lml, grad))
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

impl GpSurrogate {
    /// Fits hyperparameters by marginal-likelihood ascent with `restarts` starts.
    pub fn fit(points: &[Vec<f64>], values: &[f64], restarts: usize, seed: u64) -> Result<Self> {
        let (x, y) = Self::prepare(points, values)?;
        let dim = x[0].len();
        let (y_mean, y_scale, ys) = standardize(&y);
        let yv = DVector::from_vec(ys);

        let mut rng = rng_from_seed(seed);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for r in 0..restarts.max(1) {
            let mut theta: Vec<f64> = if r == 0 {
                let mut t = vec![0.3f64.ln(); dim];
                t.extend([0.0, 1e-2f64.ln()]);
                t
            } else {
                let mut t: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05f64.ln()..1.0f64.ln())).collect();
                t.push(rng.random_range(-1.0..1.0));
                t.push(rng.random_range(1e-4f64.ln()..1e-1f64.ln()));
                t
            };
            if let Ok((lml, t)) = ascend(&x, &yv, &mut theta) {
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, t));
                }
            }
        }
        let (_, theta) = best.ok_or_else(|| Error::Numeric("no hyperparameter start converged".into()))?;
        Self::build(x, y_mean, y_scale, yv, GpHyper::from_log(&theta))
    }

    /// Conditions on data with fixed hyperparameters.
    pub fn with_hyper(points: &[Vec<f64>], values: &[f64], hyper: GpHyper) -> Result<Self> {
        let (x, y) = Self::prepare(points, values)?;
        if hyper.length_scales.len() != x[0].len() {
            return Err(Error::invalid("length-scale count does not match input dimension"));
        }
        let (y_mean, y_scale, ys) = standardize(&y);
        Self::build(x, y_mean, y_scale, DVector::from_vec(ys), hyper)
    }

    /// Validates the data and puts it in a canonical order.
    fn prepare(points: &[Vec<f64>], values: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if points.len() < 2 || points.len() != values.len() {
            return Err(Error::invalid("a GP needs at least 2 points with one value each"));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("GP points must share a positive dimension"));
        }
        if points.iter().flatten().chain(values).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite GP training data".into()));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a]
                .iter()
                .zip(&points[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or_else(|| values[a].total_cmp(&values[b]))
        });
        Ok((
            order.iter().map(|&i| points[i].clone()).collect(),
            order.iter().map(|&i| values[i]).collect(),
        ))
    }

    fn build(x: Vec<Vec<f64>>, y_mean: f64, y_scale: f64, y: DVector<f64>, hyper: GpHyper) -> Result<Self> {
        let k = gram(&x, &hyper);
        let (chol, jitter) = cholesky_with_jitter(&k)?;
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self { x, y_mean, y_scale, hyper, chol, alpha, jitter, lml })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Observation-noise standard deviation in output units.
    pub fn noise_std(&self) -> f64 {
        self.hyper.noise_var.sqrt() * self.y_scale
    }

    /// Posterior mean and latent-function variance at `x`, in output units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, x, &self.hyper)));
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular factor is nonsingular");
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mean, var * self.y_scale * self.y_scale)
    }

    /// Lower confidence bound μ − κσ.
    pub fn lcb(&self, x: &[f64], kappa: f64) -> f64 {
        let (m, v) = self.predict(x);
        m - kappa * v.sqrt()
    }
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
    (mean, scale, y.iter().map(|v| (v - mean) / scale).collect())
}

/// Adam ascent on the log marginal likelihood in log-hyperparameter space.
fn ascend(x: &[Vec<f64>], y: &DVector<f64>, theta: &mut [f64]) -> Result<(f64, Vec<f64>)> {
    const ITERS: usize = 150;
    const LR: f64 = 0.05;
    let p = theta.len();
    let (mut m, mut v) = (vec![0.0; p], vec![0.0; p]);
    GpHyper::clamp_log(theta);
    let mut best = (f64::NEG_INFINITY, theta.to_vec());
    for t in 1..=ITERS {
        let (lml, grad) = lml_and_grad(x, y, theta)?;
        if lml > best.0 {
            best = (lml, theta.to_vec());
        }
        for i in 0..p {
            m[i] = 0.9 * m[i] + 0.1 * grad[i];
            v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t as i32));
            let vh = v[i] / (1.0 - 0.999f64.powi(t as i32));
            theta[i] += LR * mh / (vh.sqrt() + 1e-8);
        }
        GpHyper::clamp_log(theta);
    }
    let (lml, _) = lml_and_grad(x, y, theta)?;
    if lml > best.0 {
        best = (lml, theta.to_vec());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng as _;

    use super::*;

    fn grid_1d(n: usize, f: impl Fn(f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        (xs.iter().map(|x| vec![*x]).collect(), xs.iter().map(|x| f(*x)).collect())
    }

    #[test]
    fn interpolates_training_points() {
        let (x, y) = grid_1d(8, |x| (6.0 * x).sin());
        let gp = GpSurrogate::fit(&x, &y, 3, 0).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (m, _) = gp.predict(xi);
            assert!((m - yi).abs() <= gp.noise_std().max(1e-3), "{m} vs {yi}");
        }
    }

    #[test]
    fn variance_larger_between_points() {
        let x = vec![vec![0.2], vec![0.6]];
        let y = vec![1.0, -1.0];
        let hyper = GpHyper { length_scales: vec![0.2], signal_var: 1.0, noise_var: 1e-6 };
        let gp = GpSurrogate::with_hyper(&x, &y, hyper).unwrap();
        let (_, v_train) = gp.predict(&[0.2]);
        let (_, v_mid) = gp.predict(&[0.4]);
        assert!(v_train < v_mid);
    }

    #[test]
    fn recovers_quadratic_minimizer() {
        let x_star = 0.37;
        let (x, y) = grid_1d(20, |x| (x - x_star).powi(2) * 4.0 - 1.0);
        let gp = GpSurrogate::fit(&x, &y, 3, 1).unwrap();
        let best = (0..=2000)
            .map(|i| i as f64 / 2000.0)
            .min_by(|a, b| gp.predict(&[*a]).0.total_cmp(&gp.predict(&[*b]).0))
            .unwrap();
        assert!((best - x_star).abs() <= 0.05 * x_star, "minimum at {best}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pts: Vec<Vec<f64>> = vec![vec![0.1, 0.9], vec![0.4, 0.2], vec![0.8, 0.5], vec![0.3, 0.35]];
        let y = DVector::from_vec(vec![0.5, -1.0, 1.2, 0.1]);
        let theta = vec![(0.4f64).ln(), (0.7f64).ln(), 0.2, (0.05f64).ln()];
        let (_, grad) = lml_and_grad(&pts, &y, &theta).unwrap();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            let mut m = theta.clone();
            m[i] -= h;
            let fd = (lml_and_grad(&pts, &y, &p).unwrap().0 - lml_and_grad(&pts, &y, &m).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn duplicate_points_need_jitter_or_noise() {
        let x = vec![vec![0.5], vec![0.5]];
        let hyper = GpHyper { length_scales: vec![0.3], signal_var: 1.0, noise_var: 0.0 };
        let gp = GpSurrogate::with_hyper(&x, &[1.0, 1.0], hyper).unwrap();
        assert!(gp.jitter() > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GpSurrogate::fit(&[vec![0.1]], &[1.0], 1, 0).is_err());
        assert!(GpSurrogate::fit(&[vec![0.1], vec![f64::NAN]], &[1.0, 2.0], 1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn posterior_is_order_invariant(seed in 0u64..1000, rot in 0usize..7) {
            let mut rng = rng_from_seed(seed);
            let x: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let y: Vec<f64> = x.iter().map(|p| (p[0] - 0.3).powi(2) + p[1]).collect();
            let a = GpSurrogate::fit(&x, &y, 2, 5).unwrap();
            let mut xr = x.clone();
            let mut yr = y.clone();
            xr.rotate_left(rot);
            yr.rotate_left(rot);
            xr.reverse();
            yr.reverse();
            let b = GpSurrogate::fit(&xr, &yr, 2, 5).unwrap();
            for q in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.05]] {
                prop_assert_eq!(a.predict(&q), b.predict(&q));
            }
        }

        #[test]
        fn predictions_finite(seed in 0u64..1000) {
            let mut rng = rng_from_seed(seed);
            let x: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(-20.0..0.0)).collect();
            let gp = GpSurrogate::fit(&x, &y, 2, seed).unwrap();
            let (m, v) = gp.predict(&[0.5; 5]);
            prop_assert!(m.is_finite() && v.is_finite() && v >= 0.0);
        }
    }
}
