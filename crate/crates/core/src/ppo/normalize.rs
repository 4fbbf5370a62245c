/// Running per-feature mean and variance for observation normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMeanStd {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

const VAR_EPS: f64 = 1e-8;

impl RunningMeanStd {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
            clip,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch of rows (parallel variance combination).
    pub fn update(&mut self, rows: &[&[f64]]) {
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        let total = self.count + n;
        for j in 0..self.dim() {
            let batch_mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let batch_var = rows.iter().map(|r| (r[j] - batch_mean).powi(2)).sum::<f64>() / n;
            let delta = batch_mean - self.mean[j];
            let m2 = self.var[j] * self.count + batch_var * n + delta * delta * self.count * n / total;
            self.mean[j] += delta * n / total;
            self.var[j] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            out[j] = ((x[j] - self.mean[j]) / (self.var[j] + VAR_EPS).sqrt()).clamp(-self.clip, self.clip);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.normalize_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_batch_statistics() {
        let data: Vec<[f64; 2]> = (0..50).map(|i| [i as f64, (i as f64 * 0.7).sin() * 3.0 + 1.0]).collect();
        let mut rms = RunningMeanStd::new(2, 10.0);
        for chunk in data.chunks(7) {
            let rows: Vec<&[f64]> = chunk.iter().map(|r| &r[..]).collect();
            rms.update(&rows);
        }
        for j in 0..2 {
            let mean = data.iter().map(|r| r[j]).sum::<f64>() / 50.0;
            let var = data.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((rms.mean[j] - mean).abs() < 1e-3);
            assert!((rms.var[j] - var).abs() / var < 1e-3);
        }
    }

    #[test]
    fn output_is_clipped() {
        let mut rms = RunningMeanStd::new(1, 10.0);
        rms.update(&[&[0.0], &[0.0], &[0.001]]);
        assert_eq!(rms.normalize(&[1e6])[0], 10.0);
        assert_eq!(rms.normalize(&[-1e6])[0], -10.0);
    }
}
