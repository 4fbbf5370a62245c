use super::net::Linear;

/// Adam over a list of dense layers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Linear>,
    v: Vec<Linear>,
}

impl Adam {
    pub fn new(shapes: &[Linear], lr: f64) -> Self {
        let zeros: Vec<Linear> = shapes
            .iter()
            .map(|l| Linear::zeros(l.inputs(), l.outputs()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update<'a, I>(&mut self, params: I, grads: &[Linear])
    where
        I: IntoIterator<Item = &'a mut Linear>,
    {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = self.lr / bc1;
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((p, g), m), v) in p
                .slices_mut()
                .into_iter()
                .zip(g.slices())
                .zip(m.slices_mut())
                .zip(v.slices_mut())
            {
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    p[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + self.eps);
                }
            }
        }
    }
}

/// Global L2 norm over all gradient tensors.
pub fn grad_norm(grads: &[Linear]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.slices())
        .flat_map(|s| s.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Linear], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            g.w *= scale;
            g.b *= scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = vec![Linear::zeros(2, 1)];
        params[0].w[(0, 0)] = 3.0;
        params[0].w[(1, 0)] = -2.0;
        let mut opt = Adam::new(&params, 0.05);
        for _ in 0..2000 {
            let mut g = params.clone();
            g[0].b.fill(0.0);
            opt.update(params.iter_mut(), &g);
        }
        assert!(params[0].w.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Linear::zeros(1, 2)];
        g[0].w[(0, 0)] = 3.0;
        g[0].w[(0, 1)] = 4.0;
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(grad_norm(&g), 5.0);
        clip_grad_norm(&mut g, 0.5);
        assert!((grad_norm(&g) - 0.5).abs() < 1e-6);
    }
}
