//! Fully connected tanh networks with manual backpropagation.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense layer `y = x·W + b` with `W` stored as (inputs × outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let (rows, cols) = (inputs.max(outputs), inputs.min(outputs));
        let a = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let (q, r) = (qr.q(), qr.r());
        let mut w = Array2::zeros((inputs, outputs));
        for i in 0..rows {
            for j in 0..cols {
                let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
                let value = gain * q[(i, j)] * sign;
                if inputs >= outputs {
                    w[(i, j)] = value;
                } else {
                    w[(j, i)] = value;
                }
            }
        }
        Self { w, b: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Weights then biases as mutable flat slices.
    pub fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn slices(&self) -> [&[f64]; 2] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }
}

/// Multi-layer perceptron: tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer inputs saved by a forward pass (first entry is the network input).
pub type Activations = Vec<Array2<f64>>;

impl Mlp {
    /// `sizes` lists input, hidden and output widths.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { output_gain } else { std::f64::consts::SQRT_2 };
                Linear::orthogonal(w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    pub fn zeros_like(&self) -> Vec<Linear> {
        self.layers
            .iter()
            .map(|l| Linear::zeros(l.inputs(), l.outputs()))
            .collect()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w) + &layer.b;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    /// Forward pass that keeps every layer input for [`Mlp::backward`].
    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Activations) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let next = h.dot(&layer.w) + &layer.b;
            acts.push(h);
            h = next;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        (h, acts)
    }

    /// Parameter gradients given d(loss)/d(output).
    pub fn backward(&self, acts: &Activations, grad_out: Array2<f64>) -> Vec<Linear> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let w_grad = input.t().dot(&g).as_standard_layout().into_owned();
            let b_grad = g.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = g.dot(&self.layers[i].w.t());
                // input of layer i is tanh output of layer i-1
                upstream.zip_mut_with(input, |u, h| *u *= 1.0 - h * h);
                g = upstream;
            }
            grads.push(Linear { w: w_grad, b: b_grad });
        }
        grads.reverse();
        grads
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn orthogonal_columns() {
        let mut rng = rng_from_seed(1);
        for (i, o) in [(16, 8), (8, 16), (5, 5)] {
            let l = Linear::orthogonal(i, o, 1.0, &mut rng);
            let gram = if i >= o { l.w.t().dot(&l.w) } else { l.w.dot(&l.w.t()) };
            let n = gram.nrows();
            for r in 0..n {
                for c in 0..n {
                    let expected = if r == c { 1.0 } else { 0.0 };
                    assert!((gram[(r, c)] - expected).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        let x = array![[0.3, -0.2, 0.9], [-1.0, 0.5, 0.1]];
        // loss = sum(out * c)
        let c = array![[1.0, -2.0], [0.5, 0.25]];
        let loss = |n: &Mlp| (n.forward(&x) * &c).sum();
        let (_, acts) = net.forward_cached(&x);
        let grads = net.backward(&acts, c.clone());
        let h = 1e-6;
        for li in 0..net.layers.len() {
            for idx in 0..net.layers[li].w.len() {
                let mut p = net.clone();
                p.layers[li].slices_mut()[0][idx] += h;
                let mut m = net.clone();
                m.layers[li].slices_mut()[0][idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = grads[li].slices()[0][idx];
                assert!((fd - an).abs() < 1e-7, "layer {li} w[{idx}]: {fd} vs {an}");
            }
        }
    }
}
