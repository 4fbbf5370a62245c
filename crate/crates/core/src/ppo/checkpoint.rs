//! Binary policy checkpoints.
//!
//! Layout (little endian): magic `PEDXPPO1`, format version u32, variant u8,
//! action count u32 + speeds f64, observation layout hash (32 bytes), trained
//! env steps u64, seed u64, normalizer (dim u32, clip, count, mean, var), then the
//! policy and value networks (layer count u32, per layer in/out u32, weights, biases).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::loss::ActorCritic;
use super::net::{Linear, Mlp};
use super::normalize::RunningMeanStd;
use crate::env::{ActionSet, Observation, Variant, OBS_DIM, OBS_LAYOUT};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PEDXPPO1";
pub const FORMAT_VERSION: u32 = 1;

pub fn observation_layout_hash() -> [u8; 32] {
    Sha256::digest(OBS_LAYOUT.join(",").as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub action_set: ActionSet,
    pub obs_norm: RunningMeanStd,
    pub nets: ActorCritic,
    pub env_steps: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn normalized(&self, obs: &Observation) -> Vec<f64> {
        self.obs_norm.normalize(obs.as_slice())
    }

    pub fn action_logits(&self, obs: &Observation) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, OBS_DIM), self.normalized(obs)).expect("one row");
        self.nets.policy.forward(&x).row(0).to_vec()
    }

    pub fn action_probs(&self, obs: &Observation) -> Vec<f64> {
        let logits = self.action_logits(obs);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    /// Argmax action; ties resolve to the lowest index.
    pub fn greedy_action(&self, obs: &Observation) -> usize {
        let logits = self.action_logits(obs);
        let mut best = 0;
        for (i, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        let x = Array2::from_shape_vec((1, OBS_DIM), self.normalized(obs)).expect("one row");
        self.nets.value.forward(&x)[(0, 0)]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.bytes(&[self.variant.code()]);
        w.u32(self.action_set.len() as u32);
        w.f64s(self.action_set.speeds());
        w.bytes(&observation_layout_hash());
        w.u64(self.env_steps);
        w.u64(self.seed);
        w.u32(self.obs_norm.dim() as u32);
        w.f64(self.obs_norm.clip);
        w.f64(self.obs_norm.count);
        w.f64s(&self.obs_norm.mean);
        w.f64s(&self.obs_norm.var);
        for net in [&self.nets.policy, &self.nets.value] {
            w.u32(net.layers.len() as u32);
            for l in &net.layers {
                w.u32(l.inputs() as u32);
                w.u32(l.outputs() as u32);
                w.f64s(l.slices()[0]);
                w.f64s(l.slices()[1]);
            }
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a policy checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let variant = Variant::from_code(r.take(1)?[0]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n_actions = r.u32()? as usize;
        let action_set = ActionSet::new(r.f64s(n_actions)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if r.take(32)? != observation_layout_hash() {
            return Err(Error::Checkpoint("observation layout differs from this build".into()));
        }
        let env_steps = r.u64()?;
        let seed = r.u64()?;
        let dim = r.u32()? as usize;
        if dim != OBS_DIM {
            return Err(Error::Checkpoint(format!("normalizer has {dim} features, expected {OBS_DIM}")));
        }
        let clip = r.f64()?;
        let count = r.f64()?;
        let mean = r.f64s(dim)?;
        let var = r.f64s(dim)?;
        let policy = r.mlp()?;
        let value = r.mlp()?;
        if r.pos != data.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        if policy.input_dim() != OBS_DIM || value.input_dim() != OBS_DIM {
            return Err(Error::Checkpoint("network input size does not match observations".into()));
        }
        if policy.output_dim() != action_set.len() || value.output_dim() != 1 {
            return Err(Error::Checkpoint("network outputs do not match the action set".into()));
        }
        Ok(Self {
            variant,
            action_set,
            obs_norm: RunningMeanStd { mean, var, count, clip },
            nets: ActorCritic { policy, value },
            env_steps,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.bytes(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn mlp(&mut self) -> Result<Mlp> {
        let n = self.u32()? as usize;
        if n == 0 || n > 16 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let inputs = self.u32()? as usize;
            let outputs = self.u32()? as usize;
            if inputs.saturating_mul(outputs) > 1 << 24 {
                return Err(Error::Checkpoint("implausible layer size".into()));
            }
            let w = Array2::from_shape_vec((inputs, outputs), self.f64s(inputs * outputs)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let b = Array1::from(self.f64s(outputs)?);
            layers.push(Linear { w, b });
        }
        if layers.windows(2).any(|p| p[0].outputs() != p[1].inputs()) {
            return Err(Error::Checkpoint("layer sizes do not chain".into()));
        }
        Ok(Mlp { layers })
    }
}
