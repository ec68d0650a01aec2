//! All trainable parameters: the session encoder plus both agents.

use std::path::Path;

use crate::agents::{PolicyDims, PolicyParams};
use crate::error::{Error, Result};
use crate::session_encoder::{EncoderKind, EncoderWeights};
use crate::tensor::{Matrix, TensorSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderWeights,
    pub policy: PolicyParams,
}

impl Model {
    pub fn new(kind: EncoderKind, vocab: usize, dims: PolicyDims, seed: u64) -> Self {
        Model {
            encoder: EncoderWeights::new(kind, vocab, dims.d_se, seed),
            policy: PolicyParams::new(dims, seed.wrapping_add(0x5eed)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            encoder: self.encoder.zeros_like(),
            policy: self.policy.zeros_like(),
        }
    }

    pub fn dims(&self) -> PolicyDims {
        self.policy.dims()
    }

    pub fn for_each(&self, mut f: impl FnMut(&'static str, &Matrix)) {
        self.encoder.for_each(&mut f);
        self.policy.for_each(&mut f);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Matrix)) {
        self.encoder.for_each_mut(&mut f);
        self.policy.for_each_mut(&mut f);
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, scale: f64, other: &Model) {
        let mut others = Vec::new();
        other.for_each(|_, m| others.push(m.data().to_vec()));
        let mut i = 0;
        self.for_each_mut(|_, m| {
            crate::tensor::axpy(m.data_mut(), scale, &others[i]);
            i += 1;
        });
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.policy.is_finite()
    }

    /// Names of parameter matrices holding non-finite values.
    pub fn non_finite(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        self.for_each(|name, m| {
            if !m.is_finite() {
                bad.push(name);
            }
        });
        bad
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        self.encoder.to_tensors(&mut set);
        self.policy.to_tensors(&mut set);
        set
    }

    pub fn from_tensors(mut set: TensorSet) -> Result<Self> {
        let encoder = EncoderWeights::from_tensors(&mut set)?;
        let policy = PolicyParams::from_tensors(&mut set)?;
        if encoder.dim() != policy.dims().d_se {
            return Err(Error::Dim {
                what: "encoder width vs policy d_se",
                expected: policy.dims().d_se,
                got: encoder.dim(),
            });
        }
        Ok(Model { encoder, policy })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensors().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(TensorSet::load(path)?)
    }

    /// Rounds every parameter through `f32` so in-memory state matches a reload.
    pub fn quantize_f32(&mut self) {
        self.for_each_mut(|_, m| m.quantize_f32());
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model) {
        let mut g = Vec::new();
        grads.for_each(|_, m| g.push(m.data().to_vec()));
        if self.m.is_empty() {
            self.m = g.iter().map(|x| vec![0.0; x.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.for_each_mut(|_, p| {
            let (m, v, g) = (&mut ms[i], &mut vs[i], &g[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> PolicyDims {
        PolicyDims {
            d: 3,
            d_se: 4,
            d_proj: 2,
        }
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let mut model = Model::new(EncoderKind::Recurrent, 5, dims(), 1);
        let before = model.clone();
        let grads = model.zeros_like();
        let mut adam = Adam::new(0.1);
        adam.step(&mut model, &grads);
        assert_eq!(model, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut model = Model::new(EncoderKind::Attention, 5, dims(), 1);
        let before = model.clone();
        let mut grads = model.zeros_like();
        grads.policy.w1.set(0, 0, 3.0);
        Adam::new(0.01).step(&mut model, &grads);
        let moved = before.policy.w1.get(0, 0) - model.policy.w1.get(0, 0);
        assert!((moved - 0.01).abs() < 1e-8);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut model = Model::new(EncoderKind::Recurrent, 7, dims(), 3);
        model.quantize_f32();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        model.save(&p).unwrap();
        assert_eq!(Model::load(&p).unwrap(), model);
    }
}
