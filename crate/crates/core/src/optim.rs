//! AdamW with bias correction and decoupled weight decay.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::policy::{ParamKind, PolicyDims};
use crate::tape::Gradients;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(shapes: &[usize], config: AdamWConfig) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NumericAbort(format!(
                "non-finite gradient at optimizer step {}",
                self.step + 1
            )));
        }
        if params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter arrays, optimizer tracks {}",
                params.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (slot, p) in params.iter_mut().enumerate() {
            // Parameters that did not reach the loss have no gradient entry.
            let zeros;
            let mut g = grads.slot(slot);
            if g.is_empty() {
                zeros = vec![0.0; p.len()];
                g = &zeros;
            }
            if g.len() != p.len() || self.m[slot].len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "slot {slot}: {} params, {} grads",
                    p.len(),
                    g.len()
                )));
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..p.len() {
                p[i] -= lr * c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, dims: PolicyDims) -> Checkpoint {
        let mut arrays = Vec::with_capacity(2 * self.m.len());
        for kind in ParamKind::ALL {
            arrays.push((format!("m.{}", kind.name()), self.m[kind.slot()].clone()));
            arrays.push((format!("v.{}", kind.name()), self.v[kind.slot()].clone()));
        }
        Checkpoint {
            dims: [dims.vocab as u32, dims.embed as u32, dims.hidden as u32],
            counter: self.step,
            arrays,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dims: PolicyDims, config: AdamWConfig) -> Result<Self> {
        let expected = [dims.vocab as u32, dims.embed as u32, dims.hidden as u32];
        if ckpt.dims != expected {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state dims {:?}, policy dims {:?}",
                ckpt.dims, expected
            )));
        }
        let mut opt = Self::new(&[], config);
        for kind in ParamKind::ALL {
            for (prefix, store) in [("m", &mut opt.m), ("v", &mut opt.v)] {
                let name = format!("{prefix}.{}", kind.name());
                let values = ckpt
                    .array(&name)
                    .ok_or_else(|| Error::ShapeMismatch(format!("missing array {name}")))?;
                if values.len() != kind.len(dims) {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: {} values, expected {}",
                        values.len(),
                        kind.len(dims)
                    )));
                }
                store.push(values.to_vec());
            }
        }
        opt.step = ckpt.counter;
        Ok(opt)
    }

    pub fn save(&self, path: &Path, dims: PolicyDims) -> Result<()> {
        self.to_checkpoint(dims).save(path)
    }

    pub fn load(path: &Path, dims: PolicyDims, config: AdamWConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, dims, config)
    }
}

/// Rescales `grads` to `max_norm` when larger; returns the original norm if it did.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> Option<f64> {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
        Some(norm)
    } else {
        None
    }
}
