//! Named parameter tensors with per-parameter Adam moments.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::tape::Grads;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Handle to a registered parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// All trainable state for one model: tensors, Adam moments, step counter
/// and the RNG seed the parameters were initialized from.
pub struct ParamStore {
    names: Vec<String>,
    by_name: HashMap<String, ParamId>,
    tensors: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    // Tensors whose moments are still exactly zero can skip the dense Adam
    // update when they also received no gradient: the update is identically 0.
    touched: Vec<bool>,
    step: u64,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            by_name: HashMap::new(),
            tensors: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            touched: Vec::new(),
            step: 0,
            seed,
        }
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        self.m.push(vec![0.0; tensor.len()]);
        self.v.push(vec![0.0; tensor.len()]);
        self.touched.push(false);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.m[id.0], &self.v[id.0])
    }

    pub(crate) fn set_moments(&mut self, id: ParamId, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        let n = self.tensors[id.0].len();
        if m.len() != n || v.len() != n {
            return Err(Error::Shape(format!(
                "optimizer state for `{}` has wrong length",
                self.names[id.0]
            )));
        }
        self.touched[id.0] = m.iter().any(|x| *x != 0.0) || v.iter().any(|x| *x != 0.0);
        self.m[id.0] = m;
        self.v[id.0] = v;
        Ok(())
    }

    /// One Adam update over every registered tensor. Parameters without a
    /// gradient slot and with all-zero moments are left untouched (their
    /// update would be exactly zero). Non-finite gradients abort the step
    /// before any parameter moves.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        for id in 0..self.tensors.len() {
            if let Some(g) = grads.get(ParamId(id)) {
                if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
                    let _ = bad;
                    return Err(Error::NonFiniteGradient {
                        param: self.names[id].clone(),
                        step: self.step,
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for id in 0..self.tensors.len() {
            let slot = grads.get(ParamId(id));
            if slot.is_none() && !self.touched[id] {
                continue;
            }
            if slot.is_some() {
                self.touched[id] = true;
            }
            let zero;
            let g = match slot {
                Some(g) => g,
                None => {
                    zero = vec![0.0; self.tensors[id].len()];
                    &zero[..]
                }
            };
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let data = self.tensors[id].data_mut();
            for k in 0..data.len() {
                // Gradient slots may be shorter than the tensor when only a
                // prefix of rows was touched; the tail gradient is zero.
                let gk = if k < g.len() { g[k] } else { 0.0 };
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            if !self.tensors[id].all_finite() {
                return Err(Error::NonFiniteParam {
                    param: self.names[id].clone(),
                    step: self.step,
                });
            }
        }
        Ok(())
    }
}
