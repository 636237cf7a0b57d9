use super::store::{Grads, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with decoupled weight decay: the decay shrinks the parameter
/// directly by `lr * weight_decay` before the moment-based update, so it
/// never enters the moment estimates.
pub struct AdamW<S> {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<ParamId, Tensor<S>>,
    v: BTreeMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update using `grads`; parameters without a gradient are
    /// left untouched.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Grads<S>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for i in 0..p.len() {
                let gi = g.data()[i].to_f();
                let mi = c.beta1 * m.data()[i].to_f() + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v.data()[i].to_f() + (1.0 - c.beta2) * gi * gi;
                m.data_mut()[i] = S::from_f(mi);
                v.data_mut()[i] = S::from_f(vi);
                let mut pi = p.data()[i].to_f();
                pi -= c.lr * c.weight_decay * pi;
                pi -= c.lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                p.data_mut()[i] = S::from_f(pi);
            }
        }
    }

    /// Optimizer state as named tensors for checkpointing. Moment names
    /// are prefixed with `optim.m.` / `optim.v.`; the step count rides
    /// along as a one-element tensor.
    pub fn export_state(&self, store: &ParamStore<S>) -> Vec<(String, Tensor<S>)> {
        let mut out = vec![(
            "optim.step".to_string(),
            Tensor::vector(vec![S::from_f(self.step as f64)]),
        )];
        for (id, m) in &self.m {
            out.push((format!("optim.m.{}", store.name_of(*id)), m.clone()));
        }
        for (id, v) in &self.v {
            out.push((format!("optim.v.{}", store.name_of(*id)), v.clone()));
        }
        out
    }

    pub fn import_state(
        &mut self,
        store: &ParamStore<S>,
        tensors: &BTreeMap<String, Tensor<S>>,
    ) -> Result<(), String> {
        let step = tensors
            .get("optim.step")
            .ok_or_else(|| "missing optim.step".to_string())?;
        self.step = step.data()[0].to_f().round() as u64;
        self.m.clear();
        self.v.clear();
        for (name, t) in tensors {
            if let Some(param_name) = name.strip_prefix("optim.m.") {
                let id = store
                    .id_of(param_name)
                    .ok_or_else(|| format!("unknown parameter {param_name:?}"))?;
                self.m.insert(id, t.clone());
            } else if let Some(param_name) = name.strip_prefix("optim.v.") {
                let id = store
                    .id_of(param_name)
                    .ok_or_else(|| format!("unknown parameter {param_name:?}"))?;
                self.v.insert(id, t.clone());
            }
        }
        Ok(())
    }
}
