use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::{Gradients, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if store.is_frozen() {
            return Err(Error::Frozen);
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.raw_dim()));
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.raw_dim()));
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (self.m[i].as_ref().unwrap(), self.v[i].as_ref().unwrap());
            let p = store.get_mut(id)?;
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("p", Array4::from_elem((1, 1, 1, 2), 1.0));
        let mut grads = Gradients { grads: vec![None] };
        grads.grads[0] = Some(Array4::from_shape_vec((1, 1, 1, 2), vec![3.0, -0.5]).unwrap());
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }).unwrap();
        opt.step(&mut store, &grads).unwrap();
        let p = store.get(id);
        assert!((p[[0, 0, 0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[[0, 0, 0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("p", Array4::from_elem((1, 1, 1, 1), 5.0));
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }).unwrap();
        for _ in 0..500 {
            let g = store.get(id).mapv(|p| 2.0 * (p - 2.0));
            opt.step(&mut store, &Gradients { grads: vec![Some(g)] }).unwrap();
        }
        assert!((store.get(id)[[0, 0, 0, 0]] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn refuses_frozen_params() {
        let mut store = ParamStore::new();
        store.add("p", Array4::zeros((1, 1, 1, 1)));
        store.freeze();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let grads = Gradients { grads: vec![Some(Array4::ones((1, 1, 1, 1)))] };
        assert!(matches!(opt.step(&mut store, &grads), Err(Error::Frozen)));
        assert!(Adam::new(AdamConfig { learning_rate: 0.0, ..Default::default() }).is_err());
    }
}
