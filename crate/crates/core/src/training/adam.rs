//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ParamStore,
    pub v: ParamStore,
    /// Updates applied so far.
    pub steps: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let mut zeros = ParamStore::new();
        for (name, t) in params.iter() {
            zeros.insert(name.clone(), Tensor::zeros(t.shape()));
        }
        Self {
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64, beta1: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingModel(format!("no gradient for `{name}`")))?;
            let m = self.m.get_mut(name).ok_or_else(|| Error::MissingModel(name.clone()))?;
            for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.v.get_mut(name).ok_or_else(|| Error::MissingModel(name.clone()))?;
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let (m, v) = (&self.m.get(name).expect("m").data(), &self.v.get(name).expect("v").data());
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
                *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let mut g = ParamStore::new();
        g.insert("w", Tensor::new(vec![2], vec![0.3, -2.0]).unwrap());
        let mut opt = Adam::new(&p);
        opt.update(&mut p, &g, 0.1, 0.5).unwrap();
        let w = p.get("w").unwrap().data();
        // Bias-corrected m/sqrt(v) is sign(g) on the first step.
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.steps, 1);
    }

    #[test]
    fn zero_rate_leaves_parameters_unchanged() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![3], vec![0.5, 2.0, -3.0]).unwrap());
        let before = p.clone();
        let mut g = ParamStore::new();
        g.insert("w", Tensor::new(vec![3], vec![1.0, 0.0, -7.0]).unwrap());
        let mut opt = Adam::new(&p);
        for _ in 0..3 {
            opt.update(&mut p, &g, 0.0, 0.9).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![5.0]).unwrap());
        let mut opt = Adam::new(&p);
        for _ in 0..2000 {
            let w = p.get("w").unwrap().data()[0];
            let mut g = ParamStore::new();
            g.insert("w", Tensor::new(vec![1], vec![2.0 * (w - 1.5)]).unwrap());
            opt.update(&mut p, &g, 0.05, 0.9).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - 1.5).abs() < 1e-3);
    }
}
