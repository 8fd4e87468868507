//! Adam with per-parameter step counts, so parameters added mid-training
//! (new discriminator stages) start with fresh bias correction.

use std::collections::BTreeMap;

use crate::nn::{ModelWeights, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: BTreeMap<String, u64>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter named in `grads`.
    pub fn update(&mut self, weights: &mut ModelWeights, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        for (name, g) in grads {
            let Some(p) = weights.params.get_mut(name) else { continue };
            let n = p.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let t = self.t.entry(name.clone()).or_insert(0);
            *t += 1;
            let c1 = 1.0 - self.beta1.powi(*t as i32);
            let c2 = 1.0 - self.beta2.powi(*t as i32);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *x -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// Moment tensors keyed `adam.m.<name>` / `adam.v.<name>`.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, m) in &self.m {
            out.insert(format!("adam.m.{k}"), Tensor::from_vec(m.clone()));
        }
        for (k, v) in &self.v {
            out.insert(format!("adam.v.{k}"), Tensor::from_vec(v.clone()));
        }
        out
    }

    /// Inverse of [`Adam::to_tensors`]; returns the remaining tensors.
    pub fn take_from_tensors(&mut self, tensors: BTreeMap<String, Tensor>, t: BTreeMap<String, u64>) -> BTreeMap<String, Tensor> {
        let mut rest = BTreeMap::new();
        for (k, v) in tensors {
            if let Some(name) = k.strip_prefix("adam.m.") {
                self.m.insert(name.to_string(), v.into_data());
            } else if let Some(name) = k.strip_prefix("adam.v.") {
                self.v.insert(name.to_string(), v.into_data());
            } else {
                rest.insert(k, v);
            }
        }
        self.t = t;
        rest
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = ModelWeights {
            config: ModelConfig::default(),
            params: BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![1.0, -1.0, 0.0]))]),
        };
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let grads = BTreeMap::from([("p".to_string(), vec![0.5, -2.0, 0.0])]);
        adam.update(&mut w, &grads, 0.1);
        let p = w.params["p"].data();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(p[2], 0.0);
        assert_eq!(adam.t["p"], 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut w = ModelWeights {
            config: ModelConfig::default(),
            params: BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![3.0]))]),
        };
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let x = w.params["p"].data()[0];
            adam.update(&mut w, &BTreeMap::from([("p".to_string(), vec![2.0 * x])]), 0.01);
        }
        assert!(w.params["p"].data()[0].abs() < 1e-2);
    }
}
