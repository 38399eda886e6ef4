//! Adam with L2 weight decay folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Matrix]) -> Self {
        let zeros = |p: &Matrix| Matrix::zeros(p.rows(), p.cols());
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. `names` only labels errors.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], names: &[&str]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[k].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                let name = names.get(k).copied().unwrap_or("?");
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for k in 0..params.len() {
            let p = params[k].data_mut();
            let g = grads[k].data();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for i in 0..p.len() {
                let gi = g[i] + weight_decay * p[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Drops rows of the moment buffers of tensor `k`, mirroring a parameter
    /// that lost input rows.
    pub fn keep_rows(&mut self, k: usize, rows: &[usize]) {
        self.first[k] = self.first[k].select_rows(rows);
        self.second[k] = self.second[k].select_rows(rows);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar Adam with L2 in the gradient.
    fn scalar_adam(mut x: f64, grads: &[f64], cfg: AdamConfig) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, &g0) in grads.iter().enumerate() {
            let g = g0 + cfg.weight_decay * x;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        x
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut params = vec![Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap()];
        let before = params.clone();
        let mut st = AdamState::new(cfg, &params);
        for _ in 0..5 {
            st.step(&mut params, &[Matrix::zeros(1, 2)], &["w"]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut params = vec![Matrix::zeros(1, 1)];
        let mut st = AdamState::new(cfg, &params);
        st.step(&mut params, &[Matrix::filled(1, 1, 1.0)], &["w"]).unwrap();
        let expected = scalar_adam(0.0, &[1.0], cfg);
        assert_eq!(params[0][(0, 0)], expected);
        assert!((expected + 0.01).abs() < 1e-8);
    }

    #[test]
    fn matches_scalar_reference_with_decay() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.2, 0.05, 2.0, -0.4];
        let mut params = vec![Matrix::filled(1, 1, 0.7)];
        let mut st = AdamState::new(cfg, &params);
        for &g in &grads {
            st.step(&mut params, &[Matrix::filled(1, 1, g)], &["w"]).unwrap();
        }
        assert!((params[0][(0, 0)] - scalar_adam(0.7, &grads, cfg)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut params = vec![Matrix::zeros(1, 1)];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        let err = st
            .step(&mut params, &[Matrix::filled(1, 1, f64::NAN)], &["theta1"])
            .unwrap_err();
        assert!(err.to_string().contains("non-finite gradient"));
    }
}
