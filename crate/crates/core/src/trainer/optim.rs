use crate::nn::params::{flatten, Params};

use super::TrainConfig;

/// Adam with decoupled weight decay:
/// `p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new<M: Params>(model: &M, cfg: &TrainConfig) -> Self {
        let n = crate::nn::params::param_count(model);
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step<M: Params>(&mut self, model: &mut M, grad: &M, lr: f64) {
        let g = flatten(grad);
        assert_eq!(g.len(), self.m.len(), "gradient layout does not match optimizer state");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.eps, 1.0 - lr * self.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        model.visit_mut("", &mut |_, _, params| {
            for (i, p) in params.iter_mut().enumerate() {
                let j = offset + i;
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += params.len();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use ndarray::{array, Array1};

    fn linear(w: f64, b: f64) -> Linear {
        Linear { weight: array![[w]], bias: Array1::from_elem(1, b) }
    }

    // Reference values worked by hand from the update rule.
    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = TrainConfig { weight_decay: 0.01, ..Default::default() };
        let mut model = linear(1.0, -2.0);
        let grad = linear(0.5, -3.0);
        let mut opt = AdamW::new(&model, &cfg);
        opt.step(&mut model, &grad, 0.1);
        // step 1: m_hat = g, v_hat = g^2, so the update is lr * sign(g) (up to eps)
        let w = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 0.5 / (0.5 + 1e-8);
        let b = -2.0 * (1.0 - 0.1 * 0.01) - 0.1 * -3.0 / (3.0 + 1e-8);
        assert!((model.weight[[0, 0]] - w).abs() < 1e-15);
        assert!((model.bias[0] - b).abs() < 1e-15);
        assert!((model.weight[[0, 0]] - 0.899).abs() < 1e-7);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut model = linear(3.0, -4.0);
        let mut opt = AdamW::new(&model, &cfg);
        for _ in 0..2000 {
            let grad = linear(2.0 * model.weight[[0, 0]], 2.0 * model.bias[0]);
            opt.step(&mut model, &grad, 0.01);
        }
        assert!(model.weight[[0, 0]].abs() < 1e-2 && model.bias[0].abs() < 1e-2);
        assert_eq!(opt.steps_taken(), 2000);
    }
}
