//! ADAM for gradient ascent.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One ascent step `x += lr · m̂ / (√v̂ + ε)`; `lr[i]` is the step size of
    /// parameter `i`.
    pub fn ascend(
        &mut self,
        x: &mut [f64],
        grad: &[f64],
        lr: impl Fn(usize) -> f64,
        cfg: &AdamConfig,
    ) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            x[i] += lr(i) * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut s = AdamState::new(2);
        let mut x = [0.0, 0.0];
        s.ascend(&mut x, &[3.0, -0.001], |_| 0.1, &AdamConfig::default());
        assert!((x[0] - 0.1).abs() < 1e-6);
        assert!((x[1] + 0.1).abs() < 1e-4);
    }

    #[test]
    fn climbs_a_concave_quadratic() {
        let mut s = AdamState::new(1);
        let mut x = [5.0];
        for _ in 0..2000 {
            let g = [-2.0 * (x[0] - 1.5)];
            s.ascend(&mut x, &g, |_| 0.05, &AdamConfig::default());
        }
        assert!((x[0] - 1.5).abs() < 1e-3);
    }
}
