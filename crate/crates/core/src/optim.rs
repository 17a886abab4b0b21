use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    /// One moment buffer per parameter group, sized by `sizes`.
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. `params[g]` and `grads[g]` must match the sizes
    /// given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.first.len(), "parameter group count");
        assert_eq!(grads.len(), self.first.len(), "gradient group count");
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step);
        let bias2 = 1.0 - c.beta2.powi(self.step);
        for (g, (p, grad)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[g], &mut self.second[g]);
            assert_eq!(p.len(), m.len(), "parameter group {g} size");
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * p[i]);
            }
        }
    }
}
