use serde::{Deserialize, Serialize};

use super::param::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. State is keyed by parameter position, so the
/// same parameter order must be passed on every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for ((w, g), (mi, vi)) in p
                .value
                .iter_mut()
                .zip(&p.grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                if lr != 0.0 {
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut p = Param::new("w", vec![4], vec![-0.0, 1.5, -2.25, 1e-30]);
        p.grad = vec![0.3, -0.1, 7.0, -1e10];
        let before: Vec<u32> = p.value.iter().map(|v| v.to_bits()).collect();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..Default::default() });
        adam.step(&mut [&mut p]);
        adam.step(&mut [&mut p]);
        let after: Vec<u32> = p.value.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        let mut p = Param::new("w", vec![2], vec![1.0, 1.0]);
        p.grad = vec![0.5, -3.0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        assert!((p.value[0] - (1.0 - 2e-4)).abs() < 1e-7);
        assert!((p.value[1] - (1.0 + 2e-4)).abs() < 1e-7);
    }
}
