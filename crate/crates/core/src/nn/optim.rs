use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults: learning rate 5e-4 with decay rates
/// (0.1, 0.99) as the first and second moment rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
    /// Divide by `sqrt(v_hat) + epsilon`. With this off and both betas at 0 the
    /// update is exactly `theta - alpha * grad`.
    pub precondition: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 5e-4,
            beta1: 0.1,
            beta2: 0.99,
            epsilon: 1e-8,
            bias_correction: true,
            precondition: true,
        }
    }
}

impl AdamConfig {
    /// The usual (0.9, 0.999) decay rates at the same learning rate.
    pub fn conventional() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            ..Self::default()
        }
    }

    /// Plain gradient descent expressed as a degenerate Adam.
    pub fn sgd(alpha: f64) -> Self {
        Self {
            alpha,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            bias_correction: false,
            precondition: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.alpha)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon >= 0.0) || (self.precondition && self.epsilon == 0.0) {
            return Err(Error::Config(format!("invalid epsilon {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    /// One update of every tensor in `params`. Non-finite gradients are
    /// rejected before anything is modified.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &Gradients) -> Result<()> {
        if params.len() != grads.tensors.len()
            || params.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("gradient tensors do not match parameters".into()));
        }
        if grads.has_non_finite() {
            return Err(Error::Numeric("non-finite gradient passed to Adam".into()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }

        self.t += 1;
        let c = self.config;
        let (corr1, corr2) = if c.bias_correction {
            let t = self.t as i32;
            (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t))
        } else {
            (1.0, 1.0)
        };
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let step = if c.precondition {
                    m_hat / ((v[i] / corr2).sqrt() + c.epsilon)
                } else {
                    m_hat
                };
                p[i] -= c.alpha * step;
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut [&mut [f64]], grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(v: Vec<f64>) -> Gradients {
        Gradients { tensors: vec![v] }
    }

    #[test]
    fn defaults_follow_table() {
        let c = AdamConfig::default();
        assert_eq!((c.alpha, c.beta1, c.beta2, c.epsilon), (5e-4, 0.1, 0.99, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(AdamConfig::default()).unwrap();
        let mut p = vec![1.0, -2.0];
        adam_step(&mut [&mut p[..]], &grads(vec![0.0, 0.0]), &mut state).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_alpha() {
        // m_hat = v_hat = 1 after bias correction, so the step is alpha / (1 + eps)
        for (b1, b2) in [(0.9, 0.999), (0.1, 0.99)] {
            let cfg = AdamConfig {
                alpha: 0.1,
                beta1: b1,
                beta2: b2,
                ..AdamConfig::default()
            };
            let mut state = AdamState::new(cfg).unwrap();
            let mut p = vec![0.0];
            adam_step(&mut [&mut p[..]], &grads(vec![1.0]), &mut state).unwrap();
            assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_rejected_without_update() {
        let mut state = AdamState::new(AdamConfig::default()).unwrap();
        let mut p = vec![1.0];
        let err = adam_step(&mut [&mut p[..]], &grads(vec![f64::NAN]), &mut state);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(p, vec![1.0]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn degenerate_adam_reproduces_gradient_descent() {
        // L(theta) = 0.5 * (theta - 3)^2 * k; grad = k (theta - 3)
        let k = 2.5;
        let alpha = 0.1;
        let mut state = AdamState::new(AdamConfig::sgd(alpha)).unwrap();
        let mut theta = vec![10.0];
        let mut reference = 10.0f64;
        for _ in 0..50 {
            let g = k * (theta[0] - 3.0);
            adam_step(&mut [&mut theta[..]], &grads(vec![g]), &mut state).unwrap();
            reference -= alpha * k * (reference - 3.0);
            assert_eq!(theta[0].to_bits(), reference.to_bits());
        }
    }

    #[test]
    fn zero_betas_with_preconditioning_is_sign_descent() {
        let cfg = AdamConfig {
            alpha: 0.01,
            beta1: 0.0,
            beta2: 0.0,
            bias_correction: false,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg).unwrap();
        let mut p = vec![0.0, 0.0];
        adam_step(&mut [&mut p[..]], &grads(vec![4.0, -0.5]), &mut state).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn invalid_config() {
        assert!(AdamState::new(AdamConfig { beta1: 1.0, ..AdamConfig::default() }).is_err());
        assert!(AdamState::new(AdamConfig { alpha: 0.0, ..AdamConfig::default() }).is_err());
    }
}
