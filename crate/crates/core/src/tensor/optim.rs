use super::state::{Gradients, ModelState};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moment buffers are created lazily per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", config.lr)));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Gradients for frozen or unknown parameters are
    /// ignored; frozen parameters stay bit-identical.
    pub fn step(&mut self, state: &mut ModelState, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            if state.is_frozen(name) {
                continue;
            }
            let Some(param) = state.get_mut(name) else {
                continue;
            };
            if param.len() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    g.len(),
                    param.len()
                )));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((p, gi), mi), vi) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.values_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_state(v: f64) -> ModelState {
        let mut s = ModelState::new();
        s.insert("p.theta", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_state(3.0);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let g: Gradients = [("p.theta".to_string(), vec![0.0])].into();
        opt.step(&mut s, &g).unwrap();
        assert_eq!(s.get("p.theta").unwrap().data()[0], 3.0);
    }

    #[test]
    fn frozen_group_is_untouched() {
        let mut s = scalar_state(3.0);
        s.freeze("p");
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let g: Gradients = [("p.theta".to_string(), vec![5.0])].into();
        opt.step(&mut s, &g).unwrap();
        assert_eq!(s.get("p.theta").unwrap().data()[0].to_bits(), 3.0f64.to_bits());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Closed form: m̂ = g, v̂ = g², so Δθ = lr · g / (|g| + ε).
        let mut s = scalar_state(1.0);
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut opt = Adam::new(cfg).unwrap();
        let g: Gradients = [("p.theta".to_string(), vec![1.0])].into();
        opt.step(&mut s, &g).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.get("p.theta").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_lr() {
        assert!(matches!(
            Adam::new(AdamConfig { lr: 0.0, ..Default::default() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g: Gradients = [("a".to_string(), vec![3.0, 4.0])].into();
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-12);
    }
}
