use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters. The learning rate default matches the training
/// schedule's base rate; beta/epsilon are the standard values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "adam: lr={} beta1={} beta2={} epsilon={} out of range",
                self.lr, self.beta1, self.beta2, self.epsilon
            )))
        }
    }
}

/// Per-tensor optimizer state: first/second moment estimates plus the step
/// counter used for bias correction. Persisted in checkpoints so training
/// resumes mid-run without a warm-up discontinuity.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step(
    param: &mut [f32],
    grad: &[f32],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("param/grad/state of equal length {}", param.len()),
            format!("grad {} state {}", grad.len(), state.m.len()),
        ));
    }
    cfg.validate()?;
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    let lr = cfg.lr as f32;
    let eps = cfg.epsilon as f32;
    let ibc1 = (1.0 / bc1) as f32;
    let ibc2 = (1.0 / bc2) as f32;
    for ((p, &g), (m, v)) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m * ibc1;
        let vhat = *v * ibc2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        // With bias correction, step 1 moves by ~lr * sign(g).
        let mut p = vec![1.0f32];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::with_lr(0.1);
        adam_step(&mut p, &[2.0], &mut s, &cfg).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-5, "got {}", p[0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_grad_leaves_param_fixed() {
        let mut p = vec![0.5f32];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p[0], 0.5);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut p = vec![0.0f32; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.0], &mut s, &AdamConfig::default()).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut p = vec![0.0f32];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig { lr: -1.0, ..AdamConfig::default() };
        assert!(adam_step(&mut p, &[1.0], &mut s, &cfg).is_err());
    }
}
