use serde::{Deserialize, Serialize};

use super::params::{GradBuffer, ParamStore};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.0; t.shape().numel()]).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update of every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> Result<()> {
        if store.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err!(
                "optimizer tracks {} tensors, store has {}, gradients {}",
                self.m.len(),
                store.len(),
                grads.len()
            ));
        }
        self.t += 1;
        for id in 0..store.len() {
            adam_update(
                store.get_mut(id).data_mut(),
                grads.get(id),
                &mut self.m[id],
                &mut self.v[id],
                self.t,
                &self.config,
            )?;
        }
        Ok(())
    }
}

/// Bias-corrected Adam update for one flat parameter array at step `t` (1-based).
pub fn adam_update(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(shape_err!(
            "adam lengths differ: params {}, grads {}, m {}, v {}",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        ));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
        let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        params[i] = (params[i] as f64 - update) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3f32, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_unit_step_moves_by_learning_rate() {
        let mut p = vec![1.0f32];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &AdamConfig::default()).unwrap();
        // m̂ = v̂ = 1, step = lr / (1 + eps)
        assert!((1.0 - p[0] as f64 - 1e-4).abs() < 1e-7);
    }

    #[test]
    fn second_step_follows_recurrence() {
        let mut p = vec![0.0f32];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let cfg = AdamConfig::default();
        adam_update(&mut p, &[0.5], &mut m, &mut v, 1, &cfg).unwrap();
        let m1 = m[0];
        adam_update(&mut p, &[0.5], &mut m, &mut v, 2, &cfg).unwrap();
        assert!((m[0] - (0.9 * m1 + 0.1 * 0.5)).abs() < 1e-7);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut p = vec![0.0f32; 2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        assert!(adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &AdamConfig::default()).is_err());
    }
}
