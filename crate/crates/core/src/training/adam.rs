use ndarray::{Array2, Zip};

use super::backward::Gradients;
use crate::model::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// First and second moment estimates, one pair per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<_> = params.arrays().iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let garrs = grads.arrays();
    let mut parrs = params.arrays_mut();
    if garrs.len() != parrs.len() || state.m.len() != parrs.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    for ((p, g), m) in parrs.iter().zip(&garrs).zip(&state.m) {
        if p.dim() != g.dim() || p.dim() != m.dim() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);
    for (((p, g), m), v) in parrs.iter_mut().zip(garrs).zip(&mut state.m).zip(&mut state.v) {
        Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(x: f64) -> ModelParams {
        ModelParams {
            embeddings: array![[x]],
            layers: vec![],
        }
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            embeddings: array![[g]],
            layers: vec![],
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grad(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.embeddings[[0, 0]], 0.7);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &grad(1.0), &mut st, &cfg).unwrap();
        adam_step(&mut p, &grad(1.0), &mut st, &cfg).unwrap();
        // Step 1: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 -> Δ = 0.1 / (1 + 1e-8).
        // Step 2: m = 0.19, v = 0.001999, m̂ = 0.19/0.19 = 1, v̂ = 0.001999/0.001999 = 1.
        let want = 1.0 - 2.0 * 0.1 / (1.0 + 1e-8);
        assert!((p.embeddings[[0, 0]] - want).abs() < 1e-12);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p);
        let mut prev = 0.0;
        for _ in 0..500 {
            adam_step(&mut p, &grad(-3.0), &mut st, &cfg).unwrap();
            let cur = p.embeddings[[0, 0]];
            assert!(((cur - prev) - 0.01).abs() < 1e-6);
            prev = cur;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p);
        let g = Gradients {
            embeddings: array![[1.0, 2.0]],
            layers: vec![],
        };
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
    }
}
