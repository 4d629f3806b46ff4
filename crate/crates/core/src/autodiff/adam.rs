use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// First/second moment accumulators for every parameter in a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    cfg: AdamConfig,
    slots: Vec<Option<Moments>>,
    steps: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            slots: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of completed [`AdamState::step`] calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn slot(&mut self, id: ParamId, len: usize) -> &mut Moments {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        let lr = self.cfg.lr;
        self.slots[id.0].get_or_insert_with(|| Moments {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        })
    }

    /// Per-parameter learning rate override.
    pub fn set_lr(&mut self, store: &ParamStore, id: ParamId, lr: f64) {
        let len = store.get(id).values.len();
        self.slot(id, len).lr = lr;
    }

    pub fn lr(&self, id: ParamId) -> f64 {
        self.slots
            .get(id.0)
            .and_then(|s| s.as_ref())
            .map_or(self.cfg.lr, |s| s.lr)
    }

    /// Re-indexes the rows of a parameter's moments after a structural edit.
    /// `mapping[new_row]` names the old row to copy, or `None` for fresh zeros.
    pub fn remap_rows(&mut self, id: ParamId, row_width: usize, mapping: &[Option<usize>]) {
        let Some(Some(slot)) = self.slots.get_mut(id.0) else { return };
        let remap = |old: &[f64]| {
            let mut out = vec![0.0; mapping.len() * row_width];
            for (new, src) in mapping.iter().enumerate() {
                if let Some(src) = src {
                    out[new * row_width..(new + 1) * row_width]
                        .copy_from_slice(&old[src * row_width..(src + 1) * row_width]);
                }
            }
            out
        };
        slot.m = remap(&slot.m);
        slot.v = remap(&slot.v);
    }

    /// Bias-corrected Adam update for every parameter that has a gradient.
    /// Parameters without a gradient (unused this step) are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        for id in grads.ids() {
            let g = grads.get(id).expect("listed id");
            let p_len = store.get(id).values.len();
            if g.len() != p_len {
                return Err(Error::ShapeMismatch {
                    context: format!("adam gradient for {}", store.get(id).name),
                    expected: store.get(id).shape.clone(),
                    actual: vec![g.len()],
                });
            }
            let slot = self.slot(id, p_len);
            if slot.m.len() != p_len {
                return Err(Error::ShapeMismatch {
                    context: format!("adam moments for {}", store.get(id).name),
                    expected: store.get(id).shape.clone(),
                    actual: vec![slot.m.len()],
                });
            }
            slot.step += 1;
            let bc1 = 1.0 - beta1.powi(slot.step as i32);
            let bc2 = 1.0 - beta2.powi(slot.step as i32);
            let lr = slot.lr;
            let values = &mut store.get_mut(id).values;
            for i in 0..p_len {
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g[i];
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", &[1], vec![v]);
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = one_param(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut g = ParamGrads::default();
        g.insert(id, vec![1.0]);
        adam.step(&mut s, &g).unwrap();
        assert!((s.values(id)[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut s, id) = one_param(0.7);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut g = ParamGrads::default();
        g.insert(id, vec![0.0]);
        for _ in 0..5 {
            adam.step(&mut s, &g).unwrap();
        }
        assert_eq!(s.values(id)[0], 0.7);
    }

    #[test]
    fn constant_gradient_steps_stay_at_lr() {
        // Hand iteration: m_t/(1-b1^t) = 1 and v_t/(1-b2^t) = 1 for constant g = 1,
        // so every step is lr / (1 + eps).
        let (mut s, id) = one_param(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut g = ParamGrads::default();
        g.insert(id, vec![1.0]);
        let mut prev = 0.0;
        for _ in 0..2 {
            adam.step(&mut s, &g).unwrap();
            let cur = s.values(id)[0];
            assert!(((prev - cur) - 1e-3 / (1.0 + 1e-8)).abs() < 1e-12);
            prev = cur;
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (mut s, id) = one_param(0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut g = ParamGrads::default();
        g.insert(id, vec![1.0, 2.0]);
        assert!(matches!(adam.step(&mut s, &g), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn remap_keeps_selected_rows() {
        let mut s = ParamStore::new();
        let id = s.add("p", &[3, 2], vec![0.0; 6]);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut g = ParamGrads::default();
        g.insert(id, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        adam.step(&mut s, &g).unwrap();
        adam.remap_rows(id, 2, &[Some(2), None, Some(0), Some(0)]);
        let slot = adam.slots[id.0].as_ref().unwrap();
        assert_eq!(slot.m.len(), 8);
        assert!((slot.m[0] - 0.3).abs() < 1e-12);
        assert_eq!(slot.m[2], 0.0);
        assert!((slot.m[6] - 0.1).abs() < 1e-12);
    }
}
