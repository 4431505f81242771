//! Named parameter tensors and the Adam optimizer.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// FNV-1a hash of a tensor name; gives each tensor its own derived RNG
/// stream so initialization is independent of creation order.
pub fn name_tag(name: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in name.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Ordered map of named f64 tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor: {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor: {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.entries.values().map(Array2::len).sum()
    }

    /// Xavier-normal matrix: std = sqrt(2 / (fan_in + fan_out)), seeded per
    /// tensor name.
    pub fn init_xavier(&mut self, name: &str, rows: usize, cols: usize, seed: u64) {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let mut rng = Rng::from_tags(seed, &[name_tag(name)]);
        self.insert(name, Array2::from_shape_fn((rows, cols), |_| rng.normal() * std));
    }

    /// Small-normal embedding table (std 0.02), seeded per tensor name.
    pub fn init_embedding(&mut self, name: &str, rows: usize, cols: usize, seed: u64) {
        let mut rng = Rng::from_tags(seed, &[name_tag(name)]);
        self.insert(name, Array2::from_shape_fn((rows, cols), |_| rng.normal() * 0.02));
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) {
        self.insert(name, Array2::from_elem((rows, cols), value));
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates plus the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// One bias-corrected Adam update over every gradient in `grads`. Tensors
/// without a gradient this step are left untouched (their moments keep their
/// previous values and decay only when next updated).
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Array2<f64>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (name, g) in grads {
        let theta = params
            .try_get(name)
            .ok_or_else(|| Error::ConfigMismatch(format!("gradient for unknown tensor {name}")))?;
        if g.dim() != theta.dim() {
            return Err(Error::ConfigMismatch(format!(
                "gradient shape {:?} != parameter shape {:?} for {name}",
                g.dim(),
                theta.dim()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Array2::zeros(g.dim()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Array2::zeros(g.dim()));
        ndarray::Zip::from(m.view_mut()).and(g).for_each(|mv, &gv| {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
        });
        ndarray::Zip::from(v.view_mut()).and(g).for_each(|vv, &gv| {
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
        });
        let theta = params.get_mut(name);
        ndarray::Zip::from(theta.view_mut()).and(&*m).and(&*v).for_each(|t, &mv, &vv| {
            let m_hat = mv / bc1;
            let v_hat = vv / bc2;
            *t -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Array2::from_elem((1, 1), v));
        s
    }

    fn scalar_grad(g: f64) -> BTreeMap<String, Array2<f64>> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Array2::from_elem((1, 1), g));
        m
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = scalar_store(1.5);
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut params, &scalar_grad(0.0), &mut state, 0.1).unwrap();
        }
        assert_eq!(params.get("w")[[0, 0]], 1.5);
        assert_eq!(state.m["w"][[0, 0]], 0.0);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn first_step_magnitude_is_approximately_lr() {
        // t=1: m̂ = g, v̂ = g², Δθ = lr·g/(|g| + ε) ≈ lr·sign(g).
        for g in [0.3, -2.0, 17.0] {
            let mut params = scalar_store(0.0);
            let mut state = AdamState::new();
            adam_step(&mut params, &scalar_grad(g), &mut state, 1e-3).unwrap();
            let delta = params.get("w")[[0, 0]];
            let expected = -1e-3 * g / (g.abs() + ADAM_EPS);
            assert!((delta - expected).abs() < 1e-15, "g={g}: delta {delta}");
            assert!((delta.abs() - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectories_replay_bit_identically() {
        let run = || {
            let mut params = scalar_store(1.0);
            let mut state = AdamState::new();
            for i in 1..=50 {
                // Deterministic synthetic gradient sequence.
                let g = ((i as f64) * 0.37).sin();
                adam_step(&mut params, &scalar_grad(g), &mut state, 3e-3).unwrap();
            }
            (params.get("w")[[0, 0]], state.m["w"][[0, 0]], state.v["w"][[0, 0]])
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_evaluated_second_step() {
        // Constant unit gradient: m̂ₜ = 1 and v̂ₜ = 1 at every step, so each
        // update is exactly lr/(1 + ε). Verified by the recurrence:
        // m₂ = 0.9·0.1 + 0.1 = 0.19, m̂₂ = 0.19/(1 − 0.81) = 1;
        // v₂ = 0.999·0.001 + 0.001 = 0.001999 = 1 − 0.999², so v̂₂ = 1.
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new();
        adam_step(&mut params, &scalar_grad(1.0), &mut state, 0.01).unwrap();
        adam_step(&mut params, &scalar_grad(1.0), &mut state, 0.01).unwrap();
        let expect = -2.0 * 0.01 / (1.0 + ADAM_EPS);
        assert!((params.get("w")[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = scalar_store(0.0);
        let mut state = AdamState::new();
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Array2::<f64>::zeros((2, 2)));
        assert!(adam_step(&mut params, &g, &mut state, 0.01).is_err());
        let mut g2 = BTreeMap::new();
        g2.insert("nope".to_string(), Array2::<f64>::zeros((1, 1)));
        assert!(adam_step(&mut params, &g2, &mut state, 0.01).is_err());
    }

    #[test]
    fn init_is_name_seeded_not_order_seeded() {
        let mut a = ParamStore::new();
        a.init_xavier("x", 3, 3, 7);
        a.init_xavier("y", 3, 3, 7);
        let mut b = ParamStore::new();
        b.init_xavier("y", 3, 3, 7);
        b.init_xavier("x", 3, 3, 7);
        assert_eq!(a.get("x"), b.get("x"));
        assert_eq!(a.get("y"), b.get("y"));
        assert_ne!(a.get("x"), a.get("y"));
    }
}
