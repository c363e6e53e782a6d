//! Adam optimizer over a named parameter store.
//!
//! All trainable parameters in this crate are Euclidean tensors (weights,
//! biases, attention vectors, curvature pre-images), so a single flat store
//! with the standard update covers everything. The store keeps insertion
//! order, which makes updates and serialization deterministic.

use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Array2<f64>,
    pub state: AdamState,
}

/// Named parameters plus optimizer state; one step counter for the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    pub step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            step: 0,
        }
    }

    /// Register a parameter; names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name: {name}"
        );
        let shape = value.dim();
        self.entries.push(ParamEntry {
            name,
            value,
            state: AdamState {
                m: Array2::zeros(shape),
                v: Array2::zeros(shape),
            },
        });
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let i = self
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"));
        &self.entries[i].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"));
        &mut self.entries[i].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One Adam step. `grads` pairs store indices with gradient tensors;
    /// parameters without a gradient keep their value and moments.
    pub fn adam_step(&mut self, grads: &[(usize, Array2<f64>)], cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for &(i, ref g) in grads {
            let entry = &mut self.entries[i];
            assert_eq!(entry.value.dim(), g.dim(), "gradient shape mismatch");
            ndarray::Zip::from(&mut entry.state.m)
                .and(g)
                .for_each(|m, &gi| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi);
            ndarray::Zip::from(&mut entry.state.v)
                .and(g)
                .for_each(|v, &gi| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi);
            ndarray::Zip::from(&mut entry.value)
                .and(&entry.state.m)
                .and(&entry.state.v)
                .for_each(|p, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn first_step_with_unit_gradient() {
        // m_hat = 1, v_hat = 1 -> param moves by ~lr
        let mut store = ParamStore::new();
        store.register("w", arr2(&[[1.0]]));
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        store.adam_step(&[(0, arr2(&[[1.0]]))], &cfg);
        let w = store.get("w")[(0, 0)];
        assert!((w - 0.9).abs() < 1e-6, "expected ~0.9, got {w}");
    }

    #[test]
    fn zero_gradient_keeps_value() {
        let mut store = ParamStore::new();
        store.register("w", arr2(&[[2.5, -1.0]]));
        let cfg = AdamConfig::default();
        store.adam_step(&[(0, arr2(&[[0.0, 0.0]]))], &cfg);
        assert_eq!(store.get("w"), &arr2(&[[2.5, -1.0]]));
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut store = ParamStore::new();
            store.register("w", arr2(&[[1.0, 2.0]]));
            let cfg = AdamConfig::default();
            for k in 0..20 {
                let g = arr2(&[[0.3 + k as f64 * 0.01, -0.2]]);
                store.adam_step(&[(0, g)], &cfg);
            }
            store.get("w").clone()
        };
        assert_eq!(run(), run());
    }
}
