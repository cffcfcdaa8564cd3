use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use super::{ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter that has a gradient entry.
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| TensorError::MissingParam(name.clone()))?;
            if p.dim() != g.dim() {
                return Err(TensorError::Shape { op: "adam", left: p.dim(), right: g.dim() });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Array2::zeros(g.dim()));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = ParamStore::new();
        p.insert("w", array![[1.5, -2.0]]);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let g: BTreeMap<_, _> = [("w".to_string(), Array2::zeros((1, 2)))].into();
        adam.update(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("w", array![[0.0]]);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let g: BTreeMap<_, _> = [("w".to_string(), array![[1.0]])].into();
        adam.update(&mut p, &g).unwrap();
        // m̂ = 1, v̂ = 1, so Δ = -0.1 / (1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap()[[0, 0]] - expected).abs() < 1e-15);
    }
}
