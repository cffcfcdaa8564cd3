use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

/// Named arrays in deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedArrays {
    arrays: BTreeMap<String, Array2<f64>>,
}

/// Trainable parameters.
pub type ParamStore = NamedArrays;
/// Non-trainable state such as running normalisation statistics.
pub type BufferStore = NamedArrays;

impl NamedArrays {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.arrays.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.arrays.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }
}

impl FromIterator<(String, Array2<f64>)> for NamedArrays {
    fn from_iter<T: IntoIterator<Item = (String, Array2<f64>)>>(iter: T) -> Self {
        Self { arrays: iter.into_iter().collect() }
    }
}

/// Uniform samples in `±sqrt(6 / (fan_in + fan_out))` for a
/// `fan_in x fan_out` matrix.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound))
}
