//! Dense 64-bit tensors and the named parameter store.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major array of f64 with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    /// Same length as `values` when `requires_grad`, empty otherwise.
    /// Backward passes accumulate into this, they never overwrite.
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            requires_grad: false,
            grad: Vec::new(),
        }
    }

    pub fn constant(shape: &[usize], v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![v; n],
            requires_grad: false,
            grad: Vec::new(),
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Dimension(format!(
                "value count {} does not match shape {:?} (expects {})",
                values.len(),
                shape,
                n
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: Vec::new(),
        })
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn requires_grad(mut self) -> Tensor {
        self.requires_grad = true;
        self.grad = vec![0.0; self.values.len()];
        self
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = 0.0;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Insertion-ordered map from parameter path to tensor. Iteration order is
/// the construction order, which makes optimizer sweeps and checkpoint
/// layouts deterministic. All stored tensors carry gradient slots.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    params: IndexMap<String, Tensor>,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl ParameterStore {
    pub fn new(seed: u64) -> ParameterStore {
        ParameterStore {
            params: IndexMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn insert(&mut self, path: &str, t: Tensor) -> Result<()> {
        if self.params.contains_key(path) {
            return Err(Error::Config(format!("duplicate parameter path {path:?}")));
        }
        let t = if t.requires_grad { t } else { t.requires_grad() };
        self.params.insert(path.to_string(), t);
        Ok(())
    }

    /// Weights drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn init_uniform(&mut self, path: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| (2.0 * self.rng.gen::<f64>() - 1.0) * bound)
            .collect();
        self.insert(path, Tensor::from_values(shape, values)?)
    }

    pub fn init_zeros(&mut self, path: &str, shape: &[usize]) -> Result<()> {
        self.insert(path, Tensor::zeros(shape))
    }

    pub fn init_constant(&mut self, path: &str, shape: &[usize], v: f64) -> Result<()> {
        self.insert(path, Tensor::constant(shape, v))
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| Error::Config(format!("unknown parameter path {path:?}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::Config(format!("unknown parameter path {path:?}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Accumulate a gradient contribution for one parameter.
    pub fn accumulate_grad(&mut self, path: &str, contrib: &[f64]) -> Result<()> {
        let t = self.get_mut(path)?;
        if contrib.len() != t.values.len() {
            return Err(Error::Dimension(format!(
                "gradient length {} does not match parameter {path:?} of {} entries",
                contrib.len(),
                t.values.len()
            )));
        }
        for (g, c) in t.grad.iter_mut().zip(contrib) {
            *g += c;
        }
        Ok(())
    }
}
