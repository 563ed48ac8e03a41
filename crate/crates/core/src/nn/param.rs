use ndarray::{Array, Dimension};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::Real;

/// A named parameter tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F, D: Dimension> {
    name: String,
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
    pub frozen: bool,
}

impl<F: Real, D: Dimension> Param<F, D> {
    pub fn zeros(name: impl Into<String>, shape: D) -> Self {
        Self {
            name: name.into(),
            value: Array::zeros(shape.clone()),
            grad: Array::zeros(shape),
            frozen: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// Fills the tensor from a stream keyed by `(seed, name)`.
    pub fn init(&mut self, seed: u64, fan_in: usize) {
        let vals = init_uniform(seed, &self.name, fan_in, self.value.len());
        for (v, x) in self.value.iter_mut().zip(vals) {
            *v = F::lit(x);
        }
    }

    pub fn as_ref(&self) -> ParamRef<'_, F> {
        ParamRef {
            name: &self.name,
            shape: self.value.shape(),
            value: self.value.as_slice().expect("standard layout"),
            grad: self.grad.as_slice().expect("standard layout"),
            frozen: self.frozen,
        }
    }

    pub fn as_mut(&mut self) -> ParamMut<'_, F> {
        ParamMut {
            name: &self.name,
            shape: self.value.shape().to_vec(),
            value: self.value.as_slice_mut().expect("standard layout"),
            grad: self.grad.as_slice_mut().expect("standard layout"),
            frozen: &mut self.frozen,
        }
    }
}

/// Read-only flat view of a parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct ParamRef<'a, F> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub value: &'a [F],
    pub grad: &'a [F],
    pub frozen: bool,
}

/// Mutable flat view of a parameter tensor.
#[derive(Debug)]
pub struct ParamMut<'a, F> {
    pub name: &'a str,
    pub shape: Vec<usize>,
    pub value: &'a mut [F],
    pub grad: &'a mut [F],
    pub frozen: &'a mut bool,
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) values drawn from a stream that
/// depends only on the seed and the tensor name.
pub fn init_uniform(seed: u64, name: &str, fan_in: usize, len: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}
