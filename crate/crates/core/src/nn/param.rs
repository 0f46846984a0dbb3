use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A trainable tensor: values plus an accumulated gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!("invalid tensor shape {shape:?}")));
        }
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        })
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        if values.len() != t.values.len() {
            return Err(Error::Config(format!(
                "shape {shape:?} needs {} values, got {}",
                t.values.len(),
                values.len()
            )));
        }
        t.values = values;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Shape descriptor of one named parameter, as recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Ordered, named collection of parameters. Order is fixed at construction
/// and defines the layout of gradient buffers and checkpoint blobs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: ParamTensor) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, idx: usize) -> &ParamTensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ParamTensor {
        &mut self.tensors[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut())
    }

    pub fn shapes(&self) -> Vec<ParamShape> {
        self.iter()
            .map(|(name, t)| ParamShape {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    /// A zeroed gradient buffer laid out like this set.
    pub fn grad_buffer(&self) -> Grads {
        Grads(self.tensors.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    /// Overwrites the `.grad` fields from a buffer.
    pub fn set_grads(&mut self, grads: &Grads) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            t.grad.copy_from_slice(g);
        }
    }

    pub fn values_snapshot(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.values.clone()).collect()
    }

    pub fn restore_values(&mut self, snapshot: &[Vec<f64>]) {
        for (t, v) in self.tensors.iter_mut().zip(snapshot) {
            t.values.copy_from_slice(v);
        }
    }
}

/// Gradient buffer aligned with a [`ParamSet`]'s parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= s);
    }

    /// Sums buffers in slice order.
    pub fn sum_ordered(parts: &[Grads], template: &ParamSet) -> Grads {
        let mut total = template.grad_buffer();
        for p in parts {
            total.accumulate(p);
        }
        total
    }
}

/// Glorot-uniform weights in ±√(6/(fan_in+fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    fan_in: usize,
    fan_out: usize,
    n: usize,
) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_shapes_and_duplicates() {
        assert!(ParamTensor::zeros(&[]).is_err());
        assert!(ParamTensor::zeros(&[3, 0]).is_err());
        assert!(ParamTensor::from_values(&[2], vec![1.0]).is_err());
        let mut set = ParamSet::new();
        set.push("w", ParamTensor::zeros(&[2]).unwrap()).unwrap();
        assert!(set.push("w", ParamTensor::zeros(&[2]).unwrap()).is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = glorot_uniform(&mut rng, 10, 5, 1000);
        let limit = (6.0f64 / 15.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= limit));
        assert!(w.iter().any(|x| x.abs() > limit * 0.9));
    }
}
