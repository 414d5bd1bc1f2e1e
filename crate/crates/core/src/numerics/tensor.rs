use rand::RngExt;

use crate::error::{Error, Result};

/// Largest double strictly below 1.
pub(crate) const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Dense row-major fp64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics on an empty vector; use [`Tensor::new`] for fallible construction.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::new(vec![data.len()], data).expect("vector must be non-empty and finite")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::vector(vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("zeros: extents must be positive")
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Independent uniform draws in `[-bound, bound)`.
    pub fn uniform<R: rand::Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        if bound > 0.0 {
            for v in &mut t.data {
                *v = rng.random_range(-bound..bound);
            }
        }
        t
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

pub(crate) fn matvec_into(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape.len() != 2 || x.shape.len() != 1 || w.shape[1] != x.shape[0] {
        return Err(Error::Shape {
            op: "matvec",
            left: w.shape.clone(),
            right: x.shape.clone(),
        });
    }
    let mut out = vec![0.0; w.shape[0]];
    matvec_into(&w.data, w.shape[1], &x.data, &mut out);
    Ok(Tensor::from_raw(vec![w.shape[0]], out))
}

/// Logistic function clamped to the open interval (0, 1).
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub(crate) fn tanh_scalar(x: f64) -> f64 {
    x.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    x.map(tanh_scalar)
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape.clone(), softmax_slice(&x.data))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
