use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable tensors. Ids are dense and stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero gradient buffers shaped like every parameter.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            grads: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }
}

/// Per-parameter gradient accumulators, aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn from_tensors(grads: Vec<Tensor>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.grads.iter_mut()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::Shape {
                op: "accumulate",
                left: vec![self.grads.len()],
                right: vec![other.grads.len()],
            });
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "accumulate",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}
