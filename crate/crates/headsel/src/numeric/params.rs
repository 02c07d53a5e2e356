use super::{Real, Tensor};

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Registry of trainable parameters. Registration order is part of a model's
/// identity: serialization, optimizer state, and gradient buffers all index
/// parameters by their position here, so builders must register in a fixed
/// order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
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

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffer parallel to a [`ParamStore`]. Starts at zero; tapes
/// accumulate into it, so parameters a loss never touched keep exactly zero
/// gradient and batching is plain accumulation across tapes.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        ParamGrads {
            grads: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, id: ParamId, delta: &Tensor<T>) {
        let g = &mut self.grads[id.0];
        assert_eq!(g.shape(), delta.shape());
        for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
            *gi = *gi + *di;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.grads.iter_mut()
    }

    /// L2 norm over the concatenation of every gradient, at f64.
    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }
}
