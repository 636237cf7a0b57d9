use super::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

/// Handle to one named parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named collection of learnable tensors. Registration order is stable,
/// so iteration (and therefore optimizer updates and checkpoints) is
/// deterministic.
#[derive(Clone, Debug)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    by_name: BTreeMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter {name:?} registered twice"
        );
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    /// Register a tensor drawn elementwise from N(0, std^2).
    pub fn register_normal(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| S::from_f(dist.sample(rng)))
            .collect();
        self.register(name, Tensor::new(shape.to_vec(), data))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name_of(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Replace every value with the same-named tensor from `source`.
    /// Missing names or shape mismatches are reported by name.
    pub fn load_values(
        &mut self,
        source: &BTreeMap<String, Tensor<S>>,
    ) -> Result<(), String> {
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let incoming = source
                .get(name)
                .ok_or_else(|| format!("missing parameter {name:?}"))?;
            if incoming.shape() != self.values[i].shape() {
                return Err(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    incoming.shape(),
                    self.values[i].shape()
                ));
            }
            self.values[i] = incoming.clone();
        }
        Ok(())
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-parameter gradients keyed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Grads<S: Scalar> {
    by_param: BTreeMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn new() -> Self {
        Self { by_param: BTreeMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.by_param.get(&id)
    }

    pub fn insert_accumulate(&mut self, id: ParamId, grad: Tensor<S>) {
        match self.by_param.get_mut(&id) {
            Some(existing) => existing.add_assign(&grad),
            None => {
                self.by_param.insert(id, grad);
            }
        }
    }

    /// Elementwise sum with another gradient set (for batch accumulation).
    pub fn accumulate(&mut self, other: &Grads<S>) {
        for (id, g) in &other.by_param {
            self.insert_accumulate(*id, g.clone());
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in self.by_param.values_mut() {
            g.scale_assign(c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.by_param.iter().map(|(id, t)| (*id, t))
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Global L2 norm over all gradient elements.
    pub fn l2_norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|t| t.data().iter())
            .map(|x| x.to_f() * x.to_f())
            .sum::<f64>()
            .sqrt()
    }
}
