use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Named parameters in a fixed insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].1 = value;
        } else {
            self.index.insert(name.clone(), self.entries.len());
            self.entries.push((name, value));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in &self.entries {
            out.insert(n.clone(), t.cast());
        }
        out
    }

    /// Places every tensor on `tape`; trainable when `requires_grad`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        let mut vars = HashMap::with_capacity(self.entries.len());
        let mut order = Vec::with_capacity(self.entries.len());
        for (n, t) in &self.entries {
            let v = tape.leaf(t.clone(), requires_grad);
            vars.insert(n.clone(), v);
            order.push((n.clone(), v));
        }
        Bound { vars, order }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<(String, Var)>,
}

impl Bound {
    /// Binds names to existing tape variables.
    pub fn from_pairs(pairs: Vec<(String, Var)>) -> Self {
        let vars = pairs.iter().cloned().collect();
        Self { vars, order: pairs }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.order.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Deterministic parameter initialisation helpers.
pub(crate) struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)))
    }

    /// Conv weight `[cout, cin, k, k]` + bias with `U(±1/√fan_in)`.
    pub fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = self.uniform(&[cout, cin, k, k], bound);
        let b = self.uniform(&[cout], bound);
        self.store.insert(format!("{prefix}.w"), w);
        self.store.insert(format!("{prefix}.b"), b);
    }

    /// Linear weight `[din, dout]` + bias with `U(±1/√din)`.
    pub fn linear(&mut self, prefix: &str, din: usize, dout: usize) {
        let bound = 1.0 / (din as f64).sqrt();
        let w = self.uniform(&[din, dout], bound);
        let b = self.uniform(&[dout], bound);
        self.store.insert(format!("{prefix}.w"), w);
        self.store.insert(format!("{prefix}.b"), b);
    }

    pub fn fixed(&mut self, name: String, shape: &[usize], value: f64) {
        self.store.insert(name, Tensor::full(shape, T::of(value)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_kept_and_reinsert_replaces() {
        let mut p = ParamStore::<f32>::new();
        p.insert("b", Tensor::zeros(&[1]));
        p.insert("a", Tensor::zeros(&[2]));
        p.insert("b", Tensor::zeros(&[3]));
        let names: Vec<_> = p.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, vec!["b", "a"]);
        assert_eq!(p.get("b").unwrap().shape(), &[3]);
        assert_eq!(p.num_scalars(), 5);
    }

    #[test]
    fn missing_param_is_reported_by_name() {
        let p = ParamStore::<f32>::new();
        let mut t = Tape::new();
        let b = p.bind(&mut t, true);
        assert!(matches!(b.get("nope"), Err(ModelError::MissingParam(n)) if n == "nope"));
    }
}
