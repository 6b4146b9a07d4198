//! Named parameter storage shared by the model, the optimiser and the
//! checkpoint format.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    /// Accumulated gradient; `None` after `zero_grad` until the next backward.
    pub grad: Option<Tensor<F>>,
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            grad: None,
            trainable: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<F>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<F>> {
        self.entries.iter_mut()
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = trainable;
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Records every parameter on `tape`; trainable ones as gradient leaves.
    pub fn bind<'t>(&self, tape: &'t Tape<F>) -> Bound<'t, F> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| tape.leaf(e.value.clone(), e.trainable))
                .collect(),
        }
    }

    /// Adds the gradients of one backward pass into the trainable entries.
    pub fn accumulate(&mut self, bound: &Bound<'_, F>, grads: &Gradients<F>) {
        for (e, var) in self.entries.iter_mut().zip(&bound.vars) {
            if !e.trainable {
                continue;
            }
            let g = grads.get_or_zeros(*var);
            add_into(&mut e.grad, &g);
        }
    }

    /// Adds a flat per-parameter gradient list (in store order).
    pub fn accumulate_flat(&mut self, grads: &[Tensor<F>]) {
        for (e, g) in self.entries.iter_mut().zip(grads) {
            if e.trainable {
                add_into(&mut e.grad, g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.grad.as_ref())
            .map(|g| g.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.as_ref().map(|g| g.cast()),
                    trainable: e.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

fn add_into<F: Scalar>(slot: &mut Option<Tensor<F>>, g: &Tensor<F>) {
    match slot {
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        None => *slot = Some(g.clone()),
    }
}

/// Parameters recorded on one tape, indexed by [`ParamId`].
pub struct Bound<'t, F: Scalar> {
    vars: Vec<Var<'t, F>>,
}

impl<'t, F: Scalar> Bound<'t, F> {
    pub fn var(&self, id: ParamId) -> Var<'t, F> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, F>] {
        &self.vars
    }

    /// Per-parameter gradients in store order (zeros where unreachable).
    pub fn collect_grads(&self, grads: &Gradients<F>) -> Vec<Tensor<F>> {
        self.vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    }
}

impl<'t, F: Scalar> Index<ParamId> for Bound<'t, F> {
    type Output = Var<'t, F>;

    fn index(&self, id: ParamId) -> &Self::Output {
        &self.vars[id.0]
    }
}

pub fn normal_tensor<F: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(dist.sample(rng))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub fn uniform_tensor<F: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.random_range(lo..hi))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
