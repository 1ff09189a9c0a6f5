//! Operator-level reverse-mode tape.
//!
//! Slots hold tensors; nodes record an [`Op`] applied to earlier slots. The
//! node list is append-only, so recording order is a topological order and a
//! single reverse sweep visits each node once. Gradients arriving at a shared
//! slot are summed.

use std::collections::{BTreeMap, BTreeSet};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a slot on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation over tensors.
pub trait Op<T: Real>: Send + Sync {
    /// Identifier looked up in the tape's [`OpRegistry`].
    fn kind(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Vector-Jacobian products for every input where `needs[i]` is set.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

/// Op kinds that carry a backward rule and may be recorded.
#[derive(Clone, Debug)]
pub struct OpRegistry {
    kinds: BTreeSet<&'static str>,
}

impl OpRegistry {
    pub fn empty() -> Self {
        Self {
            kinds: BTreeSet::new(),
        }
    }

    /// Every op kind shipped with this crate.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for k in super::BUILTIN_OPS {
            r.register(k);
        }
        r
    }

    pub fn register(&mut self, kind: &'static str) {
        self.kinds.insert(kind);
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.kinds.contains(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.kinds.iter().copied()
    }
}

impl Default for OpRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

struct Node<T: Real> {
    op: Box<dyn Op<T>>,
    inputs: Vec<Var>,
    output: Var,
}

pub struct Tape<T: Real = f64> {
    values: Vec<Tensor<T>>,
    tracked: Vec<bool>,
    leaves: Vec<(String, Var)>,
    nodes: Vec<Node<T>>,
    registry: OpRegistry,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::with_registry(OpRegistry::builtin())
    }

    pub fn with_registry(registry: OpRegistry) -> Self {
        Self {
            values: Vec::new(),
            tracked: Vec::new(),
            leaves: Vec::new(),
            nodes: Vec::new(),
            registry,
        }
    }

    pub fn registry_mut(&mut self) -> &mut OpRegistry {
        &mut self.registry
    }

    fn push(&mut self, value: Tensor<T>, tracked: bool) -> Var {
        self.values.push(value);
        self.tracked.push(tracked);
        Var(self.values.len() - 1)
    }

    /// Differentiable input, reported by name in the [`GradientSet`].
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.push(value, true);
        self.leaves.push((name.into(), v));
        v
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&str, Var)> {
        self.leaves.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Run `op` forward on existing slots and append it to the tape.
    pub fn record<O: Op<T> + 'static>(&mut self, op: O, inputs: &[Var]) -> Result<Var> {
        self.record_boxed(Box::new(op), inputs)
    }

    pub fn record_boxed(&mut self, op: Box<dyn Op<T>>, inputs: &[Var]) -> Result<Var> {
        if !self.registry.contains(op.kind()) {
            return Err(Error::UnsupportedOp(format!(
                "op kind `{}` has no registered backward rule",
                op.kind()
            )));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.values.len()) {
            return Err(Error::Contract(format!("unknown slot {}", bad.0)));
        }
        let out = {
            let refs: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.values[v.0]).collect();
            op.forward(&refs)?
        };
        let tracked = inputs.iter().any(|v| self.tracked[v.0]);
        let output = self.push(out, tracked);
        if tracked {
            self.nodes.push(Node {
                op,
                inputs: inputs.to_vec(),
                output,
            });
        }
        Ok(output)
    }

    /// Gradients of a `1×1` slot with respect to every leaf.
    pub fn backward(&self, output: Var) -> Result<GradientSet<T>> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[output.0] = Some(Tensor::scalar(T::one()));
        for node in self.nodes.iter().rev() {
            if node.output.0 > output.0 {
                continue;
            }
            let Some(g) = grads[node.output.0].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.tracked[v.0]).collect();
            let refs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.values[v.0]).collect();
            let contributions = node.op.backward(&refs, &self.values[node.output.0], &g, &needs);
            debug_assert_eq!(contributions.len(), node.inputs.len(), "{}", node.op.kind());
            for ((input, contrib), need) in node.inputs.iter().zip(contributions).zip(&needs) {
                let (Some(c), true) = (contrib, *need) else {
                    continue;
                };
                debug_assert_eq!(
                    c.shape(),
                    self.values[input.0].shape(),
                    "gradient shape from {}",
                    node.op.kind()
                );
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        let mut set = GradientSet::default();
        for (name, v) in &self.leaves {
            let value = &self.values[v.0];
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(value.rows(), value.cols()));
            match set.grads.get_mut(name) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    set.grads.insert(name.clone(), g);
                }
            }
        }
        Ok(set)
    }
}

/// Leaf name → gradient with the leaf's shape. Leaves that the output does
/// not depend on carry zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet<T: Real = f64> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.grads.insert(name.into(), grad);
    }

    /// Elementwise sum; used to accumulate over graphs in a batch.
    pub fn accumulate(&mut self, other: &GradientSet<T>) {
        for (k, v) in &other.grads {
            match self.grads.get_mut(k) {
                Some(acc) => acc.add_assign(v),
                None => {
                    self.grads.insert(k.clone(), v.clone());
                }
            }
        }
    }

    pub fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<f64>) -> GradientSet<f64> {
        GradientSet {
            grads: self.grads.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
        }
    }
}
