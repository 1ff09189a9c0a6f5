//! Named parameters and thin layer wrappers over the irreps plans.
//!
//! Layers own their compiled plan and a name prefix. `init` writes fresh
//! parameters into a [`ParamSet`]; `apply` records the layer on a tape using
//! parameters already bound as leaves.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::irreps::{GatePlan, GateVariant, Irreps, LayerNormPlan, LinearPlan};
use crate::real::Real;

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Put every parameter on the tape as a leaf of the same name.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(k.clone(), v.lift())))
            .collect();
        Bound { vars }
    }

    /// Put every parameter on the tape as a constant.
    pub fn bind_constant<T: Real>(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.lift())))
            .collect();
        Bound { vars }
    }
}

/// Parameter name → tape slot.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub plan: Arc<LinearPlan>,
}

impl Linear {
    pub fn new(name: impl Into<String>, irreps_in: &Irreps, irreps_out: &Irreps, bias: bool) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            plan: Arc::new(LinearPlan::new(irreps_in, irreps_out, bias)?),
        })
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        let (w, b) = self.plan.init_weights(rng);
        params.insert(self.weight_name(), Tensor::row_vector(w));
        if self.plan.has_bias() {
            params.insert(self.bias_name(), Tensor::row_vector(b));
        }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&self.weight_name())?;
        let b = if self.plan.has_bias() { Some(p.get(&self.bias_name())?) } else { None };
        tape.linear(&self.plan, x, w, b)
    }

    pub fn irreps_out(&self) -> &Irreps {
        &self.plan.irreps_out
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub plan: Arc<LayerNormPlan>,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, irreps: &Irreps) -> Self {
        Self {
            name: name.into(),
            plan: Arc::new(LayerNormPlan::new(irreps)),
        }
    }

    pub fn init(&self, params: &mut ParamSet) {
        params.insert(
            format!("{}.gamma", self.name),
            Tensor::row_vector(vec![1.0; self.plan.gamma_len()]),
        );
        params.insert(
            format!("{}.beta", self.name),
            Tensor::row_vector(vec![0.0; self.plan.beta_len()]),
        );
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let g = p.get(&format!("{}.gamma", self.name))?;
        let b = p.get(&format!("{}.beta", self.name))?;
        tape.layer_norm(&self.plan, x, g, b)
    }
}

/// Linear into a gate's input layout followed by the gate.
#[derive(Clone, Debug)]
pub struct GatedLinear {
    pub linear: Linear,
    pub gate: Arc<GatePlan>,
}

impl GatedLinear {
    pub fn new(
        name: impl Into<String>,
        irreps_in: &Irreps,
        gate_out: &Irreps,
        variant: GateVariant,
    ) -> Result<Self> {
        let gate = GatePlan::for_output(gate_out)?.with_variant(variant);
        Ok(Self {
            linear: Linear::new(name, irreps_in, &gate.irreps_in, true)?,
            gate: Arc::new(gate),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        self.linear.init(rng, params);
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.linear.apply(tape, p, x)?;
        tape.gate(&self.gate, h)
    }

    pub fn irreps_out(&self) -> &Irreps {
        &self.gate.irreps_out
    }
}

/// SiLU over every column (a gate with nothing to gate).
pub fn silu_plan(width: usize) -> Arc<GatePlan> {
    Arc::new(GatePlan::new(width, &Irreps::empty()).expect("scalar gate"))
}
