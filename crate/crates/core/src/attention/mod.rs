//! Equivariant graph attention.
//!
//! Per edge `i ← j`:
//! `x_ij = Lin_dst(x_i) + Lin_src(x_j)`, `x'_ij = x_ij ⊗_{w(‖r_ij‖)} SH(r_ij)`,
//! `f_ij = Lin(x'_ij)`. Logits come from the scalar part of `f_ij` (MLP kind)
//! or from a query/key product (dot kind); weights are a softmax over the
//! neighbors of `i`. Values are either the value part of `f_ij` or a gated,
//! second tensor product of it. Heads are channel slices of every block.

pub mod ops;

pub use ops::{attn_dropout, dropout_mask, head_columns, DotLogits, HeadWeighting, MlpLogits, SegmentSoftmax};

use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{AtomisticGraph, RadialMlp};
use crate::irreps::{build_dtp_plan, GatePlan, GateVariant, Irreps, MulIr, TensorProductPlan};
use crate::nn::{Bound, Linear, ParamSet};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnKind {
    Mlp,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Linear,
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub heads: usize,
    pub d_head: Irreps,
    pub attn_kind: AttnKind,
    pub message_kind: MessageKind,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default)]
    pub attn_dropout: f64,
}

fn default_slope() -> f64 {
    0.2
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} not in (0,1)", self.leaky_slope)));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return Err(Error::Config(format!("attention dropout {} not in [0,1)", self.attn_dropout)));
        }
        if self.attn_kind == AttnKind::Mlp && self.d_head.scalar_channels() == 0 {
            return Err(Error::Config(format!(
                "MLP attention needs scalar channels in d_head {}",
                self.d_head
            )));
        }
        Ok(())
    }

    /// Value layout `d_head × h`.
    pub fn value_irreps(&self) -> Irreps {
        self.d_head.times(self.heads)
    }
}

/// Tape slots of the per-edge intermediates of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct EdgeMessageWorkspace {
    pub x_ij: Var,
    pub x_prime: Var,
    pub f_ij: Var,
    pub logits: Var,
    pub weights: Var,
    /// Gate output, nonlinear messages only.
    pub mu: Option<Var>,
    pub v_ij: Var,
    pub m_ij: Var,
}

/// Edge embeddings shared by every block of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EdgeInputs {
    pub sh: Var,
    pub basis: Var,
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub name: String,
    pub config: AttentionConfig,
    pub irreps_in: Irreps,
    pub irreps_out: Irreps,
    pub lin_dst: Linear,
    pub lin_src: Linear,
    pub dtp: Arc<TensorProductPlan>,
    pub radial: RadialMlp,
    pub f_lin: Linear,
    pub query: Option<Linear>,
    /// Scalars of `f_ij` used as logits input (MLP) or key width (dot).
    split: usize,
    value_gate: Option<Arc<GatePlan>>,
    pub value_dtp: Option<Arc<TensorProductPlan>>,
    pub value_lin: Option<Linear>,
    pub proj: Linear,
    head_of_col: Vec<usize>,
    alpha_per_head: usize,
}

impl AttentionBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        irreps_in: &Irreps,
        irreps_out: &Irreps,
        irreps_sh: &Irreps,
        l_max: u32,
        config: &AttentionConfig,
        basis_count: usize,
        radial_hidden: usize,
    ) -> Result<Self> {
        config.validate()?;
        let value = config.value_irreps();
        let head_of_col = head_columns(&value, config.heads)?;
        let lin_dst = Linear::new(format!("{name}.lin_dst"), irreps_in, irreps_in, false)?;
        let lin_src = Linear::new(format!("{name}.lin_src"), irreps_in, irreps_in, true)?;
        let dtp = Arc::new(build_dtp_plan(irreps_in, irreps_sh, l_max)?);
        let radial = RadialMlp::new(&format!("{name}.radial"), basis_count, radial_hidden, dtp.weight_count)?;

        let (value_part, value_gate) = match config.message_kind {
            MessageKind::Linear => (value.clone(), None),
            MessageKind::Nonlinear => {
                let g = GatePlan::for_output(&value)?.with_variant(GateVariant::Standard);
                (g.irreps_in.clone(), Some(Arc::new(g)))
            }
        };
        let alpha_per_head = config.d_head.scalar_channels();
        let (f_irreps, split, query) = match config.attn_kind {
            AttnKind::Mlp => {
                let a = alpha_per_head * config.heads;
                let mut blocks = vec![MulIr { mul: a, ir: value.scalar_irrep() }];
                blocks.extend_from_slice(value_part.blocks());
                (Irreps::new(blocks)?, value.scalar_irrep().dim() * a, None)
            }
            AttnKind::Dot => {
                let q = Linear::new(format!("{name}.query"), irreps_in, &value, true)?;
                (value.concat(&value_part)?, value.dim(), Some(q))
            }
        };
        let f_lin = Linear::new(format!("{name}.f_lin"), &dtp.irreps_out, &f_irreps, true)?;
        let (value_dtp, value_lin) = match config.message_kind {
            MessageKind::Linear => (None, None),
            MessageKind::Nonlinear => {
                let p = Arc::new(build_dtp_plan(&value, irreps_sh, l_max)?);
                let l = Linear::new(format!("{name}.value_lin"), &p.irreps_out, &value, true)?;
                (Some(p), Some(l))
            }
        };
        let proj = Linear::new(format!("{name}.proj"), &value, irreps_out, false)?;
        Ok(Self {
            name: name.to_string(),
            config: config.clone(),
            irreps_in: irreps_in.clone(),
            irreps_out: irreps_out.clone(),
            lin_dst,
            lin_src,
            dtp,
            radial,
            f_lin,
            query,
            split,
            value_gate,
            value_dtp,
            value_lin,
            proj,
            head_of_col,
            alpha_per_head,
        })
    }

    fn alpha_name(&self) -> String {
        format!("{}.alpha_dot", self.name)
    }

    fn value_dtp_name(&self) -> String {
        format!("{}.value_dtp.weight", self.name)
    }

    /// Tensor-product applications per call: 1 for linear messages, 2 for
    /// nonlinear ones.
    pub fn tensor_product_count(&self) -> usize {
        1 + usize::from(self.value_dtp.is_some())
    }

    /// Weighted tensor-product paths across both products.
    pub fn weighted_paths(&self) -> usize {
        self.dtp.weight_count + self.value_dtp.as_ref().map_or(0, |p| p.weight_count)
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        self.lin_dst.init(rng, params);
        self.lin_src.init(rng, params);
        self.radial.init(rng, params);
        self.f_lin.init(rng, params);
        if let Some(q) = &self.query {
            q.init(rng, params);
        }
        if self.config.attn_kind == AttnKind::Mlp {
            let n = self.alpha_per_head * self.config.heads;
            let bound = 1.0 / (self.alpha_per_head as f64).sqrt();
            let a = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            params.insert(self.alpha_name(), Tensor::row_vector(a));
        }
        if let Some(p) = &self.value_dtp {
            let w: Vec<f64> = (0..p.weight_count).map(|_| StandardNormal.sample(rng)).collect();
            params.insert(self.value_dtp_name(), Tensor::row_vector(w));
        }
        if let Some(l) = &self.value_lin {
            l.init(rng, params);
        }
        self.proj.init(rng, params);
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        graph: &AtomisticGraph,
        edges: EdgeInputs,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        Ok(self.apply_traced(tape, p, x, graph, edges, dropout)?.1)
    }

    /// Output plus the per-edge workspace slots.
    pub fn apply_traced<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        graph: &AtomisticGraph,
        edges: EdgeInputs,
        dropout: Option<&mut dyn RngCore>,
    ) -> Result<(EdgeMessageWorkspace, Var)> {
        let dst = graph.dst_index();
        let src = graph.src_index();
        let n = graph.num_nodes();

        let xd = self.lin_dst.apply(tape, p, x)?;
        let xs = self.lin_src.apply(tape, p, x)?;
        let xd = tape.gather_rows(xd, dst.clone())?;
        let xs = tape.gather_rows(xs, src)?;
        let x_ij = tape.add(xd, xs)?;

        let w = self.radial.apply(tape, p, edges.basis)?;
        let x_prime = tape.dtp(&self.dtp, x_ij, edges.sh, w)?;
        let f_ij = self.f_lin.apply(tape, p, x_prime)?;
        let width = self.f_lin.irreps_out().dim();
        let head_part = tape.slice_cols(f_ij, 0, self.split)?;
        let value_part = tape.slice_cols(f_ij, self.split, width - self.split)?;

        let logits = match self.config.attn_kind {
            AttnKind::Mlp => {
                let a = p.get(&self.alpha_name())?;
                let op = MlpLogits {
                    heads: self.config.heads,
                    per_head: self.alpha_per_head,
                    slope: self.config.leaky_slope,
                };
                tape.record(op, &[head_part, a])?
            }
            AttnKind::Dot => {
                let q = self.query.as_ref().expect("dot attention has a query").apply(tape, p, x)?;
                let q = tape.gather_rows(q, dst.clone())?;
                let op = DotLogits {
                    head_of_col: self.head_of_col.clone(),
                    heads: self.config.heads,
                    scale: 1.0 / (self.config.d_head.dim() as f64).sqrt(),
                };
                tape.record(op, &[q, head_part])?
            }
        };
        let mut weights = tape.segment_softmax(logits, dst.clone(), n)?;
        if let Some(rng) = dropout {
            if self.config.attn_dropout > 0.0 {
                let m = dropout_mask(graph.num_edges(), self.config.heads, self.config.attn_dropout, true, rng);
                let m = tape.constant(lift(&m));
                weights = tape.mul(weights, m)?;
            }
        }

        let (mu, v_ij) = match (&self.value_gate, &self.value_dtp, &self.value_lin) {
            (Some(g), Some(tp), Some(lin)) => {
                let mu = tape.gate(g, value_part)?;
                let wv = p.get(&self.value_dtp_name())?;
                let t = tape.dtp(tp, mu, edges.sh, wv)?;
                (Some(mu), lin.apply(tape, p, t)?)
            }
            _ => (None, value_part),
        };
        let m_ij = tape.record(
            HeadWeighting {
                head_of_col: self.head_of_col.clone(),
            },
            &[weights, v_ij],
        )?;
        let agg = tape.scatter_rows(m_ij, dst, n)?;
        let out = self.proj.apply(tape, p, agg)?;
        Ok((
            EdgeMessageWorkspace {
                x_ij,
                x_prime,
                f_ij,
                logits,
                weights,
                mu,
                v_ij,
                m_ij,
            },
            out,
        ))
    }
}

fn lift<T: Real>(t: &Tensor) -> Tensor<T> {
    t.lift()
}
