//! Gate nonlinearity.
//!
//! Input layout: `[(C0 + G, scalar)]` followed by the gated blocks, where `G`
//! is the number of gated channels. The first `C0` scalars pass through SiLU;
//! the remaining `G` go through a sigmoid and scale one gated channel each.
//! Pseudo-scalars `(0,o)` are gated like any other non-scalar block.

use std::sync::Arc;

use super::descriptor::{Irreps, MulIr};
use super::feature::IrrepsFeature;
use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GateVariant {
    #[default]
    Standard,
    /// Negative control for audits: SiLU on every scalar, gate scalars kept
    /// in the output.
    SiluAll,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatePlan {
    pub irreps_in: Irreps,
    pub irreps_out: Irreps,
    /// Scalars kept after SiLU.
    pub c0: usize,
    /// Gated channels.
    pub gates: usize,
    pub variant: GateVariant,
}

impl GatePlan {
    /// Plan whose output is `[(c0, scalar)] + gated`.
    pub fn new(c0: usize, gated: &Irreps) -> Result<Self> {
        if gated.blocks().iter().any(|b| b.ir.is_scalar()) {
            return Err(Error::Layout(format!("gated blocks {gated} contain true scalars")));
        }
        let scalar = gated.scalar_irrep();
        let gates = gated.num_channels();
        let mut in_blocks = Vec::new();
        if c0 + gates > 0 {
            in_blocks.push(MulIr { mul: c0 + gates, ir: scalar });
        }
        in_blocks.extend_from_slice(gated.blocks());
        let mut out_blocks = Vec::new();
        if c0 > 0 {
            out_blocks.push(MulIr { mul: c0, ir: scalar });
        }
        out_blocks.extend_from_slice(gated.blocks());
        Ok(Self {
            irreps_in: Irreps::new(in_blocks)?,
            irreps_out: Irreps::new(out_blocks)?,
            c0,
            gates,
            variant: GateVariant::Standard,
        })
    }

    /// Plan for the gate whose output is `out`: true scalars of `out` must
    /// come first, and become the SiLU channels.
    pub fn for_output(out: &Irreps) -> Result<Self> {
        let lead = out.blocks().iter().take_while(|b| b.ir.is_scalar()).count();
        let c0: usize = out.blocks()[..lead].iter().map(|b| b.mul).sum();
        let rest = Irreps::new(out.blocks()[lead..].to_vec())?;
        if rest.scalar_channels() > 0 {
            return Err(Error::Layout(format!("gate output {out} must list scalars first")));
        }
        let mut plan = Self::new(c0, &rest)?;
        if rest.is_empty() && out.is_e3() {
            plan.fix_scalar_kind(out.scalar_irrep());
        }
        Ok(plan)
    }

    /// Infer `C0` from an input layout; errors when there are fewer scalars
    /// than gated channels.
    pub fn from_input(irreps_in: &Irreps) -> Result<Self> {
        let lead = irreps_in.blocks().iter().take_while(|b| b.ir.is_scalar()).count();
        let scalars: usize = irreps_in.blocks()[..lead].iter().map(|b| b.mul).sum();
        let rest = Irreps::new(irreps_in.blocks()[lead..].to_vec())?;
        if rest.scalar_channels() > 0 {
            return Err(Error::Layout(format!("gate input {irreps_in} must list scalars first")));
        }
        let gates = rest.num_channels();
        if scalars < gates {
            return Err(Error::Layout(format!(
                "gate input {irreps_in} has {scalars} scalars for {gates} gated channels"
            )));
        }
        let mut plan = Self::new(scalars - gates, &rest)?;
        plan.fix_scalar_kind(irreps_in.scalar_irrep());
        Ok(plan)
    }

    fn fix_scalar_kind(&mut self, scalar: super::descriptor::Irrep) {
        let swap = |ir: &Irreps| {
            Irreps::new(
                ir.blocks()
                    .iter()
                    .map(|b| if b.ir.is_scalar() { MulIr { mul: b.mul, ir: scalar } } else { *b })
                    .collect(),
            )
            .expect("scalar swap keeps layout valid")
        };
        self.irreps_in = swap(&self.irreps_in);
        self.irreps_out = swap(&self.irreps_out);
    }

    pub fn with_variant(mut self, variant: GateVariant) -> Self {
        if variant == GateVariant::SiluAll && self.variant == GateVariant::Standard {
            let scalar = self.irreps_in.scalar_irrep();
            let mut blocks = vec![MulIr { mul: self.c0 + self.gates, ir: scalar }];
            blocks.extend_from_slice(&self.irreps_in.blocks()[1..]);
            if self.c0 + self.gates > 0 {
                self.irreps_out = Irreps::new(blocks).expect("valid layout");
            }
        }
        self.variant = variant;
        self
    }

    /// Start of the gated part in the input and output rows.
    fn gated_offsets(&self) -> (usize, usize) {
        let kept = match self.variant {
            GateVariant::Standard => self.c0,
            GateVariant::SiluAll => self.c0 + self.gates,
        };
        (self.c0 + self.gates, kept)
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.irreps_in.dim() {
            return Err(Error::Layout(format!(
                "gate expects width {} for {}, got {}",
                self.irreps_in.dim(),
                self.irreps_in,
                x.cols()
            )));
        }
        let (in_g, out_g) = self.gated_offsets();
        let mut y = Tensor::zeros(x.rows(), self.irreps_out.dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for c in 0..out_g {
                yr[c] = silu(xr[c]);
            }
            let (mut xi, mut yi) = (in_g, out_g);
            let mut k = 0;
            for blk in &self.irreps_in.blocks()[usize::from(in_g > 0)..] {
                let dim = blk.ir.dim();
                for _ in 0..blk.mul {
                    let g = xr[self.c0 + k].sigmoid();
                    for m in 0..dim {
                        yr[yi + m] = xr[xi + m] * g;
                    }
                    xi += dim;
                    yi += dim;
                    k += 1;
                }
            }
        }
        Ok(y)
    }

    pub fn backward<T: Real>(&self, x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
        let (in_g, out_g) = self.gated_offsets();
        let mut gx = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let gyr = gy.row(r);
            let gxr = gx.row_mut(r);
            for c in 0..out_g {
                let s = xr[c].sigmoid();
                gxr[c] += gyr[c] * s * (T::one() + xr[c] * (T::one() - s));
            }
            let (mut xi, mut yi) = (in_g, out_g);
            let mut k = 0;
            for blk in &self.irreps_in.blocks()[usize::from(in_g > 0)..] {
                let dim = blk.ir.dim();
                for _ in 0..blk.mul {
                    let s = xr[self.c0 + k].sigmoid();
                    let mut dot = T::zero();
                    for m in 0..dim {
                        dot += gyr[yi + m] * xr[xi + m];
                        gxr[xi + m] += gyr[yi + m] * s;
                    }
                    gxr[self.c0 + k] += dot * s * (T::one() - s);
                    xi += dim;
                    yi += dim;
                    k += 1;
                }
            }
        }
        gx
    }
}

fn silu<T: Real>(x: T) -> T {
    x * x.sigmoid()
}

pub struct GateOp {
    pub plan: Arc<GatePlan>,
}

impl<T: Real> Op<T> for GateOp {
    fn kind(&self) -> &'static str {
        "gate"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.plan.forward(x[0])
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needs[0].then(|| self.plan.backward(x[0], g))]
    }
}

impl<T: Real> Tape<T> {
    pub fn gate(&mut self, plan: &Arc<GatePlan>, x: Var) -> Result<Var> {
        self.record(GateOp { plan: plan.clone() }, &[x])
    }
}

/// Gate with `C0` inferred from the input layout.
pub fn gate(x: &IrrepsFeature) -> Result<IrrepsFeature> {
    let plan = GatePlan::from_input(&x.irreps)?;
    let y = plan.forward(&x.data)?;
    IrrepsFeature::new(plan.irreps_out, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Parity;

    #[test]
    fn spec_example() {
        let s = 0.7;
        let x = IrrepsFeature::new(
            Irreps::se3(&[(2, 0), (1, 1)]),
            Tensor::row_vector(vec![s, 0.0, 1.0, -2.0, 3.0]),
        )
        .unwrap();
        let y = gate(&x).unwrap();
        assert_eq!(y.irreps, Irreps::se3(&[(1, 0), (1, 1)]));
        let want = [s / (1.0 + (-s).exp()), 0.5, -1.0, 1.5];
        for (a, b) in y.data.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn too_few_scalars() {
        let x = IrrepsFeature::zeros(Irreps::se3(&[(1, 0), (2, 1)]), 1);
        assert!(matches!(gate(&x), Err(Error::Layout(_))));
    }

    #[test]
    fn pseudo_scalars_are_gated() {
        let out = Irreps::e3(&[(2, 0, Parity::Even), (3, 0, Parity::Odd), (1, 1, Parity::Odd)]);
        let plan = GatePlan::for_output(&out).unwrap();
        assert_eq!(plan.c0, 2);
        assert_eq!(plan.gates, 4);
        assert_eq!(plan.irreps_in.to_string(), "[(6,0,e),(3,0,o),(1,1,o)]");
    }

    #[test]
    fn silu_all_keeps_every_scalar() {
        let plan = GatePlan::for_output(&Irreps::se3(&[(2, 0), (3, 1)]))
            .unwrap()
            .with_variant(GateVariant::SiluAll);
        assert_eq!(plan.irreps_out, Irreps::se3(&[(5, 0), (3, 1)]));
    }
}
