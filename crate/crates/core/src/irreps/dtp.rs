//! Depth-wise tensor product.
//!
//! Every channel of input 1 is coupled with every channel of input 2 through
//! each legal output degree `l3 ≤ L_max`. A path writes its own output
//! channel, so each output channel depends on one channel of each input.
//!
//! Paths are ordered by (global channel of input 1, global channel of
//! input 2, l3); a path's weight slot is its index in that order. Output
//! blocks are grouped by (block of input 1, block of input 2, l3) with
//! multiplicity `mul1 · mul2`, channel `k1 · mul2 + k2`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::descriptor::{Irrep, Irreps, MulIr};
use super::feature::IrrepsFeature;
use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::so3::{clebsch_gordan, CgTensor, Parity};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DtpPath {
    /// Global channel index in input 1.
    pub c1: usize,
    pub block1: usize,
    pub l1: u32,
    pub c2: usize,
    pub block2: usize,
    pub l2: u32,
    pub l3: u32,
    pub p3: Option<Parity>,
    pub out_block: usize,
    pub out_channel: usize,
    pub weight_slot: usize,
}

impl fmt::Display for DtpPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.p3.map(|p| format!(",{p}")).unwrap_or_default();
        write!(
            f,
            "slot {:>5}: in1[c={}] l={} (x) in2[c={}] l={} -> ({}{}) out block {} channel {}",
            self.weight_slot, self.c1, self.l1, self.c2, self.l2, self.l3, p, self.out_block, self.out_channel
        )
    }
}

#[derive(Clone, Debug)]
struct Kernel {
    x_off: usize,
    y_off: usize,
    out_off: usize,
    cg: Arc<CgTensor>,
}

#[derive(Clone, Debug)]
pub struct TensorProductPlan {
    pub irreps_in1: Irreps,
    pub irreps_in2: Irreps,
    pub irreps_out: Irreps,
    pub l_max: u32,
    pub paths: Vec<DtpPath>,
    pub weight_count: usize,
    kernels: Vec<Kernel>,
}

impl PartialEq for TensorProductPlan {
    fn eq(&self, other: &Self) -> bool {
        self.irreps_in1 == other.irreps_in1
            && self.irreps_in2 == other.irreps_in2
            && self.irreps_out == other.irreps_out
            && self.paths == other.paths
    }
}

fn out_kinds(a: Irrep, b: Irrep, l_max: u32) -> Vec<Irrep> {
    let p3 = match (a.parity, b.parity) {
        (Some(p), Some(q)) => Some(p * q),
        _ => None,
    };
    (a.l.abs_diff(b.l)..=(a.l + b.l).min(l_max))
        .map(|l3| Irrep::new(l3, p3))
        .collect()
}

/// Enumerate depth-wise paths for `in1 ⊗ in2` up to degree `l_max`.
pub fn build_dtp_plan(irreps_in1: &Irreps, irreps_in2: &Irreps, l_max: u32) -> Result<TensorProductPlan> {
    if irreps_in1.is_e3() != irreps_in2.is_e3() && !irreps_in1.is_empty() && !irreps_in2.is_empty() {
        return Err(Error::Layout(format!(
            "cannot mix parity and parity-free inputs: {irreps_in1} (x) {irreps_in2}"
        )));
    }
    let b1s = irreps_in1.blocks();
    let b2s = irreps_in2.blocks();
    // output block index for (b1, b2, l3)
    let mut out_blocks = Vec::new();
    let mut out_index = vec![vec![Vec::new(); b2s.len()]; b1s.len()];
    for (i, a) in b1s.iter().enumerate() {
        for (j, b) in b2s.iter().enumerate() {
            for ir in out_kinds(a.ir, b.ir, l_max) {
                out_index[i][j].push((ir, out_blocks.len()));
                out_blocks.push(MulIr { mul: a.mul * b.mul, ir });
            }
        }
    }
    let irreps_out = Irreps::new(out_blocks)?;
    let (off1, off2, off3) = (irreps_in1.offsets(), irreps_in2.offsets(), irreps_out.offsets());

    let mut paths = Vec::new();
    let mut kernels = Vec::new();
    for (c1, (i, k1)) in irreps_in1.channels().enumerate() {
        let a = b1s[i];
        for (c2, (j, k2)) in irreps_in2.channels().enumerate() {
            let b = b2s[j];
            for &(ir, ob) in &out_index[i][j] {
                let out_channel = k1 * b.mul + k2;
                kernels.push(Kernel {
                    x_off: off1[i] + k1 * a.ir.dim(),
                    y_off: off2[j] + k2 * b.ir.dim(),
                    out_off: off3[ob] + out_channel * ir.dim(),
                    cg: clebsch_gordan(a.ir.l, b.ir.l, ir.l),
                });
                paths.push(DtpPath {
                    c1,
                    block1: i,
                    l1: a.ir.l,
                    c2,
                    block2: j,
                    l2: b.ir.l,
                    l3: ir.l,
                    p3: ir.parity,
                    out_block: ob,
                    out_channel,
                    weight_slot: paths.len(),
                });
            }
        }
    }
    Ok(TensorProductPlan {
        irreps_in1: irreps_in1.clone(),
        irreps_in2: irreps_in2.clone(),
        irreps_out,
        l_max,
        weight_count: paths.len(),
        paths,
        kernels,
    })
}

impl TensorProductPlan {
    /// Standard normal: every output channel is fed by exactly one path.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.weight_count).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn check<T: Real>(&self, x: &Tensor<T>, y: &Tensor<T>, w: &Tensor<T>) -> Result<()> {
        if x.cols() != self.irreps_in1.dim() || y.cols() != self.irreps_in2.dim() {
            return Err(Error::Layout(format!(
                "tensor product expects widths {} and {}, got {} and {}",
                self.irreps_in1.dim(),
                self.irreps_in2.dim(),
                x.cols(),
                y.cols()
            )));
        }
        if x.rows() != y.rows() {
            return Err(Error::Layout(format!(
                "tensor product row mismatch: {} vs {}",
                x.rows(),
                y.rows()
            )));
        }
        if w.cols() != self.weight_count || (w.rows() != 1 && w.rows() != x.rows()) {
            return Err(Error::Layout(format!(
                "tensor product weights must be 1x{0} or {1}x{0}, got {2:?}",
                self.weight_count,
                x.rows(),
                w.shape()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, y: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x, y, w)?;
        let shared = w.rows() == 1;
        let mut out = Tensor::zeros(x.rows(), self.irreps_out.dim());
        for r in 0..x.rows() {
            let (xr, yr) = (x.row(r), y.row(r));
            let wr = w.row(if shared { 0 } else { r });
            let orow = out.row_mut(r);
            for (k, wv) in self.kernels.iter().zip(wr) {
                for &(a, b, c, v) in &k.cg.nonzero {
                    orow[k.out_off + c] += *wv * xr[k.x_off + a] * yr[k.y_off + b] * T::from_f64(v);
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::type_complexity)]
    pub fn backward<T: Real>(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        w: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
        let shared = w.rows() == 1;
        let mut gx = needs[0].then(|| Tensor::zeros(x.rows(), x.cols()));
        let mut gy = needs[1].then(|| Tensor::zeros(y.rows(), y.cols()));
        let mut gw = needs[2].then(|| Tensor::zeros(w.rows(), w.cols()));
        for r in 0..x.rows() {
            let (xr, yr, gr) = (x.row(r), y.row(r), g.row(r));
            let wr = w.row(if shared { 0 } else { r });
            for (p, k) in self.kernels.iter().enumerate() {
                let wv = wr[p];
                let mut acc_w = T::zero();
                for &(a, b, c, v) in &k.cg.nonzero {
                    let gv = gr[k.out_off + c] * T::from_f64(v);
                    let (xa, yb) = (xr[k.x_off + a], yr[k.y_off + b]);
                    if let Some(gx) = gx.as_mut() {
                        gx.row_mut(r)[k.x_off + a] += gv * wv * yb;
                    }
                    if let Some(gy) = gy.as_mut() {
                        gy.row_mut(r)[k.y_off + b] += gv * wv * xa;
                    }
                    acc_w += gv * xa * yb;
                }
                if let Some(gw) = gw.as_mut() {
                    gw.row_mut(if shared { 0 } else { r })[p] += acc_w;
                }
            }
        }
        (gx, gy, gw)
    }

    /// One line per path.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "{} (x) {} -> {}  L_max={}  paths={}  weights={}\n",
            self.irreps_in1,
            self.irreps_in2,
            self.irreps_out,
            self.l_max,
            self.paths.len(),
            self.weight_count
        );
        for p in &self.paths {
            s.push_str(&p.to_string());
            s.push('\n');
        }
        s
    }
}

/// Tape op; inputs `[x, y, weights]` with weights `1×W` (shared) or `rows×W`.
pub struct DtpOp {
    pub plan: Arc<TensorProductPlan>,
}

impl<T: Real> Op<T> for DtpOp {
    fn kind(&self) -> &'static str {
        "dtp"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.plan.forward(x[0], x[1], x[2])
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b, c) = self.plan.backward(x[0], x[1], x[2], g, needs);
        vec![a, b, c]
    }
}

impl<T: Real> Tape<T> {
    pub fn dtp(&mut self, plan: &Arc<TensorProductPlan>, x: Var, y: Var, w: Var) -> Result<Var> {
        self.record(DtpOp { plan: plan.clone() }, &[x, y, w])
    }
}

/// Weights are one shared row, or one row per input row.
pub fn apply_dtp(
    plan: &TensorProductPlan,
    x: &IrrepsFeature,
    y: &IrrepsFeature,
    weights: &Tensor,
) -> Result<IrrepsFeature> {
    if x.irreps != plan.irreps_in1 || y.irreps != plan.irreps_in2 {
        return Err(Error::Layout(format!(
            "tensor product planned for {} (x) {}, got {} (x) {}",
            plan.irreps_in1, plan.irreps_in2, x.irreps, y.irreps
        )));
    }
    let out = plan.forward(&x.data, &y.data, weights)?;
    IrrepsFeature::new(plan.irreps_out.clone(), out)
}
