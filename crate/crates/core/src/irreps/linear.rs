//! Equivariant linear map: channels of one irrep kind mix only with channels
//! of the same kind, with the same weight on every order `m`. Biases exist
//! only on true-scalar outputs.

use std::sync::Arc;

use rand::Rng;

use super::descriptor::Irreps;
use super::feature::IrrepsFeature;
use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPath {
    pub in_block: usize,
    pub out_block: usize,
    /// Start of this path's `mul_out × mul_in` row-major weight matrix.
    pub weight_offset: usize,
    /// Input channels of this kind feeding the output block.
    pub fan_in: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearPlan {
    pub irreps_in: Irreps,
    pub irreps_out: Irreps,
    pub paths: Vec<LinearPath>,
    pub weight_count: usize,
    /// `(output block, offset into the bias vector)` for scalar outputs.
    pub bias_blocks: Vec<(usize, usize)>,
    pub bias_count: usize,
}

impl LinearPlan {
    pub fn new(irreps_in: &Irreps, irreps_out: &Irreps, bias: bool) -> Result<Self> {
        let mut paths = Vec::new();
        let mut weight_count = 0;
        for (o, bo) in irreps_out.blocks().iter().enumerate() {
            let fan_in = irreps_in.channels_of(bo.ir);
            if fan_in == 0 {
                return Err(Error::Layout(format!(
                    "linear output block ({},{}) has no input of the same kind in {irreps_in}",
                    bo.mul, bo.ir
                )));
            }
            for (i, bi) in irreps_in.blocks().iter().enumerate() {
                if bi.ir == bo.ir {
                    paths.push(LinearPath {
                        in_block: i,
                        out_block: o,
                        weight_offset: weight_count,
                        fan_in,
                    });
                    weight_count += bo.mul * bi.mul;
                }
            }
        }
        let mut bias_blocks = Vec::new();
        let mut bias_count = 0;
        if bias {
            for (o, bo) in irreps_out.blocks().iter().enumerate() {
                if bo.ir.is_scalar() {
                    bias_blocks.push((o, bias_count));
                    bias_count += bo.mul;
                }
            }
        }
        Ok(Self {
            irreps_in: irreps_in.clone(),
            irreps_out: irreps_out.clone(),
            paths,
            weight_count,
            bias_blocks,
            bias_count,
        })
    }

    pub fn has_bias(&self) -> bool {
        self.bias_count > 0
    }

    /// Uniform in `±1/√fan_in` per path; biases start at zero.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mut w = vec![0.0; self.weight_count];
        for p in &self.paths {
            let n = self.irreps_out.blocks()[p.out_block].mul * self.irreps_in.blocks()[p.in_block].mul;
            let bound = 1.0 / (p.fan_in as f64).sqrt();
            for v in &mut w[p.weight_offset..p.weight_offset + n] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        (w, vec![0.0; self.bias_count])
    }

    fn check(&self, x: &Tensor<impl Real>, w: &Tensor<impl Real>, b: Option<&Tensor<impl Real>>) -> Result<()> {
        if x.cols() != self.irreps_in.dim() {
            return Err(Error::Layout(format!(
                "linear input width {} != {}",
                x.cols(),
                self.irreps_in.dim()
            )));
        }
        if w.len() != self.weight_count {
            return Err(Error::Layout(format!(
                "linear expects {} weights, got {}",
                self.weight_count,
                w.len()
            )));
        }
        if b.map(|b| b.len()).unwrap_or(0) != self.bias_count {
            return Err(Error::Layout(format!(
                "linear expects {} biases",
                self.bias_count
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check(x, w, b)?;
        let in_off = self.irreps_in.offsets();
        let out_off = self.irreps_out.offsets();
        let w = w.data();
        let mut y = Tensor::zeros(x.rows(), self.irreps_out.dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for p in &self.paths {
                let bi = self.irreps_in.blocks()[p.in_block];
                let bo = self.irreps_out.blocks()[p.out_block];
                let dim = bi.ir.dim();
                let xb = &xr[in_off[p.in_block]..in_off[p.in_block] + bi.mul * dim];
                let yb = &mut yr[out_off[p.out_block]..out_off[p.out_block] + bo.mul * dim];
                let wp = &w[p.weight_offset..p.weight_offset + bo.mul * bi.mul];
                for (wrow, yc) in wp.chunks_exact(bi.mul).zip(yb.chunks_exact_mut(dim)) {
                    if dim == 1 {
                        let mut acc = T::zero();
                        for (&wv, &xv) in wrow.iter().zip(xb) {
                            acc += wv * xv;
                        }
                        yc[0] += acc;
                    } else {
                        for (&wv, xc) in wrow.iter().zip(xb.chunks_exact(dim)) {
                            for (o, &xv) in yc.iter_mut().zip(xc) {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                for &(o, boff) in &self.bias_blocks {
                    for c in 0..self.irreps_out.blocks()[o].mul {
                        yr[out_off[o] + c] += b.data()[boff + c];
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward<T: Real>(
        &self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        gy: &Tensor<T>,
        needs: [bool; 3],
    ) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
        let in_off = self.irreps_in.offsets();
        let out_off = self.irreps_out.offsets();
        let mut gx = needs[0].then(|| Tensor::zeros(x.rows(), x.cols()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.rows(), w.cols()));
        let mut gb = (needs[2] && self.has_bias()).then(|| Tensor::zeros(1, self.bias_count));
        for r in 0..x.rows() {
            let xr = x.row(r);
            let gyr = gy.row(r);
            for p in &self.paths {
                let bi = self.irreps_in.blocks()[p.in_block];
                let bo = self.irreps_out.blocks()[p.out_block];
                let dim = bi.ir.dim();
                let (xs, ys) = (in_off[p.in_block], out_off[p.out_block]);
                let n = bo.mul * bi.mul;
                let gyb = &gyr[ys..ys + bo.mul * dim];
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx.row_mut(r)[xs..xs + bi.mul * dim];
                    let wp = &w.data()[p.weight_offset..p.weight_offset + n];
                    for (wrow, gc) in wp.chunks_exact(bi.mul).zip(gyb.chunks_exact(dim)) {
                        for (&wv, gxc) in wrow.iter().zip(gxb.chunks_exact_mut(dim)) {
                            for (o, &g) in gxc.iter_mut().zip(gc) {
                                *o += wv * g;
                            }
                        }
                    }
                }
                if let Some(gw) = gw.as_mut() {
                    let xb = &xr[xs..xs + bi.mul * dim];
                    let gwp = &mut gw.data_mut()[p.weight_offset..p.weight_offset + n];
                    for (gwrow, gc) in gwp.chunks_exact_mut(bi.mul).zip(gyb.chunks_exact(dim)) {
                        for (o, xc) in gwrow.iter_mut().zip(xb.chunks_exact(dim)) {
                            let mut acc = T::zero();
                            for (&g, &xv) in gc.iter().zip(xc) {
                                acc += g * xv;
                            }
                            *o += acc;
                        }
                    }
                }
            }
            if let Some(gb) = gb.as_mut() {
                for &(o, boff) in &self.bias_blocks {
                    for c in 0..self.irreps_out.blocks()[o].mul {
                        gb.data_mut()[boff + c] += gyr[out_off[o] + c];
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

/// Tape op; inputs `[x, weights]` or `[x, weights, bias]`.
pub struct LinearOp {
    pub plan: Arc<LinearPlan>,
}

impl<T: Real> Op<T> for LinearOp {
    fn kind(&self) -> &'static str {
        "equivariant_linear"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.plan.forward(x[0], x[1], x.get(2).copied())
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (gx, gw, gb) = self
            .plan
            .backward(x[0], x[1], g, [needs[0], needs[1], needs.get(2).copied().unwrap_or(false)]);
        let mut out = vec![gx, gw];
        if x.len() == 3 {
            out.push(gb);
        }
        out
    }
}

impl<T: Real> Tape<T> {
    pub fn linear(&mut self, plan: &Arc<LinearPlan>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let op = LinearOp { plan: plan.clone() };
        match b {
            Some(b) => self.record(op, &[x, w, b]),
            None => self.record(op, &[x, w]),
        }
    }
}

/// Apply an equivariant linear map with explicit weights.
pub fn equivariant_linear(
    x: &IrrepsFeature,
    weights: &[f64],
    bias: Option<&[f64]>,
    irreps_out: &Irreps,
) -> Result<IrrepsFeature> {
    let plan = LinearPlan::new(&x.irreps, irreps_out, bias.is_some())?;
    let w = Tensor::row_vector(weights.to_vec());
    let b = bias.map(|b| Tensor::row_vector(b.to_vec()));
    let y = plan.forward(&x.data, &w, b.as_ref())?;
    IrrepsFeature::new(irreps_out.clone(), y)
}
