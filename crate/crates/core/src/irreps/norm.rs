//! Equivariant layer normalization.
//!
//! Scalar blocks: `(x − μ) / σ · γ + β` over the block's channels.
//! Other blocks: `x / RMS · γ` where `RMS = sqrt(mean_c ‖x_c‖² + ε)`.
//! The scalar `σ` carries the same `ε` under the root.
//!
//! A block that is zero analytically still holds rounding noise; any
//! scale-free normalization would blow that noise up to unit size, so `ε`
//! is additive rather than a tiny floor.

use std::sync::Arc;

use super::descriptor::Irreps;
use super::feature::IrrepsFeature;
use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

pub const LN_EPS: f64 = 1e-5;

/// `gamma`: one per channel of every block; `beta`: one per true-scalar channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(irreps: &Irreps) -> Self {
        Self {
            gamma: vec![1.0; irreps.num_channels()],
            beta: vec![0.0; irreps.scalar_channels()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormPlan {
    pub irreps: Irreps,
    gamma_offsets: Vec<usize>,
    beta_offsets: Vec<Option<usize>>,
}

impl LayerNormPlan {
    pub fn new(irreps: &Irreps) -> Self {
        let mut g = 0;
        let mut b = 0;
        let mut gamma_offsets = Vec::new();
        let mut beta_offsets = Vec::new();
        for blk in irreps.blocks() {
            gamma_offsets.push(g);
            g += blk.mul;
            if blk.ir.is_scalar() {
                beta_offsets.push(Some(b));
                b += blk.mul;
            } else {
                beta_offsets.push(None);
            }
        }
        Self {
            irreps: irreps.clone(),
            gamma_offsets,
            beta_offsets,
        }
    }

    pub fn gamma_len(&self) -> usize {
        self.irreps.num_channels()
    }

    pub fn beta_len(&self) -> usize {
        self.irreps.scalar_channels()
    }

    fn check<T: Real>(&self, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
        if x.cols() != self.irreps.dim() || gamma.len() != self.gamma_len() || beta.len() != self.beta_len() {
            return Err(Error::Layout(format!(
                "layer norm over {} got width {}, {} gammas, {} betas",
                self.irreps,
                x.cols(),
                gamma.len(),
                beta.len()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x, gamma, beta)?;
        let offsets = self.irreps.offsets();
        let mut y = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for (b, blk) in self.irreps.blocks().iter().enumerate() {
                let n = blk.mul;
                let dim = blk.ir.dim();
                let xs = &xr[offsets[b]..offsets[b] + n * dim];
                let g = &gamma.data()[self.gamma_offsets[b]..self.gamma_offsets[b] + n];
                let ys = &mut yr[offsets[b]..offsets[b] + n * dim];
                match self.beta_offsets[b] {
                    Some(bo) => {
                        let (mu, s) = mean_std(xs);
                        for c in 0..n {
                            ys[c] = (xs[c] - mu) / s * g[c] + beta.data()[bo + c];
                        }
                    }
                    None => {
                        let s = rms(xs, n);
                        for c in 0..n {
                            for m in 0..dim {
                                ys[c * dim + m] = xs[c * dim + m] / s * g[c];
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    #[allow(clippy::type_complexity)]
    pub fn backward<T: Real>(
        &self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        gy: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let offsets = self.irreps.offsets();
        let mut gx = Tensor::zeros(x.rows(), x.cols());
        let mut gg = Tensor::zeros(gamma.rows(), gamma.cols());
        let mut gb = Tensor::zeros(1, self.beta_len());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let gyr = gy.row(r);
            for (b, blk) in self.irreps.blocks().iter().enumerate() {
                let n = blk.mul;
                let dim = blk.ir.dim();
                let o = offsets[b];
                let xs = &xr[o..o + n * dim];
                let gys = &gyr[o..o + n * dim];
                let go = self.gamma_offsets[b];
                let g = &gamma.data()[go..go + n];
                match self.beta_offsets[b] {
                    Some(bo) => {
                        let (mu, s) = mean_std(xs);
                        let nf = T::from_f64(n as f64);
                        let xhat: Vec<T> = xs.iter().map(|&v| (v - mu) / s).collect();
                        let mut mean_g = T::zero();
                        let mut mean_gx = T::zero();
                        for c in 0..n {
                            let gh = gys[c] * g[c];
                            mean_g += gh;
                            mean_gx += gh * xhat[c];
                            gg.data_mut()[go + c] += gys[c] * xhat[c];
                            gb.data_mut()[bo + c] += gys[c];
                        }
                        mean_g = mean_g / nf;
                        mean_gx = mean_gx / nf;
                        let gxr = &mut gx.row_mut(r)[o..o + n];
                        for c in 0..n {
                            let gh = gys[c] * g[c];
                            gxr[c] += (gh - mean_g - xhat[c] * mean_gx) / s;
                        }
                    }
                    None => {
                        let s = rms(xs, n);
                        let mut dot = T::zero();
                        for c in 0..n {
                            let mut acc = T::zero();
                            for m in 0..dim {
                                acc += gys[c * dim + m] * xs[c * dim + m];
                            }
                            gg.data_mut()[go + c] += acc / s;
                            dot += acc * g[c];
                        }
                        let k = dot / (s * s * s * T::from_f64(n as f64));
                        let gxr = &mut gx.row_mut(r)[o..o + n * dim];
                        for c in 0..n {
                            for m in 0..dim {
                                let i = c * dim + m;
                                gxr[i] += gys[i] * g[c] / s - xs[i] * k;
                            }
                        }
                    }
                }
            }
        }
        (gx, gg, gb)
    }
}

fn mean_std<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_f64(xs.len() as f64);
    let mut mu = T::zero();
    for &v in xs {
        mu += v;
    }
    mu = mu / n;
    let mut var = T::zero();
    for &v in xs {
        var += (v - mu) * (v - mu);
    }
    (mu, (var / n + T::from_f64(LN_EPS)).sqrt())
}

fn rms<T: Real>(xs: &[T], channels: usize) -> T {
    let mut q = T::zero();
    for &v in xs {
        q += v * v;
    }
    (q / T::from_f64(channels as f64) + T::from_f64(LN_EPS)).sqrt()
}

/// Tape op; inputs `[x, gamma, beta]`.
pub struct LayerNormOp {
    pub plan: Arc<LayerNormPlan>,
}

impl<T: Real> Op<T> for LayerNormOp {
    fn kind(&self) -> &'static str {
        "layer_norm"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.plan.forward(x[0], x[1], x[2])
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (gx, gg, gb) = self.plan.backward(x[0], x[1], g);
        vec![needs[0].then_some(gx), needs[1].then_some(gg), needs[2].then_some(gb)]
    }
}

impl<T: Real> Tape<T> {
    pub fn layer_norm(&mut self, plan: &Arc<LayerNormPlan>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.record(LayerNormOp { plan: plan.clone() }, &[x, gamma, beta])
    }
}

pub fn equivariant_layer_norm(x: &IrrepsFeature, params: &LayerNormParams) -> Result<IrrepsFeature> {
    let plan = LayerNormPlan::new(&x.irreps);
    let y = plan.forward(
        &x.data,
        &Tensor::row_vector(params.gamma.clone()),
        &Tensor::row_vector(params.beta.clone()),
    )?;
    IrrepsFeature::new(x.irreps.clone(), y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scalars_give_beta() {
        let ir = Irreps::se3(&[(3, 0)]);
        let x = IrrepsFeature::new(ir.clone(), Tensor::row_vector(vec![2.5; 3])).unwrap();
        let p = LayerNormParams {
            gamma: vec![1.0, 2.0, 3.0],
            beta: vec![0.1, 0.2, 0.3],
        };
        let y = equivariant_layer_norm(&x, &p).unwrap();
        assert_eq!(y.data.data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn single_vector_is_normalized() {
        let ir = Irreps::se3(&[(1, 1)]);
        let x = IrrepsFeature::new(ir.clone(), Tensor::row_vector(vec![3.0, 0.0, 4.0])).unwrap();
        let y = equivariant_layer_norm(&x, &LayerNormParams::identity(&ir)).unwrap();
        // v/‖v‖ up to the relative shift ε / 2‖v‖²
        let want = [0.6, 0.0, 0.8];
        for (a, b) in y.data.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_features_stay_finite() {
        let ir = Irreps::se3(&[(2, 0), (2, 2)]);
        let x = IrrepsFeature::zeros(ir.clone(), 2);
        let y = equivariant_layer_norm(&x, &LayerNormParams::identity(&ir)).unwrap();
        assert!(y.data.all_finite());
        assert_eq!(y.data.max_abs(), 0.0);
    }

    #[test]
    fn wrong_param_count_is_a_layout_error() {
        let ir = Irreps::se3(&[(2, 0), (1, 1)]);
        let x = IrrepsFeature::zeros(ir, 1);
        let p = LayerNormParams {
            gamma: vec![1.0; 2],
            beta: vec![0.0; 2],
        };
        assert!(matches!(equivariant_layer_norm(&x, &p), Err(Error::Layout(_))));
    }
}
