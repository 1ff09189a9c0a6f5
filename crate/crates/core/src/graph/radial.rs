//! Radial basis expansions of edge lengths and the radial MLP that turns
//! them into per-edge tensor-product weights.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::irreps::{GatePlan, Irreps};
use crate::nn::{silu_plan, Bound, LayerNorm, Linear, ParamSet};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadialKind {
    /// `exp(−(d − c_k)² / 2σ²)`, centers evenly spaced on `[0, cutoff]`,
    /// `σ` = center spacing.
    Gaussian,
    /// `√(2/c) · sin(kπd/c) / d`, `k = 1..=count`.
    Bessel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialBasis {
    pub kind: RadialKind,
    pub count: usize,
    pub cutoff: f64,
}

impl RadialBasis {
    fn spacing(&self) -> f64 {
        if self.count > 1 {
            self.cutoff / (self.count - 1) as f64
        } else {
            self.cutoff
        }
    }

    /// Values and derivatives with respect to `d`.
    fn eval_with_grad<T: Real>(&self, d: T, out: &mut [T], grad: Option<&mut [T]>) {
        match self.kind {
            RadialKind::Gaussian => {
                let s = self.spacing();
                let inv = 1.0 / (2.0 * s * s);
                let mut grad = grad;
                for k in 0..self.count {
                    let diff = d - T::from_f64(k as f64 * s);
                    let v = (-(diff * diff).scale(inv)).exp();
                    out[k] = v;
                    if let Some(g) = grad.as_deref_mut() {
                        g[k] = -(diff * v).scale(2.0 * inv);
                    }
                }
            }
            RadialKind::Bessel => {
                let pre = (2.0 / self.cutoff).sqrt();
                let mut grad = grad;
                for k in 0..self.count {
                    let f = (k + 1) as f64 * PI / self.cutoff;
                    let arg = d.scale(f);
                    let (s, c) = (arg.sin(), arg.cos());
                    out[k] = (s / d).scale(pre);
                    if let Some(g) = grad.as_deref_mut() {
                        g[k] = ((c.scale(f) - s / d) / d).scale(pre);
                    }
                }
            }
        }
    }

    pub fn eval(&self, d: f64) -> Result<Vec<f64>> {
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Domain(format!("radial basis needs d > 0, got {d}")));
        }
        let mut out = vec![0.0; self.count];
        self.eval_with_grad(d, &mut out, None);
        Ok(out)
    }
}

pub fn radial_basis(d: f64, kind: RadialKind, count: usize, cutoff: f64) -> Result<Vec<f64>> {
    RadialBasis { kind, count, cutoff }.eval(d)
}

/// Basis of `‖r‖` for each row of an `E×3` input.
pub struct RadialBasisOp {
    pub basis: RadialBasis,
}

fn length<T: Real>(r: &[T]) -> Result<T> {
    let d2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    if d2.re() <= 0.0 {
        return Err(Error::Domain("radial basis of a zero-length edge".into()));
    }
    Ok(d2.sqrt())
}

impl<T: Real> Op<T> for RadialBasisOp {
    fn kind(&self) -> &'static str {
        "radial_basis"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let r = x[0];
        if r.cols() != 3 {
            return Err(Error::Layout(format!("edge vectors must be Ex3, got {:?}", r.shape())));
        }
        let mut out = Tensor::zeros(r.rows(), self.basis.count);
        for e in 0..r.rows() {
            let d = length(r.row(e))?;
            self.basis.eval_with_grad(d, out.row_mut(e), None);
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let r = x[0];
        let k = self.basis.count;
        let mut gr = Tensor::zeros(r.rows(), 3);
        let (mut vals, mut ders) = (vec![T::zero(); k], vec![T::zero(); k]);
        for e in 0..r.rows() {
            let row = r.row(e);
            let d = length(row).expect("checked in forward");
            self.basis.eval_with_grad(d, &mut vals, Some(&mut ders));
            let mut gd = T::zero();
            for (gv, dv) in g.row(e).iter().zip(&ders) {
                gd += *gv * *dv;
            }
            let out = gr.row_mut(e);
            for a in 0..3 {
                out[a] = gd * row[a] / d;
            }
        }
        vec![Some(gr)]
    }
}

impl<T: Real> Tape<T> {
    pub fn radial_basis(&mut self, basis: RadialBasis, r: Var) -> Result<Var> {
        self.record(RadialBasisOp { basis }, &[r])
    }
}

/// `Linear → LN → SiLU → Linear → LN → SiLU → Linear`, hidden width 64 by
/// default. Works on plain scalar rows.
#[derive(Clone, Debug)]
pub struct RadialMlp {
    pub layers: [Linear; 3],
    pub norms: [LayerNorm; 2],
    silu: Arc<GatePlan>,
    pub out_dim: usize,
}

impl RadialMlp {
    pub fn new(name: &str, basis_count: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        let s = |n| Irreps::se3(&[(n, 0)]);
        Ok(Self {
            layers: [
                Linear::new(format!("{name}.fc0"), &s(basis_count), &s(hidden), true)?,
                Linear::new(format!("{name}.fc1"), &s(hidden), &s(hidden), true)?,
                Linear::new(format!("{name}.fc2"), &s(hidden), &s(out_dim), true)?,
            ],
            norms: [
                LayerNorm::new(format!("{name}.ln0"), &s(hidden)),
                LayerNorm::new(format!("{name}.ln1"), &s(hidden)),
            ],
            silu: silu_plan(hidden),
            out_dim,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut ParamSet) {
        for l in &self.layers {
            l.init(rng, params);
        }
        for n in &self.norms {
            n.init(params);
        }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, basis: Var) -> Result<Var> {
        let mut h = basis;
        for i in 0..2 {
            h = self.layers[i].apply(tape, p, h)?;
            h = self.norms[i].apply(tape, p, h)?;
            h = tape.gate(&self.silu, h)?;
        }
        self.layers[2].apply(tape, p, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_peaks_at_center() {
        let b = radial_basis(2.5, RadialKind::Gaussian, 5, 5.0).unwrap();
        assert_eq!(b[2], 1.0);
    }

    #[test]
    fn bessel_vanishes_at_cutoff() {
        let b = radial_basis(5.0, RadialKind::Bessel, 8, 5.0).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn bessel_first_at_half_cutoff() {
        let c: f64 = 5.0;
        let b = radial_basis(c / 2.0, RadialKind::Bessel, 3, c).unwrap();
        assert!((b[0] - 2.0 * (2.0 / c).sqrt() / c).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_distance_is_a_domain_error() {
        assert!(matches!(radial_basis(0.0, RadialKind::Bessel, 3, 5.0), Err(Error::Domain(_))));
        assert!(radial_basis(-1.0, RadialKind::Gaussian, 3, 5.0).is_err());
    }
}
