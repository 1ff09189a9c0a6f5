//! Spherical harmonics of edge directions as a tape op.

use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::irreps::Irreps;
use crate::real::Real;
use crate::so3::{harmonic_polynomials, sh_parity};

/// `Y(r / ‖r‖)` for each row of an `E×3` input, one block per degree.
pub struct SphericalHarmonicsOp {
    pub ls: Vec<u32>,
}

impl SphericalHarmonicsOp {
    /// Degrees of an embedding layout `[(1,0),(1,1),…]`; in E(3) mode each
    /// block must carry the harmonic parity `(−1)^l`.
    pub fn for_irreps(irreps: &Irreps) -> Result<Self> {
        let mut ls = Vec::new();
        for b in irreps.blocks() {
            if b.mul != 1 || b.ir.parity.is_some_and(|p| p != sh_parity(b.ir.l)) {
                return Err(Error::Layout(format!(
                    "{irreps} is not a spherical-harmonics layout"
                )));
            }
            ls.push(b.ir.l);
        }
        Ok(Self { ls })
    }

    fn width(&self) -> usize {
        self.ls.iter().map(|&l| 2 * l as usize + 1).sum()
    }
}

fn unit<T: Real>(r: &[T]) -> Result<([T; 3], T)> {
    let d2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    if d2.re() <= 0.0 || !d2.is_finite() {
        return Err(Error::Domain(format!(
            "spherical harmonics of a zero-length edge {:?}",
            [r[0].re(), r[1].re(), r[2].re()]
        )));
    }
    let d = d2.sqrt();
    Ok(([r[0] / d, r[1] / d, r[2] / d], d))
}

impl<T: Real> Op<T> for SphericalHarmonicsOp {
    fn kind(&self) -> &'static str {
        "spherical_harmonics"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let r = x[0];
        if r.cols() != 3 {
            return Err(Error::Layout(format!("edge vectors must be Ex3, got {:?}", r.shape())));
        }
        let mut out = Tensor::zeros(r.rows(), self.width());
        for e in 0..r.rows() {
            let (n, _) = unit(r.row(e))?;
            let row = out.row_mut(e);
            let mut k = 0;
            for &l in &self.ls {
                for p in &harmonic_polynomials(l).components {
                    row[k] = p.eval_real(n);
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let r = x[0];
        let mut gr = Tensor::zeros(r.rows(), 3);
        for e in 0..r.rows() {
            let (n, d) = unit(r.row(e)).expect("checked in forward");
            let gy = g.row(e);
            let mut v = [T::zero(); 3];
            let mut k = 0;
            for &l in &self.ls {
                let table = harmonic_polynomials(l);
                for grad in &table.gradients {
                    for a in 0..3 {
                        v[a] += gy[k] * grad[a].eval_real(n);
                    }
                    k += 1;
                }
            }
            // project out the radial part: ∂n/∂r = (I − n nᵀ)/‖r‖
            let dot = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
            let row = gr.row_mut(e);
            for a in 0..3 {
                row[a] = (v[a] - dot * n[a]) / d;
            }
        }
        vec![Some(gr)]
    }
}

/// Record the spherical-harmonic embedding of edge vectors `r`.
pub fn edge_sh<T: Real>(tape: &mut Tape<T>, irreps_sh: &Irreps, r: Var) -> Result<Var> {
    tape.record(SphericalHarmonicsOp::for_irreps(irreps_sh)?, &[r])
}
