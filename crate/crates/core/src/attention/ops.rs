//! Attention-specific tape ops: logits, per-destination softmax and
//! head-wise weighting of values.

use rand::Rng;

use crate::autodiff::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::irreps::Irreps;
use crate::real::Real;

fn leaky<T: Real>(x: T, slope: f64) -> T {
    if x.re() >= 0.0 {
        x
    } else {
        x.scale(slope)
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// `z[e, t] = Σ_c a[t, c] · LeakyReLU(f[e, t, c])`; inputs `[f0, a]` with
/// `f0: E × (h·m)` and `a: 1 × (h·m)`.
pub struct MlpLogits {
    pub heads: usize,
    pub per_head: usize,
    pub slope: f64,
}

impl<T: Real> Op<T> for MlpLogits {
    fn kind(&self) -> &'static str {
        "attention_logits_mlp"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (f, a) = (x[0], x[1]);
        let w = self.heads * self.per_head;
        if f.cols() != w || a.len() != w {
            return Err(Error::Layout(format!(
                "mlp logits expect {w} columns, got {} and {}",
                f.cols(),
                a.len()
            )));
        }
        let mut z = Tensor::zeros(f.rows(), self.heads);
        for e in 0..f.rows() {
            let fr = f.row(e);
            for t in 0..self.heads {
                let mut acc = T::zero();
                for c in t * self.per_head..(t + 1) * self.per_head {
                    acc += a.data()[c] * leaky(fr[c], self.slope);
                }
                z.set(e, t, acc);
            }
        }
        Ok(z)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (f, a) = (x[0], x[1]);
        let mut gf = Tensor::zeros(f.rows(), f.cols());
        let mut ga = Tensor::zeros(a.rows(), a.cols());
        for e in 0..f.rows() {
            for t in 0..self.heads {
                let gz = g.get(e, t);
                for c in t * self.per_head..(t + 1) * self.per_head {
                    let v = f.get(e, c);
                    gf.set(e, c, gz * a.data()[c] * T::from_f64(leaky_grad(v.re(), self.slope)));
                    ga.data_mut()[c] += gz * leaky(v, self.slope);
                }
            }
        }
        vec![needs[0].then_some(gf), needs[1].then_some(ga)]
    }
}

/// Head index of every column of a head-split layout `d_head × h`.
pub fn head_columns(irreps: &Irreps, heads: usize) -> Result<Vec<usize>> {
    let mut cols = Vec::with_capacity(irreps.dim());
    for b in irreps.blocks() {
        if b.mul % heads != 0 {
            return Err(Error::Config(format!(
                "block ({},{}) of {irreps} does not split into {heads} heads",
                b.mul, b.ir
            )));
        }
        let per = b.mul / heads;
        for c in 0..b.mul {
            for _ in 0..b.ir.dim() {
                cols.push(c / per);
            }
        }
    }
    Ok(cols)
}

/// `z[e, t] = scale · Σ_{columns of head t} q[e] k[e]`; inputs `[q, k]`.
pub struct DotLogits {
    pub head_of_col: Vec<usize>,
    pub heads: usize,
    pub scale: f64,
}

impl<T: Real> Op<T> for DotLogits {
    fn kind(&self) -> &'static str {
        "attention_logits_dot"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (q, k) = (x[0], x[1]);
        if q.shape() != k.shape() || q.cols() != self.head_of_col.len() {
            return Err(Error::Layout(format!(
                "dot logits: query {:?}, key {:?}",
                q.shape(),
                k.shape()
            )));
        }
        let mut z: Tensor<T> = Tensor::zeros(q.rows(), self.heads);
        for e in 0..q.rows() {
            let (qr, kr) = (q.row(e), k.row(e));
            let zr = z.row_mut(e);
            for (c, &t) in self.head_of_col.iter().enumerate() {
                zr[t] += qr[c] * kr[c];
            }
            for v in zr.iter_mut() {
                *v = v.scale(self.scale);
            }
        }
        Ok(z)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (q, k) = (x[0], x[1]);
        let mut gq = Tensor::zeros(q.rows(), q.cols());
        let mut gk = Tensor::zeros(k.rows(), k.cols());
        for e in 0..q.rows() {
            for (c, &t) in self.head_of_col.iter().enumerate() {
                let gz = g.get(e, t).scale(self.scale);
                gq.set(e, c, gz * k.get(e, c));
                gk.set(e, c, gz * q.get(e, c));
            }
        }
        vec![needs[0].then_some(gq), needs[1].then_some(gk)]
    }
}

/// Softmax over rows sharing the same segment id, per column. Uses max
/// subtraction; empty segments produce no rows.
pub struct SegmentSoftmax {
    pub index: Vec<usize>,
    pub segments: usize,
}

impl<T: Real> Op<T> for SegmentSoftmax {
    fn kind(&self) -> &'static str {
        "segment_softmax"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let z = x[0];
        if z.rows() != self.index.len() || self.index.iter().any(|&i| i >= self.segments) {
            return Err(Error::Layout("segment softmax index does not match logits".into()));
        }
        let h = z.cols();
        let mut max = vec![f64::NEG_INFINITY; self.segments * h];
        for (e, &s) in self.index.iter().enumerate() {
            for t in 0..h {
                max[s * h + t] = max[s * h + t].max(z.get(e, t).re());
            }
        }
        let mut out = Tensor::zeros(z.rows(), h);
        let mut sum = vec![T::zero(); self.segments * h];
        for (e, &s) in self.index.iter().enumerate() {
            for t in 0..h {
                let v = (z.get(e, t) - T::from_f64(max[s * h + t])).exp();
                out.set(e, t, v);
                sum[s * h + t] += v;
            }
        }
        for (e, &s) in self.index.iter().enumerate() {
            for t in 0..h {
                out.set(e, t, out.get(e, t) / sum[s * h + t]);
            }
        }
        Ok(out)
    }

    fn backward(&self, _: &[&Tensor<T>], a: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let h = a.cols();
        let mut dot = vec![T::zero(); self.segments * h];
        for (e, &s) in self.index.iter().enumerate() {
            for t in 0..h {
                dot[s * h + t] += a.get(e, t) * g.get(e, t);
            }
        }
        let mut gz = Tensor::zeros(a.rows(), h);
        for (e, &s) in self.index.iter().enumerate() {
            for t in 0..h {
                gz.set(e, t, a.get(e, t) * (g.get(e, t) - dot[s * h + t]));
            }
        }
        vec![Some(gz)]
    }
}

/// `out[e, c] = a[e, head(c)] · v[e, c]`; inputs `[a, v]`.
pub struct HeadWeighting {
    pub head_of_col: Vec<usize>,
}

impl<T: Real> Op<T> for HeadWeighting {
    fn kind(&self) -> &'static str {
        "head_weighting"
    }

    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, v) = (x[0], x[1]);
        if a.rows() != v.rows() || v.cols() != self.head_of_col.len() {
            return Err(Error::Layout(format!(
                "head weighting: weights {:?}, values {:?}",
                a.shape(),
                v.shape()
            )));
        }
        let mut out = Tensor::zeros(v.rows(), v.cols());
        for e in 0..v.rows() {
            for (c, &t) in self.head_of_col.iter().enumerate() {
                out.set(e, c, a.get(e, t) * v.get(e, c));
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, v) = (x[0], x[1]);
        let mut ga = Tensor::zeros(a.rows(), a.cols());
        let mut gv = Tensor::zeros(v.rows(), v.cols());
        for e in 0..v.rows() {
            for (c, &t) in self.head_of_col.iter().enumerate() {
                let gc = g.get(e, c);
                ga.set(e, t, ga.get(e, t) + gc * v.get(e, c));
                gv.set(e, c, gc * a.get(e, t));
            }
        }
        vec![needs[0].then_some(ga), needs[1].then_some(gv)]
    }
}

impl<T: Real> Tape<T> {
    pub fn segment_softmax(&mut self, z: Var, index: Vec<usize>, segments: usize) -> Result<Var> {
        self.record(SegmentSoftmax { index, segments }, &[z])
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1−p)`. All ones outside training or when `p = 0`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, training: bool, rng: &mut R) -> Tensor {
    let mut m = Tensor::from_vec(rows, cols, vec![1.0; rows * cols]).expect("shape");
    if training && p > 0.0 {
        let keep = 1.0 / (1.0 - p);
        for v in m.data_mut() {
            *v = if rng.random::<f64>() < p { 0.0 } else { keep };
        }
    }
    m
}

/// Apply attention dropout to plain weights.
pub fn attn_dropout<R: Rng + ?Sized>(a: &Tensor, p: f64, training: bool, rng: &mut R) -> Tensor {
    let m = dropout_mask(a.rows(), a.cols(), p, training, rng);
    let mut out = a.clone();
    for (o, k) in out.data_mut().iter_mut().zip(m.data()) {
        *o *= k;
    }
    out
}
