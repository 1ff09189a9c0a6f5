//! Structural and elementwise ops: arithmetic, reductions, row gathers and
//! scatters, column slicing.

use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

fn same_shape<T: Real>(kind: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Layout(format!(
            "{kind}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub struct Add;

impl<T: Real> Op<T> for Add {
    fn kind(&self) -> &'static str {
        "add"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("add", x[0], x[1])?;
        let mut out = x[0].clone();
        out.add_assign(x[1]);
        Ok(out)
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![n[0].then(|| g.clone()), n[1].then(|| g.clone())]
    }
}

pub struct Sub;

impl<T: Real> Op<T> for Sub {
    fn kind(&self) -> &'static str {
        "sub"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("sub", x[0], x[1])?;
        let mut out = x[0].clone();
        for (a, &b) in out.data_mut().iter_mut().zip(x[1].data()) {
            *a -= b;
        }
        Ok(out)
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![n[0].then(|| g.clone()), n[1].then(|| g.map(|v| -v))]
    }
}

/// Elementwise product.
pub struct Mul;

impl<T: Real> Op<T> for Mul {
    fn kind(&self) -> &'static str {
        "mul"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("mul", x[0], x[1])?;
        let mut out = x[0].clone();
        for (a, &b) in out.data_mut().iter_mut().zip(x[1].data()) {
            *a *= b;
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let times = |other: &Tensor<T>| {
            let mut out = g.clone();
            for (a, &b) in out.data_mut().iter_mut().zip(other.data()) {
                *a *= b;
            }
            out
        };
        vec![n[0].then(|| times(x[1])), n[1].then(|| times(x[0]))]
    }
}

/// Multiply by a fixed real constant.
pub struct Scale(pub f64);

impl<T: Real> Op<T> for Scale {
    fn kind(&self) -> &'static str {
        "scale"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(x[0].scaled(self.0))
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![n[0].then(|| g.scaled(self.0))]
    }
}

/// Sum of every entry, as a `1×1` tensor.
pub struct SumAll;

impl<T: Real> Op<T> for SumAll {
    fn kind(&self) -> &'static str {
        "sum_all"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let mut s = T::zero();
        for &v in x[0].data() {
            s += v;
        }
        Ok(Tensor::scalar(s))
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let gv = g.get(0, 0);
        vec![n[0].then(|| Tensor::from_vec(x[0].rows(), x[0].cols(), vec![gv; x[0].len()]).unwrap())]
    }
}

/// `out[r] = x[index[r]]`.
pub struct GatherRows {
    pub index: Vec<usize>,
}

impl<T: Real> Op<T> for GatherRows {
    fn kind(&self) -> &'static str {
        "gather_rows"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let src = x[0];
        if let Some(&bad) = self.index.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::Layout(format!(
                "gather index {bad} out of range for {} rows",
                src.rows()
            )));
        }
        let mut out = Tensor::zeros(self.index.len(), src.cols());
        for (r, &i) in self.index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !n[0] {
            return vec![None];
        }
        let mut dx = Tensor::zeros(x[0].rows(), x[0].cols());
        for (r, &i) in self.index.iter().enumerate() {
            for (a, &b) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                *a += b;
            }
        }
        vec![Some(dx)]
    }
}

/// `out[index[r]] += x[r]`, accumulated in row order so the reduction is
/// deterministic.
pub struct ScatterRows {
    pub index: Vec<usize>,
    pub out_rows: usize,
}

impl<T: Real> Op<T> for ScatterRows {
    fn kind(&self) -> &'static str {
        "scatter_rows"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let src = x[0];
        if src.rows() != self.index.len() {
            return Err(Error::Layout(format!(
                "scatter expects {} rows, got {}",
                self.index.len(),
                src.rows()
            )));
        }
        if let Some(&bad) = self.index.iter().find(|&&i| i >= self.out_rows) {
            return Err(Error::Layout(format!("scatter index {bad} out of range")));
        }
        let mut out = Tensor::zeros(self.out_rows, src.cols());
        for (r, &i) in self.index.iter().enumerate() {
            for (a, &b) in out.row_mut(i).iter_mut().zip(src.row(r)) {
                *a += b;
            }
        }
        Ok(out)
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !n[0] {
            return vec![None];
        }
        let mut dx = Tensor::zeros(self.index.len(), g.cols());
        for (r, &i) in self.index.iter().enumerate() {
            dx.row_mut(r).copy_from_slice(g.row(i));
        }
        vec![Some(dx)]
    }
}

/// Columns `[start, start + len)`.
pub struct SliceCols {
    pub start: usize,
    pub len: usize,
}

impl<T: Real> Op<T> for SliceCols {
    fn kind(&self) -> &'static str {
        "slice_cols"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let src = x[0];
        if self.start + self.len > src.cols() {
            return Err(Error::Layout(format!(
                "column slice {}..{} out of {} columns",
                self.start,
                self.start + self.len,
                src.cols()
            )));
        }
        let mut out = Tensor::zeros(src.rows(), self.len);
        for r in 0..src.rows() {
            out.row_mut(r)
                .copy_from_slice(&src.row(r)[self.start..self.start + self.len]);
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !n[0] {
            return vec![None];
        }
        let mut dx = Tensor::zeros(x[0].rows(), x[0].cols());
        for r in 0..g.rows() {
            dx.row_mut(r)[self.start..self.start + self.len].copy_from_slice(g.row(r));
        }
        vec![Some(dx)]
    }
}

/// Place the input into columns `[start, start + cols_in)` of a zero tensor
/// with `total` columns.
pub struct PlaceCols {
    pub start: usize,
    pub total: usize,
}

impl<T: Real> Op<T> for PlaceCols {
    fn kind(&self) -> &'static str {
        "place_cols"
    }
    fn forward(&self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let src = x[0];
        if self.start + src.cols() > self.total {
            return Err(Error::Layout("column placement out of range".into()));
        }
        let mut out = Tensor::zeros(src.rows(), self.total);
        for r in 0..src.rows() {
            out.row_mut(r)[self.start..self.start + src.cols()].copy_from_slice(src.row(r));
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, n: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !n[0] {
            return vec![None];
        }
        let w = x[0].cols();
        let mut dx = Tensor::zeros(x[0].rows(), w);
        for r in 0..g.rows() {
            dx.row_mut(r).copy_from_slice(&g.row(r)[self.start..self.start + w]);
        }
        vec![Some(dx)]
    }
}

/// Convenience recorders for the structural ops.
impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Scale(c), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.record(SumAll, &[a])
    }

    /// `Σ weights ∘ a` with fixed weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor<T>) -> Result<Var> {
        let w = self.constant(weights);
        let p = self.mul(a, w)?;
        self.sum_all(p)
    }

    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        self.record(GatherRows { index }, &[a])
    }

    pub fn scatter_rows(&mut self, a: Var, index: Vec<usize>, out_rows: usize) -> Result<Var> {
        self.record(ScatterRows { index, out_rows }, &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.record(SliceCols { start, len }, &[a])
    }

    pub fn place_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        self.record(PlaceCols { start, total }, &[a])
    }
}
