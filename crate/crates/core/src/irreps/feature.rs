use super::descriptor::Irreps;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::so3::{o3_matrix, O3};

/// Rows of features laid out by an [`Irreps`] descriptor.
///
/// Within a row, block `b` starts at `irreps.offsets()[b]` and stores its
/// channels contiguously, each channel holding `2l + 1` orders.
#[derive(Clone, Debug, PartialEq)]
pub struct IrrepsFeature<T: Real = f64> {
    pub irreps: Irreps,
    pub data: Tensor<T>,
}

impl<T: Real> IrrepsFeature<T> {
    pub fn new(irreps: Irreps, data: Tensor<T>) -> Result<Self> {
        if data.cols() != irreps.dim() {
            return Err(Error::Layout(format!(
                "feature width {} does not match irreps {irreps} of dimension {}",
                data.cols(),
                irreps.dim()
            )));
        }
        Ok(Self { irreps, data })
    }

    pub fn zeros(irreps: Irreps, rows: usize) -> Self {
        let data = Tensor::zeros(rows, irreps.dim());
        Self { irreps, data }
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    /// Column of `(block, channel, m)` where `m` is the order offset `0..2l+1`.
    pub fn column(&self, block: usize, channel: usize, m: usize) -> usize {
        let b = self.irreps.blocks()[block];
        assert!(channel < b.mul && m < b.ir.dim(), "feature index out of range");
        self.irreps.offsets()[block] + channel * b.ir.dim() + m
    }

    pub fn get(&self, row: usize, block: usize, channel: usize, m: usize) -> T {
        self.data.get(row, self.column(block, channel, m))
    }
}

impl IrrepsFeature<f64> {
    /// Act with an O(3) element: each `(2l+1)`-vector is multiplied by its
    /// block's representation matrix.
    pub fn transform(&self, g: &O3) -> IrrepsFeature<f64> {
        let mut out = self.clone();
        let offsets = self.irreps.offsets();
        for (b, blk) in self.irreps.blocks().iter().enumerate() {
            let d = o3_matrix(blk.ir.l, blk.ir.parity, g);
            let dim = blk.ir.dim();
            for r in 0..self.rows() {
                for c in 0..blk.mul {
                    let start = offsets[b] + c * dim;
                    let v = d.apply(&self.data.row(r)[start..start + dim]);
                    out.data.row_mut(r)[start..start + dim].copy_from_slice(&v);
                }
            }
        }
        out
    }
}
