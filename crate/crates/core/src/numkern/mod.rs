//! Dense and sparse matrix kernels plus a reverse-mode tape.
//!
//! Everything here works in `f64` with a fixed reduction order, so two runs
//! over the same inputs produce bit-identical results.

mod dense;
mod sparse;
mod tape;

pub use dense::DenseMatrix;
pub(crate) use dense::dot;
pub use sparse::{ScaledSparse, SparseBinaryMatrix};
pub use tape::{AttentionInputs, Gradients, Tape, Var};
pub(crate) use tape::elu as elu_scalar;

use crate::error::{Error, Result};

/// Per-row set of columns that participate in a masked reduction.
#[derive(Clone, Debug, PartialEq)]
pub enum RowMask {
    /// Every column is valid in every row.
    Full,
    /// Valid columns per row, ascending and duplicate-free.
    Sets(Vec<Vec<usize>>),
}

impl RowMask {
    fn columns<'a>(&'a self, row: usize, cols: usize) -> MaskCols<'a> {
        match self {
            RowMask::Full => MaskCols::Range(0..cols),
            RowMask::Sets(sets) => MaskCols::Slice(sets[row].iter()),
        }
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        match self {
            RowMask::Full => {
                if cols == 0 && rows > 0 {
                    return Err(Error::DegenerateRow { row: 0 });
                }
            }
            RowMask::Sets(sets) => {
                if sets.len() != rows {
                    return Err(Error::Contract(format!(
                        "mask has {} rows, matrix has {rows}",
                        sets.len()
                    )));
                }
                for (row, set) in sets.iter().enumerate() {
                    if set.is_empty() {
                        return Err(Error::DegenerateRow { row });
                    }
                    if set.iter().any(|&c| c >= cols) {
                        return Err(Error::Contract(format!(
                            "mask row {row} references a column outside 0..{cols}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

enum MaskCols<'a> {
    Range(std::ops::Range<usize>),
    Slice(std::slice::Iter<'a, usize>),
}

impl Iterator for MaskCols<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            MaskCols::Range(r) => r.next(),
            MaskCols::Slice(s) => s.next().copied(),
        }
    }
}

/// Row-wise softmax restricted to `mask`; masked-out entries are zero.
///
/// Uses max subtraction, so arbitrarily large scores do not overflow.
pub fn softmax_rows(x: &DenseMatrix, mask: &RowMask) -> Result<DenseMatrix> {
    mask.check(x.rows(), x.cols())?;
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = mask
            .columns(r, x.cols())
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let out_row = out.row_mut(r);
        for c in mask.columns(r, x.cols()) {
            let e = (row[c] - max).exp();
            out_row[c] = e;
            total += e;
        }
        for c in mask.columns(r, x.cols()) {
            out_row[c] /= total;
        }
    }
    Ok(out)
}

/// `log Σ_{c ∈ mask(r)} exp(x[r, c])` for each row.
pub fn log_sum_exp_rows(x: &DenseMatrix, mask: &RowMask) -> Result<Vec<f64>> {
    mask.check(x.rows(), x.cols())?;
    Ok((0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let max = mask
                .columns(r, x.cols())
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = mask.columns(r, x.cols()).map(|c| (row[c] - max).exp()).sum();
            max + total.ln()
        })
        .collect())
}

/// A fixed linear map applied from the left, `X ↦ L·X`.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix>;
    fn apply_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix>;
}

impl LinearOperator for DenseMatrix {
    fn rows(&self) -> usize {
        DenseMatrix::rows(self)
    }

    fn cols(&self) -> usize {
        DenseMatrix::cols(self)
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul(x)
    }

    fn apply_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.transpose_matmul(x)
    }
}
