use crate::error::{Error, Result};

use super::DenseMatrix;

/// Binary matrix stored in compressed sparse row form.
///
/// Coordinates are kept sorted row-major and duplicate-free, so iteration
/// order (and therefore every reduction built on it) is canonical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseBinaryMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparseBinaryMatrix {
    /// Builds from an arbitrary coordinate list; duplicates collapse.
    pub fn from_coords(
        rows: usize,
        cols: usize,
        coords: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut coords: Vec<(usize, usize)> = coords.into_iter().collect();
        if let Some(&(r, c)) = coords.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(Error::Contract(format!(
                "coordinate ({r}, {c}) out of bounds for {rows}x{cols} sparse matrix"
            )));
        }
        coords.sort_unstable();
        coords.dedup();
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _) in &coords {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: coords.into_iter().map(|(_, c)| c).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices present in row `r`, ascending.
    pub fn row_cols(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row_cols(r).binary_search(&c).is_ok()
    }

    /// Coordinates in canonical row-major order.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row_cols(r).iter().map(move |&c| (r, c)))
    }

    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.rows).map(|r| self.row_cols(r).len()).collect()
    }

    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.cols];
        for &c in &self.col_idx {
            counts[c] += 1;
        }
        counts
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c) in self.coords() {
            d[(r, c)] = 1.0;
        }
        d
    }

    /// `S · X`
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        ScaledSparse::new(self).spmm(x)
    }

    /// `Sᵀ · X`
    pub fn spmm_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        ScaledSparse::new(self).spmm_transpose(x)
    }

    fn dim_error(&self, op: &'static str, x: &DenseMatrix) -> Error {
        Error::Dimension {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: x.rows(),
            right_cols: x.cols(),
        }
    }
}

/// `diag(row_scale) · S · diag(col_scale)` without materializing it.
#[derive(Clone, Copy, Debug)]
pub struct ScaledSparse<'a> {
    pub matrix: &'a SparseBinaryMatrix,
    pub row_scale: Option<&'a [f64]>,
    pub col_scale: Option<&'a [f64]>,
}

impl<'a> ScaledSparse<'a> {
    pub fn new(matrix: &'a SparseBinaryMatrix) -> Self {
        Self {
            matrix,
            row_scale: None,
            col_scale: None,
        }
    }

    pub fn with_row_scale(mut self, scale: &'a [f64]) -> Self {
        assert_eq!(scale.len(), self.matrix.rows, "row scale length");
        self.row_scale = Some(scale);
        self
    }

    pub fn with_col_scale(mut self, scale: &'a [f64]) -> Self {
        assert_eq!(scale.len(), self.matrix.cols, "column scale length");
        self.col_scale = Some(scale);
        self
    }

    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let s = self.matrix;
        if s.cols != x.rows() {
            return Err(s.dim_error("spmm", x));
        }
        let mut out = DenseMatrix::zeros(s.rows, x.cols());
        for r in 0..s.rows {
            let out_row = out.row_mut(r);
            for &c in s.row_cols(r) {
                let w = self.col_scale.map_or(1.0, |cs| cs[c]);
                for (o, &v) in out_row.iter_mut().zip(x.row(c)) {
                    *o += w * v;
                }
            }
            if let Some(rs) = self.row_scale {
                out_row.iter_mut().for_each(|o| *o *= rs[r]);
            }
        }
        Ok(out)
    }

    pub fn spmm_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let s = self.matrix;
        if s.rows != x.rows() {
            return Err(s.dim_error("spmm_transpose", x));
        }
        let mut out = DenseMatrix::zeros(s.cols, x.cols());
        for r in 0..s.rows {
            let rw = self.row_scale.map_or(1.0, |rs| rs[r]);
            let x_row = x.row(r);
            for &c in s.row_cols(r) {
                let w = rw * self.col_scale.map_or(1.0, |cs| cs[c]);
                for (o, &v) in out.row_mut(c).iter_mut().zip(x_row) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_hand_product() {
        let s = SparseBinaryMatrix::from_coords(2, 2, [(0, 0), (0, 1), (1, 1)]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let y = s.spmm(&x).unwrap();
        assert_eq!(y, DenseMatrix::from_rows(&[vec![3.0], vec![2.0]]).unwrap());
    }

    #[test]
    fn identity_coords_leave_input_unchanged() {
        let s = SparseBinaryMatrix::from_coords(3, 3, (0..3).map(|i| (i, i))).unwrap();
        let x = DenseMatrix::from_fn(3, 2, |r, c| r as f64 * 1.5 - c as f64);
        assert_eq!(s.spmm(&x).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let s = SparseBinaryMatrix::from_coords(2, 3, [(0, 0)]).unwrap();
        let x = DenseMatrix::zeros(2, 1);
        let err = s.spmm(&x).unwrap_err();
        assert_eq!(err.kind(), "dimension");
        assert!(err.to_string().contains("2x3") && err.to_string().contains("2x1"));
    }

    #[test]
    fn coords_are_canonical_and_deduplicated() {
        let s = SparseBinaryMatrix::from_coords(2, 2, [(1, 0), (0, 1), (1, 0), (0, 0)]).unwrap();
        assert_eq!(s.coords().collect::<Vec<_>>(), vec![(0, 0), (0, 1), (1, 0)]);
        assert!(SparseBinaryMatrix::from_coords(2, 2, [(2, 0)]).is_err());
    }

    #[test]
    fn scaled_product_matches_dense() {
        let s = SparseBinaryMatrix::from_coords(3, 2, [(0, 0), (1, 1), (2, 0), (2, 1)]).unwrap();
        let rs = [2.0, 0.5, -1.0];
        let cs = [3.0, 0.25];
        let x = DenseMatrix::from_fn(2, 2, |r, c| (r + c) as f64 + 1.0);
        let got = ScaledSparse::new(&s)
            .with_row_scale(&rs)
            .with_col_scale(&cs)
            .spmm(&x)
            .unwrap();
        let dense = DenseMatrix::from_fn(3, 2, |r, c| {
            if s.contains(r, c) {
                rs[r] * cs[c]
            } else {
                0.0
            }
        });
        assert!(got.max_abs_diff(&dense.matmul(&x).unwrap()) < 1e-12);
        let xt = DenseMatrix::from_fn(3, 2, |r, c| r as f64 - c as f64);
        let got_t = ScaledSparse::new(&s)
            .with_row_scale(&rs)
            .with_col_scale(&cs)
            .spmm_transpose(&xt)
            .unwrap();
        assert!(got_t.max_abs_diff(&dense.transpose().matmul(&xt).unwrap()) < 1e-12);
    }
}
