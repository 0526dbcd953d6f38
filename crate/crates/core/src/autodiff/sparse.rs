use crate::error::{Error, Result};

/// Fixed sparse linear map `y = A·x` stored in compressed-row form.
///
/// Bilinear upsampling and visibility-masked back-projection are both fixed
/// linear maps, so the tape differentiates through them with `Aᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMap {
    /// Builds from per-row entry lists. Column indices must be `< cols`.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for entries in &rows {
            for &(c, w) in entries {
                if c >= cols {
                    return Err(Error::shape(format!("column {c} out of range {cols}")));
                }
                col_idx.push(c);
                weights.push(w);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { rows: rows.len(), cols, row_ptr, col_idx, weights })
    }

    /// Block-diagonal map applying `self` independently to `blocks` stacked inputs.
    pub fn block_diagonal(&self, blocks: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(self.rows * blocks + 1);
        let mut col_idx = Vec::with_capacity(self.col_idx.len() * blocks);
        let mut weights = Vec::with_capacity(self.weights.len() * blocks);
        row_ptr.push(0);
        for b in 0..blocks {
            for r in 0..self.rows {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    col_idx.push(self.col_idx[k] + b * self.cols);
                    weights.push(self.weights[k]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        Self { rows: self.rows * blocks, cols: self.cols * blocks, row_ptr, col_idx, weights }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.weights[k]))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, w)| w * x[c]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &gv) in g.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            for (c, w) in self.row(r) {
                out[c] += w * gv;
            }
        }
        out
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &SparseMap) -> Result<SparseMap> {
        if self.cols != inner.rows {
            return Err(Error::shape(format!(
                "cannot compose {}x{} after {}x{}",
                self.rows, self.cols, inner.rows, inner.cols
            )));
        }
        let mut rows = Vec::with_capacity(self.rows);
        let mut acc: Vec<f64> = vec![0.0; inner.cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.rows {
            for (mid, w) in self.row(r) {
                for (c, w2) in inner.row(mid) {
                    if acc[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c] += w * w2;
                }
            }
            touched.sort_unstable();
            rows.push(touched.iter().map(|&c| (c, acc[c])).collect());
            for &c in &touched {
                acc[c] = 0.0;
            }
            touched.clear();
        }
        SparseMap::from_rows(inner.cols, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_is_adjoint() {
        let m = SparseMap::from_rows(3, vec![vec![(0, 1.0), (2, 0.5)], vec![(1, -2.0)]]).unwrap();
        let x = [1.0, 2.0, 3.0];
        let g = [0.25, -1.0];
        let y = m.apply(&x);
        let xt = m.apply_transpose(&g);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&xt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let inner = SparseMap::from_rows(2, vec![vec![(0, 1.0)], vec![(0, 0.5), (1, 0.5)], vec![(1, 2.0)]]).unwrap();
        let outer = SparseMap::from_rows(3, vec![vec![(0, 1.0), (2, 1.0)], vec![(1, 3.0)]]).unwrap();
        let composed = outer.compose(&inner).unwrap();
        let x = [0.3, -0.7];
        for (a, b) in composed.apply(&x).iter().zip(outer.apply(&inner.apply(&x))) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn block_diagonal_applies_per_block() {
        let m = SparseMap::from_rows(2, vec![vec![(0, 1.0), (1, 1.0)]]).unwrap();
        let bd = m.block_diagonal(3);
        assert_eq!(bd.apply(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), vec![3.0, 7.0, 11.0]);
    }
}
