//! Compressed sparse column storage for the `N × M` holdings and weight
//! matrices.

use serde::{Deserialize, Serialize};

/// Column-compressed `n_rows × n_cols` matrix. Row indices within a column are
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            col_ptr: vec![0; n_cols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-column `(row, value)` lists already sorted by row.
    pub(crate) fn from_raw(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(col_ptr.len(), n_cols + 1);
        debug_assert_eq!(row_idx.len(), values.len());
        debug_assert_eq!(*col_ptr.last().unwrap(), values.len());
        Self {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Builds from arbitrary `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.1, t.0));
        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx: Vec<u32> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_idx.push(r as u32);
            values.push(v);
            col_ptr[c + 1] += 1;
            last = Some((r, c));
        }
        for c in 0..n_cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self::from_raw(n_rows, n_cols, col_ptr, row_idx, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(rows, values)` of column `j`.
    pub fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    /// All stored entries as `(row, col, value)` in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_cols).flat_map(move |j| {
            let (rows, vals) = self.column(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i as usize, j, v))
        })
    }

    /// Same sparsity pattern with every value transformed column by column.
    pub(crate) fn map_columns(&self, mut f: impl FnMut(usize, &[f64], &mut [f64])) -> Self {
        let mut values = self.values.clone();
        for j in 0..self.n_cols {
            let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
            f(j, &self.values[a..b], &mut values[a..b]);
        }
        Self {
            values,
            ..self.clone()
        }
    }

    /// `out = A·(Aᵀ·v)` using two sparse passes; `scratch` must hold `n_cols`
    /// entries.
    pub fn gram_apply(&self, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_rows);
        debug_assert_eq!(out.len(), self.n_rows);
        debug_assert_eq!(scratch.len(), self.n_cols);
        for (j, y) in scratch.iter_mut().enumerate() {
            let (rows, vals) = self.column(j);
            *y = rows.iter().zip(vals).map(|(&i, &w)| w * v[i as usize]).sum();
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &y) in scratch.iter().enumerate() {
            if y == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(j);
            for (&i, &w) in rows.iter().zip(vals) {
                out[i as usize] += w * y;
            }
        }
    }

    /// `Aᵀ·v`.
    pub fn transpose_apply(&self, v: &[f64], out: &mut [f64]) {
        for (j, y) in out.iter_mut().enumerate() {
            let (rows, vals) = self.column(j);
            *y = rows.iter().zip(vals).map(|(&i, &w)| w * v[i as usize]).sum();
        }
    }

    /// `A·v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &y) in v.iter().enumerate() {
            let (rows, vals) = self.column(j);
            for (&i, &w) in rows.iter().zip(vals) {
                out[i as usize] += w * y;
            }
        }
    }

    /// Number of stored entries per row.
    pub fn row_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_rows];
        for &i in &self.row_idx {
            deg[i as usize] += 1;
        }
        deg
    }

    /// Number of stored entries per column.
    pub fn col_degrees(&self) -> Vec<usize> {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Dense row-major copy. Test and debugging helper for small matrices.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_apply_matches_dense() {
        let a = CscMatrix::from_triplets(
            3,
            4,
            &[(0, 0, 1.0), (2, 0, 2.0), (1, 1, 3.0), (0, 3, 0.5), (2, 3, 1.5), (2, 3, 0.5)],
        );
        assert_eq!(a.nnz(), 5);
        let d = a.to_dense();
        let v = [1.0, -2.0, 0.5];
        let mut out = [0.0; 3];
        let mut scratch = [0.0; 4];
        a.gram_apply(&v, &mut out, &mut scratch);
        for i in 0..3 {
            let mut expect = 0.0;
            for k in 0..3 {
                let aat: f64 = (0..4).map(|j| d[i][j] * d[k][j]).sum();
                expect += aat * v[k];
            }
            assert!((out[i] - expect).abs() < 1e-14);
        }
        assert_eq!(a.col_degrees(), vec![2, 1, 0, 2]);
        assert_eq!(a.row_degrees(), vec![2, 1, 2]);
    }
}
