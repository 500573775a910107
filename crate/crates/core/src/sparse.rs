//! Compressed sparse row storage and the sparse × dense kernels used by
//! embedding propagation.
//!
//! Rows are stored with strictly increasing column indices. Every kernel
//! walks a row in storage order, so results are independent of scheduling.

use ndarray::{Array2, ArrayView2};

use crate::Error;

/// A square or rectangular CSR matrix with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from unsorted `(row, col, value)` triplets.
    ///
    /// Duplicate coordinates are rejected rather than summed; callers
    /// in this crate never produce them and a duplicate means a bug upstream.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self, Error> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Shape(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols} matrix"
                )));
            }
            if prev == Some((r, c)) {
                return Err(Error::Shape(format!("duplicate entry ({r}, {c})")));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            values,
        })
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

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    /// Range of storage positions occupied by row `r`.
    pub fn row_span(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    /// Stored value at `(r, c)`, if any.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    /// Iterates `(row, col, value)` in row-major storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Returns a copy with the same sparsity pattern and values mapped by `f(row, col, value)`.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for r in 0..self.n_rows {
            for k in self.row_span(r) {
                out.values[k] = f(r, self.cols[k], self.values[k]);
            }
        }
        out
    }

    /// Keeps only entries for which `keep(row, col, value)` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize, f64) -> bool) -> Self {
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut cols = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.n_rows {
            for k in self.row_span(r) {
                if keep(r, self.cols[k], self.values[k]) {
                    cols.push(self.cols[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            cols,
            values,
        }
    }

    /// Diagonal entries (zero where nothing is stored).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i).unwrap_or(0.0))
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(r, c, v)| self.get(c, r) == Some(v))
    }

    /// Dense copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    /// `self · x` for a dense right-hand side.
    pub fn matmul(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, Error> {
        if x.nrows() != self.n_cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} sparse by {}x{} dense",
                self.n_rows,
                self.n_cols,
                x.nrows(),
                x.ncols()
            )));
        }
        let width = x.ncols();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.n_rows * width];
        for (r, out_row) in out.chunks_exact_mut(width.max(1)).enumerate().take(self.n_rows) {
            let (cols, vals) = self.row(r);
            for (&c, &a) in cols.iter().zip(vals) {
                let src = &xs[c * width..(c + 1) * width];
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        Ok(Array2::from_shape_vec((self.n_rows, width), out).expect("shape"))
    }
}
