//! Matrix containers shared across the crate: a CSR sparse matrix for
//! graph weights and diffusion operators, and a dense row-major matrix
//! for score blocks (one row per point, one column per cluster).

use crate::error::{Error, Result};

/// Dense row-major matrix.
///
/// Used for score matrices `u` and indicator blocks `chi`, where the
/// per-point row is the natural access pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "dense data length mismatch");
        DenseMatrix {
            n_rows,
            n_cols,
            data,
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Largest absolute entry; 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }
}

/// Compressed sparse row matrix with `u32` column indices.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from coordinate triplets, summing duplicates.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r as usize >= n_rows || c as usize >= n_cols {
                return Err(Error::Shape(format!(
                    "triplet ({r}, {c}) out of bounds for {n_rows}x{n_cols} matrix"
                )));
            }
        }
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && col_idx.last() == Some(&c) {
                *values.last_mut().expect("nonempty") += v;
            } else {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &r in &rows {
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    /// Diagonal matrix from the given entries.
    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: diag.to_vec(),
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Per-row sums; the degree vector when applied to a weight matrix.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "mul_vec dimension mismatch");
        let mut y = vec![0.0; self.n_rows];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            y[i] = acc;
        }
        y
    }

    /// `Y = A X` for a dense row-major `X`.
    pub fn mul_dense(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(x.n_rows(), self.n_cols, "mul_dense dimension mismatch");
        let p = x.n_cols();
        let mut y = DenseMatrix::zeros(self.n_rows, p);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let out = y.row_mut(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let src = x.row(c as usize);
                for (o, s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        y
    }

    /// Adds `v * row(i)` of the transpose into `acc`, i.e. scatters
    /// column accesses through the stored row.
    pub fn scatter_row(&self, i: usize, v: f64, acc: &mut [f64]) {
        let (cols, vals) = self.row(i);
        for (&c, &w) in cols.iter().zip(vals) {
            acc[c as usize] += v * w;
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c as usize];
                col_idx[slot] = r as u32;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse-sparse product `A B` (Gustavson, dense accumulator).
    pub fn matmul(&self, rhs: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, rhs.n_rows, "matmul dimension mismatch");
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0f64; rhs.n_cols];
        let mut touched: Vec<u32> = Vec::new();
        for i in 0..self.n_rows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &v) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(k as usize);
                for (&c, &w) in rcols.iter().zip(rvals) {
                    if acc[c as usize] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c as usize] += v * w;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                values.push(acc[c as usize]);
                acc[c as usize] = 0.0;
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: rhs.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Scales row `i` by `s[i]`.
    pub fn row_scaled(&self, s: &[f64]) -> CsrMatrix {
        assert_eq!(s.len(), self.n_rows);
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let lo = out.row_ptr[i];
            let hi = out.row_ptr[i + 1];
            for v in &mut out.values[lo..hi] {
                *v *= s[i];
            }
        }
        out
    }

    /// `alpha A + beta B` with matching shapes.
    pub fn linear_combination(alpha: f64, a: &CsrMatrix, beta: f64, b: &CsrMatrix) -> CsrMatrix {
        assert_eq!((a.n_rows, a.n_cols), (b.n_rows, b.n_cols));
        let mut row_ptr = Vec::with_capacity(a.n_rows + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..a.n_rows {
            let (ac, av) = a.row(i);
            let (bc, bv) = b.row(i);
            let (mut x, mut y) = (0usize, 0usize);
            while x < ac.len() || y < bc.len() {
                let next_a = ac.get(x).copied().unwrap_or(u32::MAX);
                let next_b = bc.get(y).copied().unwrap_or(u32::MAX);
                if next_a < next_b {
                    col_idx.push(next_a);
                    values.push(alpha * av[x]);
                    x += 1;
                } else if next_b < next_a {
                    col_idx.push(next_b);
                    values.push(beta * bv[y]);
                    y += 1;
                } else {
                    col_idx.push(next_a);
                    values.push(alpha * av[x] + beta * bv[y]);
                    x += 1;
                    y += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: a.n_rows,
            n_cols: a.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense copy, for small tests and the dense spectral path.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d.set(i, c as usize, v);
            }
        }
        d
    }
}
