use crate::error::{contract, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        contract!(
            data.len() == rows * cols,
            "matrix buffer has {} entries, expected {rows}x{cols}",
            data.len()
        );
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            contract!(r.len() == cols, "row {i} has {} columns, expected {cols}", r.len());
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self (r×k) · rhs (k×c)`, where `rhs` is a raw row-major buffer.
    pub(crate) fn matmul_raw(&self, rhs: &[f64], rhs_cols: usize) -> Matrix {
        debug_assert_eq!(rhs.len(), self.cols * rhs_cols);
        let mut out = vec![0.0; self.rows * rhs_cols];
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out[i * rhs_cols..(i + 1) * rhs_cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b = &rhs[k * rhs_cols..(k + 1) * rhs_cols];
                for (oj, &bkj) in o.iter_mut().zip(b) {
                    *oj += aik * bkj;
                }
            }
        }
        Matrix {
            rows: self.rows,
            cols: rhs_cols,
            data: out,
        }
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        contract!(
            self.cols == rhs.rows,
            "matmul shape mismatch: {}x{} · {}x{}",
            self.rows,
            self.cols,
            rhs.rows,
            rhs.cols
        );
        Ok(self.matmul_raw(&rhs.data, rhs.cols))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }
}

/// `aᵀ (k×r)ᵀ · b (k×c)` accumulated into `out` (r×c), without materialising the transpose.
pub(crate) fn accumulate_at_b(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(out.len(), a.cols * b.cols);
    for k in 0..a.rows {
        let ar = a.row(k);
        let br = b.row(k);
        for (i, &aki) in ar.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let o = &mut out[i * b.cols..(i + 1) * b.cols];
            for (oj, &bkj) in o.iter_mut().zip(br) {
                *oj += aki * bkj;
            }
        }
    }
}

/// `a (r×k) · wᵀ` where `w` is a raw `c×k` row-major buffer; yields r×c.
pub(crate) fn matmul_bt_raw(a: &Matrix, w: &[f64], w_rows: usize) -> Matrix {
    let k = a.cols;
    debug_assert_eq!(w.len(), w_rows * k);
    let mut out = vec![0.0; a.rows * w_rows];
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..w_rows {
            let wr = &w[j * k..(j + 1) * k];
            out[i * w_rows + j] = ar.iter().zip(wr).map(|(x, y)| x * y).sum();
        }
    }
    Matrix {
        rows: a.rows,
        cols: w_rows,
        data: out,
    }
}
