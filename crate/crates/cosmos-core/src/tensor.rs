//! Dense row-major tensors (rank 1-2) over f64.
//!
//! Vectors are n x 1. Every public operation either returns a tensor whose
//! entries are all finite or an error; NaN/Inf never escape.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape {
                rows,
                cols,
                reason: "dimensions must be positive",
            });
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                reason: "data length must equal rows*cols",
            });
        }
        let t = Tensor { rows, cols, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Column vector n x 1.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(n, 1, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            })
        }
    }

    /// Standard matrix product; `self.cols == other.rows`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        out.check_finite("matmul")?;
        Ok(out)
    }

    /// `self * other^T`; `self.cols == other.cols`. Materializes the
    /// transpose so the product runs through the vectorizing kernel; each
    /// output element accumulates in the same k-ascending order as a direct
    /// row-dot, so results are bit-identical to the explicit-transpose path.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        self.matmul(&other.transpose())
    }

    /// `self^T * other`; `self.rows == other.rows`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.cols, other.cols);
        for n in 0..self.rows {
            let a_row = self.row(n);
            let b_row = other.row(n);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.check_finite("matmul_tn")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        let out = Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite("add")?;
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        let out = Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite("sub")?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self.check_finite("add_assign")
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let out = Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        };
        out.check_finite("scale")?;
        Ok(out)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        let out = Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        out.check_finite("hadamard")?;
        Ok(out)
    }

    /// Add a 1 x cols row vector to every row.
    pub fn add_row_broadcast(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape(),
                rhs: row.shape(),
            });
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        out.check_finite("add_row_broadcast")?;
        Ok(out)
    }

    /// Column sums as a 1 x cols tensor.
    pub fn col_sums(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, &v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    /// Elementwise product with the ReLU derivative of `pre` (1 where pre > 0).
    pub fn relu_backward(&self, pre: &Tensor) -> Result<Tensor> {
        self.same_shape(pre, "relu_backward")?;
        let data = self
            .data
            .iter()
            .zip(&pre.data)
            .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// He-style initialization: N(0, 2/fan_in), zero is never produced for biases
/// here because biases start at zero via [`Tensor::zeros`].
///
/// Same (rows, cols, seed) is bit-identical across runs and platforms.
pub fn init_weights(rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidShape {
            rows,
            cols,
            reason: "dimensions must be positive",
        });
    }
    let mut rng = Rng::derive(seed, (rows as u64) << 32 | cols as u64);
    let scale = (2.0 / rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.next_normal() * scale).collect();
    Tensor::new(rows, cols, data)
}
