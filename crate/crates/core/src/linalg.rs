//! Row-major dense matrices of `f64`.
//!
//! Every public operation that produces new values checks the result for
//! NaN/Inf and reports [`Error::Numeric`] instead of returning it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for DenseMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        DenseMatrix::new(raw.rows, raw.cols, raw.data)
    }
}

/// Element-wise binary operations accepted by [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale,
}

/// Right-hand operand of an element-wise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Matrix(&'a DenseMatrix),
    Scalar(f64),
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(
                "DenseMatrix::new",
                format!("dimensions must be positive, got {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "DenseMatrix::new (element {pos} is {})",
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Zero matrix. Panics on a zero dimension, which is always a caller bug.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "DenseMatrix::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the flat storage. Callers that write non-finite
    /// values are expected to re-check with [`DenseMatrix::ensure_finite`].
    #[inline]
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

    pub fn ensure_finite(&self, op: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::Numeric(format!(
                "{op} (element ({}, {}) is {})",
                pos / self.cols,
                pos % self.cols,
                self.data[pos]
            ))),
        }
    }

    /// `self × other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} cannot multiply {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let n = other.cols;
        let mut out = vec![0.0; self.rows * n];
        for (a_row, out_row) in self.data.chunks_exact(self.cols).zip(out.chunks_exact_mut(n)) {
            for (&a, b_row) in a_row.iter().zip(other.data.chunks_exact(n)) {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        let out = DenseMatrix {
            rows: self.rows,
            cols: n,
            data: out,
        };
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// `selfᵀ × other`, without materializing the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "t_matmul",
                format!(
                    "transpose of {}x{} cannot multiply {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let m = self.cols;
        let n = other.cols;
        let mut out = vec![0.0; m * n];
        for (a_row, b_row) in self.data.chunks_exact(m).zip(other.data.chunks_exact(n)) {
            for (&a, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        let out = DenseMatrix {
            rows: m,
            cols: n,
            data: out,
        };
        out.ensure_finite("t_matmul")?;
        Ok(out)
    }

    /// `self × otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_t",
                format!(
                    "{}x{} cannot multiply transpose of {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let k = self.cols;
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for a_row in self.data.chunks_exact(k) {
            for b_row in other.data.chunks_exact(k) {
                out.push(dot(a_row, b_row));
            }
        }
        let out = DenseMatrix {
            rows: self.rows,
            cols: other.rows,
            data: out,
        };
        out.ensure_finite("matmul_t")?;
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.data[r * self.cols + c]);
            }
        }
        DenseMatrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// Adds `bias` to every row in place.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(
                "add_row_vector",
                format!("bias of length {} for {} columns", bias.len(), self.cols),
            ));
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        self.ensure_finite("add_row_vector")
    }

    /// Sum over rows, one value per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn argmax_row(&self, row: usize) -> Result<usize> {
        argmax_row(self, row)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.matmul(b)
}

/// Applies `op` element by element. `Scale` requires a scalar operand; the
/// other operations accept either a same-shaped matrix or a scalar.
pub fn elementwise(op: ElementwiseOp, a: &DenseMatrix, b: Operand<'_>) -> Result<DenseMatrix> {
    let f: fn(f64, f64) -> f64 = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul | ElementwiseOp::Scale => |x, y| x * y,
    };
    let data: Vec<f64> = match b {
        Operand::Scalar(s) => {
            if !s.is_finite() {
                return Err(Error::Argument(format!("non-finite scalar operand {s}")));
            }
            a.data.iter().map(|&x| f(x, s)).collect()
        }
        Operand::Matrix(m) => {
            if op == ElementwiseOp::Scale {
                return Err(Error::Argument("scale takes a scalar operand".into()));
            }
            if m.shape() != a.shape() {
                return Err(Error::shape(
                    "elementwise",
                    format!("{:?} vs {:?}", a.shape(), m.shape()),
                ));
            }
            a.data.iter().zip(&m.data).map(|(&x, &y)| f(x, y)).collect()
        }
    };
    let out = DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
    };
    out.ensure_finite("elementwise")?;
    Ok(out)
}

/// Column of the largest element in `row`; ties go to the lowest index.
pub fn argmax_row(a: &DenseMatrix, row: usize) -> Result<usize> {
    if row >= a.rows {
        return Err(Error::Index(format!("row {row} of a {}-row matrix", a.rows)));
    }
    Ok(argmax(a.row(row)))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
