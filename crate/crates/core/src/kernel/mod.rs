//! Minimal dense linear algebra, nonlinearities, and parameter containers
//! shared by every model in the crate.
//!
//! All computation is in `f64`. Matrices are row-major; vectors are stored
//! as single-column matrices. Backward passes are written by hand per model,
//! so the kernel only needs the handful of primitives below plus the
//! finite-difference oracle in [`gradcheck`] to audit them.

mod gradcheck;
mod init;
mod optim;

pub use gradcheck::{finite_diff_grad, max_relative_error, Parameterized};
pub use init::{he_normal, small_normal};
pub use optim::{Optimizer, OptimizerKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable logistic function, clamped into the open interval (0,1).
///
/// For large |x| the naive form overflows or rounds to an endpoint; the
/// branch below keeps the exponent argument non-positive, and the clamp
/// guarantees strictly interior output for every finite input.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - 0.5 * f64::EPSILON)
}

/// Rectifier: max(0, x).
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Inner product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch {} vs {}", a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ln(1 + e^x) without overflow for large positive x.
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Row-major dense matrix of 64-bit floats.
///
/// Vectors are represented as `(len, 1)` matrices via [`DenseMatrix::vector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn vector(len: usize) -> Self {
        Self::zeros(len, 1)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        assert!(r < self.rows, "row {} out of {} rows", r, self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        assert!(r < self.rows, "row {} out of {} rows", r, self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// out = A·x (A is rows×cols, x has len cols, out has len rows).
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec: input length mismatch");
        assert_eq!(out.len(), self.rows, "matvec: output length mismatch");
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[r * self.cols..(r + 1) * self.cols], x);
        }
    }

    /// out += Aᵀ·y (y has len rows, out has len cols). Used to push layer
    /// deltas back to the layer input.
    pub fn matvec_transpose_add(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.rows, "matvec_transpose_add: input length mismatch");
        assert_eq!(out.len(), self.cols, "matvec_transpose_add: output length mismatch");
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
    }

    /// self += dy ⊗ x (rank-one update; dy has len rows, x has len cols).
    pub fn add_outer(&mut self, dy: &[f64], x: &[f64]) {
        assert_eq!(dy.len(), self.rows, "add_outer: dy length mismatch");
        assert_eq!(x.len(), self.cols, "add_outer: x length mismatch");
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &xv) in row.iter_mut().zip(x) {
                *w += d * xv;
            }
        }
    }
}

/// A trainable tensor: value, matching gradient accumulator, and the L2
/// coefficient applied to it at optimizer-step time.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub l2: f64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: DenseMatrix, l2: f64) -> Self {
        let (rows, cols) = value.shape();
        Param {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(rows, cols),
            l2,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
