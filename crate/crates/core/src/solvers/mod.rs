//! Sparse decomposition solvers.
//!
//! [`lasso`] and [`weighted_lasso`] solve the l1-penalized least-squares
//! problem with a LARS homotopy on the Gram matrix; [`omp`] is a
//! Cholesky-updated orthogonal matching pursuit with a residual-energy
//! stopping rule. Both come in a "prepared" form ([`LassoSolver`],
//! [`WeightedLassoSolver`], [`OmpSolver`]) that precomputes the Gram
//! matrix once and is shared across many signals.

mod cholesky;
mod lasso;
mod omp;

pub use lasso::{lasso, weighted_lasso, LassoSolver, WeightedLassoSolver};
pub use omp::{omp, OmpSolver};

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{EpitomeError, Result};

/// A sparse coefficient vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseCode {
    indices: Vec<usize>,
    values: Vec<f64>,
    p: usize,
}

impl SparseCode {
    pub fn zeros(p: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            p,
        }
    }

    /// Builds a code from unsorted `(index, value)` pairs, dropping zeros.
    pub fn from_pairs(p: usize, mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.retain(|&(_, v)| v != 0.0);
        pairs.sort_by_key(|&(i, _)| i);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(EpitomeError::InvalidParameter(format!(
                    "duplicate index {} in sparse code",
                    w[0].0
                )));
            }
        }
        if let Some(&(i, _)) = pairs.last() {
            if i >= p {
                return Err(EpitomeError::InvalidParameter(format!(
                    "index {i} out of range for dimension {p}"
                )));
            }
        }
        if pairs.iter().any(|(_, v)| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("sparse code value".into()));
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(Self { indices, values, p })
    }

    pub fn from_dense(values: ArrayView1<f64>) -> Self {
        let pairs = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        Self::from_pairs(values.len(), pairs).expect("dense vector yields a valid code")
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.p);
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Multiplies every coefficient by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
        if factor == 0.0 {
            self.indices.clear();
            self.values.clear();
        }
    }

    /// Multiplies coefficient `j` by `weights[j]`.
    pub fn scale_each(&mut self, weights: ArrayView1<f64>) {
        for (i, v) in self.indices.iter().zip(self.values.iter_mut()) {
            *v *= weights[*i];
        }
        let keep: Vec<bool> = self.values.iter().map(|&v| v != 0.0).collect();
        if keep.iter().any(|k| !k) {
            let mut it = keep.iter();
            self.indices.retain(|_| *it.next().unwrap());
            self.values.retain(|&v| v != 0.0);
        }
    }

    /// `D * code` for an `m x p` matrix.
    pub fn reconstruct(&self, dictionary: ArrayView2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(dictionary.nrows());
        for (j, v) in self.iter() {
            out.scaled_add(v, &dictionary.column(j));
        }
        out
    }
}

/// Parameters of the l1 solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoSettings {
    pub lambda: f64,
    /// Cap on the support size; `None` means `min(m, p)`.
    pub max_nonzeros: Option<usize>,
    /// Tolerance used for KKT certificates.
    pub tol: f64,
}

impl LassoSettings {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_nonzeros: None,
            tol: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(EpitomeError::InvalidParameter(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(EpitomeError::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Largest violation of the lasso optimality conditions at `code` for
/// `min 1/2 |x - D a|^2 + sum_j weights_j |a_j|`.
///
/// Inactive atoms need `|d_j^T r| <= w_j`; active atoms need
/// `d_j^T r = w_j sign(a_j)`.
pub fn kkt_violation(
    x: ArrayView1<f64>,
    dictionary: ArrayView2<f64>,
    code: &SparseCode,
    weights: ArrayView1<f64>,
) -> f64 {
    let residual = &x - &code.reconstruct(dictionary);
    let corr = dictionary.t().dot(&residual);
    let dense = code.to_dense();
    corr.iter()
        .zip(weights.iter())
        .zip(dense.iter())
        .map(|((&c, &w), &a)| {
            if a == 0.0 {
                (c.abs() - w).max(0.0)
            } else {
                (c - w * a.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn check_finite(values: ArrayView1<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EpitomeError::NonFinite(what.into()))
    }
}
