use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::cholesky::GrowingCholesky;
use super::{check_finite, SparseCode};
use crate::epitome::{matrix_column_norms, Dictionary};
use crate::error::{EpitomeError, Result};

/// Orthogonal matching pursuit on a precomputed Gram matrix.
///
/// Atoms are compared through their l2-normalized versions; returned
/// coefficients apply to the original atoms. Zero-norm atoms are never
/// selected.
#[derive(Debug, Clone)]
pub struct OmpSolver {
    normalized: Array2<f64>,
    gram: Array2<f64>,
    norms: Array1<f64>,
    max_atoms: usize,
}

/// Result of one pursuit with its residual history.
#[derive(Debug, Clone)]
pub struct OmpTrace {
    pub code: SparseCode,
    /// Squared residual norm before the first selection and after each one.
    pub residuals: Vec<f64>,
}

impl OmpSolver {
    pub fn new(dictionary: &Dictionary) -> Self {
        let norms = matrix_column_norms(dictionary.entries());
        let mut normalized = dictionary.entries().clone();
        for (mut col, &n) in normalized.columns_mut().into_iter().zip(norms.iter()) {
            if n > 0.0 {
                col /= n;
            } else {
                col.fill(0.0);
            }
        }
        let gram = normalized.t().dot(&normalized);
        let max_atoms = dictionary.m().min(dictionary.p());
        Self {
            normalized,
            gram,
            norms,
            max_atoms,
        }
    }

    /// Caps the support size (at most `min(m, p)`).
    pub fn with_max_atoms(mut self, cap: usize) -> Self {
        self.max_atoms = cap.min(self.normalized.nrows()).min(self.normalized.ncols());
        self
    }

    pub fn max_atoms(&self) -> usize {
        self.max_atoms
    }

    pub fn solve(&self, y: ArrayView1<f64>, eps: f64) -> Result<SparseCode> {
        Ok(self.trace(y, eps)?.code)
    }

    pub fn trace(&self, y: ArrayView1<f64>, eps: f64) -> Result<OmpTrace> {
        check_eps(eps)?;
        if y.len() != self.normalized.nrows() {
            return Err(EpitomeError::Shape(format!(
                "signal has length {}, dictionary has {} rows",
                y.len(),
                self.normalized.nrows()
            )));
        }
        check_finite(y, "omp signal")?;
        let corr = self.normalized.t().dot(&y);
        Ok(self.pursue(corr.view(), y.dot(&y), eps))
    }

    /// Codes every column of `signals` (`m x n`).
    pub fn solve_many(&self, signals: ArrayView2<f64>, eps: f64) -> Result<Vec<SparseCode>> {
        check_eps(eps)?;
        if signals.nrows() != self.normalized.nrows() {
            return Err(EpitomeError::Shape(format!(
                "signals have {} rows, dictionary has {}",
                signals.nrows(),
                self.normalized.nrows()
            )));
        }
        if signals.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("omp signals".into()));
        }
        let mut out = Vec::with_capacity(signals.ncols());
        for block in signals.axis_chunks_iter(Axis(1), 4096) {
            let corr = self.normalized.t().dot(&block);
            let codes = crate::parallel_map(block.ncols(), |i| {
                let y = block.column(i);
                self.pursue(corr.column(i), y.dot(&y), eps).code
            });
            out.extend(codes);
        }
        Ok(out)
    }

    fn pursue(&self, corr0: ArrayView1<f64>, energy: f64, eps: f64) -> OmpTrace {
        let p = self.gram.nrows();
        let mut residual = energy;
        let mut residuals = vec![residual];
        let mut support: Vec<usize> = Vec::new();
        let mut coef: Vec<f64> = Vec::new();
        let mut selected = vec![false; p];
        let mut chol = GrowingCholesky::new();
        let mut corr = corr0.to_owned();

        while residual > eps && support.len() < self.max_atoms {
            // lowest index wins ties
            let mut best = None;
            let mut best_val = 0.0;
            for j in 0..p {
                if selected[j] || self.norms[j] == 0.0 {
                    continue;
                }
                let v = corr[j].abs();
                if v > best_val {
                    best_val = v;
                    best = Some(j);
                }
            }
            let Some(k) = best else { break };
            if best_val <= 1e-12 * energy.sqrt() {
                break;
            }
            selected[k] = true;
            let cross: Vec<f64> = support.iter().map(|&s| self.gram[[s, k]]).collect();
            if !chol.push(&cross, self.gram[[k, k]]) {
                // numerically dependent on the current support
                continue;
            }
            support.push(k);
            coef = support.iter().map(|&s| corr0[s]).collect();
            chol.solve(&mut coef);

            corr.assign(&corr0);
            for (&s, &c) in support.iter().zip(&coef) {
                corr.scaled_add(-c, &self.gram.row(s));
            }
            let explained: f64 = support.iter().zip(&coef).map(|(&s, &c)| c * corr0[s]).sum();
            residual = (energy - explained).max(0.0).min(residual);
            residuals.push(residual);
        }

        let pairs = support
            .iter()
            .zip(&coef)
            .map(|(&s, &c)| (s, c / self.norms[s]))
            .collect();
        OmpTrace {
            code: SparseCode::from_pairs(p, pairs).expect("omp support is valid"),
            residuals,
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) {
        return Err(EpitomeError::InvalidParameter(format!(
            "residual threshold must be non-negative, got {eps}"
        )));
    }
    Ok(())
}

/// Codes one signal with OMP until `|y - D a|^2 <= eps` or the support
/// reaches `min(m, p)` atoms.
pub fn omp(y: ArrayView1<f64>, dictionary: &Dictionary, eps: f64) -> Result<SparseCode> {
    OmpSolver::new(dictionary).solve(y, eps)
}
