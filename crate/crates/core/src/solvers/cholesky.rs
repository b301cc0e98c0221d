/// Lower-triangular Cholesky factor of a growing Gram submatrix.
#[derive(Debug, Clone, Default)]
pub(crate) struct GrowingCholesky {
    // row-major, row i holds i + 1 entries
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Appends a row/column with off-diagonal block `cross` (Gram entries
    /// against the current members) and diagonal `diag`. Returns `false`
    /// and leaves the factor unchanged if the new pivot is numerically
    /// zero relative to `diag`.
    pub fn push(&mut self, cross: &[f64], diag: f64) -> bool {
        debug_assert_eq!(cross.len(), self.rows.len());
        let mut v = cross.to_vec();
        self.forward(&mut v);
        let pivot = diag - v.iter().map(|x| x * x).sum::<f64>();
        if !(pivot > 1e-10 * diag.abs().max(f64::MIN_POSITIVE)) {
            return false;
        }
        v.push(pivot.sqrt());
        self.rows.push(v);
        true
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate().take(b.len()) {
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.rows.len();
        debug_assert_eq!(b.len(), n);
        self.forward(b);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.rows[k][i] * b[k];
            }
            b[i] = s / self.rows[i][i];
        }
    }

    /// Rebuilds the factor from scratch for the Gram entries `gram(a, b)`
    /// over `count` members. Returns `false` if the matrix is singular.
    pub fn rebuild(&mut self, count: usize, gram: impl Fn(usize, usize) -> f64) -> bool {
        self.rows.clear();
        for i in 0..count {
            let cross: Vec<f64> = (0..i).map(|k| gram(i, k)).collect();
            if !self.push(&cross, gram(i, i)) {
                return false;
            }
        }
        true
    }
}
