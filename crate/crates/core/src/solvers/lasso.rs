use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::cholesky::GrowingCholesky;
use super::{check_finite, LassoSettings, SparseCode};
use crate::epitome::{matrix_column_norms, Dictionary};
use crate::error::{EpitomeError, Result};

/// Lasso solver with a precomputed Gram matrix.
///
/// Minimizes `1/2 |x - D a|^2 + lambda |a|_1` with a LARS homotopy that
/// follows the regularization path from `max |D^T x|` down to `lambda`,
/// dropping atoms whose coefficient crosses zero.
#[derive(Debug, Clone)]
pub struct LassoSolver {
    dictionary: Array2<f64>,
    gram: Array2<f64>,
}

impl LassoSolver {
    pub fn new(dictionary: &Dictionary) -> Self {
        Self::from_matrix(dictionary.entries().clone())
    }

    pub(crate) fn from_matrix(dictionary: Array2<f64>) -> Self {
        let gram = dictionary.t().dot(&dictionary);
        Self { dictionary, gram }
    }

    pub fn dictionary(&self) -> ArrayView2<'_, f64> {
        self.dictionary.view()
    }

    pub fn gram(&self) -> ArrayView2<'_, f64> {
        self.gram.view()
    }

    pub fn solve(&self, x: ArrayView1<f64>, settings: &LassoSettings) -> Result<SparseCode> {
        settings.validate()?;
        if x.len() != self.dictionary.nrows() {
            return Err(EpitomeError::Shape(format!(
                "signal has length {}, dictionary has {} rows",
                x.len(),
                self.dictionary.nrows()
            )));
        }
        check_finite(x, "lasso signal")?;
        let corr = self.dictionary.t().dot(&x);
        Ok(self.solve_correlations(corr.view(), settings))
    }

    /// Solves given the correlations `D^T x` directly.
    pub fn solve_correlations(&self, corr: ArrayView1<f64>, settings: &LassoSettings) -> SparseCode {
        let p = self.gram.nrows();
        let cap = settings
            .max_nonzeros
            .unwrap_or_else(|| self.dictionary.nrows().min(p))
            .min(p);
        let pairs = lars_path(self.gram.view(), corr, settings.lambda, cap);
        SparseCode::from_pairs(p, pairs).expect("lars produces a valid support")
    }

    /// Codes every column of `signals` (`m x n`), processing `D^T X` in blocks.
    pub fn solve_many(
        &self,
        signals: ArrayView2<f64>,
        settings: &LassoSettings,
    ) -> Result<Vec<SparseCode>> {
        settings.validate()?;
        if signals.nrows() != self.dictionary.nrows() {
            return Err(EpitomeError::Shape(format!(
                "signals have {} rows, dictionary has {}",
                signals.nrows(),
                self.dictionary.nrows()
            )));
        }
        if signals.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("lasso signals".into()));
        }
        let mut out = Vec::with_capacity(signals.ncols());
        for block in signals.axis_chunks_iter(Axis(1), BLOCK) {
            let corr = self.dictionary.t().dot(&block);
            let codes: Vec<SparseCode> = crate::parallel_map(corr.ncols(), |i| {
                self.solve_correlations(corr.column(i), settings)
            });
            out.extend(codes);
        }
        Ok(out)
    }
}

const BLOCK: usize = 2048;

/// Weighted lasso `1/2 |x - D a|^2 + lambda sum_j |d_j| |a_j|`, solved by
/// rescaling the columns to unit norm, running the plain lasso and mapping
/// the coefficients back with `a_j = a'_j / |d_j|`.
#[derive(Debug, Clone)]
pub struct WeightedLassoSolver {
    inner: LassoSolver,
    norms: Array1<f64>,
}

impl WeightedLassoSolver {
    pub fn new(dictionary: &Dictionary) -> Result<Self> {
        Self::from_matrix(dictionary.entries())
    }

    pub(crate) fn from_matrix(entries: &Array2<f64>) -> Result<Self> {
        let norms = matrix_column_norms(entries);
        if let Some(j) = norms.iter().position(|&n| !(n > 0.0)) {
            return Err(EpitomeError::Degenerate(format!(
                "atom {j} has zero norm; drop or zero it before weighted coding"
            )));
        }
        let mut scaled = entries.clone();
        for (mut col, &n) in scaled.columns_mut().into_iter().zip(norms.iter()) {
            col /= n;
        }
        Ok(Self {
            inner: LassoSolver::from_matrix(scaled),
            norms,
        })
    }

    pub fn norms(&self) -> &Array1<f64> {
        &self.norms
    }

    /// The underlying solver on the column-normalized dictionary.
    pub fn normalized(&self) -> &LassoSolver {
        &self.inner
    }

    fn unscale(&self, mut code: SparseCode) -> SparseCode {
        let inv = self.norms.mapv(|n| 1.0 / n);
        code.scale_each(inv.view());
        code
    }

    pub fn solve(&self, x: ArrayView1<f64>, settings: &LassoSettings) -> Result<SparseCode> {
        Ok(self.unscale(self.inner.solve(x, settings)?))
    }

    pub fn solve_many(
        &self,
        signals: ArrayView2<f64>,
        settings: &LassoSettings,
    ) -> Result<Vec<SparseCode>> {
        Ok(self
            .inner
            .solve_many(signals, settings)?
            .into_iter()
            .map(|c| self.unscale(c))
            .collect())
    }
}

/// Solves the lasso for one signal.
pub fn lasso(x: ArrayView1<f64>, dictionary: &Dictionary, settings: &LassoSettings) -> Result<SparseCode> {
    check_finite(x, "lasso signal")?;
    if dictionary.entries().iter().any(|v| !v.is_finite()) {
        return Err(EpitomeError::NonFinite("lasso dictionary".into()));
    }
    LassoSolver::new(dictionary).solve(x, settings)
}

/// Solves the weighted lasso for one signal.
pub fn weighted_lasso(
    x: ArrayView1<f64>,
    dictionary: &Dictionary,
    settings: &LassoSettings,
) -> Result<SparseCode> {
    check_finite(x, "lasso signal")?;
    WeightedLassoSolver::new(dictionary)?.solve(x, settings)
}

enum Event {
    Stop,
    Join(usize),
    Drop(usize),
}

/// LARS-lasso homotopy on the Gram matrix. Returns `(index, value)` pairs.
fn lars_path(gram: ArrayView2<f64>, corr0: ArrayView1<f64>, lambda: f64, cap: usize) -> Vec<(usize, f64)> {
    let p = gram.nrows();
    let mut corr = corr0.to_owned();
    let (first, c_max) = argmax_abs(corr.view(), |_| true);
    let Some(first) = first else {
        return Vec::new();
    };
    if c_max <= lambda || cap == 0 {
        return Vec::new();
    }
    let tiny = 1e-13 * c_max.max(1.0);

    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    // 0 = free, 1 = active, 2 = excluded (linearly dependent)
    let mut state = vec![0u8; p];
    let mut chol = GrowingCholesky::new();
    let mut just_dropped: Option<usize> = None;
    let mut level = c_max;

    let add = |j: usize,
                   active: &mut Vec<usize>,
                   signs: &mut Vec<f64>,
                   beta: &mut Vec<f64>,
                   state: &mut Vec<u8>,
                   chol: &mut GrowingCholesky,
                   corr: &Array1<f64>| {
        let cross: Vec<f64> = active.iter().map(|&a| gram[[a, j]]).collect();
        if chol.push(&cross, gram[[j, j]]) {
            active.push(j);
            signs.push(corr[j].signum());
            beta.push(0.0);
            state[j] = 1;
        } else {
            state[j] = 2;
        }
    };
    add(first, &mut active, &mut signs, &mut beta, &mut state, &mut chol, &corr);

    let max_steps = 8 * p + 16;
    for _ in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let mut w = signs.clone();
        chol.solve(&mut w);
        // change of every correlation per unit step along the path
        let mut a = Array1::<f64>::zeros(p);
        for (&k, &wk) in active.iter().zip(&w) {
            a.scaled_add(wk, &gram.row(k));
        }

        let mut gamma = level - lambda;
        let mut event = Event::Stop;
        for j in 0..p {
            if state[j] != 0 || Some(j) == just_dropped {
                continue;
            }
            let (cj, aj) = (corr[j], a[j]);
            for g in [(level - cj) / (1.0 - aj), (level + cj) / (1.0 + aj)] {
                if g.is_finite() && g > tiny && g < gamma {
                    gamma = g;
                    event = Event::Join(j);
                }
            }
        }
        for (pos, (&b, &wk)) in beta.iter().zip(&w).enumerate() {
            if wk != 0.0 {
                let g = -b / wk;
                if g > tiny && g < gamma {
                    gamma = g;
                    event = Event::Drop(pos);
                }
            }
        }
        if !(gamma > 0.0) {
            gamma = 0.0;
        }

        for (b, &wk) in beta.iter_mut().zip(&w) {
            *b += gamma * wk;
        }
        corr.scaled_add(-gamma, &a);
        level -= gamma;
        just_dropped = None;

        match event {
            Event::Stop => break,
            Event::Drop(pos) => {
                let j = active.remove(pos);
                signs.remove(pos);
                beta.remove(pos);
                state[j] = 0;
                just_dropped = Some(j);
                let ok = chol.rebuild(active.len(), |u, v| gram[[active[u], active[v]]]);
                debug_assert!(ok);
            }
            Event::Join(j) => {
                if active.len() >= cap {
                    break;
                }
                add(j, &mut active, &mut signs, &mut beta, &mut state, &mut chol, &corr);
            }
        }
        // resynchronize correlations to limit drift
        corr.assign(&corr0);
        for (&k, &b) in active.iter().zip(&beta) {
            corr.scaled_add(-b, &gram.row(k));
        }
        if let Some(m) = active.iter().map(|&k| corr[k].abs()).reduce(f64::max) {
            level = m;
        }
        if level <= lambda {
            break;
        }
    }
    active.into_iter().zip(beta).filter(|(_, b)| *b != 0.0).collect()
}

fn argmax_abs(v: ArrayView1<f64>, allowed: impl Fn(usize) -> bool) -> (Option<usize>, f64) {
    let mut best = None;
    let mut best_val = -1.0;
    for (i, &x) in v.iter().enumerate() {
        if allowed(i) && x.abs() > best_val {
            best = Some(i);
            best_val = x.abs();
        }
    }
    (best, best_val.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::kkt_violation;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dict(rng: &mut ChaCha8Rng, m: usize, p: usize) -> Dictionary {
        Dictionary::flat(Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn objective(x: ArrayView1<f64>, d: &Dictionary, code: &SparseCode, lambda: f64) -> f64 {
        let r = &x - &code.reconstruct(d.entries().view());
        0.5 * r.dot(&r) + lambda * code.l1_norm()
    }

    #[test]
    fn large_lambda_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_dict(&mut rng, 6, 9);
        let x = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        let cmax = d.entries().t().dot(&x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let code = lasso(x.view(), &d, &LassoSettings::new(cmax)).unwrap();
        assert_eq!(code.nnz(), 0);
        let code = lasso(x.view(), &d, &LassoSettings::new(cmax * 1.5)).unwrap();
        assert_eq!(code.nnz(), 0);
    }

    #[test]
    fn zero_lambda_square_system_is_least_squares() {
        let d = Dictionary::flat(array![[2.0, 0.5, 0.0], [0.3, 1.5, 0.2], [0.0, -0.4, 1.0]]).unwrap();
        let truth = array![1.0, -2.0, 0.5];
        let x = d.entries().dot(&truth);
        let code = lasso(x.view(), &d, &LassoSettings::new(0.0)).unwrap();
        for (u, v) in code.to_dense().iter().zip(truth.iter()) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn kkt_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = random_dict(&mut rng, 10, 25);
            let x = Array1::from_shape_fn(10, |_| rng.gen_range(-1.0..1.0));
            let lambda = rng.gen_range(0.01..0.5);
            let code = lasso(x.view(), &d, &LassoSettings::new(lambda)).unwrap();
            let w = Array1::from_elem(25, lambda);
            let v = kkt_violation(x.view(), d.entries().view(), &code, w.view());
            assert!(v < 1e-9, "kkt violation {v}");
        }
    }

    #[test]
    fn homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dict(&mut rng, 8, 12);
        let x = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let a = lasso(x.view(), &d, &LassoSettings::new(0.1)).unwrap();
        let b = lasso((&x * 3.0).view(), &d, &LassoSettings::new(0.3)).unwrap();
        let diff = &a.to_dense() * 3.0 - b.to_dense();
        assert!(diff.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn duplicated_atoms_do_not_break_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_dict(&mut rng, 6, 4);
        let mut e = Array2::zeros((6, 8));
        e.slice_mut(ndarray::s![.., 0..4]).assign(base.entries());
        e.slice_mut(ndarray::s![.., 4..8]).assign(base.entries());
        let d = Dictionary::flat(e).unwrap();
        let x = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        let code = lasso(x.view(), &d, &LassoSettings::new(0.05)).unwrap();
        let w = Array1::from_elem(8, 0.05);
        assert!(kkt_violation(x.view(), d.entries().view(), &code, w.view()) < 1e-9);
        assert!(objective(x.view(), &d, &code, 0.05).is_finite());
    }

    #[test]
    fn weighted_matches_plain_on_unit_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut e = random_dict(&mut rng, 7, 10).into_entries();
        for mut c in e.columns_mut() {
            let n = c.dot(&c).sqrt();
            c /= n;
        }
        let d = Dictionary::flat(e).unwrap();
        let x = Array1::from_shape_fn(7, |_| rng.gen_range(-1.0..1.0));
        let s = LassoSettings::new(0.1);
        let a = lasso(x.view(), &d, &s).unwrap().to_dense();
        let b = weighted_lasso(x.view(), &d, &s).unwrap().to_dense();
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weighted_zero_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = random_dict(&mut rng, 5, 7);
        let x = Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0));
        let norms = matrix_column_norms(d.entries());
        let corr = d.entries().t().dot(&x);
        let thresh = corr
            .iter()
            .zip(norms.iter())
            .map(|(c, n)| c.abs() / n)
            .fold(0.0, f64::max);
        let code = weighted_lasso(x.view(), &d, &LassoSettings::new(thresh * 1.0001)).unwrap();
        assert_eq!(code.nnz(), 0);
        let code = weighted_lasso(x.view(), &d, &LassoSettings::new(thresh * 0.9)).unwrap();
        assert!(code.nnz() > 0);
    }

    #[test]
    fn weighted_rejects_zero_column() {
        let d = Dictionary::flat(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let err = weighted_lasso(array![1.0, 1.0].view(), &d, &LassoSettings::new(0.1)).unwrap_err();
        assert!(matches!(err, EpitomeError::Degenerate(_)));
    }

    #[test]
    fn non_finite_input_rejected() {
        let d = Dictionary::flat(Array2::eye(2)).unwrap();
        assert!(lasso(array![f64::NAN, 0.0].view(), &d, &LassoSettings::new(0.1)).is_err());
    }

    #[test]
    fn support_cap_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = random_dict(&mut rng, 12, 30);
        let x = Array1::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0));
        let mut s = LassoSettings::new(1e-4);
        s.max_nonzeros = Some(3);
        assert!(lasso(x.view(), &d, &s).unwrap().nnz() <= 3);
    }
}
