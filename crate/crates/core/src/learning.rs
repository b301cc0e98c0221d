//! Alternating epitome learner.
//!
//! Minimizes, over the epitome `E` and the codes `A`,
//!
//! ```text
//! (1/n) sum_i [ 1/2 |x_i - D a_i|^2 + lambda sum_j |d_j| |a_ji| ],   D = phi(E)
//! ```
//!
//! by block-coordinate descent: weighted-lasso coding of every training
//! patch, a rescaling that sets the smallest atom norm to one, and an
//! accelerated projected-gradient update of `D` restricted to the image of
//! `phi`. The learner itself works in dictionary space against a
//! [`Structure`], so the same loop also trains flat dictionaries.

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::epitome::{
    matrix_column_norms, phi, phi_star_raw, Dictionary, EpitomeGeometry, EpitomeSet, PatchShape,
};
use crate::error::{EpitomeError, Result};
use crate::solvers::{LassoSettings, SparseCode, WeightedLassoSolver};

/// Columns with a norm below this are treated as zero atoms.
pub const ZERO_COLUMN_TOL: f64 = 1e-10;

/// Training patches as the columns of an `m x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: Array2<f64>,
}

impl TrainingSet {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(EpitomeError::Shape("training set is empty".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("training patches".into()));
        }
        Ok(Self { x })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// Subtracts each patch's mean from its pixels.
    pub fn centered(&self) -> Self {
        let mut x = self.x.clone();
        for mut col in x.columns_mut() {
            let mean = col.mean().unwrap_or(0.0);
            col -= mean;
        }
        Self { x }
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// The `p x n` code matrix, stored by columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    p: usize,
    columns: Vec<SparseCode>,
}

impl CodeMatrix {
    pub fn new(p: usize, columns: Vec<SparseCode>) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.p() != p) {
            return Err(EpitomeError::Shape(format!(
                "code of dimension {} in a matrix with {p} rows",
                c.p()
            )));
        }
        Ok(Self { p, columns })
    }

    pub fn zeros(p: usize, n: usize) -> Self {
        Self {
            p,
            columns: vec![SparseCode::zeros(p); n],
        }
    }

    pub fn from_dense(a: &Array2<f64>) -> Self {
        Self {
            p: a.nrows(),
            columns: a.columns().into_iter().map(SparseCode::from_dense).collect(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.p, self.columns.len()));
        for (i, c) in self.columns.iter().enumerate() {
            for (j, v) in c.iter() {
                out[[j, i]] = v;
            }
        }
        out
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[SparseCode] {
        &self.columns
    }

    /// `|a^j|_1` for every row `j`.
    pub fn row_l1_norms(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.p);
        for c in &self.columns {
            for (j, v) in c.iter() {
                out[j] += v.abs();
            }
        }
        out
    }

    pub fn mean_support(&self) -> f64 {
        if self.columns.is_empty() {
            return 0.0;
        }
        self.columns.iter().map(|c| c.nnz()).sum::<usize>() as f64 / self.columns.len() as f64
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.columns {
            c.scale(factor);
        }
    }

    /// Removes every coefficient on the rows flagged in `rows`.
    pub fn zero_rows(&mut self, rows: &[bool]) {
        for c in &mut self.columns {
            if c.iter().any(|(j, _)| rows[j]) {
                let pairs = c.iter().filter(|(j, _)| !rows[*j]).collect();
                *c = SparseCode::from_pairs(self.p, pairs).expect("subset of a valid code");
            }
        }
    }
}

/// Linear constraint set for the dictionary.
pub trait Structure: Sync {
    /// Orthogonally projects `d` onto the admissible subspace.
    fn project(&self, d: &mut Array2<f64>) -> Result<()>;
}

/// Dictionaries generated from an epitome set.
#[derive(Debug, Clone, Copy)]
pub struct EpitomeStructure {
    pub geometry: EpitomeGeometry,
    pub shape: PatchShape,
}

impl Structure for EpitomeStructure {
    fn project(&self, d: &mut Array2<f64>) -> Result<()> {
        let pixels = phi_star_raw(d, self.geometry, self.shape)?;
        let e = EpitomeSet::new(self.geometry, pixels)?;
        *d = phi(&e, self.shape)?.into_entries();
        Ok(())
    }
}

/// Unconstrained (flat) dictionaries.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatStructure;

impl Structure for FlatStructure {
    fn project(&self, _d: &mut Array2<f64>) -> Result<()> {
        Ok(())
    }
}

/// Dictionary update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryUpdate {
    /// Accelerated projected gradient with backtracking and a monotone
    /// fallback.
    Fista,
    /// Plain projected gradient with backtracking.
    ProjectedGradient,
}

/// Default regularization for patches in [0, 1] intensity units:
/// `0.1 sqrt(m)`.
pub fn default_learning_lambda(m: usize) -> f64 {
    0.1 * (m as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub lambda: f64,
    pub outer_iters: usize,
    pub fista_iters: usize,
    /// Initial gradient step; `None` estimates it from `|A A^T|`.
    pub initial_step: Option<f64>,
    /// Step shrink factor of the backtracking search.
    pub backtrack: f64,
    pub seed: u64,
    pub shape: PatchShape,
    pub geometry: EpitomeGeometry,
    pub update: DictionaryUpdate,
    /// Subtract the mean of each training patch before learning.
    pub center_patches: bool,
}

impl LearnConfig {
    pub fn new(geometry: EpitomeGeometry, shape: PatchShape, lambda: f64) -> Self {
        Self {
            lambda,
            outer_iters: 20,
            fista_iters: 20,
            initial_step: None,
            backtrack: 0.5,
            seed: 0,
            shape,
            geometry,
            update: DictionaryUpdate::Fista,
            center_patches: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(EpitomeError::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.outer_iters == 0 || self.fista_iters == 0 {
            return Err(EpitomeError::InvalidParameter(
                "iteration counts must be at least 1".into(),
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(EpitomeError::InvalidParameter(format!(
                "backtracking factor must lie in (0, 1), got {}",
                self.backtrack
            )));
        }
        if let Some(step) = self.initial_step {
            if !(step > 0.0) || !step.is_finite() {
                return Err(EpitomeError::InvalidParameter(format!(
                    "initial step must be positive, got {step}"
                )));
            }
        }
        self.geometry.check_patch(self.shape)
    }
}

fn check_shapes(x: &TrainingSet, d: &Array2<f64>, a: &CodeMatrix) -> Result<()> {
    if d.nrows() != x.m() || d.ncols() != a.p() || a.n() != x.n() {
        return Err(EpitomeError::Shape(format!(
            "X is {}x{}, D is {}x{}, A is {}x{}",
            x.m(),
            x.n(),
            d.nrows(),
            d.ncols(),
            a.p(),
            a.n()
        )));
    }
    Ok(())
}

/// The learning objective averaged over the training set.
pub fn objective(x: &TrainingSet, d: &Dictionary, a: &CodeMatrix, lambda: f64) -> Result<f64> {
    check_shapes(x, d.entries(), a)?;
    Ok(total_cost(x, d.entries(), a, lambda) / x.n() as f64)
}

/// `(1/n) sum_i [1/2 |x_i - D a_i|^2 + lambda |a_i|_1]`, the objective with
/// a plain l1 penalty.
pub fn classical_objective(
    x: &TrainingSet,
    d: &Dictionary,
    a: &CodeMatrix,
    lambda: f64,
) -> Result<f64> {
    check_shapes(x, d.entries(), a)?;
    let residual = residual_matrix(x, d.entries(), a);
    let fit = 0.5 * residual.iter().map(|v| v * v).sum::<f64>();
    let l1: f64 = a.columns.iter().map(|c| c.l1_norm()).sum();
    Ok((fit + lambda * l1) / x.n() as f64)
}

fn residual_matrix(x: &TrainingSet, d: &Array2<f64>, a: &CodeMatrix) -> Array2<f64> {
    let mut r = x.x.clone();
    for (mut col, code) in r.columns_mut().into_iter().zip(&a.columns) {
        for (j, v) in code.iter() {
            col.scaled_add(-v, &d.column(j));
        }
    }
    r
}

/// `n` times the objective: `1/2 |X - DA|_F^2 + lambda sum_j |d_j| |a^j|_1`.
fn total_cost(x: &TrainingSet, d: &Array2<f64>, a: &CodeMatrix, lambda: f64) -> f64 {
    let rows = a.row_l1_norms();
    total_cost_with_rows(x, d, a, &rows, lambda)
}

fn total_cost_with_rows(
    x: &TrainingSet,
    d: &Array2<f64>,
    a: &CodeMatrix,
    rows: &Array1<f64>,
    lambda: f64,
) -> f64 {
    let residual = residual_matrix(x, d, a);
    let fit = 0.5 * residual.iter().map(|v| v * v).sum::<f64>();
    let norms = matrix_column_norms(d);
    let penalty: f64 = norms.iter().zip(rows.iter()).map(|(n, r)| n * r).sum();
    fit + lambda * penalty
}

/// Gradient of `1/2 |X - DA|_F^2 + lambda sum_j |d_j| |a^j|_1` with respect
/// to `D`: `-(X - DA) A^T + D diag(lambda |a^j|_1 / |d_j|)`.
pub fn grad_d(x: &TrainingSet, d: &Dictionary, a: &CodeMatrix, lambda: f64) -> Result<Array2<f64>> {
    check_shapes(x, d.entries(), a)?;
    let rows = a.row_l1_norms();
    let norms = matrix_column_norms(d.entries());
    if let Some(j) = (0..a.p()).find(|&j| rows[j] > 0.0 && !(norms[j] > 0.0)) {
        return Err(EpitomeError::Degenerate(format!(
            "atom {j} has zero norm but is used by the codes"
        )));
    }
    Ok(gradient(x, d.entries(), a, &rows, &norms, lambda).1)
}

/// Returns `(cost, gradient)`.
fn gradient(
    x: &TrainingSet,
    d: &Array2<f64>,
    a: &CodeMatrix,
    rows: &Array1<f64>,
    norms: &Array1<f64>,
    lambda: f64,
) -> (f64, Array2<f64>) {
    let residual = residual_matrix(x, d, a);
    let mut g = Array2::<f64>::zeros(d.raw_dim().f());
    for (r, code) in residual.columns().into_iter().zip(&a.columns) {
        for (j, v) in code.iter() {
            g.column_mut(j).scaled_add(-v, &r);
        }
    }
    let mut penalty = 0.0;
    for j in 0..d.ncols() {
        penalty += norms[j] * rows[j];
        if rows[j] > 0.0 {
            let delta = lambda * rows[j] / norms[j];
            g.column_mut(j).scaled_add(delta, &d.column(j));
        }
    }
    let fit = 0.5 * residual.iter().map(|v| v * v).sum::<f64>();
    (fit + lambda * penalty, g)
}

/// Rescales `D <- D / s`, `A <- s A` with `s` the smallest atom norm.
pub fn renormalize(d: Dictionary, a: CodeMatrix) -> Result<(Dictionary, CodeMatrix)> {
    let provenance = d.provenance();
    let (entries, a) = renormalize_raw(d.into_entries(), a)?;
    Ok((Dictionary::with_provenance(entries, provenance), a))
}

fn renormalize_raw(mut d: Array2<f64>, mut a: CodeMatrix) -> Result<(Array2<f64>, CodeMatrix)> {
    let s = smallest_atom_norm(&d)?;
    d /= s;
    a.scale(s);
    Ok((d, a))
}

/// Smallest atom norm, ignoring atoms below [`ZERO_COLUMN_TOL`].
fn smallest_atom_norm(d: &Array2<f64>) -> Result<f64> {
    let s = matrix_column_norms(d)
        .iter()
        .copied()
        .filter(|&n| n >= ZERO_COLUMN_TOL)
        .fold(f64::INFINITY, f64::min);
    if !s.is_finite() {
        return Err(EpitomeError::Degenerate(
            "every atom has zero norm; the epitome is degenerate".into(),
        ));
    }
    Ok(s)
}

/// Estimates `|A A^T|_2` by power iteration.
fn gram_spectral_norm(a: &CodeMatrix) -> f64 {
    let mut v = Array1::from_elem(a.p, 1.0 / (a.p as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..30 {
        // w = A (A^T v)
        let mut w = Array1::<f64>::zeros(a.p);
        for c in &a.columns {
            let t: f64 = c.iter().map(|(j, x)| x * v[j]).sum();
            if t != 0.0 {
                for (j, x) in c.iter() {
                    w[j] += x * t;
                }
            }
        }
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - estimate).abs() <= 1e-6 * norm;
        estimate = norm;
        v = w / norm;
        if converged {
            break;
        }
    }
    estimate
}

/// Statistics of a dictionary update.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryStepReport {
    /// `n` times the objective after each inner iteration, starting with the
    /// input value.
    pub costs: Vec<f64>,
    /// Inner iterations that fell back to a plain projected step.
    pub fallbacks: usize,
}

/// Projected-gradient minimization of the dictionary cost for fixed codes,
/// restricted by `structure`. Never returns a dictionary with a larger cost
/// than `d0`.
pub fn update_dictionary(
    x: &TrainingSet,
    a: &CodeMatrix,
    d0: Array2<f64>,
    structure: &dyn Structure,
    cfg: &LearnConfig,
) -> Result<(Array2<f64>, DictionaryStepReport)> {
    check_shapes(x, &d0, a)?;
    let lambda = cfg.lambda;
    let rows = a.row_l1_norms();
    let cost_and_grad = |d: &Array2<f64>| -> Result<(f64, Array2<f64>)> {
        let norms = matrix_column_norms(d);
        let (c, mut g) = gradient(x, d, a, &rows, &norms, lambda);
        if !c.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite(
                "dictionary gradient diverged during the update".into(),
            ));
        }
        structure.project(&mut g)?;
        Ok((c, g))
    };
    let cost = |d: &Array2<f64>| total_cost_with_rows(x, d, a, &rows, lambda);

    let mut lipschitz = match cfg.initial_step {
        Some(step) => 1.0 / step,
        None => {
            let norms = matrix_column_norms(&d0);
            let delta_max = (0..d0.ncols())
                .filter(|&j| rows[j] > 0.0)
                .map(|j| lambda * rows[j] / norms[j])
                .fold(0.0, f64::max);
            (gram_spectral_norm(a) + delta_max).max(1e-12)
        }
    };

    // One projected gradient step from `y` with backtracking on the
    // quadratic upper bound. Returns (point, cost) or None if no decrease
    // was certified.
    let step_from = |y: &Array2<f64>,
                     fy: f64,
                     gy: &Array2<f64>,
                     lipschitz: &mut f64|
     -> Option<(Array2<f64>, f64)> {
        let gnorm2: f64 = gy.iter().map(|v| v * v).sum();
        if gnorm2 == 0.0 {
            return None;
        }
        for _ in 0..60 {
            let z = y - &(gy / *lipschitz);
            let fz = cost(&z);
            let diff = &z - y;
            let lin: f64 = gy.iter().zip(diff.iter()).map(|(g, d)| g * d).sum();
            let quad: f64 = diff.iter().map(|v| v * v).sum();
            let bound = fy + lin + 0.5 * *lipschitz * quad;
            if fz.is_finite() && fz <= bound + 1e-13 * fy.abs() {
                return Some((z, fz));
            }
            *lipschitz /= cfg.backtrack;
        }
        None
    };

    let mut current = d0;
    let (mut f_current, _) = cost_and_grad(&current)?;
    let mut report = DictionaryStepReport {
        costs: vec![f_current],
        fallbacks: 0,
    };
    let mut y = current.clone();
    let mut t = 1.0f64;

    for _ in 0..cfg.fista_iters {
        let (f_y, g_y) = cost_and_grad(&y)?;
        let candidate = step_from(&y, f_y, &g_y, &mut lipschitz);
        let accepted = match candidate {
            Some((z, fz)) if fz <= f_current => Some((z, fz)),
            _ => None,
        };
        let (next, f_next) = match accepted {
            Some(v) => v,
            None => {
                // monotone fallback: plain step from the current iterate
                report.fallbacks += 1;
                t = 1.0;
                let (fc, gc) = cost_and_grad(&current)?;
                match step_from(&current, fc, &gc, &mut lipschitz) {
                    Some((z, fz)) if fz <= f_current => (z, fz),
                    _ => (current.clone(), f_current),
                }
            }
        };
        match cfg.update {
            DictionaryUpdate::Fista => {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let momentum = (t - 1.0) / t_next;
                y = &next + &((&next - &current) * momentum);
                t = t_next;
            }
            DictionaryUpdate::ProjectedGradient => y = next.clone(),
        }
        current = next;
        f_current = f_next;
        report.costs.push(f_current);
    }
    Ok((current, report))
}

/// One accelerated projected-gradient dictionary update of an epitome set
/// for fixed codes.
pub fn update_d_fista(
    x: &TrainingSet,
    a: &CodeMatrix,
    e: &EpitomeSet,
    cfg: &LearnConfig,
) -> Result<EpitomeSet> {
    Ok(update_d_fista_report(x, a, e, cfg)?.0)
}

pub fn update_d_fista_report(
    x: &TrainingSet,
    a: &CodeMatrix,
    e: &EpitomeSet,
    cfg: &LearnConfig,
) -> Result<(EpitomeSet, DictionaryStepReport)> {
    cfg.validate()?;
    if e.geometry() != cfg.geometry {
        return Err(EpitomeError::Geometry(
            "epitome geometry differs from the configuration".into(),
        ));
    }
    let structure = EpitomeStructure {
        geometry: cfg.geometry,
        shape: cfg.shape,
    };
    let d0 = phi(e, cfg.shape)?.into_entries();
    let (d, report) = update_dictionary(x, a, d0, &structure, cfg)?;
    let e = EpitomeSet::new(cfg.geometry, phi_star_raw(&d, cfg.geometry, cfg.shape)?)?;
    Ok((e, report))
}

/// Weighted-lasso codes for every training patch. Atoms below
/// [`ZERO_COLUMN_TOL`] are left out and receive zero coefficients.
pub fn sparse_code_step(x: &TrainingSet, d: &Array2<f64>, lambda: f64) -> Result<CodeMatrix> {
    let p = d.ncols();
    let norms = matrix_column_norms(d);
    let usable: Vec<usize> = (0..p).filter(|&j| norms[j] >= ZERO_COLUMN_TOL).collect();
    if usable.is_empty() {
        return Err(EpitomeError::Degenerate("every atom has zero norm".into()));
    }
    let settings = LassoSettings::new(lambda);
    if usable.len() == p {
        let solver = WeightedLassoSolver::from_matrix(d)?;
        return CodeMatrix::new(p, solver.solve_many(x.x.view(), &settings)?);
    }
    let sub = d.select(ndarray::Axis(1), &usable);
    let solver = WeightedLassoSolver::from_matrix(&sub)?;
    let codes = solver
        .solve_many(x.x.view(), &settings)?
        .into_iter()
        .map(|c| {
            let pairs = c.iter().map(|(k, v)| (usable[k], v)).collect();
            SparseCode::from_pairs(p, pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    CodeMatrix::new(p, codes)
}

/// Per-signal cost `1/2 |x - D a|^2 + lambda sum_j |d_j| |a_j|`.
fn signal_cost(x: ArrayView1<f64>, d: &Array2<f64>, norms: &Array1<f64>, code: &SparseCode, lambda: f64) -> f64 {
    let r = &x - &code.reconstruct(d.view());
    0.5 * r.dot(&r) + lambda * code.iter().map(|(j, v)| norms[j] * v.abs()).sum::<f64>()
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Objective after the coding step (and renormalization).
    pub objective_after_codes: f64,
    /// Objective after the dictionary step.
    pub objective: f64,
    pub mean_support: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub fallbacks: usize,
}

impl IterationStats {
    pub const TSV_HEADER: &'static str = "iteration\tobjective\tmean_support\tmin_norm\tmax_norm";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.12e}\t{:.4}\t{:.6e}\t{:.6e}",
            self.iteration, self.objective, self.mean_support, self.min_norm, self.max_norm
        )
    }
}

/// Learning trace, one entry per outer iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearnReport {
    pub iterations: Vec<IterationStats>,
}

impl LearnReport {
    /// Objective values in the order they were reached: after codes, after
    /// the dictionary step, for every iteration.
    pub fn trajectory(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .flat_map(|s| [s.objective_after_codes, s.objective])
            .collect()
    }
}

/// Outcome of [`learn_dictionary`].
#[derive(Debug, Clone)]
pub struct Learned {
    pub dictionary: Array2<f64>,
    pub codes: CodeMatrix,
    pub report: LearnReport,
}

/// Alternating minimization from `d0` under `structure`.
pub fn learn_dictionary(
    x: &TrainingSet,
    d0: Array2<f64>,
    structure: &dyn Structure,
    cfg: &LearnConfig,
) -> Result<Learned> {
    cfg.validate()?;
    if d0.nrows() != x.m() {
        return Err(EpitomeError::Shape(format!(
            "dictionary has {} rows, patches have {}",
            d0.nrows(),
            x.m()
        )));
    }
    let n = x.n() as f64;
    let mut d = d0;
    let mut codes: Option<CodeMatrix> = None;
    let mut report = LearnReport::default();

    for iteration in 0..cfg.outer_iters {
        let mut a = sparse_code_step(x, &d, cfg.lambda)?;
        if let Some(prev) = &codes {
            // keep the previous code where it is at least as good
            let norms = matrix_column_norms(&d);
            let columns: Vec<SparseCode> = crate::parallel_map(a.n(), |i| {
                let xi = x.x.column(i);
                let new = &a.columns[i];
                let old = &prev.columns[i];
                if signal_cost(xi, &d, &norms, old, cfg.lambda)
                    < signal_cost(xi, &d, &norms, new, cfg.lambda)
                {
                    old.clone()
                } else {
                    new.clone()
                }
            });
            a = CodeMatrix::new(a.p, columns)?;
        }
        let (dn, an) = renormalize_raw(d, a)?;
        d = dn;
        a = an;
        let after_codes = total_cost(x, &d, &a, cfg.lambda) / n;

        let norms = matrix_column_norms(&d);
        let dead: Vec<bool> = norms.iter().map(|&v| v < ZERO_COLUMN_TOL).collect();
        if dead.iter().any(|&b| b) {
            a.zero_rows(&dead);
        }
        let (dn, step) = update_dictionary(x, &a, d, structure, cfg)?;
        d = dn;
        let norms = matrix_column_norms(&d);
        let obj = total_cost(x, &d, &a, cfg.lambda) / n;
        report.iterations.push(IterationStats {
            iteration,
            objective_after_codes: after_codes,
            objective: obj,
            mean_support: a.mean_support(),
            min_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
            max_norm: norms.iter().copied().fold(0.0, f64::max),
            fallbacks: step.fallbacks,
        });
        codes = Some(a);
    }
    Ok(Learned {
        dictionary: d,
        codes: codes.expect("at least one iteration"),
        report,
    })
}

/// Learns an epitome set from `x`, starting at `init`.
pub fn learn(x: &TrainingSet, init: &EpitomeSet, cfg: &LearnConfig) -> Result<EpitomeSet> {
    Ok(learn_with_report(x, init, cfg)?.0)
}

pub fn learn_with_report(
    x: &TrainingSet,
    init: &EpitomeSet,
    cfg: &LearnConfig,
) -> Result<(EpitomeSet, LearnReport)> {
    cfg.validate()?;
    if init.geometry() != cfg.geometry {
        return Err(EpitomeError::Geometry(format!(
            "initial epitome is {:?}, configuration expects {:?}",
            init.geometry(),
            cfg.geometry
        )));
    }
    if x.m() != cfg.shape.m() {
        return Err(EpitomeError::Shape(format!(
            "patches have {} pixels, patch shape has {}",
            x.m(),
            cfg.shape.m()
        )));
    }
    let structure = EpitomeStructure {
        geometry: cfg.geometry,
        shape: cfg.shape,
    };
    let d0 = phi(init, cfg.shape)?.into_entries();
    let learned = learn_dictionary(x, d0, &structure, cfg)?;
    let e = EpitomeSet::new(
        cfg.geometry,
        phi_star_raw(&learned.dictionary, cfg.geometry, cfg.shape)?,
    )?;
    Ok((e, learned.report))
}

/// Options of [`init_epitome`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Standard deviation of the Gaussian low-pass kernel, in pixels.
    pub kernel_std: f64,
    /// Kernel half-width; the support is `2 * radius + 1` pixels wide.
    pub kernel_radius: usize,
    /// Output value range.
    pub range: (f64, f64),
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            kernel_std: 1.0,
            kernel_radius: 2,
            range: (0.0, 1.0),
        }
    }
}

/// Gaussian low-pass filter of an `h x w` field with border renormalization.
pub fn gaussian_lowpass(field: &[f64], h: usize, w: usize, std: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * std * std)).exp())
        .collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut weight) = (0.0, 0.0);
                for (t, &k) in kernel.iter().enumerate() {
                    let off = t as isize - r;
                    let (yy, xx) = if horizontal {
                        (y as isize, x as isize + off)
                    } else {
                        (y as isize + off, x as isize)
                    };
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += k * src[yy as usize * w + xx as usize];
                        weight += k;
                    }
                }
                out[y * w + x] = acc / weight;
            }
        }
        out
    };
    let tmp = pass(field, true);
    pass(&tmp, false)
}

/// Random smooth initialization: i.i.d. Gaussian pixels, low-pass filtered
/// per epitome, then mapped affinely onto `opts.range`.
pub fn init_epitome(
    geometry: EpitomeGeometry,
    shape: PatchShape,
    seed: u64,
    opts: InitOptions,
) -> Result<EpitomeSet> {
    geometry.check_patch(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (geometry.height(), geometry.width());
    let mut pixels = Vec::with_capacity(geometry.total_pixels());
    for _ in 0..geometry.count() {
        let raw: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        pixels.extend(gaussian_lowpass(&raw, h, w, opts.kernel_std, opts.kernel_radius));
    }
    let (lo, hi) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (out_lo, out_hi) = opts.range;
    let span = hi - lo;
    for v in &mut pixels {
        *v = if span > 0.0 {
            out_lo + (*v - lo) / span * (out_hi - out_lo)
        } else {
            0.5 * (out_lo + out_hi)
        };
    }
    EpitomeSet::from_vec(geometry, pixels)
}
