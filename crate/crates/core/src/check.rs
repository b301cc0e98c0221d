//! Fast self-checks of the operator, gradient and solver identities.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::epitome::{
    matrix_column_norms, phi, phi_star, project, Dictionary, EpitomeGeometry, EpitomeSet,
    PatchShape,
};
use crate::error::Result;
use crate::learning::{grad_d, objective, CodeMatrix, TrainingSet};
use crate::solvers::{lasso, weighted_lasso, LassoSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub worst: f64,
    pub tolerance: f64,
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `phi_star(phi(E)) = E`, idempotence and Pythagoras of the projector on
/// random geometries. Returns the worst relative errors
/// `(inverse, idempotence, pythagoras)`.
pub fn operator_errors(rng: &mut impl Rng, cases: usize) -> Result<(f64, f64, f64)> {
    let (mut inv, mut idem, mut pyth) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let ph = rng.gen_range(1..=6);
        let pw = rng.gen_range(1..=6);
        let g = EpitomeGeometry::new(
            rng.gen_range(1..=3),
            rng.gen_range(ph..=ph + 8),
            rng.gen_range(pw..=pw + 8),
        )?;
        let shape = PatchShape::new(ph, pw)?;
        let e = EpitomeSet::from_vec(
            g,
            (0..g.total_pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let back = phi_star(&phi(&e, shape)?, g, shape)?;
        let err = (back.pixels() - e.pixels()).mapv(f64::abs).sum() / e.pixels().mapv(f64::abs).sum();
        inv = inv.max(err);

        let p = g.atom_count(shape)?;
        let d = Dictionary::flat(Array2::from_shape_fn((shape.m(), p), |_| rng.gen_range(-1.0..1.0)))?;
        let pd = project(&d, g, shape)?;
        let ppd = project(&pd, g, shape)?;
        idem = idem.max(frob(&(ppd.entries() - pd.entries())) / frob(pd.entries()).max(1e-300));
        let total = frob(d.entries()).powi(2);
        let parts = frob(&(d.entries() - pd.entries())).powi(2) + frob(pd.entries()).powi(2);
        pyth = pyth.max((parts - total).abs() / total);
    }
    Ok((inv, idem, pyth))
}

/// Worst relative error between the analytic dictionary gradient and
/// central finite differences of `n * objective`.
pub fn gradient_error(rng: &mut impl Rng, cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (m, p, n) = (rng.gen_range(2..6), rng.gen_range(2..7), rng.gen_range(2..6));
        let x = TrainingSet::new(Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0)))?;
        let d = Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0));
        let mut a = Array2::from_shape_fn((p, n), |_| {
            if rng.gen_bool(0.5) {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        if case % 2 == 0 {
            a.row_mut(0).fill(0.0);
        }
        let a = CodeMatrix::from_dense(&a);
        let lambda = rng.gen_range(0.0..0.5);
        let g = grad_d(&x, &Dictionary::flat(d.clone())?, &a, lambda)?;
        let f = |d: &Array2<f64>| -> Result<f64> {
            Ok(objective(&x, &Dictionary::flat(d.clone())?, &a, lambda)? * n as f64)
        };
        let h = 1e-6;
        let mut fd = Array2::zeros((m, p));
        for i in 0..m {
            for j in 0..p {
                let mut up = d.clone();
                up[[i, j]] += h;
                let mut down = d.clone();
                down[[i, j]] -= h;
                fd[[i, j]] = (f(&up)? - f(&down)?) / (2.0 * h);
            }
        }
        let err = frob(&(&g - &fd)) / frob(&fd).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Worst deviation between `Gamma * weighted_lasso(x, D)` and
/// `lasso(x, D Gamma^-1)`, and between the two objective values.
pub fn equivalence_errors(rng: &mut impl Rng, cases: usize) -> Result<(f64, f64)> {
    let (mut coef, mut obj) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let m = rng.gen_range(2..=20);
        let p = rng.gen_range(1..=40);
        let d = Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0) * 3.0);
        let x = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0));
        let norms = matrix_column_norms(&d);
        let mut unit = d.clone();
        for (mut c, &n) in unit.columns_mut().into_iter().zip(norms.iter()) {
            c /= n;
        }
        let lambda = rng.gen_range(0.01..0.5);
        let s = LassoSettings::new(lambda);
        let dd = Dictionary::flat(d)?;
        let du = Dictionary::flat(unit)?;
        let alpha = weighted_lasso(x.view(), &dd, &s)?.to_dense();
        let alpha_u = lasso(x.view(), &du, &s)?.to_dense();
        let rescaled = &alpha * &norms;
        coef = coef.max((&rescaled - &alpha_u).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));

        let weighted = {
            let r = &x - &dd.entries().dot(&alpha);
            0.5 * r.dot(&r) + lambda * (&norms * &alpha.mapv(f64::abs)).sum()
        };
        let plain = {
            let r = &x - &du.entries().dot(&rescaled);
            0.5 * r.dot(&r) + lambda * rescaled.mapv(f64::abs).sum()
        };
        obj = obj.max((weighted - plain).abs());
    }
    Ok((coef, obj))
}

/// Runs all checks with a fixed seed.
pub fn run_self_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inv, idem, pyth) = operator_errors(&mut rng, 50)?;
    let grad = gradient_error(&mut rng, 10)?;
    let (coef, obj) = equivalence_errors(&mut rng, 30)?;
    let mk = |name, worst: f64, tolerance| CheckResult {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
    };
    Ok(vec![
        mk("phi_star_inverts_phi", inv, 1e-12),
        mk("projector_idempotent", idem, 1e-12),
        mk("projector_pythagoras", pyth, 1e-10),
        mk("gradient_finite_differences", grad, 1e-5),
        mk("weighted_lasso_rescaling", coef, 1e-6),
        mk("weighted_lasso_objective", obj, 1e-9),
    ])
}
