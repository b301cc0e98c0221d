use ndarray::{Array1, Array2};
use proptest::prelude::*;

use epitome::learning::{objective, renormalize, CodeMatrix, TrainingSet};
use epitome::solvers::{lasso, weighted_lasso, LassoSettings};
use epitome::{phi, phi_star, project, Dictionary, EpitomeGeometry, EpitomeSet, PatchShape};

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Geometry, patch shape and two epitome sets drawn on it.
fn epitome_pair() -> impl Strategy<Value = (EpitomeGeometry, PatchShape, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=6, 1usize..=6, 0usize..=6, 0usize..=6).prop_flat_map(|(n, ph, pw, dh, dw)| {
        let g = EpitomeGeometry::new(n, ph + dh, pw + dw).unwrap();
        let s = PatchShape::new(ph, pw).unwrap();
        let len = g.total_pixels();
        (
            Just(g),
            Just(s),
            prop::collection::vec(-1.0..1.0f64, len),
            prop::collection::vec(-1.0..1.0f64, len),
        )
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0..1.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_linear((g, s, e1, e2) in epitome_pair(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let combo: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
        let lhs = phi(&EpitomeSet::from_vec(g, combo).unwrap(), s).unwrap();
        let d1 = phi(&EpitomeSet::from_vec(g, e1).unwrap(), s).unwrap();
        let d2 = phi(&EpitomeSet::from_vec(g, e2).unwrap(), s).unwrap();
        let rhs = d1.entries() * a + d2.entries() * b;
        let err = frob(&(lhs.entries() - &rhs));
        prop_assert!(err <= 1e-12 * frob(&rhs).max(1.0));
    }

    #[test]
    fn adjoint_inverts_phi((g, s, e, _) in epitome_pair()) {
        let e = EpitomeSet::from_vec(g, e).unwrap();
        let back = phi_star(&phi(&e, s).unwrap(), g, s).unwrap();
        let diff = back.pixels() - e.pixels();
        prop_assert!(diff.dot(&diff).sqrt() <= 1e-12 * e.pixels().dot(e.pixels()).sqrt().max(1e-300));
    }

    #[test]
    fn projection_residual_is_orthogonal((g, s, _, _) in epitome_pair(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = g.atom_count(s).unwrap();
        let mut draw = || Array2::from_shape_fn((s.m(), p), |_| rng.gen_range(-1.0..1.0));
        let d = Dictionary::flat(draw()).unwrap();
        let other = Dictionary::flat(draw()).unwrap();
        let pd = project(&d, g, s).unwrap();
        let po = project(&other, g, s).unwrap();
        let inner: f64 = (d.entries() - pd.entries()).iter().zip(po.entries().iter()).map(|(a, b)| a * b).sum();
        prop_assert!(inner.abs() <= 1e-10 * frob(d.entries()) * frob(po.entries()));
        let again = project(&pd, g, s).unwrap();
        prop_assert!(frob(&(again.entries() - pd.entries())) <= 1e-12 * frob(pd.entries()).max(1e-300));
    }

    #[test]
    fn lasso_is_homogeneous(d in matrix(6, 9), x in prop::collection::vec(-1.0..1.0f64, 6),
                            lambda in 0.01..0.5f64, c in 0.1..10.0f64) {
        let dict = Dictionary::flat(d).unwrap();
        let x = Array1::from(x);
        let base = lasso(x.view(), &dict, &LassoSettings::new(lambda)).unwrap().to_dense();
        let scaled = lasso((&x * c).view(), &dict, &LassoSettings::new(lambda * c)).unwrap().to_dense();
        let diff = &scaled - &(&base * c);
        prop_assert!(diff.iter().all(|v| v.abs() <= 1e-8 * c.max(1.0)), "{base} vs {scaled}");
    }

    #[test]
    fn weighted_lasso_ignores_dictionary_scale(d in matrix(5, 7), x in prop::collection::vec(-1.0..1.0f64, 5),
                                               lambda in 0.01..0.4f64, s in 0.2..5.0f64) {
        let x = Array1::from(x);
        let settings = LassoSettings::new(lambda);
        let a = weighted_lasso(x.view(), &Dictionary::flat(d.clone()).unwrap(), &settings).unwrap();
        let shrunk = &d / s;
        let b = weighted_lasso(x.view(), &Dictionary::flat(shrunk.clone()).unwrap(), &settings).unwrap();
        let ra = a.reconstruct(d.view());
        let rb = b.reconstruct(shrunk.view());
        prop_assert!((&ra - &rb).iter().all(|v| v.abs() <= 1e-8));
        let da = a.to_dense();
        let db = b.to_dense();
        prop_assert!((&(&da * s) - &db).iter().all(|v| v.abs() <= 1e-8 * s));
    }

    #[test]
    fn renormalization_keeps_objective(d in matrix(4, 6), a in matrix(6, 5), x in matrix(4, 5),
                                       lambda in 0.0..1.0f64, scale in 0.1..10.0f64) {
        let x = TrainingSet::new(x).unwrap();
        let d = Dictionary::flat(&d * scale).unwrap();
        let a = CodeMatrix::from_dense(&a);
        let before = objective(&x, &d, &a, lambda).unwrap();
        let (d2, a2) = renormalize(d.clone(), a.clone()).unwrap();
        let after = objective(&x, &d2, &a2, lambda).unwrap();
        prop_assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
        let min = d2.entries().columns().into_iter().map(|c| c.dot(&c).sqrt()).fold(f64::INFINITY, f64::min);
        prop_assert!((min - 1.0).abs() <= 1e-12);
        let prod = d.entries().dot(&a.to_dense());
        let prod2 = d2.entries().dot(&a2.to_dense());
        prop_assert!(frob(&(&prod - &prod2)) <= 1e-12 * frob(&prod).max(1.0));
    }
}
