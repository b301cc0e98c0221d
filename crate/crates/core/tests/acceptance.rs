//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if a hard criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use epitome::denoise::{add_gaussian_noise, denoise_image, image_patches, psnr, DenoiseConfig, NoiseModel};
use epitome::image::{encode_pgm, read_image, GrayImage};
use epitome::learning::{
    grad_d, init_epitome, learn_dictionary, CodeMatrix, EpitomeStructure, FlatStructure,
    InitOptions, LearnConfig, TrainingSet,
};
use epitome::multiscale::ScaleSchedule;
use epitome::solvers::{lasso, weighted_lasso, LassoSettings, OmpSolver};
use epitome::{phi, phi_star, project, Dictionary, EpitomeGeometry, EpitomeSet, PatchShape};

fn data(name: &str) -> GrayImage {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect();
    read_image(path).expect("bundled test image")
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs(a: &Array1<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn operator_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut inv, mut idem, mut pyth) = (0.0f64, 0.0f64, 0.0f64);
    let mut count_ok = true;
    for _ in 0..200 {
        let ph = rng.gen_range(1..=10);
        let pw = rng.gen_range(1..=10);
        let eh = rng.gen_range(ph..=32);
        let ew = rng.gen_range(pw..=32);
        let n = rng.gen_range(1..=3);
        let g = EpitomeGeometry::new(n, eh, ew).unwrap();
        let s = PatchShape::new(ph, pw).unwrap();
        let e = EpitomeSet::from_vec(g, (0..g.total_pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let d = phi(&e, s).unwrap();
        let expected_p = n * (eh - ph + 1) * (ew - pw + 1);
        count_ok &= d.p() == expected_p && g.atom_count(s).unwrap() == expected_p;

        let back = phi_star(&d, g, s).unwrap();
        let err = (back.pixels() - e.pixels()).mapv(|v| v * v).sum().sqrt()
            / e.pixels().mapv(|v| v * v).sum().sqrt();
        inv = inv.max(err);

        let z = Dictionary::flat(Array2::from_shape_fn((ph * pw, expected_p), |_| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let pz = project(&z, g, s).unwrap();
        let ppz = project(&pz, g, s).unwrap();
        idem = idem.max(frob(&(ppz.entries() - pz.entries())) / frob(pz.entries()));
        let total = frob(z.entries()).powi(2);
        let parts = frob(&(z.entries() - pz.entries())).powi(2) + frob(pz.entries()).powi(2);
        pyth = pyth.max((parts - total).abs() / total);
    }
    outcome(
        count_ok && inv <= 1e-12 && idem <= 1e-12 && pyth <= 1e-10,
        format!("inverse {inv:.2e}, idempotence {idem:.2e}, pythagoras {pyth:.2e}, counts exact {count_ok}"),
    )
}

fn weighted_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut coef, mut obj, mut kkt) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.gen_range(2..=20);
        let p = rng.gen_range(1..=40);
        let d = Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0) * rng.gen_range(0.2..4.0));
        let x = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0));
        let gamma = Array1::from_iter(d.columns().into_iter().map(|c| f64::sqrt(c.dot(&c))));
        let mut scaled = d.clone();
        for (mut c, g) in scaled.columns_mut().into_iter().zip(gamma.iter()) {
            c /= *g;
        }
        let lambda = rng.gen_range(0.01..0.5);
        let s = LassoSettings::new(lambda);
        let alpha = weighted_lasso(x.view(), &Dictionary::flat(d.clone()).unwrap(), &s)
            .unwrap()
            .to_dense();
        let plain = lasso(x.view(), &Dictionary::flat(scaled.clone()).unwrap(), &s)
            .unwrap()
            .to_dense();
        let mapped = &gamma * &alpha;
        coef = coef.max(max_abs(&(&mapped - &plain)));

        let r: Array1<f64> = &x - &d.dot(&alpha);
        let f = 0.5 * r.dot(&r) + lambda * (&gamma * &alpha.mapv(f64::abs)).sum();
        let r2: Array1<f64> = &x - &scaled.dot(&mapped);
        let g = 0.5 * r2.dot(&r2) + lambda * mapped.mapv(f64::abs).sum();
        obj = obj.max((f - g).abs());

        // optimality of the weighted problem itself
        let corr = d.t().dot(&r);
        for j in 0..p {
            let w = lambda * gamma[j];
            let v = if alpha[j] == 0.0 {
                (corr[j].abs() - w).max(0.0)
            } else {
                (corr[j] - w * alpha[j].signum()).abs()
            };
            kkt = kkt.max(v);
        }
    }
    outcome(
        coef <= 1e-6 && obj <= 1e-9 && kkt <= 1e-6,
        format!("coefficients {coef:.2e}, objectives {obj:.2e}, weighted KKT {kkt:.2e}"),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut zero_row_cases = 0;
    for case in 0..20 {
        let (m, p, n) = (rng.gen_range(2..8), rng.gen_range(2..9), rng.gen_range(2..7));
        let x = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
        let d = Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0));
        let mut a = Array2::from_shape_fn((p, n), |_| if rng.gen_bool(0.6) { rng.gen_range(-1.0..1.0) } else { 0.0 });
        if case % 2 == 0 {
            let rows = rng.gen_range(1..p);
            for j in sample(&mut rng, p, rows).iter() {
                a.row_mut(j).fill(0.0);
            }
            zero_row_cases += 1;
        }
        let lambda = rng.gen_range(0.0..0.5);
        // sum over samples of 1/2 |x - D a|^2 + lambda sum_j |d_j| |a^j|_1
        let cost = |d: &Array2<f64>| -> f64 {
            let r = &x - &d.dot(&a);
            let fit = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
            let pen: f64 = (0..p)
                .map(|j| d.column(j).dot(&d.column(j)).sqrt() * a.row(j).mapv(f64::abs).sum())
                .sum();
            fit + lambda * pen
        };
        let h = 1e-6;
        let mut fd = Array2::<f64>::zeros((m, p));
        for i in 0..m {
            for j in 0..p {
                let mut up = d.clone();
                up[[i, j]] += h;
                let mut down = d.clone();
                down[[i, j]] -= h;
                fd[[i, j]] = (cost(&up) - cost(&down)) / (2.0 * h);
            }
        }
        let g = grad_d(
            &TrainingSet::new(x.clone()).unwrap(),
            &Dictionary::flat(d.clone()).unwrap(),
            &CodeMatrix::from_dense(&a),
            lambda,
        )
        .unwrap();
        worst = worst.max(frob(&(&g - &fd)) / frob(&fd));
    }
    outcome(worst <= 1e-5, format!("worst relative error {worst:.2e} ({zero_row_cases} cases with zero rows)"))
}

fn sampled_patches(img: &GrayImage, shape: PatchShape, count: usize, seed: u64) -> TrainingSet {
    let all = image_patches(&img.map(|v| v / 255.0), shape, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, all.n(), count).into_vec();
    idx.sort_unstable();
    TrainingSet::new(all.matrix().select(ndarray::Axis(1), &idx)).unwrap()
}

fn monotonicity() -> Outcome {
    let shape = PatchShape::square(8).unwrap();
    let g = EpitomeGeometry::new(1, 32, 32).unwrap();
    let x = sampled_patches(&data("sail.pgm"), shape, 2000, 404);
    let mut cfg = LearnConfig::new(g, shape, 0.1 * 8.0);
    cfg.outer_iters = 20;
    let init = init_epitome(g, shape, 4, InitOptions::default()).unwrap();
    let d0 = phi(&init, shape).unwrap().into_entries();
    let learned = learn_dictionary(&x, d0, &EpitomeStructure { geometry: g, shape }, &cfg).unwrap();
    let t = learned.report.trajectory();
    let worst = t.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        t.len() == 40 && worst <= 1e-9,
        format!(
            "largest increase {worst:.2e} over {} recorded values, {:.6} -> {:.6}",
            t.len(),
            t[0],
            t[t.len() - 1]
        ),
    )
}

/// Solves the small SPD system `g z = b` by Gaussian elimination.
fn solve_small(mut g: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| g[i][c].abs().total_cmp(&g[j][c].abs()))?;
        if g[piv][c].abs() < 1e-12 {
            return None;
        }
        g.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..k {
            let f = g[r][c] / g[c][c];
            for q in c..k {
                g[r][q] -= f * g[c][q];
            }
            b[r] -= f * b[c];
        }
    }
    let mut z = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|q| g[c][q] * z[q]).sum();
        z[c] = (b[c] - s) / g[c][c];
    }
    Some(z)
}

fn subsets(p: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for j in 0..p {
        let grown: Vec<Vec<usize>> = out
            .iter()
            .filter(|s| s.len() < max)
            .map(|s| {
                let mut t = s.clone();
                t.push(j);
                t
            })
            .collect();
        out.extend(grown);
    }
    out
}

fn solver_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut lasso_gap = f64::NEG_INFINITY;
    for _ in 0..50 {
        let m = rng.gen_range(4..=8);
        let p = rng.gen_range(3..=7);
        let d = Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0));
        let x = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0));
        let lambda = rng.gen_range(0.02..0.6);
        let cost = |a: &Array1<f64>| {
            let r = &x - &d.dot(a);
            0.5 * r.dot(&r) + lambda * a.mapv(f64::abs).sum()
        };
        let mut best = cost(&Array1::zeros(p));
        for t in subsets(p, 3).into_iter().filter(|t| !t.is_empty()) {
            let gram: Vec<Vec<f64>> = t
                .iter()
                .map(|&a| t.iter().map(|&b| d.column(a).dot(&d.column(b))).collect())
                .collect();
            let c: Vec<f64> = t.iter().map(|&a| d.column(a).dot(&x)).collect();
            for signs in 0..(1u32 << t.len()) {
                let rhs: Vec<f64> = c
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v - lambda * if signs >> k & 1 == 1 { -1.0 } else { 1.0 })
                    .collect();
                for b in [rhs, c.clone()] {
                    if let Some(z) = solve_small(gram.clone(), b) {
                        let mut a = Array1::zeros(p);
                        for (&j, v) in t.iter().zip(z) {
                            a[j] = v;
                        }
                        best = best.min(cost(&a));
                    }
                }
            }
        }
        let code = lasso(x.view(), &Dictionary::flat(d.clone()).unwrap(), &LassoSettings::new(lambda)).unwrap();
        lasso_gap = lasso_gap.max(cost(&code.to_dense()) - best);
    }

    let mut omp_hits = 0;
    for _ in 0..50 {
        let m = rng.gen_range(4..=16);
        let p = rng.gen_range(2..=30);
        let d = Array2::from_shape_fn((m, p), |_| rng.gen_range(-1.0..1.0) * rng.gen_range(0.3..3.0));
        let y = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0));
        // best single atom: smallest least-squares residual
        let oracle = (0..p)
            .map(|j| {
                let c = d.column(j);
                let cy: f64 = c.dot(&y);
                let r = y.dot(&y) - cy * cy / c.dot(&c);
                (j, r)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        let code = OmpSolver::new(&Dictionary::flat(d).unwrap())
            .with_max_atoms(1)
            .solve(y.view(), 0.0)
            .unwrap();
        if code.indices() == [oracle] {
            omp_hits += 1;
        }
    }
    outcome(
        lasso_gap <= 1e-8 && omp_hits == 50,
        format!("lasso excess over exhaustive search {lasso_gap:.2e}, OMP first atom matched {omp_hits}/50"),
    )
}

fn standard_config(sigma: f64, geometry: EpitomeGeometry) -> DenoiseConfig {
    let shape = PatchShape::square(8).unwrap();
    let mut cfg = DenoiseConfig::with_geometry(sigma, geometry, shape, ScaleSchedule::standard(3, 2.0).unwrap())
        .unwrap();
    cfg.train_stride = 1;
    cfg
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Returns the outcome and the bytes of the first run for the
/// determinism check.
fn cameraman_denoising() -> (Outcome, Vec<u8>, DenoiseConfig, GrayImage) {
    let clean = data("cameraman.pgm");
    let cfg = standard_config(20.0, EpitomeGeometry::new(20, 15, 15).unwrap());
    let (mut noisy_db, mut out_db) = (vec![], vec![]);
    let mut first = None;
    for seed in 0..5 {
        let noisy = add_gaussian_noise(&clean, NoiseModel::new(20.0, seed).unwrap());
        let out = denoise_image(&noisy, &cfg, 20.0).unwrap();
        noisy_db.push(psnr(&clean, &noisy).unwrap());
        out_db.push(psnr(&clean, &out.image).unwrap());
        if seed == 0 {
            first = Some((image_bits(&out.image), noisy));
        }
    }
    let (n, o) = (mean(&noisy_db), mean(&out_db));
    let (bits, noisy) = first.unwrap();
    (
        outcome(
            o >= 28.9 && o - n >= 6.5,
            format!("mean denoised {o:.2} dB, noisy {n:.2} dB, gain {:.2} dB, runs {out_db:.2?}", o - n),
        ),
        bits,
        cfg,
        noisy,
    )
}

fn image_bits(img: &GrayImage) -> Vec<u8> {
    let mut bytes = encode_pgm(img);
    for v in img.pixels() {
        bytes.extend(v.to_bits().to_le_bytes());
    }
    bytes
}

fn flat_regime() -> Outcome {
    let shape = PatchShape::square(6).unwrap();
    let g = EpitomeGeometry::new(12, 6, 6).unwrap();
    let x = sampled_patches(&data("cameraman.pgm"), shape, 1500, 707);
    let mut cfg = LearnConfig::new(g, shape, 0.1 * 6.0);
    cfg.outer_iters = 15;
    let init = init_epitome(g, shape, 7, InitOptions::default()).unwrap();
    let d0 = phi(&init, shape).unwrap().into_entries();
    let epi = learn_dictionary(&x, d0.clone(), &EpitomeStructure { geometry: g, shape }, &cfg).unwrap();
    let flat = learn_dictionary(&x, d0, &FlatStructure, &cfg).unwrap();
    let (a, b) = (epi.report.trajectory(), flat.report.trajectory());
    let worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0f64, f64::max);
    outcome(
        a.len() == b.len() && worst <= 1e-9,
        format!("largest per-iteration difference {worst:.2e} over {} values", a.len()),
    )
}

fn multi_vs_single() -> Outcome {
    let clean = data("ascent.pgm");
    let multi = standard_config(15.0, EpitomeGeometry::new(20, 15, 15).unwrap());
    let single = standard_config(15.0, EpitomeGeometry::new(1, 42, 42).unwrap());
    let (mut m, mut s) = (vec![], vec![]);
    for seed in 0..5 {
        let noisy = add_gaussian_noise(&clean, NoiseModel::new(15.0, 100 + seed).unwrap());
        m.push(psnr(&clean, &denoise_image(&noisy, &multi, 15.0).unwrap().image).unwrap());
        s.push(psnr(&clean, &denoise_image(&noisy, &single, 15.0).unwrap().image).unwrap());
    }
    let (mm, sm) = (mean(&m), mean(&s));
    outcome(mm >= sm - 0.1, format!("multi {mm:.2} dB, single {sm:.2} dB, margin {:+.2} dB", mm - sm))
}

fn main() {
    let mut hard_failures = 0;
    let mut report = |id: u32, name: &str, soft: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let status = match (o.passed, soft) {
            (true, _) => "PASS",
            (false, true) => "SOFT-FAIL",
            (false, false) => "FAIL",
        };
        if !o.passed && !soft {
            hard_failures += 1;
        }
        println!("[{status}] {id}. {name}: {} ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
    };

    report(1, "operator identities", false, &mut operator_identities);
    report(2, "weighted lasso equivalence", false, &mut weighted_equivalence);
    report(3, "dictionary gradient", false, &mut gradient_check);
    report(4, "objective monotonicity", false, &mut monotonicity);
    report(5, "solver brute-force oracles", false, &mut solver_oracles);
    let mut rerun = None;
    report(6, "cameraman denoising sigma=20", false, &mut || {
        let (o, bits, cfg, noisy) = cameraman_denoising();
        rerun = Some((bits, cfg, noisy));
        o
    });
    report(7, "flat regime equivalence", false, &mut flat_regime);
    report(8, "multi vs single epitome sigma=15", true, &mut multi_vs_single);
    report(9, "determinism", false, &mut || {
        let (bits, cfg, noisy) = rerun.take().expect("criterion 6 ran");
        let again = image_bits(&denoise_image(&noisy, &cfg, 20.0).unwrap().image);
        outcome(again == bits, format!("{} bytes compared, identical {}", bits.len(), again == bits))
    });

    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
