use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use epitome::check::run_self_checks;
use epitome::denoise::{
    add_gaussian_noise, denoise_image, denoise_with_epitome, psnr as psnr_db,
    DenoiseConfig, NoiseModel, ReportRow,
};
use epitome::image::{read_image, render_epitome, write_image, GrayImage};
use epitome::learning::default_learning_lambda;
use epitome::manifest::{manifest_path, RunManifest};
use epitome::model::{sidecar_path, EpitomeModel};
use epitome::multiscale::{multiscale_learn, MultiscaleOptions, ScaleSchedule};
use epitome::{EpitomeGeometry, PatchShape};

use crate::{DenoiseArgs, Failure, LearnArgs, NoiseArgs, TrainArgs};

fn load(path: &Path) -> Result<GrayImage, Failure> {
    read_image(path).map_err(Failure::at(path))
}

fn save(img: &GrayImage, path: &Path) -> Result<(), Failure> {
    write_image(img, path).map_err(Failure::at(path))
}

fn finish(manifest: &mut RunManifest, outputs: &[&Path], primary: &Path) -> Result<(), Failure> {
    for out in outputs {
        manifest.add_output(out).map_err(Failure::at(out))?;
    }
    let path = manifest_path(primary);
    manifest.write(&path).map_err(Failure::at(&path))
}

fn schedule(l: &LearnArgs) -> Result<ScaleSchedule, Failure> {
    Ok(match &l.iters {
        Some(iters) => ScaleSchedule::new(l.scales, l.ratio, iters.clone())?,
        None => ScaleSchedule::standard(l.scales, l.ratio)?,
    })
}

fn denoise_config(l: &LearnArgs, sigma: f64) -> Result<DenoiseConfig, Failure> {
    let geometry = EpitomeGeometry::new(l.epitomes, l.epi_size[0], l.epi_size[1])?;
    let shape = PatchShape::square(l.patch)?;
    let mut cfg = DenoiseConfig::with_geometry(sigma, geometry, shape, schedule(l)?)?;
    if let Some(lambda) = l.lambda {
        cfg.learn.lambda = lambda;
    }
    cfg.learn.fista_iters = l.fista_iters;
    cfg.learn.seed = l.seed;
    cfg.train_stride = l.stride;
    cfg.validate()?;
    Ok(cfg)
}

fn record_learning(m: &mut RunManifest, l: &LearnArgs, cfg: &DenoiseConfig) {
    let iters: Vec<String> = cfg.schedule.iterations().iter().map(usize::to_string).collect();
    m.set("epitomes", l.epitomes)
        .set("epi_height", l.epi_size[0])
        .set("epi_width", l.epi_size[1])
        .set("patch", l.patch)
        .set("lambda", cfg.learn.lambda)
        .set("scales", l.scales)
        .set("ratio", l.ratio)
        .set("iters", iters.join(","))
        .set("fista_iters", l.fista_iters)
        .set("stride", l.stride)
        .set("seed", l.seed);
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let img = load(&a.image)?;
    let mut cfg = denoise_config(&a.learn, a.sigma.unwrap_or(20.0))?;
    if a.sigma.is_none() && a.learn.lambda.is_none() {
        cfg.learn.lambda = default_learning_lambda(cfg.learn.shape.m());
    }
    let opts = MultiscaleOptions {
        stride: cfg.train_stride,
        ..MultiscaleOptions::default()
    };
    let result = multiscale_learn(&img, &cfg.schedule, &cfg.learn, &opts)?;
    let final_objective = result
        .reports
        .last()
        .and_then(|r| r.iterations.last())
        .map(|s| s.objective)
        .unwrap_or(f64::NAN);
    let model = EpitomeModel::new(result.epitome.clone(), cfg.learn.shape)?
        .with_meta("lambda", cfg.learn.lambda)
        .with_meta("seed", a.learn.seed)
        .with_meta("intensity_scale", 1.0 / 255.0)
        .with_meta("final_objective", format!("{final_objective:.12e}"));
    model.save(&a.out).map_err(Failure::at(&a.out))?;

    let mut manifest = RunManifest::new("train");
    record_learning(&mut manifest, &a.learn, &cfg);
    if let Some(sigma) = a.sigma {
        manifest.set("sigma", sigma);
    }
    manifest.add_input(&a.image).map_err(Failure::at(&a.image))?;
    let meta = sidecar_path(&a.out);
    let mut outputs = vec![a.out.as_path(), meta.as_path()];
    if let Some(log) = &a.log {
        fs::write(log, result.log_lines().join("\n") + "\n").map_err(|e| Failure::at(log)(e.into()))?;
        outputs.push(log);
    }
    finish(&mut manifest, &outputs, &a.out)?;
    println!("objective\t{final_objective:.6e}");
    Ok(())
}

pub fn denoise(a: DenoiseArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let input = load(&a.image)?;
    let (noisy, clean) = match (a.noise_seed, &a.clean) {
        (Some(seed), _) => (add_gaussian_noise(&input, NoiseModel::new(a.sigma, seed)?), Some(input)),
        (None, Some(c)) => (input, Some(load(c)?)),
        (None, None) => (input, None),
    };
    let mut manifest = RunManifest::new("denoise");
    manifest.set("sigma", a.sigma).set("C", a.gain);
    if let Some(seed) = a.noise_seed {
        manifest.set("noise_seed", seed);
    }

    let (image, lambda) = if let Some(model_path) = &a.model {
        let model = EpitomeModel::load(model_path).map_err(Failure::at(model_path))?;
        let g = model.epitome.geometry();
        let mut l = a.learn.clone();
        l.epitomes = g.count();
        l.epi_size = vec![g.height(), g.width()];
        if model.patch.height() != model.patch.width() {
            return Err(Failure::new("geometry", "models with non-square patches are not supported"));
        }
        l.patch = model.patch.height();
        let mut cfg = denoise_config(&l, a.sigma)?;
        cfg.gain = a.gain;
        manifest.add_input(model_path).map_err(Failure::at(model_path))?;
        manifest.set("patch", l.patch);
        let lambda = model
            .metadata
            .get("lambda")
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN);
        (denoise_with_epitome(&noisy, &model.epitome, &cfg, a.sigma)?.image, lambda)
    } else {
        let mut cfg = denoise_config(&a.learn, a.sigma)?;
        cfg.gain = a.gain;
        record_learning(&mut manifest, &a.learn, &cfg);
        (denoise_image(&noisy, &cfg, a.sigma)?.image, cfg.learn.lambda)
    };
    manifest.add_input(&a.image).map_err(Failure::at(&a.image))?;
    if let Some(c) = &a.clean {
        manifest.add_input(c).map_err(Failure::at(c))?;
    }
    save(&image, &a.out)?;

    let (pn, pd) = match &clean {
        Some(c) => (psnr_db(c, &noisy)?, psnr_db(c, &image)?),
        None => (f64::NAN, f64::NAN),
    };
    let row = ReportRow {
        image: a.image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sigma: a.sigma,
        lambda,
        gain: a.gain,
        psnr_noisy: pn,
        psnr_denoised: pd,
        seconds: start.elapsed().as_secs_f64(),
    };
    let mut outputs = vec![a.out.as_path()];
    if let Some(report) = &a.report {
        append_report(report, &row).map_err(|e| Failure::at(report)(e.into()))?;
        outputs.push(report);
    }
    finish(&mut manifest, &outputs, &a.out)?;
    println!("{}", ReportRow::TSV_HEADER);
    println!("{}", row.to_tsv());
    Ok(())
}

fn append_report(path: &Path, row: &ReportRow) -> std::io::Result<()> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", ReportRow::TSV_HEADER)?;
    }
    writeln!(f, "{}", row.to_tsv())
}

pub fn noise(a: NoiseArgs) -> Result<(), Failure> {
    let img = load(&a.image)?;
    let noisy = add_gaussian_noise(&img, NoiseModel::new(a.sigma, a.seed)?);
    save(&noisy, &a.out)?;
    let mut manifest = RunManifest::new("noise");
    manifest.set("sigma", a.sigma).set("seed", a.seed);
    manifest.add_input(&a.image).map_err(Failure::at(&a.image))?;
    finish(&mut manifest, &[&a.out], &a.out)
}

pub fn psnr(a: &Path, b: &Path) -> Result<(), Failure> {
    let v = psnr_db(&load(a)?, &load(b)?)?;
    if v.is_infinite() {
        println!("inf");
    } else {
        println!("{v:.4}");
    }
    Ok(())
}

pub fn render(model: &Path, out: &Path) -> Result<(), Failure> {
    let m = EpitomeModel::load(model).map_err(Failure::at(model))?;
    save(&render_epitome(&m.epitome), out)?;
    let mut manifest = RunManifest::new("render");
    manifest.add_input(model).map_err(Failure::at(model))?;
    finish(&mut manifest, &[out], out)
}

pub fn check(seed: u64) -> Result<(), Failure> {
    let results = run_self_checks(seed)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status}\t{}\t{:.3e}\t{:.0e}", r.name, r.worst, r.tolerance);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::new("check", format!("{failed} self-checks failed")));
    }
    Ok(())
}
