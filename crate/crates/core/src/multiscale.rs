//! Coarse-to-fine epitome learning.
//!
//! For `k = 1..n` the image is reduced by `1 / r^(n-k)`, patches are
//! extracted, and an epitome is learned starting from the upscaled result
//! of the previous scale. The patch shape stays fixed across scales unless
//! [`MultiscaleOptions::scale_patches`] is set; the epitome size at each
//! scale is the final size reduced by the same factor, but never smaller
//! than the patch.

use crate::denoise::image_patches;
use crate::epitome::{EpitomeGeometry, EpitomeSet, PatchShape};
use crate::error::{EpitomeError, Result};
use crate::image::GrayImage;
use crate::learning::{init_epitome, learn_with_report, InitOptions, LearnConfig, LearnReport};

/// Number of scales, ratio between consecutive scales and outer
/// iterations per scale (coarsest first).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSchedule {
    n_scales: usize,
    ratio: f64,
    iterations: Vec<usize>,
}

impl ScaleSchedule {
    pub fn new(n_scales: usize, ratio: f64, iterations: Vec<usize>) -> Result<Self> {
        if n_scales == 0 {
            return Err(EpitomeError::InvalidParameter("at least one scale is required".into()));
        }
        if !(ratio > 1.0) || !ratio.is_finite() {
            return Err(EpitomeError::InvalidParameter(format!(
                "scale ratio must exceed 1, got {ratio}"
            )));
        }
        if iterations.len() != n_scales || iterations.contains(&0) {
            return Err(EpitomeError::InvalidParameter(format!(
                "need one positive iteration count per scale, got {iterations:?}"
            )));
        }
        Ok(Self {
            n_scales,
            ratio,
            iterations,
        })
    }

    /// 20 outer iterations at the coarsest scale and 5 at every finer one.
    pub fn standard(n_scales: usize, ratio: f64) -> Result<Self> {
        let iterations = (0..n_scales).map(|k| if k == 0 { 20 } else { 5 }).collect();
        Self::new(n_scales, ratio, iterations)
    }

    /// A single scale with `iterations` outer iterations.
    pub fn single(iterations: usize) -> Result<Self> {
        Self::new(1, 2.0, vec![iterations])
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    /// Image reduction factor at scale `k` (0-based, coarsest first).
    pub fn factor(&self, k: usize) -> f64 {
        self.ratio.powi(-((self.n_scales - 1 - k) as i32))
    }
}

/// Area-averaging resampling by `factor` in `(0, 1]`; output dimensions are
/// `round(dims * factor)`.
pub fn downscale_image(img: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(EpitomeError::InvalidParameter(format!(
            "downscale factor must lie in (0, 1], got {factor}"
        )));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let oh = (img.height() as f64 * factor).round() as usize;
    let ow = (img.width() as f64 * factor).round() as usize;
    if oh == 0 || ow == 0 {
        return Err(EpitomeError::Geometry(format!(
            "downscaling {}x{} by {factor} leaves an empty image",
            img.width(),
            img.height()
        )));
    }
    resample_area(img, ow, oh)
}

/// Downscales and checks that patches of `shape` still fit.
pub fn downscale_for_patches(img: &GrayImage, factor: f64, shape: PatchShape) -> Result<GrayImage> {
    let out = downscale_image(img, factor)?;
    if out.height() < shape.height() || out.width() < shape.width() {
        return Err(EpitomeError::Geometry(format!(
            "image reduced to {}x{} is smaller than the {}x{} patch",
            out.width(),
            out.height(),
            shape.width(),
            shape.height()
        )));
    }
    Ok(out)
}

/// Weights of the area-averaging map from `n_in` to `n_out` samples:
/// for each output sample, `(input index, weight)` with weights summing to 1.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

fn resample_area(img: &GrayImage, ow: usize, oh: usize) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let wx = area_weights(w, ow);
    let wy = area_weights(h, oh);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for (ox, ws) in wx.iter().enumerate() {
            tmp[y * ow + ox] = ws.iter().map(|&(x, k)| k * img.get(y, x)).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..ow {
            out[oy * ow + ox] = ws.iter().map(|&(y, k)| k * tmp[y * ow + ox]).sum();
        }
    }
    GrayImage::new(ow, oh, out)
}

fn bilinear(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, ty) = coord(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, tx) = coord(ox, w, ow);
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Bilinear upscaling of every epitome to `height x width`.
pub fn upscale_epitome_to(e: &EpitomeSet, height: usize, width: usize) -> Result<EpitomeSet> {
    let g = e.geometry();
    if height < g.height() || width < g.width() {
        return Err(EpitomeError::InvalidParameter(format!(
            "cannot upscale {}x{} epitomes to {height}x{width}",
            g.height(),
            g.width()
        )));
    }
    let target = EpitomeGeometry::new(g.count(), height, width)?;
    if target == g {
        return Ok(e.clone());
    }
    let mut pixels = Vec::with_capacity(target.total_pixels());
    for k in 0..g.count() {
        let src = e.epitome(k).to_vec();
        pixels.extend(bilinear(&src, g.height(), g.width(), height, width));
    }
    EpitomeSet::from_vec(target, pixels)
}

/// Bilinear upscaling by `factor >= 1`; dimensions become
/// `round(dims * factor)`.
pub fn upscale_epitome(e: &EpitomeSet, factor: f64) -> Result<EpitomeSet> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(EpitomeError::InvalidParameter(format!(
            "upscale factor must be at least 1, got {factor}"
        )));
    }
    let g = e.geometry();
    let h = (g.height() as f64 * factor).round() as usize;
    let w = (g.width() as f64 * factor).round() as usize;
    upscale_epitome_to(e, h, w)
}

/// Knobs of [`multiscale_learn`] beyond the schedule and learner settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleOptions {
    /// Spacing of training patch corners.
    pub stride: usize,
    /// Multiplier applied to image intensities before patch extraction.
    pub intensity_scale: f64,
    /// Shrink the patch together with the image at coarse scales.
    pub scale_patches: bool,
    /// Starting epitome for the coarsest scale; random when `None`.
    pub init: Option<EpitomeSet>,
    pub init_options: InitOptions,
}

impl Default for MultiscaleOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            intensity_scale: 1.0 / 255.0,
            scale_patches: false,
            init: None,
            init_options: InitOptions::default(),
        }
    }
}

/// Result of [`multiscale_learn`].
#[derive(Debug, Clone)]
pub struct MultiscaleResult {
    pub epitome: EpitomeSet,
    /// One learning trace per scale, coarsest first.
    pub reports: Vec<LearnReport>,
    /// Epitome geometry and patch shape used at each scale.
    pub scales: Vec<(EpitomeGeometry, PatchShape)>,
}

impl MultiscaleResult {
    /// The training log with the scale index prepended to each row.
    pub fn log_lines(&self) -> Vec<String> {
        let mut out = vec![format!("scale\t{}", crate::learning::IterationStats::TSV_HEADER)];
        for (k, r) in self.reports.iter().enumerate() {
            out.extend(r.iterations.iter().map(|s| format!("{k}\t{}", s.to_tsv())));
        }
        out
    }
}

fn reduce(len: usize, factor: f64, floor: usize) -> usize {
    ((len as f64 * factor).round() as usize).max(floor).max(1)
}

/// Epitome geometry and patch shape at each scale, coarsest first.
pub fn scale_plan(
    sched: &ScaleSchedule,
    geometry: EpitomeGeometry,
    shape: PatchShape,
    scale_patches: bool,
) -> Result<Vec<(EpitomeGeometry, PatchShape)>> {
    geometry.check_patch(shape)?;
    (0..sched.n_scales())
        .map(|k| {
            let f = sched.factor(k);
            let patch = if scale_patches {
                PatchShape::new(reduce(shape.height(), f, 1), reduce(shape.width(), f, 1))?
            } else {
                shape
            };
            let g = EpitomeGeometry::new(
                geometry.count(),
                reduce(geometry.height(), f, patch.height()),
                reduce(geometry.width(), f, patch.width()),
            )?;
            Ok((g, patch))
        })
        .collect()
}

/// Learns an epitome set on an image pyramid. `cfg.geometry` and
/// `cfg.shape` are the final (finest-scale) epitome geometry and patch
/// shape; `cfg.outer_iters` is replaced by the schedule's counts.
pub fn multiscale_learn(
    img: &GrayImage,
    sched: &ScaleSchedule,
    cfg: &LearnConfig,
    opts: &MultiscaleOptions,
) -> Result<MultiscaleResult> {
    cfg.validate()?;
    if opts.stride == 0 {
        return Err(EpitomeError::InvalidParameter("stride must be at least 1".into()));
    }
    let plan = scale_plan(sched, cfg.geometry, cfg.shape, opts.scale_patches)?;
    let mut reports = Vec::with_capacity(plan.len());
    let mut current: Option<EpitomeSet> = None;

    for (k, &(geometry, shape)) in plan.iter().enumerate() {
        let reduced = downscale_for_patches(img, sched.factor(k), shape)?;
        let scaled = reduced.map(|v| v * opts.intensity_scale);
        let mut x = image_patches(&scaled, shape, opts.stride)?;
        if cfg.center_patches {
            x = x.centered();
        }
        let start = match current.take() {
            Some(prev) => {
                let up = upscale_epitome_to(&prev, geometry.height(), geometry.width())?;
                if up.geometry() != geometry {
                    return Err(EpitomeError::Geometry("upscaled epitome has the wrong size".into()));
                }
                up
            }
            None => match &opts.init {
                Some(e) => {
                    let g = e.geometry();
                    if g.count() != geometry.count() {
                        return Err(EpitomeError::Geometry(format!(
                            "initial epitome set has {} epitomes, expected {}",
                            g.count(),
                            geometry.count()
                        )));
                    }
                    if g == geometry {
                        e.clone()
                    } else if g.height() <= geometry.height() && g.width() <= geometry.width() {
                        upscale_epitome_to(e, geometry.height(), geometry.width())?
                    } else {
                        return Err(EpitomeError::Geometry(
                            "initial epitome is larger than the coarsest scale".into(),
                        ));
                    }
                }
                None => {
                    let mut init_opts = opts.init_options;
                    init_opts.range = x.value_range();
                    init_epitome(geometry, shape, cfg.seed, init_opts)?
                }
            },
        };
        let mut scale_cfg = cfg.clone();
        scale_cfg.geometry = geometry;
        scale_cfg.shape = shape;
        scale_cfg.outer_iters = sched.iterations()[k];
        let (learned, report) = learn_with_report(&x, &start, &scale_cfg)?;
        reports.push(report);
        current = Some(learned);
    }
    Ok(MultiscaleResult {
        epitome: current.expect("at least one scale"),
        reports,
        scales: plan,
    })
}
