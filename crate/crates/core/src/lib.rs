//! Epitome learning for sparse image representation.
//!
//! An epitome is a small image whose overlapping patches are the atoms of a
//! dictionary. This crate learns epitomes (single or several) from image
//! patches by alternating weighted-l1 sparse coding with accelerated
//! projected-gradient updates, and uses the learned dictionaries for
//! patch-based denoising.
//!
//! Module map:
//! - [`epitome`]: epitome sets, the patch-extraction operator and its
//!   averaging inverse, the projector onto generated dictionaries.
//! - [`solvers`]: lasso, weighted lasso and orthogonal matching pursuit.
//! - [`learning`]: the alternating learner and its building blocks.
//! - [`multiscale`]: coarse-to-fine learning on an image pyramid.
//! - [`denoise`]: noise synthesis, PSNR, patch extraction/averaging and the
//!   full denoising pipeline.
//! - [`image`], [`model`], [`manifest`]: file formats and run records.
//! - [`check`]: operator and solver self-checks.

pub mod check;
pub mod denoise;
pub mod epitome;
pub mod error;
pub mod image;
pub mod learning;
pub mod manifest;
pub mod model;
pub mod multiscale;
pub mod solvers;

pub use epitome::{
    column_norms, phi, phi_star, project, Dictionary, EpitomeGeometry, EpitomeSet, PatchShape,
    PixelCountMap, Provenance,
};
pub use error::{EpitomeError, Result};
pub use image::GrayImage;

use rayon::prelude::*;

/// Order-preserving parallel map over `0..n`.
pub(crate) fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}
