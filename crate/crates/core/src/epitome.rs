//! Epitomes and the patch-extraction operator.
//!
//! An epitome set holds `N` small images of identical size. The operator
//! [`phi`] extracts every overlapping patch of a given shape from every
//! epitome and stores them as the columns of a dictionary. Columns are
//! ordered epitome-major, then by the row-major position of the patch's
//! top-left corner. Inside a column, patch pixels are row-major.
//!
//! [`phi_star`] maps a dictionary back to epitome space by averaging all
//! dictionary entries that land on the same epitome pixel, and
//! [`project`] (`phi ∘ phi_star`) is the orthogonal projector onto the
//! image of `phi` under the Frobenius inner product.

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};

use crate::error::{EpitomeError, Result};

/// Patch geometry in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchShape {
    height: usize,
    width: usize,
}

impl PatchShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(EpitomeError::Geometry(format!(
                "patch shape {height}x{width} must be at least 1x1"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels in a patch.
    pub fn m(&self) -> usize {
        self.height * self.width
    }
}

/// Shape of an epitome set: `count` epitomes of `height x width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpitomeGeometry {
    count: usize,
    height: usize,
    width: usize,
}

impl EpitomeGeometry {
    pub fn new(count: usize, height: usize, width: usize) -> Result<Self> {
        if count == 0 || height == 0 || width == 0 {
            return Err(EpitomeError::Geometry(format!(
                "epitome geometry {count}x{height}x{width} has an empty dimension"
            )));
        }
        Ok(Self {
            count,
            height,
            width,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels in one epitome.
    pub fn pixels_per_epitome(&self) -> usize {
        self.height * self.width
    }

    /// Total parameter count `M`.
    pub fn total_pixels(&self) -> usize {
        self.count * self.pixels_per_epitome()
    }

    /// Checks that patches of `shape` fit inside each epitome.
    pub fn check_patch(&self, shape: PatchShape) -> Result<()> {
        if shape.height > self.height || shape.width > self.width {
            return Err(EpitomeError::Geometry(format!(
                "patch {}x{} does not fit in epitome {}x{}",
                shape.height, shape.width, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Patch positions per epitome along each axis.
    fn positions(&self, shape: PatchShape) -> (usize, usize) {
        (
            self.height - shape.height + 1,
            self.width - shape.width + 1,
        )
    }

    /// Number of atoms `p` generated with patches of `shape`.
    pub fn atom_count(&self, shape: PatchShape) -> Result<usize> {
        self.check_patch(shape)?;
        let (rows, cols) = self.positions(shape);
        Ok(self.count * rows * cols)
    }
}

/// The parameter vector `E`: `N` epitomes stored row-major and concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct EpitomeSet {
    geometry: EpitomeGeometry,
    pixels: Array1<f64>,
}

impl EpitomeSet {
    pub fn new(geometry: EpitomeGeometry, pixels: Array1<f64>) -> Result<Self> {
        if pixels.len() != geometry.total_pixels() {
            return Err(EpitomeError::Shape(format!(
                "expected {} epitome pixels, got {}",
                geometry.total_pixels(),
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("epitome pixels".into()));
        }
        Ok(Self { geometry, pixels })
    }

    pub fn from_vec(geometry: EpitomeGeometry, pixels: Vec<f64>) -> Result<Self> {
        Self::new(geometry, Array1::from(pixels))
    }

    pub fn constant(geometry: EpitomeGeometry, value: f64) -> Self {
        Self {
            geometry,
            pixels: Array1::from_elem(geometry.total_pixels(), value),
        }
    }

    pub fn geometry(&self) -> EpitomeGeometry {
        self.geometry
    }

    pub fn pixels(&self) -> &Array1<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array1<f64> {
        self.pixels
    }

    /// Pixels of the `index`-th epitome, row-major.
    pub fn epitome(&self, index: usize) -> ArrayView1<'_, f64> {
        let len = self.geometry.pixels_per_epitome();
        self.pixels.slice(ndarray::s![index * len..(index + 1) * len])
    }
}

/// Where a dictionary came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Flat,
    Generated {
        geometry: EpitomeGeometry,
        shape: PatchShape,
    },
}

/// An `m x p` dictionary whose columns are atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    entries: Array2<f64>,
    provenance: Provenance,
}

impl Dictionary {
    /// A flat dictionary from an `m x p` matrix.
    pub fn flat(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("dictionary entries".into()));
        }
        Ok(Self {
            entries,
            provenance: Provenance::Flat,
        })
    }

    pub(crate) fn with_provenance(entries: Array2<f64>, provenance: Provenance) -> Self {
        Self {
            entries,
            provenance,
        }
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn p(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Per-pixel count of dictionary entries that map to each epitome pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelCountMap {
    counts: Vec<usize>,
}

impl PixelCountMap {
    pub fn new(geometry: EpitomeGeometry, shape: PatchShape) -> Result<Self> {
        geometry.check_patch(shape)?;
        let (rows, cols) = geometry.positions(shape);
        // Coverage factorizes: pixel (y, x) is hit once per patch corner
        // (r, c) with r <= y < r + h and c <= x < c + w.
        let axis = |len: usize, positions: usize, patch: usize| -> Vec<usize> {
            (0..len)
                .map(|y| {
                    let lo = (y + 1).saturating_sub(patch);
                    let hi = y.min(positions - 1);
                    hi + 1 - lo
                })
                .collect()
        };
        let row_cover = axis(geometry.height, rows, shape.height);
        let col_cover = axis(geometry.width, cols, shape.width);
        let mut counts = Vec::with_capacity(geometry.total_pixels());
        for _ in 0..geometry.count {
            for &rc in &row_cover {
                for &cc in &col_cover {
                    counts.push(rc * cc);
                }
            }
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Dictionary index `(row, col)` to epitome pixel index, in the canonical
/// column order.
#[derive(Debug, Clone)]
struct PatchLayout {
    geometry: EpitomeGeometry,
    shape: PatchShape,
    rows: usize,
    cols: usize,
}

impl PatchLayout {
    fn new(geometry: EpitomeGeometry, shape: PatchShape) -> Result<Self> {
        geometry.check_patch(shape)?;
        let (rows, cols) = geometry.positions(shape);
        Ok(Self {
            geometry,
            shape,
            rows,
            cols,
        })
    }

    fn p(&self) -> usize {
        self.geometry.count * self.rows * self.cols
    }

    /// Offset of the top-left pixel of atom `j` in `E`.
    fn corner(&self, j: usize) -> usize {
        let per = self.rows * self.cols;
        let e = j / per;
        let rem = j % per;
        let (r, c) = (rem / self.cols, rem % self.cols);
        e * self.geometry.pixels_per_epitome() + r * self.geometry.width + c
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        for j in 0..self.p() {
            let base = self.corner(j);
            for a in 0..self.shape.height {
                let row = base + a * self.geometry.width;
                for b in 0..self.shape.width {
                    f(a * self.shape.width + b, j, row + b);
                }
            }
        }
    }
}

/// Extracts all overlapping patches of every epitome into dictionary columns.
pub fn phi(epitome: &EpitomeSet, shape: PatchShape) -> Result<Dictionary> {
    let geometry = epitome.geometry;
    let layout = PatchLayout::new(geometry, shape)?;
    let mut entries = Array2::<f64>::zeros((shape.m(), layout.p()).f());
    let pixels = &epitome.pixels;
    layout.for_each(|i, j, k| entries[[i, j]] = pixels[k]);
    Ok(Dictionary::with_provenance(
        entries,
        Provenance::Generated { geometry, shape },
    ))
}

/// Averages dictionary entries back onto epitome pixels.
pub fn phi_star(
    dictionary: &Dictionary,
    geometry: EpitomeGeometry,
    shape: PatchShape,
) -> Result<EpitomeSet> {
    let pixels = phi_star_raw(dictionary.entries(), geometry, shape)?;
    EpitomeSet::new(geometry, pixels)
}

pub(crate) fn phi_star_raw(
    entries: &Array2<f64>,
    geometry: EpitomeGeometry,
    shape: PatchShape,
) -> Result<Array1<f64>> {
    let layout = PatchLayout::new(geometry, shape)?;
    if entries.nrows() != shape.m() || entries.ncols() != layout.p() {
        return Err(EpitomeError::Shape(format!(
            "dictionary is {}x{}, geometry requires {}x{}",
            entries.nrows(),
            entries.ncols(),
            shape.m(),
            layout.p()
        )));
    }
    let counts = PixelCountMap::new(geometry, shape)?;
    let mut sums = Array1::<f64>::zeros(geometry.total_pixels());
    layout.for_each(|i, j, k| sums[k] += entries[[i, j]]);
    for (s, &c) in sums.iter_mut().zip(counts.counts()) {
        *s /= c as f64;
    }
    Ok(sums)
}

/// Orthogonal projection of a dictionary onto the span of generated
/// dictionaries: `phi(phi_star(D))`.
pub fn project(
    dictionary: &Dictionary,
    geometry: EpitomeGeometry,
    shape: PatchShape,
) -> Result<Dictionary> {
    let epitome = phi_star(dictionary, geometry, shape)?;
    phi(&epitome, shape)
}

/// Euclidean norm of every column.
pub fn column_norms(dictionary: &Dictionary) -> Array1<f64> {
    matrix_column_norms(dictionary.entries())
}

pub(crate) fn matrix_column_norms(entries: &Array2<f64>) -> Array1<f64> {
    entries
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect()
}
