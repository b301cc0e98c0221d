//! Grayscale images, PGM/PNG I/O and epitome rendering.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::epitome::EpitomeSet;
use crate::error::{EpitomeError, Result};

/// A grayscale raster with real-valued, row-major intensities nominally in
/// `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(EpitomeError::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(EpitomeError::NonFinite("image pixels".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixels clipped to `[0, 255]` and rounded to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }
}

/// Reads a binary PGM (`P5`, maxval 255) or an 8-bit grayscale PNG,
/// chosen by file extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    if has_extension(path, "png") {
        read_png(path)
    } else {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        decode_pgm(&bytes)
    }
}

/// Writes the image clipped and rounded to 8 bits; PNG for `.png` paths,
/// binary PGM otherwise.
pub fn write_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if has_extension(path, "png") {
        write_png(img, path)
    } else {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&encode_pgm(img))?;
        w.flush()?;
        Ok(())
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(EpitomeError::Format(format!(
            "expected binary PGM magic P5, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_number(next_token(bytes, &mut pos)?, "width")?;
    let height = parse_number(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_number(next_token(bytes, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(EpitomeError::Format(format!(
            "unsupported PGM maxval {maxval}; only 8-bit (255) images are accepted"
        )));
    }
    if width == 0 || height == 0 {
        return Err(EpitomeError::Format("PGM has an empty dimension".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(EpitomeError::Format("malformed PGM header".into()));
    }
    pos += 1;
    let len = width * height;
    let raster = bytes.get(pos..pos + len).ok_or_else(|| {
        EpitomeError::Format(format!(
            "PGM raster truncated: expected {len} bytes, found {}",
            bytes.len().saturating_sub(pos)
        ))
    })?;
    GrayImage::from_u8(width, height, raster)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(EpitomeError::Format("unexpected end of PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            EpitomeError::Format(format!(
                "invalid PGM {what}: {:?}",
                String::from_utf8_lossy(token)
            ))
        })
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| EpitomeError::Format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| EpitomeError::Format(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(EpitomeError::Format(format!(
            "unsupported PNG: {:?} at {:?}; only 8-bit grayscale is accepted",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks(info.line_size) {
        pixels.extend(row[..w].iter().map(|&b| f64::from(b)));
    }
    GrayImage::new(w, h, pixels)
}

fn write_png(img: &GrayImage, path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(w, img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| EpitomeError::Format(format!("png: {e}")))?;
    writer
        .write_image_data(&img.to_u8())
        .map_err(|e| EpitomeError::Format(format!("png: {e}")))?;
    Ok(())
}

/// Renders an epitome set for display: the global min/max are mapped to
/// 0/255 and the epitomes are tiled row-major on a near-square grid with
/// one-pixel black separators. A constant set renders as mid-gray (128).
pub fn render_epitome(e: &EpitomeSet) -> GrayImage {
    let g = e.geometry();
    let n = g.count();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (eh, ew) = (g.height(), g.width());
    let width = cols * ew + (cols - 1);
    let height = rows * eh + (rows - 1);

    let (lo, hi) = e
        .pixels()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let level = |v: f64| {
        if span > 0.0 {
            (v - lo) / span * 255.0
        } else {
            128.0
        }
    };

    let mut out = GrayImage::filled(width, height, 0.0);
    for k in 0..n {
        let (tr, tc) = (k / cols, k % cols);
        let (oy, ox) = (tr * (eh + 1), tc * (ew + 1));
        let tile = e.epitome(k);
        for y in 0..eh {
            for x in 0..ew {
                out.pixels[(oy + y) * width + ox + x] = level(tile[y * ew + x]);
            }
        }
    }
    out
}
