//! Value-semantic image arrays and file I/O.
//!
//! [`Image`] is the universal pixel container used across the crate: an
//! H×W×3 array of `f64` intensities. True images live in `[0, 1]`; the solver
//! also reuses the same container for degradation fields, which may span
//! `[-1, 1]`. All arithmetic is done in `f64`; quantization happens only at
//! the file boundary.
//!
//! Supported formats are 8-bit RGB PNG and binary PPM (P6). PPM is the
//! bit-exact reference format used by the tests.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// H×W×3 array of `f64` values, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from raw data; `data.len()` must equal `h * w * 3`
    /// and every element must be finite.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({}x{}x3)", height * width * 3, height, width),
                actual: format!("{} values", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "image data contains non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x3", self.height, self.width)
    }

    /// Elementwise map into a new image.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination with another image of the same shape.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        ensure_same_shape(self, other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn clamp_in_place(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Rec. 601 luma of a pixel: 0.299 R + 0.587 G + 0.114 B.
    #[inline]
    pub fn luminance(&self, y: usize, x: usize) -> f64 {
        0.299 * self.get(y, x, 0) + 0.587 * self.get(y, x, 1) + 0.114 * self.get(y, x, 2)
    }

    pub fn mean_luminance(&self) -> f64 {
        let mut acc = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                acc += self.luminance(y, x);
            }
        }
        acc / (self.height * self.width) as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        ensure_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn ensure_same_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            expected: a.shape_string(),
            actual: b.shape_string(),
        });
    }
    Ok(())
}

/// Patch-grid of pooled features; `rows = ceil(H / patch)`,
/// `cols = ceil(W / patch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize) -> Self {
        Self {
            rows,
            cols,
            dim,
            data: vec![0.0; rows * cols * dim],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, d: usize) -> f64 {
        self.data[(r * self.cols + c) * self.dim + d]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, d: usize, v: f64) {
        self.data[(r * self.cols + c) * self.dim + d] = v;
    }

    /// Feature vector of one cell.
    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let base = (r * self.cols + c) * self.dim;
        &self.data[base..base + self.dim]
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-cell channel means over `patch`×`patch` tiles. Edge tiles are averaged
/// over their true (smaller) pixel count rather than zero-padded, so a
/// constant image pools to constant features at every grid position.
pub fn downsample_avg(img: &Image, patch: usize) -> Result<FeatureGrid> {
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be >= 1".into()));
    }
    let rows = img.height().div_ceil(patch);
    let cols = img.width().div_ceil(patch);
    let mut grid = FeatureGrid::new(rows, cols, 3);
    for r in 0..rows {
        let y0 = r * patch;
        let y1 = (y0 + patch).min(img.height());
        for c in 0..cols {
            let x0 = c * patch;
            let x1 = (x0 + patch).min(img.width());
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for ch in 0..3 {
                let mut acc = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc += img.get(y, x, ch);
                    }
                }
                grid.set(r, c, ch, acc / count);
            }
        }
    }
    Ok(grid)
}

/// 8-bit quantization used on save: round(v * 255) half-up, then clamp.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    let q = (v * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

/// Loads a PNG or binary PPM (P6) image, scaling 8-bit values to `[0, 1]`.
/// The format is detected from the file's magic bytes, not its extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: not a PNG or binary PPM (P6) file",
            path.display()
        )))
    }
}

/// Saves as binary PPM when the extension is `.ppm`, PNG otherwise.
/// The file is written to a temporary sibling and renamed into place.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => encode_ppm(img),
        _ => encode_png(img)?,
    };
    write_atomic(path, &bytes)
}

/// Write-then-rename so concurrent readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let map_err = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension(match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{ext}.tmp"),
        None => "tmp".to_string(),
    });
    let mut file = fs::File::create(&tmp).map_err(map_err)?;
    file.write_all(bytes).map_err(map_err)?;
    file.sync_all().map_err(map_err)?;
    drop(file);
    fs::rename(&tmp, path).map_err(map_err)
}

fn to_rgb8(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| quantize_u8(v)).collect()
}

fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
    let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(height, width, data)
}

fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(to_rgb8(img));
    out
}

fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = ppm_read_int(bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PPM maxval {maxval} (only 8-bit supported)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension);
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let need = width * height * 3;
    if pos > bytes.len() || bytes.len() - pos < need {
        return Err(Error::UnsupportedFormat("truncated PPM pixel data".into()));
    }
    from_rgb8(height, width, &bytes[pos..pos + need])
}

/// Reads one PPM header integer, skipping whitespace and `#` comments.
fn ppm_read_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::UnsupportedFormat("truncated PPM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat("bad PPM header integer".into()))
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &to_rgb8(img),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::UnsupportedFormat(format!("PNG encode failed: {e}")))?;
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let dynamic = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(format!("PNG decode failed: {e}")))?;
    let rgb = dynamic.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension);
    }
    from_rgb8(height, width, rgb.as_raw())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn single_red_pixel_ppm() {
        let dir = tmpdir();
        let path = dir.path().join("px.ppm");
        fs::write(&path, b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_half_saves_as_128() {
        let img = Image::constant(2, 2, 0.5);
        let bytes = encode_ppm(&img);
        assert!(bytes[bytes.len() - 12..].iter().all(|&b| b == 128));
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(1.7), 255);
        assert_eq!(quantize_u8(-0.2), 0);
    }

    #[test]
    fn round_trip_error_within_quantization_bound() {
        let dir = tmpdir();
        for ext in ["ppm", "png"] {
            let path = dir.path().join(format!("rt.{ext}"));
            let vals: Vec<f64> = (0..4 * 5 * 3).map(|i| (i as f64 * 0.019) % 1.0).collect();
            let img = Image::new(4, 5, vals).unwrap();
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            let err = back.max_abs_diff(&img.clamped(0.0, 1.0)).unwrap();
            assert!(err <= 1.0 / 255.0, "{ext}: round-trip error {err}");
        }
    }

    #[test]
    fn save_load_save_is_byte_stable_for_ppm() {
        let dir = tmpdir();
        let a = dir.path().join("a.ppm");
        let b = dir.path().join("b.ppm");
        let vals: Vec<f64> = (0..6 * 7 * 3).map(|i| (i as f64 * 0.037) % 1.0).collect();
        let img = Image::new(6, 7, vals).unwrap();
        save_image(&img, &a).unwrap();
        save_image(&load_image(&a).unwrap(), &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn truncated_header_is_unsupported_format() {
        let dir = tmpdir();
        let path = dir.path().join("trunc.ppm");
        fs::write(&path, b"P6\n4 ").unwrap();
        match load_image(&path) {
            Err(Error::UnsupportedFormat(_)) => {}
            other => panic!("expected UnsupportedFormat, got {other:?}"),
        }
    }

    #[test]
    fn truncated_pixels_is_unsupported_format() {
        let dir = tmpdir();
        let path = dir.path().join("short.ppm");
        fs::write(&path, b"P6\n2 2\n255\n\x01\x02").unwrap();
        assert!(matches!(
            load_image(&path),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn missing_file_is_read_error() {
        assert!(matches!(
            load_image("/nonexistent/nowhere.ppm"),
            Err(Error::Read { .. })
        ));
    }

    #[test]
    fn zero_dimension_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("zero.ppm");
        fs::write(&path, b"P6\n0 3\n255\n").unwrap();
        assert!(matches!(load_image(&path), Err(Error::ZeroDimension)));
        assert!(matches!(
            Image::new(0, 3, vec![]),
            Err(Error::ZeroDimension)
        ));
    }

    #[test]
    fn unwritable_directory_is_write_error() {
        let img = Image::constant(2, 2, 0.5);
        let err = save_image(&img, "/nonexistent-dir/out.png").unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn downsample_constant_patch_equals_image() {
        let img = Image::constant(16, 16, 0.3);
        let grid = downsample_avg(&img, 16).unwrap();
        assert_eq!((grid.rows, grid.cols), (1, 1));
        for c in 0..3 {
            assert!((grid.get(0, 0, c) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_two_by_two_mean() {
        // Channel 0 holds {0, 0, 1, 1}: the pooled cell is their mean.
        let mut img = Image::zeros(2, 2);
        img.set(1, 0, 0, 1.0);
        img.set(1, 1, 0, 1.0);
        let grid = downsample_avg(&img, 2).unwrap();
        assert!((grid.get(0, 0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn downsample_edge_truncation_shape() {
        let img = Image::zeros(17, 17);
        let grid = downsample_avg(&img, 16).unwrap();
        assert_eq!((grid.rows, grid.cols), (2, 2));
    }

    #[test]
    fn downsample_zero_patch_rejected() {
        let img = Image::zeros(4, 4);
        assert!(matches!(
            downsample_avg(&img, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn downsample_preserves_global_mean_when_divisible() {
        let vals: Vec<f64> = (0..8 * 8 * 3).map(|i| (i as f64 * 0.041) % 1.0).collect();
        let img = Image::new(8, 8, vals).unwrap();
        let grid = downsample_avg(&img, 4).unwrap();
        let grid_mean: f64 = (0..grid.cells())
            .flat_map(|i| (0..3).map(move |c| (i, c)))
            .map(|(i, c)| grid.get(i / grid.cols, i % grid.cols, c))
            .sum::<f64>()
            / (grid.cells() * 3) as f64;
        assert!((grid_mean - img.mean()).abs() < 1e-12);
    }
}
