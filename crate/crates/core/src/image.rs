//! Grayscale raster images in `[0, 1]` and their binary PGM (P5) encoding.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale image with every pixel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

/// Axis-aligned pixel rectangle, top-left origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    /// Grows the rectangle by `margin` on every side, saturating at zero.
    pub fn inflate(&self, margin: usize) -> Rect {
        let x = self.x.saturating_sub(margin);
        let y = self.y.saturating_sub(margin);
        Rect {
            x,
            y,
            w: self.right() + margin - x,
            h: self.bottom() + margin - y,
        }
    }

    pub fn union(&self, other: &Rect) -> Rect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Rect {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let ix = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let iy = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        let inter = (ix * iy) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    /// Wraps an existing pixel buffer, checking size and value range.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from arbitrary finite values, clamping into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        RasterImage {
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

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.pixels[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f32] {
        &mut self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn fill_rect(&mut self, rect: Rect, value: f32) {
        for y in rect.y..rect.bottom().min(self.height) {
            for x in rect.x..rect.right().min(self.width) {
                self.set(x, y, value);
            }
        }
    }

    /// Copies `src` into `self` with its top-left corner at `(x0, y0)`; out-of-bounds pixels are dropped.
    pub fn blit(&mut self, src: &RasterImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            if y0 + y >= self.height {
                break;
            }
            for x in 0..src.width {
                if x0 + x >= self.width {
                    break;
                }
                self.set(x0 + x, y0 + y, src.get(x, y));
            }
        }
    }

    /// Sub-image; the rectangle must lie inside the image.
    pub fn crop(&self, rect: Rect) -> Result<RasterImage> {
        if rect.right() > self.width || rect.bottom() > self.height {
            return Err(Error::invalid(format!(
                "crop {rect:?} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        Ok(RasterImage::from_fn(rect.w, rect.h, |x, y| self.get(rect.x + x, rect.y + y)))
    }

    /// Crop that wraps around the right and bottom edges.
    pub fn crop_wrapped(&self, x0: usize, y0: usize, w: usize, h: usize) -> RasterImage {
        RasterImage::from_fn(w, h, |x, y| {
            self.get((x0 + x) % self.width, (y0 + y) % self.height)
        })
    }

    /// Nearest-neighbour resampling to `width` x `height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> RasterImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        RasterImage::from_fn(width, height, |x, y| {
            let sx = (x * self.width / width).min(self.width - 1);
            let sy = (y * self.height / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }

    pub fn transpose(&self) -> RasterImage {
        RasterImage::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Min-max stretch to `[0, 1]`; a constant image maps to all zeros.
    pub fn normalized(&self) -> RasterImage {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return RasterImage::new(self.width, self.height);
        }
        let span = hi - lo;
        self.map(|v| (v - lo) / span)
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Encodes as binary PGM, maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let magic = pgm_token(bytes, &mut cursor)?;
        if magic != b"P5" {
            return Err(pgm_error("magic is not P5"));
        }
        let width = pgm_number(bytes, &mut cursor)?;
        let height = pgm_number(bytes, &mut cursor)?;
        let maxval = pgm_number(bytes, &mut cursor)?;
        if maxval == 0 || maxval > 255 {
            return Err(pgm_error(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
            return Err(pgm_error("missing header terminator"));
        }
        cursor += 1;
        let data = &bytes[cursor..];
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| pgm_error("dimensions overflow"))?;
        if data.len() < expected {
            return Err(pgm_error(format!(
                "raster truncated: {} of {expected} bytes",
                data.len()
            )));
        }
        let scale = maxval as f32;
        let pixels = data[..expected]
            .iter()
            .map(|&b| (b as f32 / scale).min(1.0))
            .collect();
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::persist(path, e))
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::persist(path, e))?;
        Self::from_pgm(&bytes)
    }

    /// Rounds every pixel onto the 8-bit grid used by PGM storage.
    pub fn quantized(&self) -> RasterImage {
        self.map(|v| quantize(v) as f32 / 255.0)
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn pgm_error(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "PGM",
        reason: reason.into(),
    }
}

fn pgm_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        return Err(pgm_error("unexpected end of header"));
    }
    Ok(&bytes[start..*cursor])
}

fn pgm_number(bytes: &[u8], cursor: &mut usize) -> Result<usize> {
    let tok = pgm_token(bytes, cursor)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| pgm_error(format!("bad header number {:?}", String::from_utf8_lossy(tok))))
}

/// Otsu threshold over the exact sample values.
///
/// Returns the largest value of the lower class, so `v > t` selects the upper
/// class. `None` when all values are equal. Works on sorted distinct values
/// rather than a fixed histogram, which makes the split invariant under any
/// increasing affine map of the input.
pub fn otsu_threshold(values: &[f32]) -> Option<f32> {
    let mut sorted: Vec<f32> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 2 {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().map(|&v| v as f64).sum();

    let mut best: Option<(f64, f32)> = None;
    let mut count = 0f64;
    let mut sum = 0f64;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            count += 1.0;
            sum += v as f64;
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let w0 = count / n;
        let w1 = 1.0 - w0;
        let mu0 = sum / count;
        let mu1 = (total - sum) / (n - count);
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.map_or(true, |(b, _)| between > b) {
            best = Some((between, v));
        }
    }
    best.map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_on_8bit_grid() {
        let img = RasterImage::from_fn(7, 3, |x, y| ((x * 31 + y * 7) % 256) as f32 / 255.0);
        let back = RasterImage::from_pgm(&img.to_pgm()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = RasterImage::from_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn pgm_rejects_truncated_and_wrong_magic() {
        assert!(RasterImage::from_pgm(b"P5\n4 4\n255\n\x00").is_err());
        assert!(RasterImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(RasterImage::from_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn otsu_splits_bimodal() {
        let vals = [0.1, 0.1, 0.12, 0.9, 0.88, 0.91];
        let t = otsu_threshold(&vals).unwrap();
        assert!(t >= 0.12 && t < 0.88);
        assert_eq!(otsu_threshold(&[0.5; 10]), None);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let img = RasterImage::filled(3, 3, 0.4);
        assert!(img.normalized().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rect_iou_and_inflate() {
        let a = Rect::new(2, 2, 4, 4);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.inflate(3), Rect::new(0, 0, 9, 9));
        assert!(!a.intersects(&Rect::new(6, 2, 1, 1)));
    }
}
