//! Porch detection, cropping to the active area, patch splitting and the
//! alignment fiducial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{otsu_threshold, RasterImage, Rect};

pub const DEFAULT_PATCH_SIZE: usize = 256;
pub const FIDUCIAL_CELLS: usize = 8;
pub const FIDUCIAL_CELL_PX: usize = 16;
/// Side of the fiducial block in pixels.
pub const FIDUCIAL_PX: usize = FIDUCIAL_CELLS * FIDUCIAL_CELL_PX;
pub const MIN_FIDUCIAL_PATCH: usize = 160;

/// Cell fraction at or above which a fiducial cell reads on.
const VOTE_MARGIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorchOffsets {
    pub col_boundary: usize,
    pub row_boundary: usize,
    pub col_gradient: f64,
    pub row_gradient: f64,
}

/// Largest dark-to-bright step, read cyclically.
fn strongest_step(profile: &[f64]) -> (usize, f64) {
    let n = profile.len();
    let mut best = (0, 0.0);
    for c in 0..n {
        let g = profile[c] - profile[(c + n - 1) % n];
        if g > best.1 {
            best = (c, g);
        }
    }
    best
}

/// Brute-force search for the largest step in the column and row mean profiles.
pub fn detect_porches(img: &RasterImage) -> Result<PorchOffsets> {
    let (w, h) = img.dimensions();
    if w < 8 || h < 8 {
        return Err(Error::invalid(format!("porch search needs at least 8x8, got {w}x{h}")));
    }
    let mut cols = vec![0f64; w];
    let mut rows = vec![0f64; h];
    for y in 0..h {
        for (x, &v) in img.row(y).iter().enumerate() {
            cols[x] += v as f64;
            rows[y] += v as f64;
        }
    }
    cols.iter_mut().for_each(|c| *c /= h as f64);
    rows.iter_mut().for_each(|r| *r /= w as f64);
    let (col_boundary, col_gradient) = strongest_step(&cols);
    let (row_boundary, row_gradient) = strongest_step(&rows);
    Ok(PorchOffsets {
        col_boundary,
        row_boundary,
        col_gradient,
        row_gradient,
    })
}

fn check_offsets(img: &RasterImage, offsets: &PorchOffsets) -> Result<()> {
    if offsets.col_boundary >= img.width() || offsets.row_boundary >= img.height() {
        return Err(Error::invalid(format!(
            "porch offsets ({}, {}) outside {}x{} image",
            offsets.col_boundary,
            offsets.row_boundary,
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Cuts the `active_w` x `active_h` region starting at the porch boundaries,
/// wrapping around the frame edges.
pub fn align_and_crop(
    img: &RasterImage,
    offsets: &PorchOffsets,
    active_w: usize,
    active_h: usize,
) -> Result<RasterImage> {
    align_and_crop_scaled(img, offsets, (active_w, active_h), (active_w, active_h))
}

/// Like [`align_and_crop`] but the active region spans `source` pixels in the
/// raster and is rescaled (nearest neighbour) to `target`.
pub fn align_and_crop_scaled(
    img: &RasterImage,
    offsets: &PorchOffsets,
    source: (usize, usize),
    target: (usize, usize),
) -> Result<RasterImage> {
    if source.0 * source.1 == 0 || target.0 * target.1 == 0 {
        return Err(Error::invalid("crop request has zero area"));
    }
    check_offsets(img, offsets)?;
    let region = img.crop_wrapped(offsets.col_boundary, offsets.row_boundary, source.0, source.1);
    Ok(region.resize_nearest(target.0, target.1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: RasterImage,
    /// `(row, col)` in the patch grid.
    pub grid_pos: (usize, usize),
}

impl Patch {
    pub fn size(&self) -> usize {
        self.image.width()
    }

    /// Top-left pixel of this patch in the image it was cut from.
    pub fn origin(&self) -> (usize, usize) {
        let s = self.size();
        (self.grid_pos.1 * s, self.grid_pos.0 * s)
    }
}

/// `(rows, cols)` of whole patches that fit in `width` x `height`.
pub fn patch_grid(width: usize, height: usize, patch_size: usize) -> (usize, usize) {
    if patch_size == 0 {
        return (0, 0);
    }
    (height / patch_size, width / patch_size)
}

/// Row-major grid of non-overlapping square patches; remainders are dropped.
pub fn split_patches(img: &RasterImage, patch_size: usize) -> Result<Vec<Patch>> {
    let (rows, cols) = patch_grid(img.width(), img.height(), patch_size);
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than one {patch_size}px patch",
            img.width(),
            img.height()
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let image = img.crop(Rect::new(c * patch_size, r * patch_size, patch_size, patch_size))?;
            out.push(Patch {
                image,
                grid_pos: (r, c),
            });
        }
    }
    Ok(out)
}

/// Reassembles patches into one image covering their grid.
pub fn tile_patches(patches: &[Patch]) -> Result<RasterImage> {
    let Some(first) = patches.first() else {
        return Err(Error::invalid("no patches to tile"));
    };
    let s = first.size();
    let rows = patches.iter().map(|p| p.grid_pos.0 + 1).max().unwrap_or(0);
    let cols = patches.iter().map(|p| p.grid_pos.1 + 1).max().unwrap_or(0);
    let mut out = RasterImage::new(cols * s, rows * s);
    for p in patches {
        if p.image.dimensions() != (s, s) {
            return Err(Error::invalid("patches differ in size"));
        }
        let (x, y) = p.origin();
        out.blit(&p.image, x, y);
    }
    Ok(out)
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc = 0xFFFFu16;
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { crc << 1 ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

fn is_marker(r: usize, c: usize) -> bool {
    matches!((r, c), (0, 0) | (0, 7) | (7, 0))
}

/// Data cells in row-major order, markers skipped.
fn data_cells() -> impl Iterator<Item = (usize, usize)> {
    (0..FIDUCIAL_CELLS)
        .flat_map(|r| (0..FIDUCIAL_CELLS).map(move |c| (r, c)))
        .filter(|&(r, c)| !is_marker(r, c))
}

/// Cell pattern for `payload`: markers on, 16 payload bits and 16 CRC bits
/// (MSB first), then a fixed checker padding.
pub fn fiducial_cells(payload: u16) -> [[bool; FIDUCIAL_CELLS]; FIDUCIAL_CELLS] {
    let crc = crc16_ccitt_false(&payload.to_be_bytes());
    let word = (payload as u32) << 16 | crc as u32;
    let mut cells = [[false; FIDUCIAL_CELLS]; FIDUCIAL_CELLS];
    for (i, (r, c)) in data_cells().enumerate() {
        cells[r][c] = if i < 32 { word >> (31 - i) & 1 == 1 } else { (r + c) % 2 == 1 };
    }
    for (r, c) in [(0, 0), (0, 7), (7, 0)] {
        cells[r][c] = true;
    }
    cells
}

/// Draws the fiducial into the top-left corner of `img` with the given levels.
pub fn embed_fiducial_with_levels(img: &mut RasterImage, payload: u16, on: f32, off: f32) -> Result<()> {
    if img.width() < MIN_FIDUCIAL_PATCH || img.height() < MIN_FIDUCIAL_PATCH {
        return Err(Error::invalid(format!(
            "fiducial needs at least {MIN_FIDUCIAL_PATCH}px, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let cells = fiducial_cells(payload);
    for (r, row) in cells.iter().enumerate() {
        for (c, &bit) in row.iter().enumerate() {
            let rect = Rect::new(c * FIDUCIAL_CELL_PX, r * FIDUCIAL_CELL_PX, FIDUCIAL_CELL_PX, FIDUCIAL_CELL_PX);
            img.fill_rect(rect, if bit { on } else { off });
        }
    }
    Ok(())
}

/// Embeds with white (1) for on-cells and black (0) for off-cells.
pub fn embed_fiducial(patch: &Patch, payload: u16) -> Result<Patch> {
    let mut image = patch.image.clone();
    embed_fiducial_with_levels(&mut image, payload, 1.0, 0.0)?;
    Ok(Patch {
        image,
        grid_pos: patch.grid_pos,
    })
}

/// Bright-pixel fraction of each cell of the top-left block.
fn read_cells(img: &RasterImage) -> Option<[[f64; FIDUCIAL_CELLS]; FIDUCIAL_CELLS]> {
    if img.width() < FIDUCIAL_PX || img.height() < FIDUCIAL_PX {
        return None;
    }
    let block = img.crop(Rect::new(0, 0, FIDUCIAL_PX, FIDUCIAL_PX)).ok()?;
    let t = otsu_threshold(block.pixels())?;
    let mut frac = [[0f64; FIDUCIAL_CELLS]; FIDUCIAL_CELLS];
    for (r, row) in frac.iter_mut().enumerate() {
        for (c, f) in row.iter_mut().enumerate() {
            let mut on = 0usize;
            for y in 0..FIDUCIAL_CELL_PX {
                for x in 0..FIDUCIAL_CELL_PX {
                    if block.get(c * FIDUCIAL_CELL_PX + x, r * FIDUCIAL_CELL_PX + y) > t {
                        on += 1;
                    }
                }
            }
            *f = on as f64 / (FIDUCIAL_CELL_PX * FIDUCIAL_CELL_PX) as f64;
        }
    }
    Some(frac)
}

/// Decodes the payload, trying both polarities. `None` when undecodable or
/// when markers, padding or CRC disagree.
pub fn decode_fiducial(img: &RasterImage) -> Option<u16> {
    let frac = read_cells(img)?;
    for bright_on in [true, false] {
        let bit = |r: usize, c: usize| (frac[r][c] >= VOTE_MARGIN) == bright_on;
        if !(bit(0, 0) && bit(0, 7) && bit(7, 0)) {
            continue;
        }
        let mut word = 0u32;
        let mut ok = true;
        for (i, (r, c)) in data_cells().enumerate() {
            if i < 32 {
                word = word << 1 | bit(r, c) as u32;
            } else if bit(r, c) != ((r + c) % 2 == 1) {
                ok = false;
                break;
            }
        }
        let payload = (word >> 16) as u16;
        if ok && crc16_ccitt_false(&payload.to_be_bytes()) == word as u16 {
            return Some(payload);
        }
    }
    None
}

pub fn validate_fiducial(patch: &Patch, expected_payload: u16) -> bool {
    decode_fiducial(&patch.image) == Some(expected_payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_image(w: usize, h: usize, edge: usize) -> RasterImage {
        RasterImage::from_fn(w, h, |x, _| if x >= edge { 1.0 } else { 0.0 })
    }

    fn blank_patch(size: usize) -> Patch {
        Patch {
            image: RasterImage::filled(size, size, 0.5),
            grid_pos: (0, 0),
        }
    }

    #[test]
    fn step_edge_sets_column_boundary() {
        let img = step_image(32, 16, 10);
        assert_eq!(detect_porches(&img).unwrap().col_boundary, 10);
        assert_eq!(detect_porches(&img.transpose()).unwrap().row_boundary, 10);
    }

    #[test]
    fn ties_go_to_the_first_edge() {
        // two equal steps: 0 -> 1 at 4, 1 -> 0 at 12
        let img = RasterImage::from_fn(20, 8, |x, _| if (4..12).contains(&x) { 1.0 } else { 0.0 });
        assert_eq!(detect_porches(&img).unwrap().col_boundary, 4);
    }

    #[test]
    fn tiny_image_is_rejected() {
        assert!(detect_porches(&RasterImage::new(7, 20)).is_err());
    }

    #[test]
    fn zero_offsets_full_crop_is_identity() {
        let img = RasterImage::from_fn(12, 9, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0);
        let off = PorchOffsets {
            col_boundary: 0,
            row_boundary: 0,
            col_gradient: 0.0,
            row_gradient: 0.0,
        };
        assert_eq!(align_and_crop(&img, &off, 12, 9).unwrap(), img);
        assert!(align_and_crop(&img, &off, 0, 9).is_err());
    }

    #[test]
    fn crop_wraps_around_the_edges() {
        let img = RasterImage::from_fn(10, 6, |x, y| (x + 10 * y) as f32 / 60.0);
        let off = PorchOffsets {
            col_boundary: 8,
            row_boundary: 4,
            col_gradient: 0.0,
            row_gradient: 0.0,
        };
        let out = align_and_crop(&img, &off, 4, 3).unwrap();
        assert_eq!(out.get(0, 0), img.get(8, 4));
        assert_eq!(out.get(2, 0), img.get(0, 4));
        assert_eq!(out.get(3, 2), img.get(1, 0));
    }

    #[test]
    fn upscale_duplicates_pixels() {
        let img = RasterImage::from_fn(4, 4, |x, y| ((x + y) % 2) as f32);
        let off = PorchOffsets {
            col_boundary: 0,
            row_boundary: 0,
            col_gradient: 0.0,
            row_gradient: 0.0,
        };
        let big = align_and_crop_scaled(&img, &off, (4, 4), (8, 8)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(big.get(x, y), img.get(x / 2, y / 2));
            }
        }
    }

    #[test]
    fn patch_counts() {
        assert_eq!(split_patches(&RasterImage::new(512, 512), 256).unwrap().len(), 4);
        let p = split_patches(&RasterImage::new(1900, 1200), 256).unwrap();
        assert_eq!(p.len(), 28);
        assert_eq!(p.last().unwrap().grid_pos, (3, 6));
        assert!(split_patches(&RasterImage::new(255, 255), 256).is_err());
    }

    #[test]
    fn tiling_restores_the_image() {
        let img = RasterImage::from_fn(96, 64, |x, y| ((x * 13 + y * 7) % 17) as f32 / 16.0);
        let patches = split_patches(&img, 32).unwrap();
        assert_eq!(tile_patches(&patches).unwrap(), img);
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
        assert_eq!(crc16_ccitt_false(b""), 0xFFFF);
    }

    #[test]
    fn fiducial_round_trip_both_polarities() {
        let p = embed_fiducial(&blank_patch(256), 0xBEEF).unwrap();
        assert!(validate_fiducial(&p, 0xBEEF));
        assert!(!validate_fiducial(&p, 0xBEEE));
        let inv = Patch {
            image: p.image.map(|v| 1.0 - v),
            grid_pos: (0, 0),
        };
        assert!(validate_fiducial(&inv, 0xBEEF));
    }

    #[test]
    fn fiducial_rejects_shift() {
        let p = embed_fiducial(&blank_patch(256), 0x1234).unwrap();
        let mut shifted = RasterImage::filled(256, 256, 0.5);
        let block = p.image.crop(Rect::new(0, 0, 200, 200)).unwrap();
        shifted.blit(&block, 8, 0);
        assert!(!validate_fiducial(&Patch { image: shifted, grid_pos: (0, 0) }, 0x1234));
    }

    #[test]
    fn fiducial_rejects_single_cell_flips() {
        let p = embed_fiducial(&blank_patch(160), 0xBEEF).unwrap();
        for (i, (r, c)) in data_cells().take(32).enumerate() {
            let mut img = p.image.clone();
            let rect = Rect::new(c * FIDUCIAL_CELL_PX, r * FIDUCIAL_CELL_PX, FIDUCIAL_CELL_PX, FIDUCIAL_CELL_PX);
            let cur = img.get(rect.x, rect.y);
            img.fill_rect(rect, 1.0 - cur);
            assert!(!validate_fiducial(&Patch { image: img, grid_pos: (0, 0) }, 0xBEEF), "cell {i}");
        }
    }

    #[test]
    fn small_patch_cannot_hold_fiducial() {
        assert!(embed_fiducial(&blank_patch(128), 1).is_err());
        assert!(!validate_fiducial(&blank_patch(64), 1));
    }
}
