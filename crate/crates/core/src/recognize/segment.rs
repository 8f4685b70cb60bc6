use serde::{Deserialize, Serialize};

use crate::image::{otsu_threshold, RasterImage, Rect};

/// A candidate glyph: bounding box plus its thresholded ink pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub bbox: Rect,
    /// Ink pixel count.
    pub area: usize,
    /// Row-major ink mask over `bbox`.
    pub mask: Vec<bool>,
}

impl Region {
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.bbox.w + x]
    }

    pub fn mask_image(&self) -> RasterImage {
        RasterImage::from_fn(self.bbox.w, self.bbox.h, |x, y| self.is_ink(x, y) as u8 as f32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub min_area: usize,
    pub max_area: usize,
    /// Drop components touching the image border.
    pub drop_border: bool,
    /// Components stacked with a vertical gap up to this fraction of the
    /// taller one's height, and overlapping in x, are joined (dots of i, j).
    pub merge_gap: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            min_area: 16,
            max_area: 20_000,
            drop_border: true,
            merge_gap: 0.5,
        }
    }
}

/// Ink mask: Otsu split, minority class is ink, ties count the darker class.
pub fn ink_mask(img: &RasterImage) -> Option<Vec<bool>> {
    let t = otsu_threshold(img.pixels())?;
    let bright = img.pixels().iter().filter(|&&v| v > t).count();
    let dark = img.pixels().len() - bright;
    let ink_bright = bright < dark;
    Some(img.pixels().iter().map(|&v| (v > t) == ink_bright).collect())
}

struct Component {
    bbox: Rect,
    pixels: Vec<(usize, usize)>,
}

fn components(mask: &[bool], w: usize, h: usize) -> Vec<Component> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(Component {
            bbox: Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
            pixels,
        });
    }
    out
}

fn should_merge(a: &Rect, b: &Rect, merge_gap: f64) -> bool {
    let x_overlap = a.x < b.right() && b.x < a.right();
    if !x_overlap {
        return false;
    }
    let gap = if a.bottom() <= b.y {
        b.y - a.bottom()
    } else if b.bottom() <= a.y {
        a.y - b.bottom()
    } else {
        0
    };
    gap as f64 <= merge_gap * a.h.max(b.h) as f64
}

/// Connected-component glyph proposals with area in `[min_area, max_area]`,
/// sorted by top edge then left edge.
pub fn segment_glyphs(img: &RasterImage, min_area: usize, max_area: usize) -> Vec<Region> {
    segment_glyphs_with(
        img,
        &SegmentParams {
            min_area,
            max_area,
            drop_border: false,
            ..SegmentParams::default()
        },
        None,
    )
}

/// Segmentation with full parameters; pixels inside `exclude` are ignored.
pub fn segment_glyphs_with(img: &RasterImage, params: &SegmentParams, exclude: Option<Rect>) -> Vec<Region> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let Some(mut mask) = ink_mask(img) else {
        return Vec::new();
    };
    if let Some(r) = exclude {
        for y in r.y..r.bottom().min(h) {
            for x in r.x..r.right().min(w) {
                mask[y * w + x] = false;
            }
        }
    }
    let mut comps = components(&mask, w, h);
    if params.drop_border {
        comps.retain(|c| c.bbox.x > 0 && c.bbox.y > 0 && c.bbox.right() < w && c.bbox.bottom() < h);
    }
    // components are tiny in number per patch; quadratic merging is fine
    loop {
        let mut merged = false;
        'outer: for i in 0..comps.len() {
            for j in i + 1..comps.len() {
                if should_merge(&comps[i].bbox, &comps[j].bbox, params.merge_gap) {
                    let b = comps.swap_remove(j);
                    comps[i].bbox = comps[i].bbox.union(&b.bbox);
                    comps[i].pixels.extend(b.pixels);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let mut regions: Vec<Region> = comps
        .into_iter()
        .filter(|c| (params.min_area..=params.max_area).contains(&c.pixels.len()))
        .map(|c| {
            let b = c.bbox;
            let mut m = vec![false; b.w * b.h];
            for &(x, y) in &c.pixels {
                m[(y - b.y) * b.w + (x - b.x)] = true;
            }
            Region {
                bbox: b,
                area: c.pixels.len(),
                mask: m,
            }
        })
        .collect();
    regions.sort_by_key(|r| (r.bbox.y, r.bbox.x));
    regions
}
