use std::collections::HashMap;

use crate::corpus::gaussian_blur;
use crate::font::{render_glyph, FontId, ALPHABET};
use crate::image::RasterImage;

use super::segment::Region;
use super::Detection;

pub const TEMPLATE_HEIGHT: usize = 32;
pub const DEFAULT_ACCEPT: f64 = 0.6;
/// Gaussian sigma applied to templates before correlating.
const SMOOTHING: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct Template {
    pub label: char,
    pub font: FontId,
    /// Tight ink crop, ink = 1.
    pub image: RasterImage,
    smoothed: RasterImage,
}

impl Template {
    pub fn new(label: char, font: FontId, image: RasterImage) -> Self {
        let smoothed = smooth(&image);
        Template {
            label,
            font,
            image,
            smoothed,
        }
    }
}

fn smooth(img: &RasterImage) -> RasterImage {
    gaussian_blur(img, SMOOTHING).expect("positive sigma")
}

/// Immutable set of glyph templates, one per (label, font).
#[derive(Clone, Debug)]
pub struct TemplateBank {
    templates: Vec<Template>,
}

impl TemplateBank {
    /// Every alphabet glyph of `fonts`, rendered in a `cell_height` px cell.
    pub fn from_fonts(fonts: &[FontId], cell_height: usize) -> Self {
        let mut templates = Vec::new();
        for &font in fonts {
            for label in ALPHABET.chars() {
                let glyph = render_glyph(font, label, cell_height).expect("alphabet glyph");
                templates.push(Template::new(label, font, glyph.ink_image()));
            }
        }
        TemplateBank { templates }
    }

    pub fn standard() -> Self {
        Self::from_fonts(&FontId::ALL, TEMPLATE_HEIGHT)
    }

    pub fn from_templates(templates: Vec<Template>) -> Self {
        TemplateBank { templates }
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Crop of the region, stretched to `[0, 1]` with ink bright.
/// `None` when the crop carries no contrast.
fn normalized_crop(img: &RasterImage, region: &Region) -> Option<RasterImage> {
    let b = region.bbox;
    let crop = img.crop(b).ok()?.normalized();
    let (lo, hi) = crop.min_max();
    if !(hi > lo) {
        return None;
    }
    let (mut ink, mut n_ink, mut rest, mut n_rest) = (0f64, 0usize, 0f64, 0usize);
    for y in 0..b.h {
        for x in 0..b.w {
            let v = crop.get(x, y) as f64;
            if region.is_ink(x, y) {
                ink += v;
                n_ink += 1;
            } else {
                rest += v;
                n_rest += 1;
            }
        }
    }
    let dark_ink = n_ink > 0 && n_rest > 0 && ink / (n_ink as f64) < rest / (n_rest as f64);
    Some(if dark_ink { crop.map(|v| 1.0 - v) } else { crop })
}

/// Normalised cross-correlation of two equal-length buffers; 0 when either is flat.
pub fn ncc(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Centres `img` on a canvas `width` wide, padded with its own mean so the
/// padding adds variance to the other image only.
fn on_canvas(img: &RasterImage, width: usize) -> Vec<f32> {
    let off = (width - img.width()) / 2;
    let mut out = vec![img.mean() as f32; width * img.height()];
    for y in 0..img.height() {
        out[y * width + off..y * width + off + img.width()].copy_from_slice(img.row(y));
    }
    out
}

/// Crop rescaled to `height` keeping its aspect.
fn fit_height(crop: &RasterImage, height: usize) -> RasterImage {
    let w = ((crop.width() * height) as f64 / crop.height() as f64).round().max(1.0) as usize;
    crop.resize_nearest(w, height)
}

fn fitted_score(fitted: &RasterImage, template: &Template) -> f64 {
    let width = fitted.width().max(template.smoothed.width());
    ncc(&on_canvas(fitted, width), &on_canvas(&template.smoothed, width))
}

/// Score of a polarity-normalised crop against one template.
pub fn template_score(crop: &RasterImage, template: &Template) -> f64 {
    fitted_score(&fit_height(crop, template.image.height()), template)
}

/// Best-matching template label for `region`; below `accept` confidence the
/// detection is marked rejected.
pub fn classify_region(img: &RasterImage, region: &Region, bank: &TemplateBank, accept: f64) -> Detection {
    let b = region.bbox;
    let rejected = |label| Detection {
        label,
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
        confidence: 0.0,
        rejected: true,
    };
    if bank.is_empty() || region.area == 0 {
        return rejected('?');
    }
    let Some(crop) = normalized_crop(img, region) else {
        return rejected('?');
    };
    let mut fitted: HashMap<usize, RasterImage> = HashMap::new();
    let mut best: Option<(f64, char)> = None;
    for t in bank.templates() {
        let th = t.image.height();
        let f = fitted.entry(th).or_insert_with(|| fit_height(&crop, th));
        let s = fitted_score(f, t);
        best = match best {
            Some((bs, bl)) if s < bs || (s == bs && t.label >= bl) => Some((bs, bl)),
            _ => Some((s, t.label)),
        };
    }
    let (score, label) = best.expect("bank is non-empty");
    let confidence = (score + 1.0) / 2.0;
    Detection {
        label,
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
        confidence,
        rejected: confidence < accept,
    }
}
