//! Labeled reference samples, augmentation, and manifest-backed corpora.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{decode_fiducial, split_patches, DEFAULT_PATCH_SIZE, FIDUCIAL_PX};
use crate::error::{Error, Result};
use crate::font::{in_alphabet, render_glyph, FontId, ALPHABET};
use crate::image::{RasterImage, Rect};
use crate::intercept::{compose_reference, intercept, FrameStyle, InterceptConfig};

/// Attempts per character before it is dropped from a sample.
pub const PLACEMENT_RETRIES: usize = 100;
/// Glyphs keep this distance from patch borders.
pub const PATCH_MARGIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharBox {
    pub label: char,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CharBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub font_id: FontId,
    /// Point size of each placed character, in placement order.
    pub sizes_pt: Vec<u32>,
    pub fg_level: f32,
    pub bg_level: f32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: RasterImage,
    pub chars: Vec<CharBox>,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub n_chars: usize,
    pub size_pt_range: (u32, u32),
    pub fonts: Vec<FontId>,
    pub fg_range: (f32, f32),
    pub bg_range: (f32, f32),
    /// Extra areas glyphs keep the usual spacing from, in sample coordinates.
    pub keep_out: Vec<Rect>,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            n_chars: 20,
            size_pt_range: (11, 70),
            fonts: FontId::ALL.to_vec(),
            fg_range: (0.7, 1.0),
            bg_range: (0.0, 0.3),
            keep_out: Vec::new(),
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_pt_range;
        if !(11 <= lo && lo <= hi && hi <= 70) {
            return Err(Error::invalid(format!("point sizes ({lo}, {hi}) must lie within [11, 70]")));
        }
        if self.fonts.is_empty() {
            return Err(Error::invalid("no fonts selected"));
        }
        for (name, (a, b)) in [("fg", self.fg_range), ("bg", self.bg_range)] {
            if !(0.0 <= a && a <= b && b <= 1.0) {
                return Err(Error::invalid(format!("{name} range ({a}, {b}) must be ordered in [0, 1]")));
            }
        }
        let overlap = self.fg_range.0 <= self.bg_range.1 && self.bg_range.0 <= self.fg_range.1;
        if overlap {
            return Err(Error::invalid("fg and bg ranges overlap"));
        }
        Ok(())
    }
}

/// Grid of square patches a sample is laid out on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn width(&self) -> usize {
        self.cols * self.patch_size
    }

    pub fn height(&self) -> usize {
        self.rows * self.patch_size
    }
}

/// Pixel height of a glyph cell at `size_pt`, at 96 dpi.
pub fn points_to_px(size_pt: u32) -> usize {
    (size_pt as f64 * 96.0 / 72.0).round() as usize
}

fn too_close(a: &Rect, b: &Rect) -> bool {
    let margin = a.h.max(b.h).div_ceil(2) + 1;
    a.inflate(margin).intersects(b)
}

/// Renders up to `spec.n_chars` glyphs on a uniform background covering `grid`.
///
/// Every glyph lies inside a single patch, away from patch borders and from
/// the fiducial block of patch (0, 0).
pub fn generate_sample(spec: &SampleSpec, grid: PatchGrid, seed: u64) -> Result<LabeledSample> {
    spec.validate()?;
    if grid.rows == 0 || grid.cols == 0 || grid.patch_size <= 2 * PATCH_MARGIN {
        return Err(Error::invalid("patch grid is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let font = *spec.fonts.choose(&mut rng).expect("fonts validated");
    let fg = rng.gen_range(spec.fg_range.0..=spec.fg_range.1);
    let bg = rng.gen_range(spec.bg_range.0..=spec.bg_range.1);
    let mut image = RasterImage::filled(grid.width(), grid.height(), bg);
    let labels: Vec<char> = ALPHABET.chars().collect();
    let keep_out = Rect::new(0, 0, FIDUCIAL_PX + PATCH_MARGIN, FIDUCIAL_PX + PATCH_MARGIN);

    let mut chars = Vec::new();
    let mut sizes_pt = Vec::new();
    for _ in 0..spec.n_chars {
        let label = labels[rng.gen_range(0..labels.len())];
        let size_pt = rng.gen_range(spec.size_pt_range.0..=spec.size_pt_range.1);
        let glyph = render_glyph(font, label, points_to_px(size_pt)).expect("alphabet glyph");
        let ink = glyph.ink_box;
        let room = grid.patch_size - 2 * PATCH_MARGIN;
        if ink.w > room || ink.h > room {
            continue;
        }
        for _ in 0..PLACEMENT_RETRIES {
            let pr = rng.gen_range(0..grid.rows);
            let pc = rng.gen_range(0..grid.cols);
            let x = pc * grid.patch_size + PATCH_MARGIN + rng.gen_range(0..=room - ink.w);
            let y = pr * grid.patch_size + PATCH_MARGIN + rng.gen_range(0..=room - ink.h);
            let rect = Rect::new(x, y, ink.w, ink.h);
            if rect.intersects(&keep_out)
                || spec.keep_out.iter().any(|k| too_close(k, &rect))
                || chars.iter().any(|c: &CharBox| too_close(&c.rect(), &rect)) {
                continue;
            }
            for gy in 0..ink.h {
                for gx in 0..ink.w {
                    if glyph.is_ink(ink.x + gx, ink.y + gy) {
                        image.set(x + gx, y + gy, fg);
                    }
                }
            }
            chars.push(CharBox {
                label,
                x,
                y,
                w: ink.w,
                h: ink.h,
            });
            sizes_pt.push(size_pt);
            break;
        }
    }
    if spec.n_chars > 0 && chars.is_empty() {
        return Err(Error::Generation(format!(
            "no character could be placed in {} attempts each",
            PLACEMENT_RETRIES
        )));
    }
    if chars.len() < spec.n_chars {
        log::debug!("sample {seed}: placed {} of {} characters", chars.len(), spec.n_chars);
    }
    Ok(LabeledSample {
        image,
        chars,
        meta: SampleMeta {
            font_id: font,
            sizes_pt,
            fg_level: fg,
            bg_level: bg,
            seed,
        },
    })
}

/// Writes `text` left to right starting at `(x, y)`, one character gap apart,
/// and appends the boxes to `sample`. Fails if the line does not fit or
/// collides with existing characters.
pub fn plant_text(sample: &mut LabeledSample, text: &str, size_pt: u32, x: usize, y: usize) -> Result<()> {
    let font = sample.meta.font_id;
    let px = points_to_px(size_pt);
    let gap = (px / 4).max(2);
    let mut cursor = x;
    let mut placed = Vec::new();
    for label in text.chars() {
        if !in_alphabet(label) {
            return Err(Error::invalid(format!("{label:?} is outside the alphabet")));
        }
        let glyph = render_glyph(font, label, px).expect("alphabet glyph");
        let ink = glyph.ink_box;
        // align on the cell so ascenders and descenders keep their offsets
        let rect = Rect::new(cursor, y + ink.y, ink.w, ink.h);
        if rect.right() > sample.image.width() || rect.bottom() > sample.image.height() {
            return Err(Error::invalid(format!("planted text {text:?} does not fit")));
        }
        placed.push((glyph, rect, label));
        cursor = rect.right() + gap;
    }
    for (_, rect, _) in &placed {
        if sample.chars.iter().any(|c| too_close(&c.rect(), rect)) {
            return Err(Error::invalid(format!("planted text {text:?} collides with the sample")));
        }
    }
    let fg = sample.meta.fg_level;
    for (glyph, rect, label) in placed {
        let ink = glyph.ink_box;
        for gy in 0..ink.h {
            for gx in 0..ink.w {
                if glyph.is_ink(ink.x + gx, ink.y + gy) {
                    sample.image.set(rect.x + gx, rect.y + gy, fg);
                }
            }
        }
        sample.chars.push(CharBox {
            label,
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
        });
        sample.meta.sizes_pt.push(size_pt);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Augmentation {
    GaussianBlur { sigma: f64 },
    MedianBlur { k: usize },
    SaltPepper { p: f64 },
    Invert,
    ContrastNormalize,
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Augmentation::GaussianBlur { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            Augmentation::MedianBlur { k } if k == 0 || k % 2 == 0 => {
                Err(Error::invalid(format!("median window must be odd, got {k}")))
            }
            Augmentation::SaltPepper { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::invalid(format!("salt and pepper probability must lie in [0, 1], got {p}")))
            }
            _ => Ok(()),
        }
    }
}

/// Separable Gaussian blur, kernel truncated at `ceil(3 sigma)`, edges clamped.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<RasterImage> {
    Augmentation::GaussianBlur { sigma }.validate()?;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = img.dimensions();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let pass = |src: &RasterImage, horizontal: bool| {
        RasterImage::from_fn(w, h, |x, y| {
            let mut acc = 0f64;
            for (k, i) in kernel.iter().zip(-radius..=radius) {
                let v = if horizontal {
                    src.get(clamp(x as isize + i, w), y)
                } else {
                    src.get(x, clamp(y as isize + i, h))
                };
                acc += k * v as f64;
            }
            acc as f32
        })
    };
    Ok(pass(&pass(img, true), false))
}

/// `k` x `k` median filter with clamped edges.
pub fn median_blur(img: &RasterImage, k: usize) -> Result<RasterImage> {
    Augmentation::MedianBlur { k }.validate()?;
    let r = (k / 2) as isize;
    let (w, h) = img.dimensions();
    let mut window = Vec::with_capacity(k * k);
    Ok(RasterImage::from_fn(w, h, |x, y| {
        window.clear();
        for dy in -r..=r {
            let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            for dx in -r..=r {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                window.push(img.get(sx, sy));
            }
        }
        let mid = window.len() / 2;
        *window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
    }))
}

pub fn augment(img: &RasterImage, op: &Augmentation, seed: u64) -> Result<RasterImage> {
    op.validate()?;
    match *op {
        Augmentation::GaussianBlur { sigma } => gaussian_blur(img, sigma),
        Augmentation::MedianBlur { k } => median_blur(img, k),
        Augmentation::SaltPepper { p } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels = img
                .pixels()
                .iter()
                .map(|&v| {
                    let u: f64 = rng.gen();
                    if u < p / 2.0 {
                        0.0
                    } else if u < p {
                        1.0
                    } else {
                        v
                    }
                })
                .collect();
            RasterImage::from_pixels(img.width(), img.height(), pixels)
        }
        Augmentation::Invert => Ok(img.map(|v| 1.0 - v)),
        Augmentation::ContrastNormalize => Ok(img.normalized()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_samples: usize,
    #[serde(default)]
    pub sample: SampleSpec,
    pub intercept: InterceptConfig,
    pub attenuations_db: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Each inner list is applied in order to one copy of every frame; the
    /// empty list keeps the frame as captured.
    #[serde(default = "no_augmentation")]
    pub augmentations: Vec<Vec<Augmentation>>,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn no_augmentation() -> Vec<Vec<Augmentation>> {
    vec![Vec::new()]
}

fn default_patch_size() -> usize {
    DEFAULT_PATCH_SIZE
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.sample.validate()?;
        self.intercept.validate()?;
        if self.attenuations_db.is_empty() {
            return Err(Error::invalid("at least one attenuation level is required"));
        }
        for &a in &self.attenuations_db {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::invalid(format!("attenuation must be >= 0 dB, got {a}")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.augmentations.is_empty() {
            return Err(Error::invalid("augmentation list is empty; use [[]] for none"));
        }
        self.augmentations.iter().flatten().try_for_each(Augmentation::validate)?;
        if self.patch_size < crate::align::MIN_FIDUCIAL_PATCH {
            return Err(Error::invalid(format!(
                "patch size {} cannot hold the fiducial",
                self.patch_size
            )));
        }
        let grid = self.grid();
        if grid.rows == 0 || grid.cols == 0 {
            return Err(Error::invalid("active area is smaller than one patch"));
        }
        Ok(())
    }

    pub fn grid(&self) -> PatchGrid {
        let t = &self.intercept.timing;
        PatchGrid {
            rows: t.v_active / self.patch_size,
            cols: t.h_active / self.patch_size,
            patch_size: self.patch_size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// 80/10/10 by seed.
    pub fn for_seed(seed: u64) -> Split {
        match splitmix(seed) % 10 {
            0 => Split::Test,
            1 => Split::Validation,
            _ => Split::Train,
        }
    }
}

fn splitmix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-frame seed derived from the corpus seed and an index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix(base ^ splitmix(index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub sample_path: String,
    pub reference_path: String,
    pub label_path: String,
    pub row: usize,
    pub col: usize,
    pub n_labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame: usize,
    pub sample_seed: u64,
    pub attenuation_db: f64,
    pub augmentations: Vec<Augmentation>,
    pub seed: u64,
    pub split: Split,
    pub patches: Vec<PatchEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub alphabet: String,
    pub patch_size: usize,
    pub frames_generated: usize,
    pub frames_skipped: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::persist(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.entries.iter().map(|e| e.patches.len()).sum()
    }
}

pub fn write_labels(boxes: &[CharBox]) -> String {
    boxes
        .iter()
        .map(|b| serde_json::to_string(b).expect("char box serialises") + "\n")
        .collect()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<CharBox>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::persist(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

/// Boxes of `chars` inside the patch at `(row, col)`, in patch coordinates.
pub fn labels_in_patch(chars: &[CharBox], row: usize, col: usize, patch_size: usize) -> Vec<CharBox> {
    let area = Rect::new(col * patch_size, row * patch_size, patch_size, patch_size);
    chars
        .iter()
        .filter(|c| area.contains(c.x, c.y) && c.x + c.w <= area.right() && c.y + c.h <= area.bottom())
        .map(|c| CharBox {
            x: c.x - area.x,
            y: c.y - area.y,
            ..*c
        })
        .collect()
}

/// Fiducial payload for a frame seed.
pub fn frame_payload(seed: u64) -> u16 {
    (splitmix(seed) >> 48) as u16
}

struct Job {
    frame: usize,
    sample_index: usize,
    attenuation_db: f64,
    augmentations: Vec<Augmentation>,
}

struct FrameOutput {
    entry: ManifestEntry,
    files: Vec<(String, Vec<u8>)>,
}

fn process_frame(cfg: &CorpusConfig, job: &Job) -> Result<Option<FrameOutput>> {
    let sample_seed = derive_seed(cfg.seed, job.sample_index as u64);
    let frame_seed = derive_seed(sample_seed, job.frame as u64 + 1);
    let grid = cfg.grid();
    let sample = generate_sample(&cfg.sample, grid, sample_seed)?;
    let payload = frame_payload(sample_seed);
    let style = FrameStyle {
        fg: sample.meta.fg_level,
        bg: sample.meta.bg_level,
        payload,
    };
    let reference = compose_reference(&sample.image, &cfg.intercept.timing, style)?;
    let captured = intercept(&reference, &cfg.intercept, job.attenuation_db, cfg.noise_sigma, frame_seed)?;
    if decode_fiducial(&captured.recovered) != Some(payload) {
        log::info!(
            "frame {} ({} dB): fiducial did not validate, skipped",
            job.frame,
            job.attenuation_db
        );
        return Ok(None);
    }
    let mut image = captured.recovered;
    for (i, op) in job.augmentations.iter().enumerate() {
        image = augment(&image, op, derive_seed(frame_seed, i as u64))?;
    }
    let patches = split_patches(&image, cfg.patch_size)?;
    let ref_patches = split_patches(&reference, cfg.patch_size)?;
    let dir = format!("frames/f{:05}", job.frame);
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for (p, rp) in patches.iter().zip(&ref_patches) {
        let (r, c) = p.grid_pos;
        let stem = format!("{dir}/p{r}_{c}");
        let labels = labels_in_patch(&sample.chars, r, c, cfg.patch_size);
        let entry = PatchEntry {
            sample_path: format!("{stem}.pgm"),
            reference_path: format!("{stem}.ref.pgm"),
            label_path: format!("{stem}.labels.jsonl"),
            row: r,
            col: c,
            n_labels: labels.len(),
        };
        files.push((entry.sample_path.clone(), p.image.to_pgm()));
        files.push((entry.reference_path.clone(), rp.image.to_pgm()));
        files.push((entry.label_path.clone(), write_labels(&labels).into_bytes()));
        entries.push(entry);
    }
    Ok(Some(FrameOutput {
        entry: ManifestEntry {
            frame: job.frame,
            sample_seed,
            attenuation_db: job.attenuation_db,
            augmentations: job.augmentations.clone(),
            seed: frame_seed,
            split: Split::for_seed(sample_seed),
            patches: entries,
        },
        files,
    }))
}

fn write_all(out_dir: &Path, files: &[(String, Vec<u8>)], written: &mut Vec<PathBuf>) -> Result<()> {
    for (rel, bytes) in files {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::persist(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::persist(&path, e))?;
        written.push(path);
    }
    Ok(())
}

/// Generates, intercepts and persists every (sample, attenuation,
/// augmentation) combination. Attenuation levels are interleaved round-robin
/// so every level holds the same number of frames before skips.
pub fn build_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let mut jobs = Vec::new();
    for s in 0..cfg.n_samples {
        for aug in &cfg.augmentations {
            for &att in &cfg.attenuations_db {
                jobs.push(Job {
                    frame: jobs.len(),
                    sample_index: s,
                    attenuation_db: att,
                    augmentations: aug.clone(),
                });
            }
        }
    }
    let outputs: Vec<Option<FrameOutput>> = jobs
        .par_iter()
        .map(|job| process_frame(cfg, job))
        .collect::<Result<_>>()?;

    let frames_generated = outputs.len();
    let frames_skipped = outputs.iter().filter(|o| o.is_none()).count();
    let outputs: Vec<FrameOutput> = outputs.into_iter().flatten().collect();
    let manifest = CorpusManifest {
        alphabet: ALPHABET.to_string(),
        patch_size: cfg.patch_size,
        frames_generated,
        frames_skipped,
        entries: outputs.iter().map(|o| o.entry.clone()).collect(),
    };

    let mut written = Vec::new();
    let result = fs::create_dir_all(out_dir)
        .map_err(|e| Error::persist(out_dir, e))
        .and_then(|_| {
            for o in &outputs {
                write_all(out_dir, &o.files, &mut written)?;
            }
            let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
            write_all(out_dir, &[(MANIFEST_FILE.to_string(), json.into_bytes())], &mut written)
        });
    if let Err(e) = result {
        for path in written.iter().rev() {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::VideoTiming;

    fn grid() -> PatchGrid {
        PatchGrid {
            rows: 1,
            cols: 2,
            patch_size: 256,
        }
    }

    fn scan_ink(img: &RasterImage, rect: Rect, bg: f32) -> Option<Rect> {
        let mut b: Option<Rect> = None;
        for y in rect.y..rect.bottom() {
            for x in rect.x..rect.right() {
                if img.get(x, y) != bg {
                    let p = Rect::new(x, y, 1, 1);
                    b = Some(b.map_or(p, |r| r.union(&p)));
                }
            }
        }
        b
    }

    #[test]
    fn empty_sample_is_uniform() {
        let spec = SampleSpec {
            n_chars: 0,
            ..SampleSpec::default()
        };
        let s = generate_sample(&spec, grid(), 3).unwrap();
        assert!(s.chars.is_empty());
        let (lo, hi) = s.image.min_max();
        assert_eq!(lo, hi);
    }

    #[test]
    fn single_char_box_bounds_its_ink() {
        let spec = SampleSpec {
            n_chars: 1,
            ..SampleSpec::default()
        };
        let s = generate_sample(&spec, grid(), 11).unwrap();
        assert_eq!(s.chars.len(), 1);
        let whole = Rect::new(0, 0, s.image.width(), s.image.height());
        assert_eq!(scan_ink(&s.image, whole, s.meta.bg_level), Some(s.chars[0].rect()));
    }

    #[test]
    fn seeds_change_layouts() {
        let spec = SampleSpec::default();
        let a = generate_sample(&spec, grid(), 1).unwrap();
        let b = generate_sample(&spec, grid(), 2).unwrap();
        assert_ne!(a.image, b.image);
        assert_eq!(a, generate_sample(&spec, grid(), 1).unwrap());
    }

    #[test]
    fn boxes_do_not_overlap_and_avoid_the_fiducial() {
        let spec = SampleSpec {
            n_chars: 40,
            ..SampleSpec::default()
        };
        let s = generate_sample(&spec, grid(), 5).unwrap();
        let keep_out = Rect::new(0, 0, FIDUCIAL_PX, FIDUCIAL_PX);
        for (i, a) in s.chars.iter().enumerate() {
            assert!(!a.rect().intersects(&keep_out));
            for b in &s.chars[i + 1..] {
                assert!(!a.rect().intersects(&b.rect()));
            }
        }
    }

    #[test]
    fn oversized_request_is_rejected() {
        let spec = SampleSpec {
            size_pt_range: (8, 20),
            ..SampleSpec::default()
        };
        assert!(generate_sample(&spec, grid(), 0).is_err());
    }

    #[test]
    fn impossible_density_fails() {
        let spec = SampleSpec {
            n_chars: 3,
            size_pt_range: (70, 70),
            ..SampleSpec::default()
        };
        let tiny = PatchGrid {
            rows: 1,
            cols: 1,
            patch_size: 160,
        };
        assert!(matches!(generate_sample(&spec, tiny, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn invert_is_an_involution() {
        let img = RasterImage::from_fn(9, 7, |x, y| ((x * y) % 5) as f32 / 4.0);
        let twice = augment(&augment(&img, &Augmentation::Invert, 0).unwrap(), &Augmentation::Invert, 0).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn contrast_normalize_stretches() {
        let img = RasterImage::from_fn(4, 1, |x, _| [0.2, 0.5, 0.7, 0.3][x]);
        let out = augment(&img, &Augmentation::ContrastNormalize, 0).unwrap();
        assert_eq!(out.min_max(), (0.0, 1.0));
    }

    #[test]
    fn median_removes_impulse() {
        let mut img = RasterImage::filled(9, 9, 0.4);
        img.set(4, 4, 1.0);
        assert_eq!(median_blur(&img, 3).unwrap(), RasterImage::filled(9, 9, 0.4));
    }

    #[test]
    fn gaussian_preserves_constants() {
        let img = RasterImage::filled(12, 10, 0.25);
        let out = gaussian_blur(&img, 1.0).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn augmentation_parameters_are_checked() {
        let img = RasterImage::new(4, 4);
        assert!(augment(&img, &Augmentation::MedianBlur { k: 4 }, 0).is_err());
        assert!(augment(&img, &Augmentation::GaussianBlur { sigma: 0.0 }, 0).is_err());
        assert!(augment(&img, &Augmentation::SaltPepper { p: 1.5 }, 0).is_err());
    }

    #[test]
    fn salt_and_pepper_rate() {
        let img = RasterImage::filled(200, 100, 0.5);
        let out = augment(&img, &Augmentation::SaltPepper { p: 0.2 }, 9).unwrap();
        let zeros = out.pixels().iter().filter(|&&v| v == 0.0).count() as f64 / 20000.0;
        let ones = out.pixels().iter().filter(|&&v| v == 1.0).count() as f64 / 20000.0;
        assert!((zeros - 0.1).abs() < 0.01 && (ones - 0.1).abs() < 0.01);
    }

    #[test]
    fn split_is_roughly_80_10_10() {
        let mut counts = [0usize; 3];
        for s in 0..10_000u64 {
            counts[Split::for_seed(s) as usize] += 1;
        }
        assert!((7800..8200).contains(&counts[0]));
        assert!((900..1100).contains(&counts[1]));
        assert!((900..1100).contains(&counts[2]));
    }

    #[test]
    fn labels_round_trip_as_json_lines() {
        let boxes = vec![
            CharBox { label: 'A', x: 1, y: 2, w: 3, h: 4 },
            CharBox { label: 'z', x: 5, y: 6, w: 7, h: 8 },
        ];
        let text = write_labels(&boxes);
        assert_eq!(text.lines().next().unwrap(), r#"{"label":"A","x":1,"y":2,"w":3,"h":4}"#);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        fs::write(&path, text).unwrap();
        assert_eq!(read_labels(&path).unwrap(), boxes);
    }

    #[test]
    fn planted_text_reads_left_to_right() {
        let spec = SampleSpec {
            n_chars: 0,
            ..SampleSpec::default()
        };
        let mut s = generate_sample(&spec, grid(), 4).unwrap();
        plant_text(&mut s, "SECRET", 24, 280, 40).unwrap();
        let labels: String = s.chars.iter().map(|c| c.label).collect();
        assert_eq!(labels, "SECRET");
        assert!(s.chars.windows(2).all(|w| w[0].x + w[0].w < w[1].x));
        assert!(plant_text(&mut s, "SECRET", 24, 280, 40).is_err());
    }

    #[test]
    fn small_corpus_counts() {
        let timing = VideoTiming {
            h_active: 320,
            h_front_porch: 8,
            h_sync: 24,
            h_back_porch: 16,
            v_active: 200,
            v_front_porch: 3,
            v_sync: 2,
            v_back_porch: 6,
            pixel_clock_hz: 8.0e6,
        };
        let cfg = CorpusConfig {
            n_samples: 2,
            sample: SampleSpec {
                n_chars: 5,
                ..SampleSpec::default()
            },
            intercept: InterceptConfig::new(timing),
            attenuations_db: vec![0.0, 8.0],
            noise_sigma: 0.0,
            augmentations: vec![vec![], vec![Augmentation::Invert]],
            patch_size: 160,
            seed: 7,
        };
        let dir = tempfile::tempdir().unwrap();
        let m = build_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(m.frames_generated, 8);
        assert_eq!(m.frames_skipped, 0);
        assert_eq!(m.entries.len(), 8);
        assert_eq!(m.n_patches(), 16);
        for e in &m.entries {
            for p in &e.patches {
                assert!(dir.path().join(&p.sample_path).is_file());
                assert!(dir.path().join(&p.label_path).is_file());
            }
        }
        assert_eq!(CorpusManifest::load(dir.path().join(MANIFEST_FILE)).unwrap(), m);
    }
}
