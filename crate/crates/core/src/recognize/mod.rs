//! Character retrieval: segmentation, template classification, text lines,
//! approximate keyword matching and the alarm decision.

mod alarm;
mod bitap;
mod classify;
mod lines;
mod segment;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RasterImage, Rect};

pub use alarm::{evaluate_alarm, AlarmMatch, AlarmPolicy, AlarmResult};
pub use bitap::{bitap_match, BitapMatch, MAX_PATTERN_LEN};
pub use classify::{classify_region, ncc, template_score, Template, TemplateBank, DEFAULT_ACCEPT, TEMPLATE_HEIGHT};
pub use lines::{detect_lines, line_texts, HoughParams, TextLine};
pub use segment::{ink_mask, segment_glyphs, segment_glyphs_with, Region, SegmentParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: char,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub confidence: f64,
    #[serde(skip)]
    pub rejected: bool,
}

impl Detection {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognizerConfig {
    pub segment: SegmentParams,
    /// Minimum confidence for an accepted detection.
    pub accept: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            segment: SegmentParams::default(),
            accept: DEFAULT_ACCEPT,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment.min_area >= self.segment.max_area {
            return Err(Error::invalid("min_area must be below max_area"));
        }
        if !(0.0..=1.0).contains(&self.accept) {
            return Err(Error::invalid("accept threshold must lie in [0, 1]"));
        }
        if !(self.segment.merge_gap >= 0.0) {
            return Err(Error::invalid("merge_gap must be >= 0"));
        }
        Ok(())
    }
}

/// Segmentation plus template classification over one image.
#[derive(Clone, Debug)]
pub struct Recognizer {
    pub bank: TemplateBank,
    pub config: RecognizerConfig,
}

impl Recognizer {
    pub fn new(config: RecognizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Recognizer {
            bank: TemplateBank::standard(),
            config,
        })
    }

    /// All classified regions, rejected ones included, in segmentation order.
    pub fn classify_all(&self, img: &RasterImage, exclude: Option<Rect>) -> Vec<Detection> {
        segment_glyphs_with(img, &self.config.segment, exclude)
            .iter()
            .map(|r| classify_region(img, r, &self.bank, self.config.accept))
            .collect()
    }

    /// Accepted detections only.
    pub fn recognize(&self, img: &RasterImage, exclude: Option<Rect>) -> Vec<Detection> {
        let mut d = self.classify_all(img, exclude);
        d.retain(|d| !d.rejected);
        d
    }
}

pub fn detections_to_jsonl(detections: &[Detection]) -> String {
    detections
        .iter()
        .map(|d| serde_json::to_string(d).expect("detection serialises") + "\n")
        .collect()
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
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
