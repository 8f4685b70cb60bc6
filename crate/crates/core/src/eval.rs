//! Character-retrieval scoring and benchmark reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::FIDUCIAL_PX;
use crate::corpus::{read_labels, CorpusManifest};
use crate::denoise::{denoise, DenoiseMethod};
use crate::error::{Error, Result};
use crate::image::{RasterImage, Rect};
use crate::recognize::{Recognizer, RecognizerConfig};

pub const CSV_HEADER: &str = "denoiser,ocr,f_score,precision,recall,retrieval_ratio,n_patches,wall_time_s";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> MatchCounts {
        iter.fold(MatchCounts::default(), Add::add)
    }
}

/// Position-free multiset matching: `tp = sum over labels of min(ref, det)`.
pub fn match_characters(reference: &[char], detected: &[char]) -> MatchCounts {
    let mut counts: HashMap<char, (usize, usize)> = HashMap::new();
    for &c in reference {
        counts.entry(c).or_default().0 += 1;
    }
    for &c in detected {
        counts.entry(c).or_default().1 += 1;
    }
    let tp = counts.values().map(|&(r, d)| r.min(d)).sum();
    MatchCounts {
        tp,
        fp: detected.len() - tp,
        fn_: reference.len() - tp,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub retrieval_ratio: f64,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if both_empty {
        1.0
    } else {
        0.0
    }
}

pub fn compute_metrics(c: MatchCounts) -> Metrics {
    let empty = c.tp + c.fp + c.fn_ == 0;
    let precision = ratio(c.tp, c.tp + c.fp, empty);
    let recall = ratio(c.tp, c.tp + c.fn_, empty);
    Metrics {
        precision,
        recall,
        f_score: f_score(precision, recall),
        retrieval_ratio: recall,
    }
}

/// One denoiser + recognizer combination to benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMethod {
    pub denoise: DenoiseMethod,
    #[serde(default)]
    pub recognizer: RecognizerConfig,
    #[serde(default = "default_ocr_name")]
    pub ocr_name: String,
    /// On adapter failure use the raw patch and count it, instead of aborting.
    #[serde(default)]
    pub fallback_to_raw: bool,
}

fn default_ocr_name() -> String {
    "template".into()
}

impl BenchmarkMethod {
    pub fn new(denoise: DenoiseMethod) -> Self {
        BenchmarkMethod {
            denoise,
            recognizer: RecognizerConfig::default(),
            ocr_name: default_ocr_name(),
            fallback_to_raw: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub denoiser: String,
    pub ocr: String,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub retrieval_ratio: f64,
    pub n_patches: usize,
    /// Mean wall-clock seconds per patch.
    pub wall_time_s: f64,
    pub counts: MatchCounts,
    #[serde(default)]
    pub fallbacks: usize,
}

impl EvalRow {
    pub fn new(denoiser: String, ocr: String, counts: MatchCounts, n_patches: usize, wall_time_s: f64) -> Self {
        let m = compute_metrics(counts);
        EvalRow {
            denoiser,
            ocr,
            f_score: m.f_score,
            precision: m.precision,
            recall: m.recall,
            retrieval_ratio: m.retrieval_ratio,
            n_patches,
            wall_time_s,
            counts,
            fallbacks: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
                csv_field(&r.denoiser),
                csv_field(&r.ocr),
                r.f_score,
                r.precision,
                r.recall,
                r.retrieval_ratio,
                r.n_patches,
                r.wall_time_s
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.denoiser.len())
            .chain([8])
            .max()
            .unwrap_or(8);
        let mut out = format!(
            "{:<w$}  {:<10} {:>7} {:>9} {:>7} {:>7} {:>8} {:>10}\n",
            "denoiser", "ocr", "F", "precision", "recall", "ratio", "patches", "s/patch"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:<10} {:>7.3} {:>9.3} {:>7.3} {:>7.3} {:>8} {:>10.4}",
                r.denoiser, r.ocr, r.f_score, r.precision, r.recall, r.retrieval_ratio, r.n_patches, r.wall_time_s
            );
        }
        out
    }
}

/// Area of patch (0, 0) covered by the fiducial, ignored during recognition.
pub fn exclusion_for(row: usize, col: usize) -> Option<Rect> {
    ((row, col) == (0, 0)).then(|| Rect::new(0, 0, FIDUCIAL_PX + 2, FIDUCIAL_PX + 2))
}

/// Denoise then recognize one patch; returns detected labels and whether the
/// adapter fell back to the raw patch.
pub fn process_patch(
    img: &RasterImage,
    method: &BenchmarkMethod,
    recognizer: &Recognizer,
    exclude: Option<Rect>,
) -> Result<(Vec<crate::recognize::Detection>, bool)> {
    let (clean, fell_back) = match denoise(img, &method.denoise) {
        Ok(c) => (c, false),
        Err(Error::Adapter(e)) if method.fallback_to_raw => {
            log::warn!("adapter failed ({e}); using raw patch");
            (img.clone(), true)
        }
        Err(e) => return Err(e),
    };
    Ok((recognizer.recognize(&clean, exclude), fell_back))
}

/// Scores every method over every patch of a corpus rooted at `root`.
pub fn run_benchmark(manifest: &CorpusManifest, root: impl AsRef<Path>, methods: &[BenchmarkMethod]) -> Result<EvalReport> {
    let root = root.as_ref();
    if methods.is_empty() {
        return Err(Error::invalid("no methods to benchmark"));
    }
    let patches: Vec<_> = manifest.entries.iter().flat_map(|e| e.patches.iter()).collect();
    if patches.is_empty() {
        return Err(Error::InsufficientData("corpus holds no patches".into()));
    }
    let mut loaded = Vec::with_capacity(patches.len());
    for p in &patches {
        let img = RasterImage::load_pgm(root.join(&p.sample_path))?;
        let labels: Vec<char> = read_labels(root.join(&p.label_path))?.iter().map(|b| b.label).collect();
        loaded.push((img, labels, exclusion_for(p.row, p.col)));
    }

    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        method.denoise.validate()?;
        let recognizer = Recognizer::new(method.recognizer.clone())?;
        let start = Instant::now();
        let results: Vec<(MatchCounts, bool)> = loaded
            .par_iter()
            .map(|(img, labels, exclude)| {
                let (dets, fell_back) = process_patch(img, method, &recognizer, *exclude)?;
                let detected: Vec<char> = dets.iter().map(|d| d.label).collect();
                Ok((match_characters(labels, &detected), fell_back))
            })
            .collect::<Result<_>>()?;
        let elapsed = start.elapsed().as_secs_f64();
        let counts = results.iter().map(|r| r.0).sum();
        let mut row = EvalRow::new(
            method.denoise.name(),
            method.ocr_name.clone(),
            counts,
            loaded.len(),
            elapsed / loaded.len() as f64,
        );
        row.fallbacks = results.iter().filter(|r| r.1).count();
        rows.push(row);
    }
    rows.sort_by(|a, b| b.f_score.total_cmp(&a.f_score));
    Ok(EvalReport { rows })
}
