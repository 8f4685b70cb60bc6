//! End-to-end experiment: generate, leak, recover, recognize, score, alarm.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::align::{decode_fiducial, split_patches, Patch, DEFAULT_PATCH_SIZE, MIN_FIDUCIAL_PATCH};
use crate::corpus::{
    derive_seed, frame_payload, generate_sample, labels_in_patch, plant_text, points_to_px, write_labels, Augmentation,
    CorpusConfig, PatchGrid, SampleSpec,
};
use crate::denoise::DenoiseMethod;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, exclusion_for, match_characters, process_patch, BenchmarkMethod, EvalReport, EvalRow, MatchCounts, Metrics};
use crate::font::in_alphabet;
use crate::image::{RasterImage, Rect};
use crate::intercept::{compose_reference, leak, recover_active, sync_periods, FrameStyle, InterceptConfig, SyncMode};
use crate::raster::{rasterize, SyncEstimate};
use crate::recognize::{
    detect_lines, detections_to_jsonl, evaluate_alarm, line_texts, AlarmMatch, AlarmPolicy, AlarmResult, Detection,
    HoughParams, Recognizer, RecognizerConfig, TextLine,
};
use crate::signal::{EmanationModel, VideoTiming};

pub const FAILED_MARKER: &str = "FAILED";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "zero_db")]
    pub attenuations_db: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn zero_db() -> Vec<f64> {
    vec![0.0]
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            attenuations_db: zero_db(),
            noise_sigma: 0.0,
        }
    }
}

/// A keyword line written into some frames at a fixed place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub text: String,
    #[serde(default = "default_plant_size")]
    pub size_pt: u32,
    /// Top-left of the line in frame pixels.
    pub x: usize,
    pub y: usize,
    /// Planted in frames whose index is a multiple of this.
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_plant_size() -> u32 {
    20
}

fn one() -> usize {
    1
}

impl PlantConfig {
    /// Upper bound of the area the planted line covers.
    pub fn bbox(&self) -> Rect {
        let px = points_to_px(self.size_pt);
        let n = self.text.chars().count();
        Rect::new(self.x, self.y, n * (px + (px / 4).max(2)), px)
    }

}

/// Corpus-building options used by the `dataset` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "no_augmentation")]
    pub augmentations: Vec<Vec<Augmentation>>,
}

fn default_samples() -> usize {
    10
}

fn no_augmentation() -> Vec<Vec<Augmentation>> {
    vec![Vec::new()]
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_samples: default_samples(),
            augmentations: no_augmentation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "VideoTiming::vga_640x480")]
    pub timing: VideoTiming,
    #[serde(default)]
    pub model: EmanationModel,
    #[serde(default)]
    pub sample_rate_hz: Option<f64>,
    #[serde(default = "default_sync")]
    pub sync: SyncMode,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub sample: SampleSpec,
    /// Frames per attenuation level.
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub plant: Option<PlantConfig>,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_denoisers")]
    pub denoisers: Vec<DenoiseMethod>,
    #[serde(default)]
    pub recognizer: RecognizerConfig,
    #[serde(default)]
    pub hough: HoughParams,
    #[serde(default)]
    pub alarm: Option<AlarmPolicy>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Also write the received capture of every frame.
    #[serde(default)]
    pub save_captures: bool,
}

fn default_sync() -> SyncMode {
    SyncMode::Estimate {
        frames: 3,
        tolerance: 0.05,
    }
}

fn default_frames() -> usize {
    10
}

fn default_patch_size() -> usize {
    DEFAULT_PATCH_SIZE
}

fn default_denoisers() -> Vec<DenoiseMethod> {
    vec![DenoiseMethod::Raw]
}

fn default_output() -> PathBuf {
    PathBuf::from("emsc-out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults deserialise")
    }
}

impl PipelineConfig {
    pub fn intercept(&self) -> InterceptConfig {
        InterceptConfig {
            timing: self.timing,
            model: self.model,
            sample_rate_hz: self.sample_rate_hz,
            sync: self.sync,
        }
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid {
            rows: self.timing.v_active / self.patch_size.max(1),
            cols: self.timing.h_active / self.patch_size.max(1),
            patch_size: self.patch_size,
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            n_samples: self.dataset.n_samples,
            sample: self.sample.clone(),
            intercept: self.intercept(),
            attenuations_db: self.channel.attenuations_db.clone(),
            noise_sigma: self.channel.noise_sigma,
            augmentations: self.dataset.augmentations.clone(),
            patch_size: self.patch_size,
            seed: self.seed,
        }
    }

    /// One benchmark method per configured denoiser.
    pub fn methods(&self) -> Vec<BenchmarkMethod> {
        self.denoisers
            .iter()
            .map(|d| BenchmarkMethod {
                denoise: d.clone(),
                recognizer: self.recognizer.clone(),
                ocr_name: "template".into(),
                fallback_to_raw: true,
            })
            .collect()
    }

    fn sample_spec(&self) -> SampleSpec {
        let mut spec = self.sample.clone();
        if let Some(p) = &self.plant {
            spec.keep_out.push(p.bbox());
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        self.intercept().validate()?;
        self.sample.validate()?;
        if self.channel.attenuations_db.is_empty() {
            return Err(Error::invalid("channel.attenuations_db is empty"));
        }
        for &a in &self.channel.attenuations_db {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::invalid(format!("attenuation must be >= 0 dB, got {a}")));
            }
        }
        let sigma = self.channel.noise_sigma;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frames must be > 0"));
        }
        if self.patch_size < MIN_FIDUCIAL_PATCH {
            return Err(Error::invalid(format!(
                "patch size {} cannot hold the fiducial",
                self.patch_size
            )));
        }
        let grid = self.grid();
        if grid.rows == 0 || grid.cols == 0 {
            return Err(Error::invalid("active area is smaller than one patch"));
        }
        if self.denoisers.is_empty() {
            return Err(Error::invalid("no denoisers configured"));
        }
        self.denoisers.iter().try_for_each(DenoiseMethod::validate)?;
        self.recognizer.validate()?;
        if !self.hough.is_valid() {
            return Err(Error::invalid("hough bins must be positive and the theta window inside [0, 180)"));
        }
        if let Some(a) = &self.alarm {
            a.validate()?;
        }
        if self.dataset.n_samples == 0 {
            return Err(Error::invalid("dataset.n_samples must be > 0"));
        }
        if let Some(p) = &self.plant {
            if p.text.is_empty() || !p.text.chars().all(in_alphabet) {
                return Err(Error::invalid(format!("planted text {:?} must be non-empty alphanumerics", p.text)));
            }
            if p.stride == 0 {
                return Err(Error::invalid("plant.stride must be > 0"));
            }
            let b = p.bbox();
            if b.right() > grid.width() || b.bottom() > grid.height() {
                return Err(Error::invalid("planted text does not fit inside the patch grid"));
            }
        }
        Ok(())
    }
}

/// Sets `path` (dot separated, numeric segments index arrays) to `value`,
/// parsed as JSON when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut cur = doc;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid(format!("bad override path {path:?}")));
    }
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), parsed);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::invalid(format!("{path:?}: {seg:?} is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::invalid(format!("{path:?}: index {idx} out of {len}")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::invalid(format!("{path:?}: {seg:?} is below a scalar"))),
        };
    }
    Ok(())
}

/// Parses a config document, applies `key=value` overrides, and validates.
pub fn load_config(doc: Option<Value>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut doc = doc.unwrap_or_else(|| Value::Object(Default::default()));
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override {o:?} is not key=value")))?;
        apply_override(&mut doc, k.trim(), v.trim())?;
    }
    let cfg: PipelineConfig =
        serde_json::from_value(doc).map_err(|e| Error::invalid(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub attenuation_db: f64,
    pub denoiser: String,
    pub counts: MatchCounts,
    pub metrics: Metrics,
    pub frames_used: usize,
    pub frames_skipped: usize,
    pub n_patches: usize,
    pub adapter_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmTrial {
    pub attenuation_db: f64,
    pub frame: usize,
    pub planted: bool,
    pub triggered: bool,
    pub matches: Vec<AlarmMatch>,
}

impl AlarmTrial {
    pub fn correct(&self) -> bool {
        self.planted == self.triggered
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub levels: Vec<LevelSummary>,
    pub alarms: Vec<AlarmTrial>,
    pub frames_generated: usize,
    pub frames_skipped: usize,
}

impl PipelineReport {
    pub fn any_alarm(&self) -> bool {
        self.alarms.iter().any(|a| a.triggered)
    }

    pub fn level(&self, attenuation_db: f64, denoiser: &str) -> Option<&LevelSummary> {
        self.levels
            .iter()
            .find(|l| l.attenuation_db == attenuation_db && l.denoiser == denoiser)
    }
}

fn to_frame(patch: &Patch, dets: Vec<Detection>) -> impl Iterator<Item = Detection> + '_ {
    let (ox, oy) = patch.origin();
    dets.into_iter().map(move |d| Detection {
        x: d.x + ox,
        y: d.y + oy,
        ..d
    })
}

/// Splits a recovered active area into patches and recognizes each, returning
/// detections in frame coordinates.
pub fn recognize_frame(
    img: &RasterImage,
    patch_size: usize,
    method: &BenchmarkMethod,
    recognizer: &Recognizer,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for p in split_patches(img, patch_size)? {
        let (r, c) = p.grid_pos;
        let (dets, _) = process_patch(&p.image, method, recognizer, exclusion_for(r, c))?;
        out.extend(to_frame(&p, dets));
    }
    Ok(out)
}

/// Text lines and the alarm verdict for frame-level detections.
pub fn alarm_from_detections(
    dets: &[Detection],
    hough: &HoughParams,
    policy: &AlarmPolicy,
) -> Result<(Vec<TextLine>, Vec<String>, AlarmResult)> {
    let lines = detect_lines(dets, hough);
    let texts = line_texts(&lines, dets);
    let result = evaluate_alarm(&texts, policy)?;
    Ok((lines, texts, result))
}

struct FrameResult {
    skipped: bool,
    /// Per denoiser: counts, patches, fallbacks.
    per_method: Vec<(MatchCounts, usize, usize)>,
    alarm: Option<AlarmTrial>,
    stage_time: BTreeMap<&'static str, f64>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::persist(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::persist(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write(path, text.as_bytes())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

struct Timer {
    times: BTreeMap<&'static str, f64>,
    mark: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer {
            times: BTreeMap::new(),
            mark: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        *self.times.entry(stage).or_default() += self.mark.elapsed().as_secs_f64();
        self.mark = Instant::now();
    }
}

fn run_frame(
    cfg: &PipelineConfig,
    recognizers: &[(BenchmarkMethod, Recognizer)],
    level: usize,
    attenuation_db: f64,
    frame: usize,
    dir: &Path,
) -> Result<FrameResult> {
    let mut timer = Timer::new();
    let icfg = cfg.intercept();
    let sample_seed = derive_seed(cfg.seed, frame as u64);
    let channel_seed = derive_seed(sample_seed, level as u64 + 1);

    let mut sample = generate_sample(&cfg.sample_spec(), cfg.grid(), sample_seed).map_err(|e| e.in_stage("generate"))?;
    let planted = match &cfg.plant {
        Some(p) if frame % p.stride == 0 => {
            plant_text(&mut sample, &p.text, p.size_pt, p.x, p.y).map_err(|e| e.in_stage("generate"))?;
            true
        }
        _ => false,
    };
    let payload = frame_payload(sample_seed);
    let style = FrameStyle {
        fg: sample.meta.fg_level,
        bg: sample.meta.bg_level,
        payload,
    };
    let reference = compose_reference(&sample.image, &cfg.timing, style).map_err(|e| e.in_stage("generate"))?;
    write(&dir.join("reference.pgm"), &reference.to_pgm())?;
    write(&dir.join("labels.jsonl"), write_labels(&sample.chars).as_bytes())?;
    timer.lap("generate");

    let received = leak(&reference, &icfg, attenuation_db, cfg.channel.noise_sigma, channel_seed)
        .map_err(|e| e.in_stage("synthesize"))?;
    if cfg.save_captures {
        received.save(dir.join("capture.emcb"))?;
    }
    timer.lap("synthesize");

    let (line_s, frame_s, sync) = sync_periods(&received, &icfg).map_err(|e| e.in_stage("estimate_sync"))?;
    if let Some(est) = &sync {
        write_json::<SyncEstimate>(&dir.join("sync.json"), est)?;
    }
    timer.lap("estimate_sync");
    let raster = rasterize(&received, line_s, frame_s).map_err(|e| e.in_stage("raster"))?;
    drop(received);
    write(&dir.join("raster.pgm"), &raster.to_pgm())?;
    timer.lap("raster");

    let (offsets, _, recovered) = recover_active(&raster, &icfg, line_s).map_err(|e| e.in_stage("align"))?;
    write_json(&dir.join("porches.json"), &offsets)?;
    write(&dir.join("recovered.pgm"), &recovered.to_pgm())?;
    let valid = decode_fiducial(&recovered) == Some(payload);
    timer.lap("align");
    if !valid {
        log::info!("{}: fiducial did not validate, frame skipped", dir.display());
        write(&dir.join("SKIPPED"), b"fiducial mismatch\n")?;
        // nothing was retrieved from a rejected frame
        let missed = MatchCounts {
            fn_: sample.chars.len(),
            ..MatchCounts::default()
        };
        return Ok(FrameResult {
            skipped: true,
            per_method: vec![(missed, 0, 0); recognizers.len()],
            alarm: None,
            stage_time: timer.times,
        });
    }
    let patches = split_patches(&recovered, cfg.patch_size).map_err(|e| e.in_stage("split"))?;
    for p in &patches {
        let (r, c) = p.grid_pos;
        write(&dir.join(format!("patches/p{r}_{c}.pgm")), &p.image.to_pgm())?;
        let labels = labels_in_patch(&sample.chars, r, c, cfg.patch_size);
        write(&dir.join(format!("patches/p{r}_{c}.labels.jsonl")), write_labels(&labels).as_bytes())?;
    }
    timer.lap("split");

    let mut per_method = Vec::with_capacity(recognizers.len());
    let mut alarm_detections: Option<Vec<Detection>> = None;
    for (method, recognizer) in recognizers {
        let mut counts = MatchCounts::default();
        let mut fallbacks = 0;
        let mut frame_dets = Vec::new();
        let mdir = dir.join("detections").join(slug(&method.denoise.name()));
        for p in &patches {
            let (r, c) = p.grid_pos;
            let (dets, fell_back) =
                process_patch(&p.image, method, recognizer, exclusion_for(r, c)).map_err(|e| e.in_stage("recognize"))?;
            fallbacks += fell_back as usize;
            write(&mdir.join(format!("p{r}_{c}.jsonl")), detections_to_jsonl(&dets).as_bytes())?;
            let labels: Vec<char> = labels_in_patch(&sample.chars, r, c, cfg.patch_size)
                .iter()
                .map(|b| b.label)
                .collect();
            let detected: Vec<char> = dets.iter().map(|d| d.label).collect();
            counts += match_characters(&labels, &detected);
            frame_dets.extend(to_frame(p, dets));
        }
        write(&mdir.join("frame.jsonl"), detections_to_jsonl(&frame_dets).as_bytes())?;
        per_method.push((counts, patches.len(), fallbacks));
        if alarm_detections.is_none() {
            alarm_detections = Some(frame_dets);
        }
    }
    timer.lap("recognize");

    let alarm = match &cfg.alarm {
        Some(policy) => {
            let dets = alarm_detections.unwrap_or_default();
            let (lines, texts, result) =
                alarm_from_detections(&dets, &cfg.hough, policy).map_err(|e| e.in_stage("alarm"))?;
            write_json(&dir.join("lines.json"), &serde_json::json!({ "lines": lines, "texts": texts }))?;
            write_json(&dir.join("alarm.json"), &result)?;
            Some(AlarmTrial {
                attenuation_db,
                frame,
                planted,
                triggered: result.triggered,
                matches: result.matches,
            })
        }
        None => None,
    };
    timer.lap("alarm");
    Ok(FrameResult {
        skipped: false,
        per_method,
        alarm,
        stage_time: timer.times,
    })
}

fn run_inner(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let out = &cfg.output_dir;
    write_json(&out.join("config.json"), cfg)?;
    let recognizers: Vec<(BenchmarkMethod, Recognizer)> = cfg
        .methods()
        .into_iter()
        .map(|m| Recognizer::new(m.recognizer.clone()).map(|r| (m, r)))
        .collect::<Result<_>>()?;

    let mut levels = Vec::new();
    let mut alarms = Vec::new();
    let mut rows = Vec::new();
    let mut stage_time: BTreeMap<&'static str, f64> = BTreeMap::new();
    let (mut generated, mut skipped_total) = (0, 0);
    for (li, &att) in cfg.channel.attenuations_db.iter().enumerate() {
        let level_dir = out.join(format!("level{li}_{att}dB"));
        let start = Instant::now();
        let results: Vec<FrameResult> = (0..cfg.frames)
            .into_par_iter()
            .map(|f| run_frame(cfg, &recognizers, li, att, f, &level_dir.join(format!("frame{f:04}"))))
            .collect::<Result<_>>()?;
        let elapsed = start.elapsed().as_secs_f64();
        let skipped = results.iter().filter(|r| r.skipped).count();
        generated += results.len();
        skipped_total += skipped;
        for r in &results {
            for (k, v) in &r.stage_time {
                *stage_time.entry(k).or_default() += v;
            }
        }
        for (mi, (method, _)) in recognizers.iter().enumerate() {
            let counts: MatchCounts = results.iter().map(|r| r.per_method[mi].0).sum();
            let n_patches = results.iter().map(|r| r.per_method[mi].1).sum();
            let fallbacks = results.iter().map(|r| r.per_method[mi].2).sum();
            let name = method.denoise.name();
            levels.push(LevelSummary {
                attenuation_db: att,
                denoiser: name.clone(),
                counts,
                metrics: compute_metrics(counts),
                frames_used: results.len() - skipped,
                frames_skipped: skipped,
                n_patches,
                adapter_fallbacks: fallbacks,
            });
            let mut row = EvalRow::new(
                format!("{name}@{att}dB"),
                method.ocr_name.clone(),
                counts,
                n_patches,
                elapsed / n_patches.max(1) as f64,
            );
            row.fallbacks = fallbacks;
            rows.push(row);
        }
        alarms.extend(results.into_iter().filter_map(|r| r.alarm));
    }
    let report = PipelineReport {
        levels,
        alarms,
        frames_generated: generated,
        frames_skipped: skipped_total,
    };
    write_json(&out.join(SUMMARY_FILE), &report)?;
    write(&out.join(BENCHMARK_FILE), EvalReport { rows }.to_csv().as_bytes())?;
    write_json(&out.join(TIMING_FILE), &stage_time)?;
    Ok(report)
}

/// Runs the configured experiment, writing artifacts under `cfg.output_dir`.
/// On failure a `FAILED` marker holding the diagnostic is left next to the
/// partial outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::persist(out, e))?;
    let _ = fs::remove_file(out.join(FAILED_MARKER));
    run_inner(cfg).inspect_err(|e| {
        let _ = fs::write(out.join(FAILED_MARKER), format!("{e}\n"));
    })
}
