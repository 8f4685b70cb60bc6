//! Reference-frame composition and the simulated interception chain:
//! synthesize, channel, raster, porch alignment, crop.

use serde::{Deserialize, Serialize};

use crate::align::{align_and_crop_scaled, detect_porches, embed_fiducial_with_levels, PorchOffsets};
use crate::error::{Error, Result};
use crate::image::{RasterImage, Rect};
use crate::raster::{clipped_noise_sigma, decode_transitions, estimate_sync, rasterize, SyncEstimate};
use crate::signal::{apply_channel, synthesize_emanation, BasebandCapture, EmanationModel, LeakageMode, VideoTiming};

/// Levels and content of a displayed frame before it leaks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameStyle {
    pub fg: f32,
    pub bg: f32,
    pub payload: u16,
}

/// Builds the displayed active area: background, `content` at the origin,
/// the fiducial, and the frame marker (solid first column, dotted first row).
pub fn compose_reference(content: &RasterImage, timing: &VideoTiming, style: FrameStyle) -> Result<RasterImage> {
    let (w, h) = (timing.h_active, timing.v_active);
    if content.width() > w || content.height() > h {
        return Err(Error::invalid(format!(
            "{}x{} content does not fit a {w}x{h} frame",
            content.width(),
            content.height()
        )));
    }
    let mut frame = RasterImage::filled(w, h, style.bg);
    frame.blit(content, 0, 0);
    embed_fiducial_with_levels(&mut frame, style.payload, style.fg, style.bg)?;
    frame.fill_rect(Rect::new(0, 0, 1, h), style.fg);
    for x in 0..w {
        frame.set(x, 0, if x % 2 == 0 { style.fg } else { style.bg });
    }
    Ok(frame)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyncMode {
    /// Use the periods implied by the timing.
    #[default]
    GroundTruth,
    /// Recover periods from the capture within `tolerance` of nominal.
    Estimate { frames: usize, tolerance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterceptConfig {
    pub timing: VideoTiming,
    #[serde(default)]
    pub model: EmanationModel,
    /// Defaults to the pixel clock.
    #[serde(default)]
    pub sample_rate_hz: Option<f64>,
    #[serde(default)]
    pub sync: SyncMode,
}

impl InterceptConfig {
    pub fn new(timing: VideoTiming) -> Self {
        InterceptConfig {
            timing,
            model: EmanationModel::default(),
            sample_rate_hz: None,
            sync: SyncMode::GroundTruth,
        }
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate_hz.unwrap_or(self.timing.pixel_clock_hz)
    }

    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.model.validate()?;
        let fs = self.sample_rate();
        if !(fs.is_finite() && fs >= self.timing.pixel_clock_hz) {
            return Err(Error::invalid("sample rate must be at least the pixel clock"));
        }
        if let SyncMode::Estimate { frames, tolerance } = self.sync {
            if frames < 3 {
                return Err(Error::invalid("sync estimation needs at least 3 frames"));
            }
            if !(tolerance > 0.0 && tolerance < 0.5) {
                return Err(Error::invalid("sync tolerance must lie in (0, 0.5)"));
            }
        }
        Ok(())
    }
}

/// Everything recovered from one intercepted frame.
#[derive(Clone, Debug)]
pub struct Interception {
    pub raster: RasterImage,
    pub sync: Option<SyncEstimate>,
    pub offsets: PorchOffsets,
    /// Active area cropped from the raster, in the leaked domain.
    pub cropped: RasterImage,
    /// Active area as an image: `cropped` itself for intensity leakage, the
    /// integrated ink mask for transition leakage.
    pub recovered: RasterImage,
}

/// Line and frame periods for `received`, nominal or estimated per `cfg.sync`.
pub fn sync_periods(
    received: &BasebandCapture,
    cfg: &InterceptConfig,
) -> Result<(f64, f64, Option<SyncEstimate>)> {
    let timing = &cfg.timing;
    let (lp, fp) = (timing.line_period_s(), timing.frame_period_s());
    match cfg.sync {
        SyncMode::GroundTruth => Ok((lp, fp, None)),
        SyncMode::Estimate { tolerance, .. } => {
            let est = estimate_sync(
                received,
                (lp * (1.0 - tolerance), lp * (1.0 + tolerance)),
                (fp * (1.0 - tolerance), fp * (1.0 + tolerance)),
            )?;
            Ok((est.line_period_s, est.frame_period_s, Some(est)))
        }
    }
}

/// Porch search, crop to the active area and, for transition leakage,
/// integration back to an ink mask. Returns `(offsets, cropped, recovered)`.
pub fn recover_active(
    raster: &RasterImage,
    cfg: &InterceptConfig,
    line_period_s: f64,
) -> Result<(PorchOffsets, RasterImage, RasterImage)> {
    let timing = &cfg.timing;
    let offsets = detect_porches(raster)?;
    let scale = line_period_s * cfg.sample_rate() / timing.h_total() as f64;
    let source_w = ((timing.h_active as f64) * scale).round().max(1.0) as usize;
    let cropped = align_and_crop_scaled(
        raster,
        &offsets,
        (source_w, timing.v_active),
        (timing.h_active, timing.v_active),
    )?;
    let recovered = match cfg.model.mode {
        LeakageMode::Intensity => cropped.clone(),
        LeakageMode::Transition => {
            // the dotted first row is one full-height edge per pixel
            let mut row0: Vec<f32> = cropped.row(0)[1..].to_vec();
            let mid = row0.len() / 2;
            let amplitude = *row0.select_nth_unstable_by(mid, f32::total_cmp).1;
            decode_transitions(&cropped, amplitude, blanking_sigma(raster, &offsets, timing.v_active))
        }
    };
    Ok((offsets, cropped, recovered))
}

/// Noise level of the raster rows outside the active area.
fn blanking_sigma(raster: &RasterImage, offsets: &PorchOffsets, active_rows: usize) -> f32 {
    let h = raster.height();
    let blank = h.saturating_sub(active_rows);
    clipped_noise_sigma(
        (0..blank).flat_map(|i| raster.row((offsets.row_boundary + active_rows + i) % h).iter().copied()),
    )
}

/// Leaks `reference` for the frames `cfg.sync` needs and passes them through the channel.
pub fn leak(
    reference: &RasterImage,
    cfg: &InterceptConfig,
    attenuation_db: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<BasebandCapture> {
    cfg.validate()?;
    let clean = synthesize_emanation(reference, &cfg.timing, &cfg.model, cfg.sample_rate(), seed)?;
    let frames = match cfg.sync {
        SyncMode::GroundTruth => 1,
        SyncMode::Estimate { frames, .. } => frames,
    };
    apply_channel(&clean.repeated(frames), attenuation_db, noise_sigma, seed)
}

/// Runs one displayed frame through the leak, the channel and recovery.
pub fn intercept(
    reference: &RasterImage,
    cfg: &InterceptConfig,
    attenuation_db: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Interception> {
    let received = leak(reference, cfg, attenuation_db, noise_sigma, seed)?;
    let (line_s, frame_s, sync) = sync_periods(&received, cfg)?;
    let raster = rasterize(&received, line_s, frame_s)?;
    let (offsets, cropped, recovered) = recover_active(&raster, cfg, line_s)?;
    Ok(Interception {
        raster,
        sync,
        offsets,
        cropped,
        recovered,
    })
}
