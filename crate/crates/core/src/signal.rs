//! Simulated compromising-emanation captures.
//!
//! A reference frame is serialised in scan order the way a video link would
//! clock it out, converted to a leaked amplitude envelope, and then passed
//! through an attenuation + receiver-noise channel.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;

/// Horizontal and vertical video timing.
///
/// Each line is clocked out as sync, back porch, active pixels, front porch;
/// frames follow the same order in lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTiming {
    pub h_active: usize,
    pub h_front_porch: usize,
    pub h_sync: usize,
    pub h_back_porch: usize,
    pub v_active: usize,
    pub v_front_porch: usize,
    pub v_sync: usize,
    pub v_back_porch: usize,
    pub pixel_clock_hz: f64,
}

impl VideoTiming {
    /// 640x480 at 60 Hz, 800x525 totals, 25.175 MHz.
    pub fn vga_640x480() -> Self {
        VideoTiming {
            h_active: 640,
            h_front_porch: 16,
            h_sync: 96,
            h_back_porch: 48,
            v_active: 480,
            v_front_porch: 10,
            v_sync: 2,
            v_back_porch: 33,
            pixel_clock_hz: 25.175e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("h_active", self.h_active),
            ("h_front_porch", self.h_front_porch),
            ("h_sync", self.h_sync),
            ("h_back_porch", self.h_back_porch),
            ("v_active", self.v_active),
            ("v_front_porch", self.v_front_porch),
            ("v_sync", self.v_sync),
            ("v_back_porch", self.v_back_porch),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("timing field {name} must be > 0")));
        }
        if !(self.pixel_clock_hz.is_finite() && self.pixel_clock_hz > 0.0) {
            return Err(Error::invalid("pixel clock must be finite and > 0"));
        }
        if !(self.line_rate_hz().is_finite() && self.frame_rate_hz() > 0.0) {
            return Err(Error::invalid("derived line/frame rates are not finite"));
        }
        Ok(())
    }

    pub fn h_total(&self) -> usize {
        self.h_active + self.h_front_porch + self.h_sync + self.h_back_porch
    }

    pub fn v_total(&self) -> usize {
        self.v_active + self.v_front_porch + self.v_sync + self.v_back_porch
    }

    pub fn line_rate_hz(&self) -> f64 {
        self.pixel_clock_hz / self.h_total() as f64
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.line_rate_hz() / self.v_total() as f64
    }

    pub fn line_period_s(&self) -> f64 {
        self.h_total() as f64 / self.pixel_clock_hz
    }

    pub fn frame_period_s(&self) -> f64 {
        (self.h_total() * self.v_total()) as f64 / self.pixel_clock_hz
    }

    /// Column and row of the first active pixel within a rastered frame.
    pub fn active_origin(&self) -> (usize, usize) {
        (self.h_sync + self.h_back_porch, self.v_sync + self.v_back_porch)
    }

    /// Samples per frame at `sample_rate_hz`.
    pub fn samples_per_frame(&self, sample_rate_hz: f64) -> usize {
        (self.frame_period_s() * sample_rate_hz).round() as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageMode {
    /// Digital links: the envelope follows pixel-to-pixel transitions.
    #[default]
    Transition,
    /// Analog links: the envelope follows pixel intensity.
    Intensity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmanationModel {
    #[serde(default)]
    pub mode: LeakageMode,
    #[serde(default = "unit_gain")]
    pub harmonic_gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl Default for EmanationModel {
    fn default() -> Self {
        EmanationModel {
            mode: LeakageMode::Transition,
            harmonic_gain: 1.0,
        }
    }
}

impl EmanationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.harmonic_gain.is_finite() && self.harmonic_gain >= 0.0) {
            return Err(Error::invalid("harmonic_gain must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Real-valued envelope samples as delivered by the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct BasebandCapture {
    pub sample_rate_hz: f64,
    pub samples: Vec<f32>,
    pub origin_tag: String,
}

const EMCB_MAGIC: &[u8; 4] = b"EMCB";
const EMCB_VERSION: u16 = 1;
const EMCB_HEADER: usize = 4 + 2 + 8 + 8;

impl BasebandCapture {
    pub fn new(sample_rate_hz: f64, samples: Vec<f32>, origin_tag: impl Into<String>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be finite and > 0"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("capture has no samples"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("capture contains non-finite samples"));
        }
        Ok(BasebandCapture {
            sample_rate_hz,
            samples,
            origin_tag: origin_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Concatenates `n` copies, i.e. a static screen observed for `n` frames.
    pub fn repeated(&self, n: usize) -> BasebandCapture {
        let mut samples = Vec::with_capacity(self.samples.len() * n);
        for _ in 0..n {
            samples.extend_from_slice(&self.samples);
        }
        BasebandCapture {
            sample_rate_hz: self.sample_rate_hz,
            samples,
            origin_tag: self.origin_tag.clone(),
        }
    }

    /// Moves the capture start `offset` samples later, wrapping the head to the tail.
    pub fn rotated(&self, offset: usize) -> BasebandCapture {
        let mut samples = self.samples.clone();
        if !samples.is_empty() {
            let k = offset % samples.len();
            samples.rotate_left(k);
        }
        BasebandCapture {
            sample_rate_hz: self.sample_rate_hz,
            samples,
            origin_tag: self.origin_tag.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMCB_HEADER + 4 * self.samples.len());
        out.extend_from_slice(EMCB_MAGIC);
        out.extend_from_slice(&EMCB_VERSION.to_le_bytes());
        out.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin_tag: impl Into<String>) -> Result<Self> {
        let err = |reason: String| Error::Format {
            what: "capture",
            reason,
        };
        if bytes.len() < EMCB_HEADER {
            return Err(err(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[0..4] != EMCB_MAGIC {
            return Err(err("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != EMCB_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let rate = f64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        let body = &bytes[EMCB_HEADER..];
        if (body.len() as u64) != count.saturating_mul(4) {
            return Err(err(format!(
                "header declares {count} samples but body holds {} bytes",
                body.len()
            )));
        }
        let samples = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        BasebandCapture::new(rate, samples, origin_tag)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::persist(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::persist(path, e))?;
        Self::from_bytes(&bytes, path.display().to_string())
    }
}

/// Serialises one frame of `frame` into a leaked-envelope capture.
///
/// Porch and sync samples are zero. Active samples are `|I[k] - I[k-1]|`
/// (transition mode, `I[-1] = 0` on every line) or `I[k]` (intensity mode),
/// times `harmonic_gain`. Above one sample per pixel the pixel value is held.
pub fn synthesize_emanation(
    frame: &RasterImage,
    timing: &VideoTiming,
    model: &EmanationModel,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<BasebandCapture> {
    timing.validate()?;
    model.validate()?;
    if frame.width() == 0 || frame.height() == 0 {
        return Err(Error::invalid("frame has zero size"));
    }
    if frame.dimensions() != (timing.h_active, timing.v_active) {
        return Err(Error::invalid(format!(
            "frame is {}x{} but timing expects {}x{}",
            frame.width(),
            frame.height(),
            timing.h_active,
            timing.v_active
        )));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz >= timing.pixel_clock_hz) {
        return Err(Error::invalid(
            "sample rate must be at least the pixel clock",
        ));
    }

    let gain = model.harmonic_gain as f32;
    // leaked value of every active pixel, row-major
    let mut leaked = Vec::with_capacity(frame.width() * frame.height());
    for y in 0..frame.height() {
        let row = frame.row(y);
        let mut prev = 0.0f32;
        for &v in row {
            let s = match model.mode {
                LeakageMode::Transition => (v - prev).abs(),
                LeakageMode::Intensity => v,
            };
            leaked.push(s * gain);
            prev = v;
        }
    }

    let h_total = timing.h_total();
    let (col0, row0) = timing.active_origin();
    let n_pixels = h_total * timing.v_total();
    let n_samples = timing.samples_per_frame(sample_rate_hz);
    let ratio = timing.pixel_clock_hz / sample_rate_hz;

    let pixel_value = |p: usize| -> f32 {
        let line = p / h_total;
        let col = p % h_total;
        if line < row0 || line >= row0 + timing.v_active || col < col0 || col >= col0 + timing.h_active {
            0.0
        } else {
            leaked[(line - row0) * timing.h_active + (col - col0)]
        }
    };

    let samples: Vec<f32> = if sample_rate_hz == timing.pixel_clock_hz {
        (0..n_pixels).map(pixel_value).collect()
    } else {
        (0..n_samples)
            .map(|n| {
                let p = ((n as f64 * ratio).floor() as usize).min(n_pixels - 1);
                pixel_value(p)
            })
            .collect()
    };

    BasebandCapture::new(
        sample_rate_hz,
        samples,
        format!("synth:{:?}:seed={seed}", model.mode).to_lowercase(),
    )
}

/// Attenuates by `attenuation_db` and adds unattenuated receiver noise.
///
/// `s -> max(0, s * 10^(-dB/20) + n)` with `n ~ N(0, noise_sigma)` i.i.d.
pub fn apply_channel(
    capture: &BasebandCapture,
    attenuation_db: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<BasebandCapture> {
    if !(attenuation_db.is_finite() && attenuation_db >= 0.0) {
        return Err(Error::invalid(format!(
            "attenuation must be >= 0 dB, got {attenuation_db}"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let gain = 10f64.powf(-attenuation_db / 20.0);
    let samples = if noise_sigma == 0.0 {
        capture
            .samples
            .iter()
            .map(|&s| ((s as f64) * gain).max(0.0) as f32)
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("sigma validated");
        capture
            .samples
            .iter()
            .map(|&s| ((s as f64) * gain + normal.sample(&mut rng)).max(0.0) as f32)
            .collect()
    };
    BasebandCapture::new(
        capture.sample_rate_hz,
        samples,
        format!("{}|ch:{attenuation_db}dB:{noise_sigma}", capture.origin_tag),
    )
}

/// Power of the attenuated clean signal over the power of what the channel added, in dB.
pub fn channel_snr_db(clean: &BasebandCapture, received: &BasebandCapture, attenuation_db: f64) -> f64 {
    let gain = 10f64.powf(-attenuation_db / 20.0);
    let (mut sig, mut noise) = (0f64, 0f64);
    for (&c, &r) in clean.samples.iter().zip(&received.samples) {
        let s = c as f64 * gain;
        sig += s * s;
        noise += (r as f64 - s) * (r as f64 - s);
    }
    10.0 * (sig / noise).log10()
}
