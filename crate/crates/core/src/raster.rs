//! Sync recovery and rastering: folding a 1-D envelope back into an image.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{otsu_threshold, RasterImage};
use crate::signal::BasebandCapture;

/// Peak-to-window-mean ratio below which an estimate is flagged.
pub const MIN_PEAK_RATIO: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncEstimate {
    pub line_period_s: f64,
    pub frame_period_s: f64,
    /// `1 - 1/ratio` of the weaker of the two peaks; kept below 0.2 when flagged.
    pub confidence: f64,
    pub low_confidence: bool,
}

impl SyncEstimate {
    pub fn line_samples(&self, sample_rate_hz: f64) -> f64 {
        self.line_period_s * sample_rate_hz
    }

    pub fn frame_samples(&self, sample_rate_hz: f64) -> f64 {
        self.frame_period_s * sample_rate_hz
    }
}

fn check_bounds(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
        return Err(Error::invalid(format!(
            "{name} bounds must be positive and ordered, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// Linear autocorrelation for lags `0..=max_lag`, each lag divided by its overlap count.
fn autocorrelation(samples: &[f32], max_lag: usize) -> Vec<f64> {
    let n = samples.len();
    let size = (n + max_lag + 1).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = size as f64;
    (0..=max_lag)
        .map(|lag| buf[lag].re / scale / (n - lag) as f64)
        .collect()
}

struct Peak {
    lag: usize,
    ratio: f64,
}

fn window_peak(acf: &[f64], lo: usize, hi: usize) -> Peak {
    let window = &acf[lo..=hi];
    let mut best = lo;
    for lag in lo..=hi {
        if acf[lag] > acf[best] {
            best = lag;
        }
    }
    // prefer the fundamental when an integer sub-multiple is nearly as strong
    let peak_val = acf[best];
    let mut chosen = best;
    for d in 2.. {
        let sub = (best as f64 / d as f64).round() as usize;
        if sub < lo {
            break;
        }
        if acf[sub] >= 0.9 * peak_val {
            chosen = sub;
        }
    }
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let ratio = if mean > 0.0 { acf[chosen] / mean } else { 1.0 };
    Peak {
        lag: chosen,
        ratio,
    }
}

/// Locates line and frame periods as the dominant autocorrelation peaks of
/// the envelope inside the given period windows (seconds).
pub fn estimate_sync(
    capture: &BasebandCapture,
    line_period_bounds: (f64, f64),
    frame_period_bounds: (f64, f64),
) -> Result<SyncEstimate> {
    check_bounds("line period", line_period_bounds)?;
    check_bounds("frame period", frame_period_bounds)?;
    if line_period_bounds.1 >= frame_period_bounds.1 {
        return Err(Error::invalid("line period window must lie below the frame period window"));
    }
    let fs = capture.sample_rate_hz;
    let to_lags = |(lo, hi): (f64, f64)| -> (usize, usize) {
        let lo = ((lo * fs).ceil() as usize).max(1);
        let hi = ((hi * fs).floor() as usize).max(lo);
        (lo, hi)
    };
    let (line_lo, line_hi) = to_lags(line_period_bounds);
    let (frame_lo, frame_hi) = to_lags(frame_period_bounds);
    if capture.len() < 2 * frame_hi {
        return Err(Error::InsufficientData(format!(
            "{} samples do not span two frames of {frame_hi} samples",
            capture.len()
        )));
    }

    let acf = autocorrelation(&capture.samples, frame_hi);
    let line = window_peak(&acf, line_lo, line_hi);
    let frame = window_peak(&acf, frame_lo, frame_hi);

    let ratio = line.ratio.min(frame.ratio);
    let low_confidence = ratio < MIN_PEAK_RATIO;
    let mut confidence = 1.0 - 1.0 / ratio.max(1.0);
    if low_confidence {
        // ratio < 1.5 maps into [0, 0.2)
        confidence *= 0.6;
    }
    Ok(SyncEstimate {
        line_period_s: line.lag as f64 / fs,
        frame_period_s: frame.lag as f64 / fs,
        confidence,
        low_confidence,
    })
}

/// Raster dimensions `(width, height)` implied by the periods at `sample_rate_hz`.
pub fn raster_dimensions(line_period_s: f64, frame_period_s: f64, sample_rate_hz: f64) -> (usize, usize) {
    (
        (line_period_s * sample_rate_hz).round() as usize,
        (frame_period_s / line_period_s).round() as usize,
    )
}

/// Folds the first complete frame of `capture` into a min-max normalised image.
pub fn rasterize(capture: &BasebandCapture, line_period_s: f64, frame_period_s: f64) -> Result<RasterImage> {
    if !(line_period_s.is_finite() && frame_period_s.is_finite() && line_period_s > 0.0) {
        return Err(Error::invalid("periods must be finite and positive"));
    }
    if !(frame_period_s > line_period_s && frame_period_s / line_period_s >= 2.0) {
        return Err(Error::invalid(format!(
            "frame period {frame_period_s} must be at least twice the line period {line_period_s}"
        )));
    }
    let fs = capture.sample_rate_hz;
    let (width, height) = raster_dimensions(line_period_s, frame_period_s, fs);
    if width == 0 {
        return Err(Error::invalid("line period is shorter than one sample"));
    }
    let frame_samples = (frame_period_s * fs).round() as usize;
    let line_samples = line_period_s * fs;
    let last = ((height - 1) as f64 * line_samples + (width - 1) as f64).round() as usize;
    if capture.len() < frame_samples || last >= capture.len() {
        return Err(Error::InsufficientData(format!(
            "{} samples hold less than one {frame_samples}-sample frame",
            capture.len()
        )));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for r in 0..height {
        let base = r as f64 * line_samples;
        for c in 0..width {
            let idx = (base + c as f64).round() as usize;
            pixels.push(capture.samples[idx]);
        }
    }
    let (lo, hi) = pixels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in pixels.iter_mut() {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
    RasterImage::from_pixels(width, height, pixels)
}

/// Log-likelihood charged for each state change on top of the emission term.
pub const SWITCH_PENALTY: f64 = 3.0;
/// Cost of a pixel disagreeing with the pixel above or below it.
pub const VERTICAL_PENALTY: f64 = 1.0;
const SWEEPS: usize = 4;
const INIT_RADIUS: usize = 2;

/// Most likely state sequence of one row. Each row is a two-state chain
/// (background, ink) starting and ending in background; a state change must coincide
/// with an edge of height `a`, every other pixel is noise around 0.
/// `unary(x, s)` adds a per-pixel cost for state `s`.
fn viterbi_row(obs: &[f32], a: f64, k: f64, unary: impl Fn(usize, u8) -> f64, from: &mut [u8], out: &mut [f32]) {
    let (mut c0, mut c1) = (0.0f64, f64::INFINITY);
    for (x, &v) in obs.iter().enumerate() {
        let switch = k * a * (a - 2.0 * v as f64) + SWITCH_PENALTY;
        let (n0, b0) = if c0 <= c1 + switch { (c0, 0) } else { (c1 + switch, 1) };
        let (n1, b1) = if c1 <= c0 + switch { (c1, 1) } else { (c0 + switch, 0) };
        from[x] = b0 | (b1 << 1);
        (c0, c1) = (n0 + unary(x, 0), n1 + unary(x, 1));
    }
    let _ = c1;
    let mut state = 0u8;
    for x in (0..obs.len()).rev() {
        out[x] = state as f32;
        state = (from[x] >> state) & 1;
    }
}

/// Recovers a 0/1 ink mask from a transition-domain raster whose edges have
/// height `amplitude` over noise of deviation `sigma`.
///
/// Rows are first decoded independently from a five-row average, then
/// refined by sweeps that re-decode each row exactly given its neighbours,
/// with `VERTICAL_PENALTY` charged per disagreeing neighbour pixel.
pub fn decode_transitions(img: &RasterImage, amplitude: f32, sigma: f32) -> RasterImage {
    let (w, h) = img.dimensions();
    let mut out = RasterImage::new(w, h);
    if !(amplitude > 0.0) || w == 0 {
        return out;
    }
    let a = amplitude as f64;
    let sigma = (sigma as f64).max(a / 8.0);
    let k = 1.0 / (2.0 * sigma * sigma);
    let mut from = vec![0u8; w];
    let mut row = vec![0f32; w];

    let mut avg = vec![0f32; w];
    for y in 0..h {
        let ys = y.saturating_sub(INIT_RADIUS)..(y + INIT_RADIUS + 1).min(h);
        let n = ys.len() as f32;
        avg.iter_mut().for_each(|v| *v = 0.0);
        for yy in ys {
            avg.iter_mut().zip(img.row(yy)).for_each(|(s, &v)| *s += v / n);
        }
        viterbi_row(&avg, a, k * n as f64, |_, _| 0.0, &mut from, &mut row);
        out.row_mut(y).copy_from_slice(&row);
    }

    for _ in 0..SWEEPS {
        let mut changed = false;
        for y in 0..h {
            {
                let above = (y > 0).then(|| out.row(y - 1));
                let below = (y + 1 < h).then(|| out.row(y + 1));
                let unary = |x: usize, s: u8| {
                    let s = s as f32;
                    let mut c = 0.0;
                    if let Some(r) = above {
                        c += VERTICAL_PENALTY * f64::from(r[x] != s);
                    }
                    if let Some(r) = below {
                        c += VERTICAL_PENALTY * f64::from(r[x] != s);
                    }
                    c
                };
                viterbi_row(img.row(y), a, k, unary, &mut from, &mut row);
            }
            if out.row(y) != row.as_slice() {
                changed = true;
                out.row_mut(y).copy_from_slice(&row);
            }
        }
        if !changed {
            break;
        }
    }
    out
}

/// Typical edge height: the median of the upper Otsu class.
pub fn edge_amplitude(img: &RasterImage) -> f32 {
    let Some(t) = otsu_threshold(img.pixels()) else {
        return 0.0;
    };
    let mut upper: Vec<f32> = img.pixels().iter().copied().filter(|&v| v > t).collect();
    if upper.is_empty() {
        return 0.0;
    }
    let mid = upper.len() / 2;
    *upper.select_nth_unstable_by(mid, f32::total_cmp).1
}

/// Deviation of zero-mean noise clipped at 0, from samples known to carry no signal.
pub fn clipped_noise_sigma(samples: impl IntoIterator<Item = f32>) -> f32 {
    let (mut sum, mut n) = (0f64, 0usize);
    for v in samples {
        sum += (v as f64) * (v as f64);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (2.0 * sum / n as f64).sqrt() as f32
    }
}
