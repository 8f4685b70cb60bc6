//! Acceptance gate. Every criterion prints one `[ACCEPT]` line; the run
//! fails if any criterion does.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::panic;
use std::process::{Command, ExitCode};
use std::time::Instant;

use emsc_core::align::{decode_fiducial, detect_porches, embed_fiducial_with_levels, FIDUCIAL_CELL_PX};
use emsc_core::corpus::{derive_seed, frame_payload, generate_sample, PatchGrid, SampleSpec};
use emsc_core::eval::{compute_metrics, MatchCounts};
use emsc_core::intercept::{compose_reference, intercept, FrameStyle, InterceptConfig};
use emsc_core::pipeline::{load_config, run_pipeline, PipelineReport, BENCHMARK_FILE, TIMING_FILE};
use emsc_core::raster::{estimate_sync, rasterize};
use emsc_core::recognize::bitap_match;
use emsc_core::signal::{apply_channel, channel_snr_db, synthesize_emanation, EmanationModel, VideoTiming};
use emsc_core::{RasterImage, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn verdict(id: &str, what: &str, pass: bool, detail: impl std::fmt::Display) -> bool {
    println!("[ACCEPT] {id} {what} ... {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn pipeline(doc: Value, out: &Path) -> PipelineReport {
    let mut doc = doc;
    doc["output_dir"] = json!(out);
    let cfg = load_config(Some(doc), &[]).expect("config");
    run_pipeline(&cfg).expect("pipeline")
}

/// Counts whose precision and recall are exactly `p` and `r`.
fn counts_for(tp: usize, p: f64, r: f64) -> MatchCounts {
    let fp = (tp as f64 / p).round() as usize - tp;
    let fn_ = (tp as f64 / r).round() as usize - tp;
    MatchCounts { tp, fp, fn_ }
}

fn c1_metric_arithmetic() -> bool {
    let cases = [
        (861, 0.82, 0.42, 0.55),
        (99, 0.22, 0.09, 0.13),
        (33, 0.55, 0.15, 0.24),
    ];
    let mut all = true;
    let mut detail = Vec::new();
    for (tp, p, r, published) in cases {
        let m = compute_metrics(counts_for(tp, p, r));
        assert!((m.precision - p).abs() < 1e-12 && (m.recall - r).abs() < 1e-12);
        let ok = (m.f_score - published).abs() <= 0.005;
        all &= ok;
        detail.push(format!("({p},{r})->{:.6} vs {published}{}", m.f_score, if ok { "" } else { " off" }));
    }
    verdict("C1", "F-score from precision/recall pairs within 0.005", all, detail.join(", "))
}

fn c2_clean_pipeline_ceiling() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "sync": {"kind": "ground_truth"},
        "channel": {"attenuations_db": [0.0], "noise_sigma": 0.0},
        "frames": 16,
        "denoisers": [{"kind": "raw"}],
        "seed": 2
    });
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let report = pool.install(|| pipeline(doc, dir.path()));
    let secs = start.elapsed().as_secs_f64();
    let level = &report.levels[0];
    let n_chars = level.counts.tp + level.counts.fn_;
    let pass = n_chars >= 200 && level.metrics.f_score >= 0.95 && level.metrics.retrieval_ratio >= 0.95 && secs < 60.0;
    verdict(
        "C2",
        "clean pipeline f >= 0.95 and retrieval >= 0.95 on >= 200 characters in < 60 s",
        pass,
        format!(
            "{n_chars} chars, f={:.4}, retrieval={:.4}, {secs:.1} s single-threaded",
            level.metrics.f_score, level.metrics.retrieval_ratio
        )
    )
}

fn c3_degradation_sweep() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "channel": {"attenuations_db": [0.0, 8.0, 16.0, 24.0], "noise_sigma": 0.02},
        "frames": 8,
        "seed": 3
    });
    let start = Instant::now();
    let report = pipeline(doc, dir.path());
    let secs = start.elapsed().as_secs_f64();
    let f: Vec<f64> = report.levels.iter().map(|l| l.metrics.f_score).collect();
    let monotone = f.windows(2).all(|w| w[1] <= w[0] + 0.05);
    let pass = f.len() == 4 && monotone && f[3] < 0.5 && secs < 300.0;
    let shown: Vec<String> = f.iter().map(|v| format!("{v:.3}")).collect();
    verdict(
        "C3",
        "f non-increasing over 0/8/16/24 dB (0.05 slack), 24 dB below 0.5",
        pass,
        format!("sigma 0.02, f = [{}], {secs:.1} s", shown.join(", "))
    )
}

fn random_timing(rng: &mut ChaCha8Rng) -> VideoTiming {
    VideoTiming {
        h_active: rng.gen_range(160..=260),
        h_front_porch: rng.gen_range(4..=24),
        h_sync: rng.gen_range(8..=40),
        h_back_porch: rng.gen_range(8..=48),
        v_active: rng.gen_range(160..=220),
        v_front_porch: rng.gen_range(1..=6),
        v_sync: rng.gen_range(2..=6),
        v_back_porch: rng.gen_range(4..=20),
        pixel_clock_hz: 1.0e6,
    }
}

fn random_reference(t: &VideoTiming, rng: &mut ChaCha8Rng) -> RasterImage {
    let (fg, bg) = (rng.gen_range(0.7..=1.0), rng.gen_range(0.0..=0.3));
    let mut content = RasterImage::filled(t.h_active, t.v_active, bg);
    for _ in 0..12 {
        let w = rng.gen_range(2..20);
        let h = rng.gen_range(2..20);
        let x = rng.gen_range(0..t.h_active - w);
        let y = rng.gen_range(0..t.v_active - h);
        content.fill_rect(Rect::new(x, y, w, h), fg);
    }
    compose_reference(&content, t, FrameStyle { fg, bg, payload: rng.gen() }).unwrap()
}

fn c4_sync_recovery() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = EmanationModel::default();
    let (mut exact, mut close, mut trials) = (0, 0, 0);
    let mut min_snr = f64::INFINITY;
    for i in 0..20 {
        let t = random_timing(&mut rng);
        let reference = random_reference(&t, &mut rng);
        let fs = t.pixel_clock_hz;
        let clean = synthesize_emanation(&reference, &t, &model, fs, i).unwrap().repeated(3);
        let (lp, fp) = (t.line_period_s(), t.frame_period_s());
        let bounds = ((lp * 0.95, lp * 1.05), (fp * 0.95, fp * 1.05));
        let est = estimate_sync(&clean, bounds.0, bounds.1).unwrap();
        let line_ok = est.line_samples(fs).round() as usize == t.h_total();
        let frame_ok = est.frame_samples(fs).round() as usize == t.h_total() * t.v_total();
        exact += (line_ok && frame_ok) as usize;

        // clipping at zero removes noise power, so walk sigma down to 10 dB measured
        let power = clean.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / clean.len() as f64;
        let mut sigma = (2.0 * power / 10.0).sqrt();
        for _ in 0..4 {
            let probe = apply_channel(&clean, 0.0, sigma, derive_seed(i, 99)).unwrap();
            sigma *= 10f64.powf((channel_snr_db(&clean, &probe, 0.0) - 10.1) / 20.0);
        }
        for j in 0..5 {
            let noisy = apply_channel(&clean, 0.0, sigma, derive_seed(i, j)).unwrap();
            min_snr = min_snr.min(channel_snr_db(&clean, &noisy, 0.0));
            let est = estimate_sync(&noisy, bounds.0, bounds.1).unwrap();
            let within = |got: f64, want: f64| ((got - want) / want).abs() <= 1e-3;
            close += (within(est.line_period_s, lp) && within(est.frame_period_s, fp)) as usize;
            trials += 1;
        }
    }
    let pass = exact == 20 && min_snr >= 10.0 && close * 100 >= trials * 95;
    verdict(
        "C4",
        "exact periods at sigma 0, within 0.1% in >= 95% of trials at SNR >= 10 dB",
        pass,
        format!("exact {exact}/20, within {close}/{trials}, min SNR {min_snr:.2} dB")
    )
}

/// Minimal edit distance of `pat` against any substring of `text` ending at `end`.
fn oracle_errors(text: &[char], pat: &[char], end: usize) -> usize {
    (0..=end + 1)
        .map(|start| levenshtein(&text[start..=end], pat))
        .chain(std::iter::once(pat.len()))
        .min()
        .unwrap()
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + (ca != cb) as usize).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn c5_bitap_oracle() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet: Vec<char> = "ABCab01".chars().collect();
    let (mut agree, mut cases) = (0, 0);
    while cases < 1500 {
        let n = rng.gen_range(0..=64);
        let m = rng.gen_range(1..=12);
        let k = rng.gen_range(0..=3usize.min(m - 1));
        let text: Vec<char> = (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        let pat: Vec<char> = (0..m).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        let got: Vec<(usize, usize)> = bitap_match(&text.iter().collect::<String>(), &pat.iter().collect::<String>(), k)
            .unwrap()
            .iter()
            .map(|b| (b.end, b.errors))
            .collect();
        let want: Vec<(usize, usize)> = (0..n)
            .map(|end| (end, oracle_errors(&text, &pat, end)))
            .filter(|&(_, e)| e <= k)
            .collect();
        agree += (got == want) as usize;
        cases += 1;
    }
    verdict(
        "C5",
        "bit-parallel matcher equals brute-force edit-distance oracle",
        agree == cases,
        format!("{agree}/{cases} cases")
    )
}

fn c6_porch_detection() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = EmanationModel::default();
    let (mut exact, mut invariant) = (0, 0);
    for i in 0..20 {
        let t = random_timing(&mut rng);
        let reference = random_reference(&t, &mut rng);
        let cap = synthesize_emanation(&reference, &t, &model, t.pixel_clock_hz, i).unwrap();
        let raster = rasterize(&cap, t.line_period_s(), t.frame_period_s()).unwrap();
        let off = detect_porches(&raster).unwrap();
        exact += ((off.col_boundary, off.row_boundary) == t.active_origin()) as usize;
        let (a, b) = (rng.gen_range(0.2..0.7f32), rng.gen_range(0.0..0.3f32));
        let mapped = detect_porches(&raster.map(|v| a * v + b)).unwrap();
        invariant += ((mapped.col_boundary, mapped.row_boundary) == (off.col_boundary, off.row_boundary)) as usize;
    }
    verdict(
        "C6",
        "exact porch boundaries on 20 geometries, invariant under affine intensity maps",
        exact == 20 && invariant == 20,
        format!("exact {exact}/20, invariant {invariant}/20")
    )
}

fn shifted(img: &RasterImage, dx: isize, dy: isize, fill: f32) -> RasterImage {
    let (w, h) = (img.width() as isize, img.height() as isize);
    RasterImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = (x as isize - dx, y as isize - dy);
        if (0..w).contains(&sx) && (0..h).contains(&sy) {
            img.get(sx as usize, sy as usize)
        } else {
            fill
        }
    })
}

fn c7_fiducial_validation() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut shifts, mut shift_rejected) = (0, 0);
    let (mut flips, mut flip_rejected) = (0, 0);
    for _ in 0..40 {
        let payload: u16 = rng.gen();
        let mut img = RasterImage::filled(256, 256, 0.1);
        embed_fiducial_with_levels(&mut img, payload, 0.9, 0.1).unwrap();
        assert_eq!(decode_fiducial(&img), Some(payload));
        for (dx, dy) in [(8, 0), (-8, 0), (0, 8), (0, -8), (8, 8), (-8, -8), (8, -8), (-8, 8)] {
            shifts += 1;
            shift_rejected += (decode_fiducial(&shifted(&img, dx, dy, 0.1)) != Some(payload)) as usize;
        }
        for r in 0..8 {
            for c in 0..8 {
                let mut bad = img.clone();
                let cell = Rect::new(c * FIDUCIAL_CELL_PX, r * FIDUCIAL_CELL_PX, FIDUCIAL_CELL_PX, FIDUCIAL_CELL_PX);
                let on = img.get(cell.x + 1, cell.y + 1) > 0.5;
                bad.fill_rect(cell, if on { 0.1 } else { 0.9 });
                flips += 1;
                flip_rejected += (decode_fiducial(&bad) != Some(payload)) as usize;
            }
        }
    }

    let timing = VideoTiming::vga_640x480();
    let cfg = InterceptConfig::new(timing);
    let grid = PatchGrid {
        rows: 1,
        cols: 2,
        patch_size: 256,
    };
    let mut accepted = 0;
    for i in 0..200 {
        let seed = derive_seed(7, i);
        let sample = generate_sample(&SampleSpec::default(), grid, seed).unwrap();
        let style = FrameStyle {
            fg: sample.meta.fg_level,
            bg: sample.meta.bg_level,
            payload: frame_payload(seed),
        };
        let reference = compose_reference(&sample.image, &timing, style).unwrap();
        let got = intercept(&reference, &cfg, 18.0, 0.02, seed).unwrap();
        accepted += (decode_fiducial(&got.recovered) == Some(style.payload)) as usize;
    }
    let pass = shift_rejected == shifts && flip_rejected == flips && accepted >= 190;
    verdict(
        "C7",
        "rejects 8-px shifts and single-cell corruptions, accepts >= 95% at 18 dB / sigma 0.02",
        pass,
        format!("shifts {shift_rejected}/{shifts}, cells {flip_rejected}/{flips}, accepted {accepted}/200")
    )
}

fn emsc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emsc"))
}

fn c8_alarm_protocol() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "channel": {"attenuations_db": [8.0], "noise_sigma": 0.02},
        "frames": 100,
        "plant": {"text": "SECRET", "size_pt": 20, "x": 290, "y": 100, "stride": 2},
        "alarm": {"watchlist": ["SECRET"], "max_errors": 1},
        "seed": 8
    });
    let report = pipeline(doc.clone(), &dir.path().join("trials"));
    let planted = report.alarms.iter().filter(|a| a.planted).count();
    let correct = report.alarms.iter().filter(|a| a.correct()).count();

    // exit codes: 2 when raised, 0 when clear, 1 on error
    let cfg_path = dir.path().join("alarm.json");
    let mut small = doc;
    small["frames"] = json!(2);
    fs::write(&cfg_path, small.to_string()).unwrap();
    let run = |extra: &[&str], out: &str| {
        emsc()
            .args(["pipeline", "-c"])
            .arg(&cfg_path)
            .arg("-o")
            .arg(dir.path().join(out))
            .args(extra)
            .output()
            .unwrap()
            .status
            .code()
    };
    let raised = run(&[], "raised");
    let clear = run(&["-s", "alarm.watchlist=[\"QQQQQ\"]"], "clear");
    let invalid = run(&["-s", "channel.attenuations_db=[-1]"], "invalid");
    let dets = dir.path().join("raised/level0_8dB/frame0000/detections/raw/frame.jsonl");
    let alarm_cmd = |kw: &str| {
        emsc()
            .args(["alarm", "-i"])
            .arg(&dets)
            .args(["-k", kw])
            .output()
            .unwrap()
            .status
            .code()
    };
    let codes = [raised, clear, invalid, alarm_cmd("SECRET"), alarm_cmd("QQQQQ")];
    let codes_ok = codes == [Some(2), Some(0), Some(1), Some(2), Some(0)];
    let pass = report.alarms.len() == 100 && planted == 50 && correct >= 95 && codes_ok;
    verdict(
        "C8",
        "alarm verdict correct in >= 95 of 100 trials at 8 dB, exit codes 2/0/1",
        pass,
        format!("{correct}/{} correct ({planted} planted), exit codes {codes:?}", report.alarms.len())
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c9_determinism() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let first = dir.path().join("first");
    let doc = json!({
        "channel": {"attenuations_db": [0.0, 12.0], "noise_sigma": 0.02},
        "frames": 3,
        "denoisers": [{"kind": "raw"}, {"kind": "median", "k": 3}],
        "plant": {"text": "KEY", "size_pt": 24, "x": 300, "y": 120, "stride": 2},
        "alarm": {"watchlist": ["KEY"], "max_errors": 1},
        "save_captures": true,
        "seed": 9
    });
    pipeline(doc.clone(), &out);
    fs::rename(&out, &first).unwrap();
    pipeline(doc, &out);
    let timing = |p: &PathBuf| p == Path::new(TIMING_FILE) || p == Path::new(BENCHMARK_FILE);
    let a: BTreeMap<_, _> = tree(&first).into_iter().filter(|(p, _)| !timing(p)).collect();
    let b: BTreeMap<_, _> = tree(&out).into_iter().filter(|(p, _)| !timing(p)).collect();
    let differing = a.iter().filter(|(p, bytes)| b.get(*p) != Some(bytes)).count();
    let pass = !a.is_empty() && a.len() == b.len() && differing == 0;
    verdict(
        "C9",
        "identical seeds give byte-identical non-timing artifacts",
        pass,
        format!("{} files compared, {differing} differ", a.len())
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> bool); 9] = [
        ("C1", c1_metric_arithmetic),
        ("C2", c2_clean_pipeline_ceiling),
        ("C3", c3_degradation_sweep),
        ("C4", c4_sync_recovery),
        ("C5", c5_bitap_oracle),
        ("C6", c6_porch_detection),
        ("C7", c7_fiducial_validation),
        ("C8", c8_alarm_protocol),
        ("C9", c9_determinism),
    ];
    let mut failed = Vec::new();
    for (id, check) in criteria {
        let ok = panic::catch_unwind(check).unwrap_or_else(|_| {
            println!("[ACCEPT] {id} ... FAIL (panicked)");
            false
        });
        if !ok {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
