use emsc_core::align::crc16_ccitt_false;
use emsc_core::corpus::points_to_px;
use emsc_core::eval::{compute_metrics, match_characters, MatchCounts, CSV_HEADER};
use emsc_core::image::otsu_threshold;
use emsc_core::recognize::{bitap_match, evaluate_alarm, AlarmPolicy};
use emsc_core::signal::{BasebandCapture, VideoTiming};
use emsc_core::RasterImage;

fn counts(tp: usize, fp: usize, fn_: usize) -> MatchCounts {
    MatchCounts { tp, fp, fn_ }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 5e-7
}

#[test]
fn crc_check_value() {
    assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    assert_eq!(crc16_ccitt_false(b""), 0xFFFF);
}

#[test]
fn metrics_from_counts() {
    let table = [
        (counts(861, 189, 1189), 0.82, 0.42, 0.555484),
        (counts(99, 351, 1001), 0.22, 0.09, 0.127742),
        (counts(33, 27, 187), 0.55, 0.15, 0.235714),
        (counts(0, 5, 5), 0.0, 0.0, 0.0),
        (counts(0, 0, 0), 1.0, 1.0, 1.0),
    ];
    for (c, p, r, f) in table {
        let m = compute_metrics(c);
        assert!(close(m.precision, p), "{c:?}: precision {}", m.precision);
        assert!(close(m.recall, r), "{c:?}: recall {}", m.recall);
        assert!(close(m.f_score, f), "{c:?}: f {}", m.f_score);
        assert_eq!(m.retrieval_ratio, m.recall);
    }
}

#[test]
fn multiset_matching() {
    let c = match_characters(&['A', 'A', 'B'], &['A', 'B', 'C']);
    assert_eq!(c, counts(2, 1, 1));
    assert_eq!(match_characters(&[], &['x']), counts(0, 1, 0));
}

#[test]
fn bitap_cases() {
    let ends = |t: &str, p: &str, k: usize| -> Vec<(usize, usize)> {
        bitap_match(t, p, k).unwrap().into_iter().map(|m| (m.end, m.errors)).collect()
    };
    assert_eq!(ends("abcdef", "bcd", 0), vec![(3, 0)]);
    assert_eq!(ends("abd", "abc", 1), vec![(1, 1), (2, 1)]);
    assert_eq!(ends("xxSECRFTxx", "SECRET", 1), vec![(7, 1)]);
    assert_eq!(ends("SECRETSECRET", "SECRET", 0), vec![(5, 0), (11, 0)]);
    assert!(ends("nothing", "SECRET", 2).is_empty());
    assert!(bitap_match("abc", "", 0).is_err());
    assert!(bitap_match("abc", "ab", 2).is_err());
}

#[test]
fn alarm_cases() {
    let policy = AlarmPolicy {
        watchlist: vec!["SECRET".into()],
        max_errors: 1,
    };
    let hit = evaluate_alarm(&["ab".into(), "xSECRFTy".into()], &policy).unwrap();
    assert!(hit.triggered);
    assert!(hit.matches.iter().all(|m| m.line_index == 1));
    let miss = evaluate_alarm(&["SEC RT".into()], &policy).unwrap();
    assert!(!miss.triggered);
}

#[test]
fn otsu_cases() {
    assert_eq!(otsu_threshold(&[0.1, 0.1, 0.9, 0.9]), Some(0.1));
    assert_eq!(otsu_threshold(&[0.0, 0.0, 0.0, 0.2, 0.8, 1.0]), Some(0.2));
    assert_eq!(otsu_threshold(&[0.5, 0.5]), None);
}

#[test]
fn vga_rates() {
    let t = VideoTiming::vga_640x480();
    assert_eq!((t.h_total(), t.v_total()), (800, 525));
    assert!((t.line_rate_hz() - 31_468.75).abs() < 1e-9);
    assert!((t.frame_rate_hz() - 59.940_476).abs() < 1e-5);
    assert_eq!(t.samples_per_frame(t.pixel_clock_hz), 420_000);
    assert_eq!(t.active_origin(), (144, 35));
}

#[test]
fn glyph_heights() {
    assert_eq!(points_to_px(11), 15);
    assert_eq!(points_to_px(12), 16);
    assert_eq!(points_to_px(20), 27);
    assert_eq!(points_to_px(70), 93);
}

#[test]
fn emcb_bytes() {
    let cap = BasebandCapture::new(2.0, vec![1.0], "x").unwrap();
    let mut want = b"EMCB".to_vec();
    want.extend([1, 0]);
    want.extend([0, 0, 0, 0, 0, 0, 0, 0x40]);
    want.extend([1, 0, 0, 0, 0, 0, 0, 0]);
    want.extend([0, 0, 0x80, 0x3f]);
    assert_eq!(cap.to_bytes(), want);
}

#[test]
fn pgm_bytes() {
    let img = RasterImage::from_pixels(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
    assert_eq!(img.to_pgm(), b"P5\n3 1\n255\n\x00\x80\xff".to_vec());
}

#[test]
fn csv_header() {
    assert_eq!(
        CSV_HEADER,
        "denoiser,ocr,f_score,precision,recall,retrieval_ratio,n_patches,wall_time_s"
    );
}
