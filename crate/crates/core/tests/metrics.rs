mod common;

use std::collections::HashMap;

use common::oracles::{oracle_entropy, oracle_pair_mi, oracle_sd, oracle_sf, shannon};
use common::{random_image, random_level_image};
use proptest::prelude::*;
use tgfuse::autodiff::Graph;
use tgfuse::data::{noise_image, synthetic_pair, test_card};
use tgfuse::loss::{ssim_map, SsimConstants, WindowSpec};
use tgfuse::metrics::{
    entropy, evaluate_all, fmi, fmi_with, ms_ssim, ms_ssim_pair, mutual_information, q_abf,
    spatial_frequency, standard_deviation, vif_fusion, write_csv, FmiFeature, FmiOptions,
    MsSsimOptions, MsWindow,
};
use tgfuse::Image;

#[test]
fn basic_metrics_match_direct_definitions() {
    for seed in 0..5 {
        let a = random_level_image(8, 8, 10 + seed);
        let b = random_level_image(8, 8, 20 + seed);
        let f = random_level_image(8, 8, 30 + seed);
        assert!((entropy(&f) - oracle_entropy(&f)).abs() < 1e-10);
        assert!((standard_deviation(&f) - oracle_sd(&f)).abs() < 1e-10);
        assert!((spatial_frequency(&f).unwrap() - oracle_sf(&f)).abs() < 1e-10);
        let mi = mutual_information(&a, &b, &f).unwrap();
        let want = oracle_pair_mi(&f, &a) + oracle_pair_mi(&f, &b);
        assert!((mi - want).abs() < 1e-10, "{mi} vs {want}");
    }
}

#[test]
fn closed_forms() {
    let stripes = Image::from_fn(8, 8, |x, _| (x % 2) as f64);
    assert!((spatial_frequency(&stripes).unwrap() - 255.0).abs() < 1e-12);
    let half = Image::from_fn(16, 16, |_, y| if y < 8 { 0.0 } else { 1.0 });
    assert!((entropy(&half) - 1.0).abs() < 1e-12);
    let board = Image::from_fn(8, 8, |x, y| ((x + y) % 2) as f64);
    assert!((standard_deviation(&board) - 127.5).abs() < 1e-12);
    let flat = Image::filled(16, 16, 0.4);
    assert_eq!(
        (entropy(&flat), standard_deviation(&flat), spatial_frequency(&flat).unwrap()),
        (0.0, 0.0, 0.0)
    );
}

#[test]
fn degenerate_identities() {
    let card = test_card(64, 64);
    let en = entropy(&card);
    let mi = mutual_information(&card, &card, &card).unwrap();
    assert!((mi - 2.0 * en).abs() < 1e-10);
    assert!((ms_ssim(&card, &card, &card).unwrap() - 1.0).abs() < 1e-9);
    assert!(q_abf(&card, &card, &card).unwrap() >= 0.99);
    assert!((vif_fusion(&card, &card, &card).unwrap() - 1.0).abs() < 1e-6);
    for kind in [FmiFeature::Pixel, FmiFeature::Wavelet] {
        assert!(fmi(&card, &card, &card, kind).unwrap() >= 0.99);
    }
    let r = evaluate_all("card", &card, &card, &card).unwrap();
    assert_eq!(r.ms_ssim, 1.0);
    assert!(r.q_abf >= 0.99 && (r.mi - 2.0 * r.en).abs() < 1e-10);
}

#[test]
fn unrelated_fusions_score_low() {
    let noise = noise_image(64, 64, 2);
    // Few-level sources keep the 256-bin plug-in estimate free of sampling bias.
    let blocks = |seed: u64| {
        let cells = random_level_image(8, 8, seed);
        Image::from_fn(64, 64, |x, y| (cells.at(x / 8, y / 8) * 3.0).round() / 3.0)
    };
    let (a, b) = (blocks(11), blocks(12));
    assert!(mutual_information(&a, &b, &noise).unwrap() < 0.2 * 2.0);
    let (ir, vis) = synthetic_pair(64, 64, 1);
    for (a, b) in [(&ir, &vis), (&test_card(64, 64), &test_card(64, 64))] {
        for kind in [FmiFeature::Pixel, FmiFeature::Wavelet] {
            let v = fmi(a, b, &noise, kind).unwrap();
            assert!(v < 0.3, "{kind:?}: {v}");
        }
    }
    let flat = Image::filled(64, 64, 0.5);
    assert!(q_abf(&ir, &vis, &flat).unwrap() < 0.05);
}

#[test]
fn symmetric_in_sources() {
    let (a, b) = synthetic_pair(48, 48, 3);
    let f = a.map(|v| 0.5 * v) .map(|v| v + 0.25 * 0.5);
    let f = Image::from_fn(48, 48, |x, y| 0.5 * (f.at(x, y) + b.at(x, y)));
    assert!((q_abf(&a, &b, &f).unwrap() - q_abf(&b, &a, &f).unwrap()).abs() < 1e-12);
    assert!((ms_ssim(&a, &b, &f).unwrap() - ms_ssim(&b, &a, &f).unwrap()).abs() < 1e-12);
    assert!((vif_fusion(&a, &b, &f).unwrap() - vif_fusion(&b, &a, &f).unwrap()).abs() < 1e-12);
}

#[test]
fn single_scale_ms_ssim_is_mean_ssim() {
    let x = random_image(40, 36, 4);
    let y = random_image(40, 36, 5).map(|v| 0.5 * v + 0.25);
    let opts = MsSsimOptions {
        max_scales: 1,
        window: MsWindow::Uniform { size: 11 },
    };
    let got = ms_ssim_pair(&x, &y, opts).unwrap();
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.to_tensor::<f64>()), g.constant(y.to_tensor::<f64>()));
    let m = ssim_map(&mut g, a, b, WindowSpec::default(), SsimConstants::default()).unwrap();
    let mean = g.mean(m).unwrap();
    let want = g.value(mean).item();
    assert!(want > 0.0);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

/// Normalized MI averaged over every stride-1 window, from the definition.
fn oracle_fmi_pixel(a: &Image, b: &Image, f: &Image, opts: FmiOptions) -> f64 {
    let quant = |img: &Image| -> Vec<usize> {
        let lo = img.pixels().iter().cloned().fold(f64::MAX, f64::min);
        let hi = img.pixels().iter().cloned().fold(f64::MIN, f64::max);
        img.pixels()
            .iter()
            .map(|&v| {
                if hi == lo {
                    0
                } else {
                    (((v - lo) / (hi - lo)) * opts.bins as f64).floor().min(opts.bins as f64 - 1.0) as usize
                }
            })
            .collect()
    };
    let (w, h, k) = (f.width(), f.height(), opts.window);
    let qf = quant(f);
    let mut sum = 0.0;
    for src in [a, b] {
        let qs = quant(src);
        let mut total = 0.0;
        let mut count = 0.0;
        for r0 in 0..=h - k {
            for c0 in 0..=w - k {
                let (mut hs, mut hf, mut j) = (HashMap::new(), HashMap::new(), HashMap::new());
                for r in r0..r0 + k {
                    for c in c0..c0 + k {
                        let (s, t) = (qs[r * w + c], qf[r * w + c]);
                        *hs.entry(s).or_insert(0) += 1;
                        *hf.entry(t).or_insert(0) += 1;
                        *j.entry((s, t)).or_insert(0) += 1;
                    }
                }
                let n = (k * k) as f64;
                let (es, ef) = (shannon(&hs, n), shannon(&hf, n));
                total += if es + ef == 0.0 {
                    1.0
                } else {
                    (2.0 * (es + ef - shannon(&j, n)) / (es + ef)).clamp(0.0, 1.0)
                };
                count += 1.0;
            }
        }
        sum += total / count;
    }
    sum / 2.0
}

#[test]
fn pixel_fmi_matches_regional_oracle() {
    for (seed, opts) in [(1, FmiOptions::default()), (2, FmiOptions { window: 5, bins: 6 })] {
        let (a, b) = synthetic_pair(24, 20, seed);
        let f = random_image(24, 20, seed + 10).map(|v| 0.5 * v);
        let f = Image::from_fn(24, 20, |x, y| f.at(x, y) + 0.5 * a.at(x, y));
        let got = fmi_with(&a, &b, &f, FmiFeature::Pixel, opts).unwrap();
        let want = oracle_fmi_pixel(&a, &b, &f, opts);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn vif_orders_distortions() {
    let card = test_card(64, 64);
    let reduced = card.map(|v| 0.5 * v + 0.25);
    let v = vif_fusion(&card, &card, &reduced).unwrap();
    assert!(v > 0.0 && v < 1.0, "{v}");
    let mut last = 1.0 + 1e-9;
    for (i, amp) in [0.02, 0.05, 0.1, 0.2].into_iter().enumerate() {
        let noise = noise_image(64, 64, 40 + i as u64);
        let noisy = Image::from_fn(64, 64, |x, y| card.at(x, y) + amp * (noise.at(x, y) - 0.5));
        let v = vif_fusion(&card, &card, &noisy).unwrap();
        assert!(v < last, "amplitude {amp}: {v} !< {last}");
        last = v;
    }
}

#[test]
fn size_limits() {
    let small = Image::filled(15, 40, 0.5);
    assert!(ms_ssim(&small, &small, &small).is_err());
    let small = Image::filled(31, 40, 0.5);
    assert!(vif_fusion(&small, &small, &small).is_err());
    let small = Image::filled(7, 40, 0.5);
    assert!(fmi(&small, &small, &small, FmiFeature::Pixel).is_err());
    let mismatched = Image::filled(40, 41, 0.5);
    let ok = Image::filled(40, 40, 0.5);
    assert!(evaluate_all("x", &ok, &ok, &mismatched).is_err());
}

#[test]
fn csv_report_columns_and_determinism() {
    let (a, b) = synthetic_pair(32, 32, 6);
    let f = Image::from_fn(32, 32, |x, y| 0.5 * (a.at(x, y) + b.at(x, y)));
    let r1 = evaluate_all("p", &a, &b, &f).unwrap();
    let r2 = evaluate_all("p", &a, &b, &f).unwrap();
    assert_eq!(r1.values().map(f64::to_bits), r2.values().map(f64::to_bits));
    assert_eq!(r1.q_abf, q_abf(&a, &b, &f).unwrap());
    assert_eq!(r1.vif, vif_fusion(&a, &b, &f).unwrap());
    let mut out = Vec::new();
    write_csv(&mut out, &[r1.clone()]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "image,SF,EN,Qabf,FMIw,MS-SSIM,FMIpixel,MI,SD,VIF");
    let row: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(row.len(), 9);
    for (got, want) in row.iter().zip(r1.values()) {
        assert!((got - want).abs() < 1e-6);
    }
}

fn check_ranges(a: &Image, b: &Image, f: &Image) {
    let r = evaluate_all("r", a, b, f).unwrap();
    assert!((0.0..=8.0).contains(&r.en));
    assert!((0.0..=1.0).contains(&r.q_abf));
    assert!((0.0..=1.0).contains(&r.ms_ssim));
    assert!((0.0..=1.0).contains(&r.fmi_w) && (0.0..=1.0).contains(&r.fmi_pixel));
    assert!(r.sd >= 0.0 && r.sf >= 0.0 && r.mi >= 0.0 && r.vif >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metrics_are_flip_invariant_and_in_range(seed in 0u64..10_000, w in 4usize..7, h in 4usize..7) {
        let (w, h) = (8 * w, 8 * h);
        let (a, b) = synthetic_pair(w, h, seed);
        let noise = random_image(w, h, seed + 1);
        let f = Image::from_fn(w, h, |x, y| 0.4 * a.at(x, y) + 0.4 * b.at(x, y) + 0.2 * noise.at(x, y));
        check_ranges(&a, &b, &f);
        let r = evaluate_all("r", &a, &b, &f).unwrap();
        let flipped = evaluate_all("r", &a.flip_horizontal(), &b.flip_horizontal(), &f.flip_horizontal()).unwrap();
        for (i, (x, y)) in r.values().iter().zip(flipped.values()).enumerate() {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "metric {}: {} vs {}", i, x, y);
        }
    }

    #[test]
    fn multiscale_metrics_commute_with_flips_at_odd_sizes(seed in 0u64..10_000, w in 33usize..48, h in 33usize..48) {
        let (a, b) = synthetic_pair(w, h, seed);
        let f = Image::from_fn(w, h, |x, y| 0.5 * (a.at(x, y) + b.at(x, y)));
        for flip in [Image::flip_horizontal, Image::flip_vertical] {
            let (fa, fb, ff) = (flip(&a), flip(&b), flip(&f));
            let (m0, m1) = (ms_ssim(&a, &b, &f).unwrap(), ms_ssim(&fa, &fb, &ff).unwrap());
            prop_assert!((m0 - m1).abs() < 1e-9, "ms_ssim {} vs {}", m0, m1);
            let (v0, v1) = (vif_fusion(&a, &b, &f).unwrap(), vif_fusion(&fa, &fb, &ff).unwrap());
            prop_assert!((v0 - v1).abs() < 1e-9 * v0.abs().max(1.0), "vif {} vs {}", v0, v1);
        }
    }
}
