mod common;

use common::oracles::ssim_oracle;
use common::rng;
use orthoct_core::data::{build_phantom, generate_phantom, PhantomSpec};
use orthoct_core::geometry::Volume;
use orthoct_core::losses::PerceptualExtractor;
use orthoct_core::metrics::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn vol(dims: [usize; 3], values: Vec<f64>) -> Volume<f64> {
    Volume::new(dims, [1.0; 3], values).unwrap()
}

fn random_hu(seed: u64, dims: [usize; 3]) -> Volume<f64> {
    let mut r = rng(seed);
    let n = dims.iter().product();
    vol(dims, (0..n).map(|_| r.gen_range(-1000.0..1000.0)).collect())
}

fn add_noise(v: &Volume<f64>, std: f64, seed: u64) -> Volume<f64> {
    let mut r = rng(seed);
    let d = Normal::new(0.0, std).unwrap();
    vol(
        v.dims,
        v.values.iter().map(|x| x + d.sample(&mut r)).collect(),
    )
}

fn phantom64(seed: u64) -> Volume<f64> {
    generate_phantom(&PhantomSpec::desk(seed)).unwrap().cast()
}

#[test]
fn mae_cases() {
    let a = random_hu(1, [4, 5, 6]);
    assert_eq!(mae(&a, &a).unwrap(), 0.0);
    let shifted = vol(a.dims, a.values.iter().map(|x| x + 10.0).collect());
    assert!((mae(&shifted, &a).unwrap() - 10.0).abs() < 1e-12);
    let b = random_hu(2, [4, 5, 6]);
    let mut naive = 0.0;
    for i in 0..a.len() {
        naive += (a.values[i] - b.values[i]).abs();
    }
    assert_eq!(mae(&a, &b).unwrap(), naive / a.len() as f64);
    assert!(mae(&a, &random_hu(3, [4, 5, 5])).is_err());
}

#[test]
fn psnr_cases() {
    let a = random_hu(4, [4, 4, 4]);
    assert_eq!(psnr(&a, &a, PSNR_PEAK).unwrap(), 100.0);
    let off = vol(a.dims, a.values.iter().map(|x| x - 20.0).collect());
    assert!((psnr(&off, &a, 2000.0).unwrap() - 40.0).abs() < 1e-9);
    for d in [1.0, 7.5, 300.0] {
        let off = vol(a.dims, a.values.iter().map(|x| x + d).collect());
        let want = 20.0 * (2000.0 / d).log10();
        assert!((psnr(&off, &a, 2000.0).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn ssim_identity_is_exactly_one() {
    let a = phantom64(1);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let r = random_hu(5, [16, 13, 3]);
    assert_eq!(ssim(&r, &r).unwrap(), 1.0);
}

#[test]
fn ssim_matches_direct_window_oracle() {
    for seed in 0..5 {
        let a = random_hu(10 + seed, [16, 14, 2]);
        let b = add_noise(&a, 300.0, 20 + seed);
        let got = ssim(&b, &a).unwrap();
        let want = ssim_oracle(&b, &a);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    let p = phantom64(2);
    let q = add_noise(&p, 100.0, 3);
    assert!((ssim(&q, &p).unwrap() - ssim_oracle(&q, &p)).abs() < 1e-6);
}

#[test]
fn ssim_negative_for_anticorrelated_ramp() {
    let dims = [16, 16, 1];
    let mut gt = Vec::new();
    for y in 0..16 {
        for x in 0..16 {
            gt.push(100.0 + 40.0 * x as f64 + 20.0 * y as f64);
        }
    }
    let gt = vol(dims, gt);
    // both images stay positive so only the structure term changes sign
    let pred = vol(dims, gt.values.iter().map(|v| 1700.0 - v).collect());
    let s = ssim(&pred, &gt).unwrap();
    assert!(s < 0.0, "ssim {s}");
    assert!(ssim(
        &vol([8, 8, 1], vec![0.0; 64]),
        &vol([8, 8, 1], vec![0.0; 64])
    )
    .is_err());
}

#[test]
fn vif_identity_is_exactly_one() {
    let a = phantom64(3);
    assert_eq!(vif(&a, &a).unwrap(), 1.0);
    let r = random_hu(6, [16, 16, 2]);
    assert_eq!(vif(&r, &r).unwrap(), 1.0);
}

#[test]
fn vif_small_under_heavy_noise() {
    let gt = phantom64(4);
    let mean = gt.values.iter().sum::<f64>() / gt.len() as f64;
    let signal_var = gt.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gt.len() as f64;
    let noise_std = 1.5 * signal_var.sqrt();
    // SNR = 10 log10(signal / noise) < 0 dB
    assert!(10.0 * (signal_var / (noise_std * noise_std)).log10() < 0.0);
    let noisy = add_noise(&gt, noise_std, 9);
    let v = vif(&noisy, &gt).unwrap();
    assert!(v < 0.2, "vif {v}");
}

#[test]
fn vif_decreases_with_noise() {
    let gt = phantom64(5);
    let sweep: Vec<f64> = [5.0, 20.0, 60.0, 150.0, 400.0]
        .iter()
        .map(|&s| vif(&add_noise(&gt, s, 77), &gt).unwrap())
        .collect();
    for w in sweep.windows(2) {
        assert!(w[1] < w[0], "{sweep:?}");
    }
    assert!(sweep[0] < 1.0);
}

fn extractor() -> PerceptualExtractor<f32> {
    PerceptualExtractor::desk().unwrap()
}

#[test]
fn perceptual_distance_properties() {
    let ex = extractor();
    let a = phantom64(6);
    assert_eq!(perceptual_distance(&ex, &a, &a).unwrap(), 0.0);
    let b = add_noise(&a, 50.0, 1);
    let ab = perceptual_distance(&ex, &a, &b).unwrap();
    let ba = perceptual_distance(&ex, &b, &a).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, ba);
    let mut prev = 0.0;
    for s in [10.0, 40.0, 160.0, 640.0] {
        let d = perceptual_distance(&ex, &add_noise(&a, s, 2), &a).unwrap();
        assert!(d > prev, "scale {s}: {d} <= {prev}");
        prev = d;
    }
}

#[test]
fn lung_segmentation_recovers_analytic_lungs() {
    for seed in 0..10 {
        let p = build_phantom(&PhantomSpec::desk(seed)).unwrap();
        let mask = lung_mask(&p.volume);
        let truth = p.lung_mask.iter().filter(|&&b| b).count();
        let hit = mask
            .voxels
            .iter()
            .zip(&p.lung_mask)
            .filter(|(m, t)| **m && **t)
            .count();
        assert!(
            hit as f64 >= 0.95 * truth as f64,
            "seed {seed}: {hit}/{truth}"
        );
    }
}

#[test]
fn lung_segmentation_degenerate_cases() {
    let air = Volume::filled([8, 8, 4], [1.0; 3], -1000.0f64).unwrap();
    let body = body_mask(&air, BODY_THRESHOLD);
    assert_eq!(body.count(), 0);
    assert_eq!(
        segment_lung(&air, LUNG_THRESHOLD, &body).unwrap().count(),
        0
    );
    let p = phantom64(1);
    let body = body_mask(&p, BODY_THRESHOLD);
    assert!(body.count() > 0);
    assert_eq!(segment_lung(&p, -1024.0, &body).unwrap().count(), 0);
}

#[test]
fn dice_hand_cases() {
    let dims = [3, 1, 1];
    let m = |v: [bool; 3]| BinaryMask::new(dims, v.to_vec()).unwrap();
    assert_eq!(
        dice(&m([true, true, false]), &m([true, true, false])).unwrap(),
        1.0
    );
    assert_eq!(
        dice(&m([true, false, false]), &m([false, true, false])).unwrap(),
        0.0
    );
    assert_eq!(
        dice(&m([true, true, false]), &m([false, true, true])).unwrap(),
        0.5
    );
    assert_eq!(dice(&m([false; 3]), &m([false; 3])).unwrap(), 1.0);
    assert!(dice(&m([false; 3]), &BinaryMask::empty([1, 3, 1])).is_err());
}

#[test]
fn evaluate_identity_rows_and_format() {
    let ex = extractor();
    let gts: Vec<(String, Volume<f64>)> = (0..3).map(|i| (format!("v{i}"), phantom64(i))).collect();
    let report = evaluate(&gts, &gts, &ex).unwrap();
    for r in &report.rows {
        assert_eq!(
            (r.mae, r.psnr, r.ssim, r.vif, r.perceptual, r.dice),
            (0.0, 100.0, 1.0, 1.0, 0.0, 1.0)
        );
    }
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "volume,mae,psnr,ssim,vif,perceptual,dice");
    assert_eq!(lines.len(), 1 + 3 + 2);
    assert!(lines[4].starts_with("mean,"));
    assert!(lines[5].starts_with("std,"));
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        for f in &fields[1..] {
            f.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn evaluate_is_order_independent_and_checks_pairing() {
    let ex = extractor();
    let gts: Vec<(String, Volume<f64>)> = (0..3).map(|i| (format!("v{i}"), phantom64(i))).collect();
    let preds: Vec<(String, Volume<f64>)> = gts
        .iter()
        .enumerate()
        .map(|(i, (n, v))| (n.clone(), add_noise(v, 40.0, i as u64)))
        .collect();
    let a = evaluate(&preds, &gts, &ex).unwrap();
    let mut shuffled = preds.clone();
    shuffled.reverse();
    let b = evaluate(&shuffled, &gts, &ex).unwrap();
    assert_eq!(a, b);
    assert!(a.mean.mae > 0.0 && a.std.mae >= 0.0);

    let err = evaluate(&preds[..2], &gts, &ex).unwrap_err().to_string();
    assert!(err.contains("v2"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metric_ranges_hold(seed in 0u64..1000, noise in 1.0f64..800.0) {
        let gt = random_hu(seed, [12, 12, 2]);
        let pred = add_noise(&gt, noise, seed + 1);
        let s = ssim(&pred, &gt).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(mae(&pred, &gt).unwrap() >= 0.0);
        prop_assert!(psnr(&pred, &gt, PSNR_PEAK).unwrap() >= 0.0);
        prop_assert!(vif(&pred, &gt).unwrap() >= 0.0);
        let d = dice(&lung_mask(&pred), &lung_mask(&gt)).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        // symmetric metrics
        prop_assert_eq!(mae(&pred, &gt).unwrap(), mae(&gt, &pred).unwrap());
        prop_assert!((ssim(&pred, &gt).unwrap() - ssim(&gt, &pred).unwrap()).abs() < 1e-12);
    }
}
