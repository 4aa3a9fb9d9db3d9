//! Synthesis-pipeline checks: the compositing identity on every generated
//! sample, trimap labels against a brute-force erosion oracle, monotone
//! growth of the unknown band in the erosion width, augmentation
//! invariants, and thread-count independence.

mod common;

use common::*;
use mattekit::dataset::synthetic::{
    checker_background, disk_foreground, gradient_background, ramp_foreground,
};
use mattekit::dataset::{
    augment_crop, synthesize_dataset, trimap_from_alpha, CompositeSample, DatasetConfig,
    TrimapLabel, TRIMAP_TOLERANCE,
};
use mattekit::rng::seeded_rng;

fn small_cfg() -> DatasetConfig {
    DatasetConfig {
        backgrounds_per_fg: 100,
        d_min: 1,
        d_max: 8,
        crop_sizes: vec![48, 64],
        train_size: 48,
        max_bg_upscale: 4.0,
    }
}

/// Largest per-channel deviation from image = alpha*fg + (1-alpha)*bg,
/// recomputed in f64.
fn compositing_gap(s: &CompositeSample) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..3 {
        let f = s.fg.plane(0, c);
        let b = s.bg.plane(0, c);
        let img = s.image.plane(0, c);
        let a = s.alpha.plane(0, 0);
        for i in 0..img.len() {
            let want = f64::from(a[i]) * f64::from(f[i])
                + (1.0 - f64::from(a[i])) * f64::from(b[i]);
            worst = worst.max((f64::from(img[i]) - want).abs());
        }
    }
    worst
}

#[test]
fn thousand_samples_satisfy_the_compositing_identity() {
    let fgs: Vec<_> = (0..10)
        .map(|i| {
            if i % 2 == 0 {
                disk_foreground(&format!("d{}", i), 64, 64, i)
            } else {
                ramp_foreground(&format!("r{}", i), 64, 64, i)
            }
        })
        .collect();
    let bgs: Vec<_> = (0..10)
        .map(|i| {
            if i % 2 == 0 {
                gradient_background(&format!("g{}", i), 80, 80, 50 + i)
            } else {
                checker_background(&format!("c{}", i), 80, 80, 9, 50 + i)
            }
        })
        .collect();
    let report = synthesize_dataset(&fgs, &bgs, &small_cfg(), 424).unwrap();
    assert_eq!(report.samples.len() + report.skipped.len(), 1000);
    assert!(
        report.samples.len() >= 990,
        "unexpected skips: {:?}",
        &report.skipped[..report.skipped.len().min(3)]
    );
    for s in &report.samples {
        let gap = compositing_gap(s);
        assert!(
            gap <= 1e-6,
            "sample {}+{} violates compositing by {:e}",
            s.provenance.fg_id,
            s.provenance.bg_id,
            gap
        );
        assert!(s.trimap.unknown_count() > 0);
    }
}

#[test]
fn trimap_labels_match_erosion_oracle() {
    for seed in 0..6u64 {
        let asset = disk_foreground("t", 40, 40, seed);
        let (h, w) = (40usize, 40usize);
        let a = asset.alpha.plane(0, 0);
        for d in [0u32, 1, 3, 5] {
            let trimap = trimap_from_alpha(&asset.alpha, d).unwrap();
            let fg_mask: Vec<bool> =
                a.iter().map(|&v| v >= 1.0 - TRIMAP_TOLERANCE).collect();
            let bg_mask: Vec<bool> = a.iter().map(|&v| v <= TRIMAP_TOLERANCE).collect();
            let fg_core = erode_direct(&fg_mask, h, w, d as usize);
            let bg_core = erode_direct(&bg_mask, h, w, d as usize);
            for i in 0..h * w {
                let want = if fg_core[i] {
                    TrimapLabel::Foreground
                } else if bg_core[i] {
                    TrimapLabel::Background
                } else {
                    TrimapLabel::Unknown
                };
                assert_eq!(trimap.labels()[i], want, "seed {} d {} px {}", seed, d, i);
            }
        }
    }
}

#[test]
fn unknown_band_grows_monotonically_in_erosion_width() {
    for seed in 0..10u64 {
        let asset = if seed % 2 == 0 {
            disk_foreground("m", 64, 64, seed)
        } else {
            ramp_foreground("m", 64, 64, seed)
        };
        let mut prev: Option<(usize, Vec<TrimapLabel>)> = None;
        for d in 0..=25u32 {
            let trimap = trimap_from_alpha(&asset.alpha, d).unwrap();
            let unknown = trimap.unknown_count();
            if let Some((prev_unknown, prev_labels)) = &prev {
                assert!(
                    unknown >= *prev_unknown,
                    "seed {}: unknown shrank {} -> {} at d {}",
                    seed,
                    prev_unknown,
                    unknown,
                    d
                );
                // cores only ever shrink: a pixel unknown at d stays unknown
                for (i, l) in trimap.labels().iter().enumerate() {
                    if prev_labels[i] == TrimapLabel::Unknown {
                        assert_eq!(*l, TrimapLabel::Unknown, "seed {} d {} px {}", seed, d, i);
                    }
                }
            }
            prev = Some((unknown, trimap.labels().to_vec()));
        }
    }
}

#[test]
fn augmentation_preserves_the_sample_invariants() {
    let fgs = vec![disk_foreground("a", 96, 96, 3), ramp_foreground("b", 96, 96, 4)];
    let bgs = vec![gradient_background("g", 96, 96, 5)];
    let cfg = small_cfg();
    let report = synthesize_dataset(&fgs, &bgs, &cfg, 77).unwrap();
    let mut rng = seeded_rng(78, "augment-test", &[]);
    for sample in &report.samples {
        for redilate in [true, false] {
            for _ in 0..20 {
                let aug = augment_crop(sample, &cfg, &mut rng, redilate).unwrap();
                assert_eq!(aug.alpha.shape(), (1, 1, 48, 48));
                assert_eq!(aug.trimap.dims(), (48, 48));
                assert!(aug.trimap.unknown_count() > 0);
                assert!(compositing_gap(&aug) <= 1e-6);
                if !redilate {
                    assert_eq!(aug.provenance.dilation, sample.provenance.dilation);
                }
                // labels stay consistent with the alpha they annotate
                let a = aug.alpha.plane(0, 0);
                for (i, l) in aug.trimap.labels().iter().enumerate() {
                    match l {
                        TrimapLabel::Foreground => assert!(a[i] >= 1.0 - TRIMAP_TOLERANCE),
                        TrimapLabel::Background => assert!(a[i] <= TRIMAP_TOLERANCE),
                        TrimapLabel::Unknown => {}
                    }
                }
            }
        }
    }
}

#[test]
fn synthesis_is_independent_of_thread_count() {
    let fgs = vec![disk_foreground("a", 50, 50, 1), ramp_foreground("b", 50, 50, 2)];
    let bgs = vec![gradient_background("g", 60, 60, 3), checker_background("c", 60, 60, 7, 4)];
    let mut cfg = small_cfg();
    cfg.backgrounds_per_fg = 4;
    cfg.crop_sizes = vec![48];

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| synthesize_dataset(&fgs, &bgs, &cfg, 99).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.samples.len(), four.samples.len());
    for (a, b) in one.samples.iter().zip(&four.samples) {
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.alpha.data(), b.alpha.data());
        assert_eq!(a.trimap.labels(), b.trimap.labels());
    }
}

#[test]
fn resized_crops_recomposite_exactly() {
    // crops drawn at 64 must resize to 48 and still satisfy compositing,
    // which only holds because the pipeline recomposites after resizing
    let fgs = vec![disk_foreground("a", 80, 80, 11)];
    let bgs = vec![gradient_background("g", 80, 80, 12)];
    let mut cfg = small_cfg();
    cfg.crop_sizes = vec![64]; // always larger than train_size 48
    let report = synthesize_dataset(&fgs, &bgs, &cfg, 13).unwrap();
    let mut rng = seeded_rng(14, "resize-test", &[]);
    for sample in report.samples.iter().take(5) {
        let aug = augment_crop(sample, &cfg, &mut rng, true).unwrap();
        assert_eq!(aug.trimap.dims(), (48, 48));
        assert!(compositing_gap(&aug) <= 1e-6);
        // resized alpha has genuinely fractional coverage
        let frac = aug.alpha.data().iter().filter(|&&a| a > 0.01 && a < 0.99).count();
        assert!(frac > 0, "resize should keep soft pixels");
    }
}
