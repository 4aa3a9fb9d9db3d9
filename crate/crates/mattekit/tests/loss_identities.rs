//! Identity and gradient checks for the two training losses.
//!
//! The Charbonnier penalty sqrt(d^2 + eps^2) has the closed-form derivative
//! d / sqrt(d^2 + eps^2); both losses are checked against finite
//! differences and against that closed form, plus the exact floor and
//! degenerate cases the definitions imply.

mod common;

use common::*;
use mattekit::loss::{
    alpha_prediction_loss, compositional_loss, overall_loss, LossBatch, LossConfig,
};
use mattekit::rng::seeded_rng;
use mattekit::Tensor;
use rand::Rng;

const EPS: f64 = 1e-6;

fn random_unit_tensor(rng: &mut impl Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..n * c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(n, c, h, w, data).unwrap()
}

/// A random binary mask with at least one unknown pixel per sample.
fn random_mask(rng: &mut impl Rng, n: usize, h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(n, 1, h, w);
    for b in 0..n {
        loop {
            let plane = t.plane_mut(b, 0);
            for v in plane.iter_mut() {
                *v = if rng.gen_bool(0.4) { 1.0 } else { 0.0 };
            }
            if plane.iter().any(|&v| v == 1.0) {
                break;
            }
        }
    }
    t
}

struct Case {
    pred: Tensor,
    gt: Tensor,
    fg: Tensor,
    bg: Tensor,
    image: Tensor,
    mask: Tensor,
}

fn random_case(seed: u64) -> Case {
    let mut rng = seeded_rng(21, "loss-case", &[seed]);
    let (n, h, w) = (rng.gen_range(1..3), rng.gen_range(3..6), rng.gen_range(3..6));
    let gt = random_unit_tensor(&mut rng, n, 1, h, w);
    // keep |pred - gt| >= 0.2: the Charbonnier penalty behaves like |d|
    // at this epsilon, and finite differences need clearance from that
    // kink to resolve the slope
    let mut pred = Tensor::zeros(n, 1, h, w);
    for (p, &g) in pred.data_mut().iter_mut().zip(gt.data()) {
        let u: f32 = rng.gen_range(0.2..0.45);
        *p = if g < 0.5 { g + u } else { g - u };
    }
    let fg = random_unit_tensor(&mut rng, n, 3, h, w);
    let bg = random_unit_tensor(&mut rng, n, 3, h, w);
    // image composited from gt so the compositional loss sees a consistent
    // scene, but cases stay generic because pred != gt
    let mut image = Tensor::zeros(n, 3, h, w);
    for b in 0..n {
        for c in 0..3 {
            for i in 0..h * w {
                let a = gt.plane(b, 0)[i];
                image.plane_mut(b, c)[i] = a * fg.plane(b, c)[i] + (1.0 - a) * bg.plane(b, c)[i];
            }
        }
    }
    let mask = random_mask(&mut rng, n, h, w);
    Case { pred, gt, fg, bg, image, mask }
}

#[test]
fn alpha_loss_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    for seed in 0..20 {
        let case = random_case(seed);
        let out = alpha_prediction_loss(&case.pred, &case.gt, &case.mask, &cfg).unwrap();
        for i in 0..case.pred.len() {
            if case.mask.data()[i] == 0.0 {
                assert_eq!(out.grad.data()[i], 0.0, "grad must vanish off the mask");
                continue;
            }
            let fd = central_diff(
                |v| {
                    let mut p = case.pred.clone();
                    p.data_mut()[i] = v;
                    alpha_prediction_loss(&p, &case.gt, &case.mask, &cfg).unwrap().value
                },
                case.pred.data()[i],
                1e-3,
            );
            let err = rel_err(f64::from(out.grad.data()[i]), fd);
            assert!(err <= 1e-4, "case {} entry {}: rel err {:.3e}", seed, i, err);
        }
    }
}

#[test]
fn compositional_loss_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    for seed in 0..20 {
        let case = random_case(seed + 100);
        let out =
            compositional_loss(&case.pred, &case.fg, &case.bg, &case.image, &case.mask, &cfg)
                .unwrap();
        for i in 0..case.pred.len() {
            if case.mask.data()[i] == 0.0 {
                assert_eq!(out.grad.data()[i], 0.0, "grad must vanish off the mask");
                continue;
            }
            let fd = central_diff(
                |v| {
                    let mut p = case.pred.clone();
                    p.data_mut()[i] = v;
                    compositional_loss(&p, &case.fg, &case.bg, &case.image, &case.mask, &cfg)
                        .unwrap()
                        .value
                },
                case.pred.data()[i],
                1e-3,
            );
            let err = rel_err(f64::from(out.grad.data()[i]), fd);
            assert!(err <= 1e-4, "case {} entry {}: rel err {:.3e}", seed, i, err);
        }
    }
}

#[test]
fn alpha_loss_floor_is_epsilon_when_prediction_is_exact() {
    // pred == gt makes every per-pixel penalty sqrt(0 + eps^2) = eps, so
    // the mean over unknowns is exactly eps
    let cfg = LossConfig::default();
    for seed in 0..10 {
        let case = random_case(seed + 200);
        let out = alpha_prediction_loss(&case.gt, &case.gt, &case.mask, &cfg).unwrap();
        assert!(
            (out.value - EPS).abs() < 1e-18,
            "floor should be eps exactly, got {:e}",
            out.value
        );
    }
}

#[test]
fn charbonnier_derivative_closed_form() {
    // d/dx sqrt(x^2 + eps^2) = x / sqrt(x^2 + eps^2); check the library's
    // reported slope against the formula over 1000 sampled differences
    let mut rng = seeded_rng(22, "charbonnier", &[]);
    for i in 0..1000 {
        let d: f64 = rng.gen_range(-1.0..1.0);
        let (value, slope) = mattekit::loss::charbonnier(d, EPS);
        let expect_v = (d * d + EPS * EPS).sqrt();
        let expect_s = d / expect_v;
        assert!((value - expect_v).abs() <= 1e-9, "sample {}: value", i);
        assert!((slope - expect_s).abs() <= 1e-9, "sample {}: slope", i);
    }
}

#[test]
fn equal_fg_bg_kills_compositional_gradient() {
    // with F == B the composite is independent of alpha, so the loss
    // gradient w.r.t. alpha must be identically zero
    let cfg = LossConfig::default();
    for seed in 0..10 {
        let case = random_case(seed + 300);
        let image = case.fg.clone();
        let out =
            compositional_loss(&case.pred, &case.fg, &case.fg, &image, &case.mask, &cfg).unwrap();
        assert!(out.grad.data().iter().all(|&g| g == 0.0), "seed {}", seed);
    }
}

#[test]
fn overall_loss_averages_with_half_weight() {
    let cfg = LossConfig::default();
    assert_eq!(cfg.w_l, 0.5);
    for seed in 0..10 {
        let case = random_case(seed + 400);
        let batch = LossBatch {
            gt_alpha: &case.gt,
            fg: &case.fg,
            bg: &case.bg,
            image: &case.image,
            mask: &case.mask,
        };
        let la = alpha_prediction_loss(&case.pred, &case.gt, &case.mask, &cfg).unwrap();
        let lc = compositional_loss(&case.pred, &case.fg, &case.bg, &case.image, &case.mask, &cfg)
            .unwrap();
        let both = overall_loss(&case.pred, &batch, &cfg).unwrap();
        assert_eq!(both.alpha_term, la.value, "seed {}", seed);
        assert_eq!(both.comp_term, lc.value, "seed {}", seed);
        assert_eq!(both.overall, 0.5 * la.value + 0.5 * lc.value, "seed {}", seed);
        for i in 0..both.grad.len() {
            let want = 0.5 * f64::from(la.grad.data()[i]) + 0.5 * f64::from(lc.grad.data()[i]);
            assert_eq!(both.grad.data()[i], want as f32, "seed {} entry {}", seed, i);
        }
    }
}

#[test]
fn overall_loss_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    for seed in 0..20 {
        let case = random_case(seed + 500);
        let batch = LossBatch {
            gt_alpha: &case.gt,
            fg: &case.fg,
            bg: &case.bg,
            image: &case.image,
            mask: &case.mask,
        };
        let out = overall_loss(&case.pred, &batch, &cfg).unwrap();
        for i in 0..case.pred.len() {
            if case.mask.data()[i] == 0.0 {
                continue;
            }
            let fd = central_diff(
                |v| {
                    let mut p = case.pred.clone();
                    p.data_mut()[i] = v;
                    overall_loss(&p, &batch, &cfg).unwrap().overall
                },
                case.pred.data()[i],
                1e-3,
            );
            let err = rel_err(f64::from(out.grad.data()[i]), fd);
            assert!(err <= 1e-4, "case {} entry {}: rel err {:.3e}", seed, i, err);
        }
    }
}
