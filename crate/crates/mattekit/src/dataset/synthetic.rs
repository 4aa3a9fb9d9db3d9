//! Procedural assets for tests, demos and smoke runs: soft-edged disks and
//! ramps as foregrounds, gradients / checkerboards / noise as backgrounds.
//! Everything is a pure function of its arguments, so fixtures never need
//! to ship image files.

use rand::Rng;

use crate::dataset::{BackgroundAsset, ForegroundAsset};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

fn rand_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

/// Disk with an opaque core and a soft linear falloff ring; the ring is the
/// natural unknown band. Center, radii and colors derive from `seed`.
pub fn disk_foreground(id: &str, h: usize, w: usize, seed: u64) -> ForegroundAsset {
    let mut rng = seeded_rng(seed, "asset-disk", &[]);
    let side = h.min(w) as f32;
    let cy = h as f32 * rng.gen_range(0.35..0.65);
    let cx = w as f32 * rng.gen_range(0.35..0.65);
    let r_soft = side * rng.gen_range(0.28..0.38);
    let r_core = r_soft * rng.gen_range(0.55..0.75);
    let inner = rand_color(&mut rng);
    let outer = rand_color(&mut rng);

    let mut alpha = Tensor::zeros(1, 1, h, w);
    let mut fg = Tensor::zeros(1, 3, h, w);
    for y in 0..h {
        for x in 0..w {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let r = (dy * dy + dx * dx).sqrt();
            let a = if r <= r_core {
                1.0
            } else if r < r_soft {
                1.0 - (r - r_core) / (r_soft - r_core)
            } else {
                0.0
            };
            *alpha.at_mut(0, 0, y, x) = a;
            let t = (r / r_soft).min(1.0);
            for c in 0..3 {
                *fg.at_mut(0, c, y, x) = inner[c] + t * (outer[c] - inner[c]);
            }
        }
    }
    ForegroundAsset::new(id, fg, alpha).expect("shapes by construction")
}

/// Foreground whose alpha ramps linearly left (0) to right (1) across the
/// middle third; every edge pixel is soft, giving a wide unknown band.
pub fn ramp_foreground(id: &str, h: usize, w: usize, seed: u64) -> ForegroundAsset {
    let mut rng = seeded_rng(seed, "asset-ramp", &[]);
    let color = rand_color(&mut rng);
    let lo = w as f32 / 3.0;
    let span = w as f32 / 3.0;
    let mut alpha = Tensor::zeros(1, 1, h, w);
    let mut fg = Tensor::zeros(1, 3, h, w);
    for y in 0..h {
        for x in 0..w {
            *alpha.at_mut(0, 0, y, x) = ((x as f32 - lo) / span).clamp(0.0, 1.0);
            let shade = 0.6 + 0.4 * (y as f32 / h.max(1) as f32);
            for (c, &v) in color.iter().enumerate() {
                *fg.at_mut(0, c, y, x) = v * shade;
            }
        }
    }
    ForegroundAsset::new(id, fg, alpha).expect("shapes by construction")
}

/// Smooth two-color linear gradient along a random direction.
pub fn gradient_background(id: &str, h: usize, w: usize, seed: u64) -> BackgroundAsset {
    let mut rng = seeded_rng(seed, "asset-gradient", &[]);
    let a = rand_color(&mut rng);
    let b = rand_color(&mut rng);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = (angle.sin(), angle.cos());
    let diag = ((h * h + w * w) as f32).sqrt();
    let mut img = Tensor::zeros(1, 3, h, w);
    for y in 0..h {
        for x in 0..w {
            let t = ((y as f32 * dy + x as f32 * dx) / diag + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                *img.at_mut(0, c, y, x) = a[c] + t * (b[c] - a[c]);
            }
        }
    }
    BackgroundAsset::new(id, img).expect("shapes by construction")
}

/// Two-color checkerboard with `cells` squares along the short side; hard
/// edges exercise gradient-sensitive paths.
pub fn checker_background(id: &str, h: usize, w: usize, cells: usize, seed: u64) -> BackgroundAsset {
    let mut rng = seeded_rng(seed, "asset-checker", &[]);
    let a = rand_color(&mut rng);
    let b = rand_color(&mut rng);
    let cell = (h.min(w) / cells.max(1)).max(1);
    let mut img = Tensor::zeros(1, 3, h, w);
    for y in 0..h {
        for x in 0..w {
            let pick = if ((y / cell) + (x / cell)).is_multiple_of(2) { &a } else { &b };
            for (c, &v) in pick.iter().enumerate() {
                *img.at_mut(0, c, y, x) = v;
            }
        }
    }
    BackgroundAsset::new(id, img).expect("shapes by construction")
}

/// Independent uniform noise per pixel.
pub fn noise_background(id: &str, h: usize, w: usize, seed: u64) -> BackgroundAsset {
    let mut rng = seeded_rng(seed, "asset-noise", &[]);
    let data = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let img = Tensor::from_vec(1, 3, h, w, data).expect("sized by construction");
    BackgroundAsset::new(id, img).expect("shapes by construction")
}
