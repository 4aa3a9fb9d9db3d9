//! Guided image filter: edge-preserving smoothing of a matte using the RGB
//! (or gray) image as guide, via a local linear model per window. Serves as
//! the closed-form refinement baseline next to the learned head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidedFilterConfig {
    /// Window radius in pixels; window side is 2r+1.
    pub radius: usize,
    /// Regularizer added to the guide variance; larger smooths more.
    pub eps: f64,
}

impl Default for GuidedFilterConfig {
    fn default() -> Self {
        GuidedFilterConfig { radius: 20, eps: 1e-4 }
    }
}

/// Windowed mean over (2r+1)^2 neighborhoods for every channel. Windows
/// are clipped at borders and divided by the actual cell count, so a
/// constant image stays constant everywhere. Sums come from an f64
/// integral image: O(1) per pixel and deterministic.
pub fn box_filter(image: &Tensor, r: usize) -> Tensor {
    let (n, c, h, w) = image.shape();
    let mut out = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let src = image.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            box_plane(src, dst, h, w, r);
        }
    }
    out
}

fn box_plane(src: &[f32], dst: &mut [f32], h: usize, w: usize, r: usize) {
    // integral[y][x] = sum of src[0..y), [0..x); dims (h+1, w+1)
    let iw = w + 1;
    let mut integral = vec![0.0f64; (h + 1) * iw];
    for y in 0..h {
        let mut row_sum = 0.0f64;
        for x in 0..w {
            row_sum += f64::from(src[y * w + x]);
            integral[(y + 1) * iw + x + 1] = integral[y * iw + x + 1] + row_sum;
        }
    }
    let window_sum = |y0: usize, y1: usize, x0: usize, x1: usize| -> f64 {
        // inclusive corners [y0..=y1], [x0..=x1]
        integral[(y1 + 1) * iw + x1 + 1] - integral[y0 * iw + x1 + 1]
            - integral[(y1 + 1) * iw + x0]
            + integral[y0 * iw + x0]
    };
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            dst[y * w + x] = (window_sum(y0, y1, x0, x1) / count) as f32;
        }
    }
}

/// Guided filter with a single-channel guide. Per window k:
/// a_k = cov(I, p) / (var(I) + eps), b_k = mean(p) - a_k mean(I); the
/// output is mean_k(a) * I + mean_k(b), clamped to [0, 1].
fn guided_gray(guide: &Tensor, input: &Tensor, cfg: &GuidedFilterConfig) -> Result<Tensor> {
    let r = cfg.radius;
    let eps = cfg.eps as f32;
    let mean_i = box_filter(guide, r);
    let mean_p = box_filter(input, r);
    let ii = mul(guide, guide);
    let ip = mul(guide, input);
    let mean_ii = box_filter(&ii, r);
    let mean_ip = box_filter(&ip, r);

    let mut a = Tensor::zeros(1, 1, guide.h(), guide.w());
    let mut b = Tensor::zeros(1, 1, guide.h(), guide.w());
    {
        let (ad, bd) = (a.data_mut(), b.data_mut());
        for i in 0..ad.len() {
            let mi = mean_i.data()[i];
            let mp = mean_p.data()[i];
            let var = mean_ii.data()[i] - mi * mi;
            let cov = mean_ip.data()[i] - mi * mp;
            let ak = cov / (var + eps);
            ad[i] = ak;
            bd[i] = mp - ak * mi;
        }
    }
    let mean_a = box_filter(&a, r);
    let mean_b = box_filter(&b, r);
    let mut out = Tensor::zeros(1, 1, guide.h(), guide.w());
    for i in 0..out.len() {
        let v = mean_a.data()[i] * guide.data()[i] + mean_b.data()[i];
        out.data_mut()[i] = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    out.drop_grad();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= v;
    }
    out
}

/// Solves the symmetric 3x3 system M x = rhs by Gaussian elimination with
/// partial pivoting; M is the regularized guide covariance, always
/// invertible for eps > 0.
fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> [f64; 3] {
    let mut a = [[0.0f64; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = rhs[i];
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for row in col + 1..3 {
            let f = a[row][col] / p;
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0f64; 3];
    for i in (0..3).rev() {
        let mut acc = a[i][3];
        for k in i + 1..3 {
            acc -= a[i][k] * x[k];
        }
        x[i] = acc / a[i][i];
    }
    x
}

/// Guided filter with an RGB guide: the local model is p ~ a . I + b with a
/// 3-vector a per window, solved from the full 3x3 guide covariance with
/// eps on the diagonal.
fn guided_rgb(guide: &Tensor, input: &Tensor, cfg: &GuidedFilterConfig) -> Result<Tensor> {
    let r = cfg.radius;
    let eps = cfg.eps;
    let (_, _, h, w) = guide.shape();
    let mean_p = box_filter(input, r);
    let mean_i = box_filter(guide, r);
    // channel-pair second moments: (0,0) (0,1) (0,2) (1,1) (1,2) (2,2)
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    let mean_cross: Vec<Tensor> = pairs
        .iter()
        .map(|&(i, j)| {
            let prod = mul_planes(guide, i, guide, j);
            box_filter(&prod, r)
        })
        .collect();
    let mean_ip: Vec<Tensor> = (0..3)
        .map(|i| {
            let prod = mul_planes(guide, i, input, 0);
            box_filter(&prod, r)
        })
        .collect();

    let mut a = Tensor::zeros(1, 3, h, w);
    let mut b = Tensor::zeros(1, 1, h, w);
    for idx in 0..h * w {
        let mi = [
            f64::from(mean_i.plane(0, 0)[idx]),
            f64::from(mean_i.plane(0, 1)[idx]),
            f64::from(mean_i.plane(0, 2)[idx]),
        ];
        let mp = f64::from(mean_p.data()[idx]);
        let mut cov = [[0.0f64; 3]; 3];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let v = f64::from(mean_cross[k].data()[idx]) - mi[i] * mi[j];
            cov[i][j] = v;
            cov[j][i] = v;
        }
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] += eps;
        }
        let rhs = [
            f64::from(mean_ip[0].data()[idx]) - mi[0] * mp,
            f64::from(mean_ip[1].data()[idx]) - mi[1] * mp,
            f64::from(mean_ip[2].data()[idx]) - mi[2] * mp,
        ];
        let ak = solve3(cov, rhs);
        let bk = mp - ak[0] * mi[0] - ak[1] * mi[1] - ak[2] * mi[2];
        for c in 0..3 {
            a.plane_mut(0, c)[idx] = ak[c] as f32;
        }
        b.data_mut()[idx] = bk as f32;
    }

    let mean_a = box_filter(&a, r);
    let mean_b = box_filter(&b, r);
    let mut out = Tensor::zeros(1, 1, h, w);
    for idx in 0..h * w {
        let mut v = mean_b.data()[idx];
        for c in 0..3 {
            v += mean_a.plane(0, c)[idx] * guide.plane(0, c)[idx];
        }
        out.data_mut()[idx] = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn mul_planes(a: &Tensor, ca: usize, b: &Tensor, cb: usize) -> Tensor {
    let (_, _, h, w) = a.shape();
    let data = a
        .plane(0, ca)
        .iter()
        .zip(b.plane(0, cb))
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::from_vec(1, 1, h, w, data).expect("sized by construction")
}

/// Filters `input` (a single-channel matte) guided by `guide`, which may be
/// gray (1 channel) or RGB (3 channels). Output is clamped to [0, 1].
pub fn guided_filter(
    guide: &Tensor,
    input: &Tensor,
    cfg: &GuidedFilterConfig,
) -> Result<Tensor> {
    let (gn, gc, h, w) = guide.shape();
    if gn != 1 || (gc != 1 && gc != 3) {
        return Err(Error::shape("guided_filter guide", "1x{1|3}xHxW", guide.shape_string()));
    }
    if input.shape() != (1, 1, h, w) {
        return Err(Error::shape(
            "guided_filter input",
            format!("1x1x{}x{}", h, w),
            input.shape_string(),
        ));
    }
    if cfg.eps < 0.0 || !cfg.eps.is_finite() {
        return Err(Error::InvalidConfig(format!("guided eps {} must be >= 0", cfg.eps)));
    }
    if gc == 1 {
        guided_gray(guide, input, cfg)
    } else {
        guided_rgb(guide, input, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn box_filter_constant_stays_constant() {
        let img = Tensor::filled(1, 1, 7, 9, 0.37);
        let out = box_filter(&img, 3);
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-6, "got {}", v);
        }
    }

    #[test]
    fn box_filter_r0_is_identity() {
        let mut rng = crate::rng::seeded_rng(1, "box", &[]);
        let data: Vec<f32> = (0..35).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::from_vec(1, 1, 5, 7, data).unwrap();
        let out = box_filter(&img, 0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn box_filter_corner_averages_partial_window() {
        // 3x3 image, r=1: corner window covers 4 cells
        let img = Tensor::from_vec(1, 1, 3, 3, (1..=9).map(|v| v as f32).collect()).unwrap();
        let out = box_filter(&img, 1);
        assert!((out.at(0, 0, 0, 0) - (1.0 + 2.0 + 4.0 + 5.0) / 4.0).abs() < 1e-6);
        assert!((out.at(0, 0, 1, 1) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn self_guide_eps_zero_is_identity() {
        let mut rng = crate::rng::seeded_rng(2, "guided", &[]);
        let data: Vec<f32> = (0..49).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::from_vec(1, 1, 7, 7, data).unwrap();
        let cfg = GuidedFilterConfig { radius: 2, eps: 0.0 };
        let out = guided_filter(&img, &img, &cfg).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4, "{} vs {}", a, b);
        }
    }

    #[test]
    fn constant_guide_returns_box_mean() {
        let mut rng = crate::rng::seeded_rng(3, "guided", &[]);
        let data: Vec<f32> = (0..63).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = Tensor::from_vec(1, 1, 7, 9, data).unwrap();
        let guide = Tensor::filled(1, 1, 7, 9, 0.5);
        let cfg = GuidedFilterConfig { radius: 2, eps: 1e-4 };
        let out = guided_filter(&guide, &p, &cfg).unwrap();
        // a == 0 everywhere, so output = mean(b) = box(box(p))
        let want = box_filter(&box_filter(&p, 2), 2);
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
        }
    }

    #[test]
    fn constant_matte_passes_through() {
        let mut rng = crate::rng::seeded_rng(4, "guided", &[]);
        let gdata: Vec<f32> = (0..3 * 64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let guide = Tensor::from_vec(1, 3, 8, 8, gdata).unwrap();
        let p = Tensor::filled(1, 1, 8, 8, 0.42);
        let out =
            guided_filter(&guide, &p, &GuidedFilterConfig { radius: 2, eps: 1e-4 }).unwrap();
        for &v in out.data() {
            assert!((v - 0.42).abs() < 1e-4, "got {}", v);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let guide = Tensor::zeros(1, 2, 4, 4);
        let p = Tensor::zeros(1, 1, 4, 4);
        assert!(guided_filter(&guide, &p, &GuidedFilterConfig::default()).is_err());
        let guide = Tensor::zeros(1, 1, 4, 4);
        let p2 = Tensor::zeros(1, 1, 5, 4);
        assert!(guided_filter(&guide, &p2, &GuidedFilterConfig::default()).is_err());
    }

    #[test]
    fn solve3_inverts_known_system() {
        let m = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x = [1.0, -2.0, 3.0];
        let rhs = [
            m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
            m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
            m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
        ];
        let got = solve3(m, rhs);
        for (g, w) in got.iter().zip(&x) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
