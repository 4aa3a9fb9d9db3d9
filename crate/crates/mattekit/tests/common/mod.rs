//! Independent reference implementations used to cross-check the library.
//!
//! Everything here is written straight from the operation definitions in
//! the plainest form available — nested loops, f64 arithmetic, brute-force
//! search — and shares no code with the crate under test beyond the Tensor
//! container. Where the library uses a clever algorithm (integral images,
//! separable filters, BFS) the oracle deliberately uses a different one.

#![allow(dead_code)] // each integration test binary uses a subset

use mattekit::Tensor;

/// |a-b| relative to the larger magnitude, floored at 1 so values near
/// zero are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// One (n,c) plane of a tensor widened to f64.
pub fn plane_f64(t: &Tensor, n: usize, c: usize) -> Vec<f64> {
    t.plane(n, c).iter().map(|&v| f64::from(v)).collect()
}

/// Central finite difference of `f` w.r.t. one scalar input. Divides by
/// the step actually representable in f32, not the nominal 2h, so step
/// quantization does not pollute the quotient.
pub fn central_diff(mut f: impl FnMut(f32) -> f64, x: f32, h: f32) -> f64 {
    let hi = x + h;
    let lo = x - h;
    (f(hi) - f(lo)) / (f64::from(hi) - f64::from(lo))
}

// ---------------------------------------------------------------------------
// convolution / pooling / resizing
// ---------------------------------------------------------------------------

/// Direct convolution (cross-correlation) of a single sample, quad loop,
/// f64 accumulation. Input (c,h,w) flat, weights (oc,ic,kh,kw) flat.
pub fn conv2d_direct(
    input: &[f64],
    (ic, h, w): (usize, usize, usize),
    weights: &[f64],
    (oc, wic, kh, kw): (usize, usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    assert_eq!(ic, wic);
    assert_eq!(input.len(), ic * h * w);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f64; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            if iy < 0 || iy >= h as i64 || ix < 0 || ix >= w as i64 {
                                continue; // zero padding
                            }
                            acc += input[(i * h + iy as usize) * w + ix as usize]
                                * weights[((o * ic + i) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, (oc, oh, ow))
}

/// 2x2/stride-2 max pool of one plane; returns values and the flat input
/// index of each window maximum, first maximum in row-major order winning.
pub fn maxpool2x2_direct(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    assert_eq!(h % 2, 0);
    assert_eq!(w % 2, 0);
    let (ph, pw) = (h / 2, w / 2);
    let mut vals = vec![0.0f64; ph * pw];
    let mut args = vec![0usize; ph * pw];
    for py in 0..ph {
        for px in 0..pw {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0usize;
            for dy in 0..2 {
                for dx in 0..2 {
                    let i = (2 * py + dy) * w + 2 * px + dx;
                    if plane[i] > best {
                        best = plane[i];
                        best_i = i;
                    }
                }
            }
            vals[py * pw + px] = best;
            args[py * pw + px] = best_i;
        }
    }
    (vals, args)
}

/// Corner-aligned bilinear resize of one plane: source coordinate of
/// output index i is i*(in-1)/(out-1), with a degenerate axis collapsing
/// to coordinate 0.
pub fn bilinear_direct(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let src = |len_in: usize, len_out: usize, i: usize| -> f64 {
        if len_out <= 1 {
            0.0
        } else {
            i as f64 * (len_in as f64 - 1.0) / (len_out as f64 - 1.0)
        }
    };
    let mut out = vec![0.0f64; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let sy = src(h, oh, oy);
            let sx = src(w, ow, ox);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let ty = sy - y0 as f64;
            let tx = sx - x0 as f64;
            let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
            let bot = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
            out[oy * ow + ox] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Binary erosion with a clipped square window of radius d: a pixel stays
/// true only if every in-bounds pixel within the window is true.
pub fn erode_direct(mask: &[bool], h: usize, w: usize, d: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut all = true;
            for dy in -(d as i64)..=(d as i64) {
                for dx in -(d as i64)..=(d as i64) {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy < 0 || yy >= h as i64 || xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    if !mask[yy as usize * w + xx as usize] {
                        all = false;
                    }
                }
            }
            out[y * w + x] = all;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// box / guided filtering
// ---------------------------------------------------------------------------

/// Sliding-window mean with partial windows divided by their actual count.
pub fn box_filter_direct(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dy in -(r as i64)..=(r as i64) {
                for dx in -(r as i64)..=(r as i64) {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy < 0 || yy >= h as i64 || xx < 0 || xx >= w as i64 {
                        continue;
                    }
                    sum += plane[yy as usize * w + xx as usize];
                    count += 1.0;
                }
            }
            out[y * w + x] = sum / count;
        }
    }
    out
}

/// Gray-guide guided filter via per-window least squares: within each
/// window fit p ~ a*I + b (ridge eps on the variance), then average the
/// (a,b) of every window covering a pixel. Output clamped to [0,1].
pub fn guided_gray_direct(
    guide: &[f64],
    input: &[f64],
    h: usize,
    w: usize,
    r: usize,
    eps: f64,
) -> Vec<f64> {
    let mean_i = box_filter_direct(guide, h, w, r);
    let mean_p = box_filter_direct(input, h, w, r);
    let ii: Vec<f64> = guide.iter().map(|v| v * v).collect();
    let ip: Vec<f64> = guide.iter().zip(input).map(|(a, b)| a * b).collect();
    let mean_ii = box_filter_direct(&ii, h, w, r);
    let mean_ip = box_filter_direct(&ip, h, w, r);
    let mut a = vec![0.0f64; h * w];
    let mut b = vec![0.0f64; h * w];
    for i in 0..h * w {
        let var = mean_ii[i] - mean_i[i] * mean_i[i];
        let cov = mean_ip[i] - mean_i[i] * mean_p[i];
        a[i] = cov / (var + eps);
        b[i] = mean_p[i] - a[i] * mean_i[i];
    }
    let mean_a = box_filter_direct(&a, h, w, r);
    let mean_b = box_filter_direct(&b, h, w, r);
    (0..h * w)
        .map(|i| (mean_a[i] * guide[i] + mean_b[i]).clamp(0.0, 1.0))
        .collect()
}

/// Solves a 3x3 linear system by Cramer's rule (the library uses Gaussian
/// elimination, so agreement is meaningful).
fn solve3_cramer(m: [[f64; 3]; 3], rhs: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    let mut out = [0.0f64; 3];
    for k in 0..3 {
        let mut mk = m;
        for row in 0..3 {
            mk[row][k] = rhs[row];
        }
        out[k] = det(mk) / d;
    }
    out
}

/// RGB-guide guided filter: per-window 3x3 covariance with eps on the
/// diagonal, coefficients solved by Cramer's rule, then window-averaged.
pub fn guided_rgb_direct(
    guide: [&[f64]; 3],
    input: &[f64],
    h: usize,
    w: usize,
    r: usize,
    eps: f64,
) -> Vec<f64> {
    let mean_c: Vec<Vec<f64>> = guide.iter().map(|g| box_filter_direct(g, h, w, r)).collect();
    let mean_p = box_filter_direct(input, h, w, r);
    let mut mean_cc = vec![vec![0.0f64; h * w]; 9];
    for a in 0..3 {
        for b in 0..3 {
            let prod: Vec<f64> = guide[a].iter().zip(guide[b]).map(|(x, y)| x * y).collect();
            mean_cc[a * 3 + b] = box_filter_direct(&prod, h, w, r);
        }
    }
    let mut mean_cp = vec![vec![0.0f64; h * w]; 3];
    for a in 0..3 {
        let prod: Vec<f64> = guide[a].iter().zip(input).map(|(x, y)| x * y).collect();
        mean_cp[a] = box_filter_direct(&prod, h, w, r);
    }
    let mut a_coef = vec![vec![0.0f64; h * w]; 3];
    let mut b_coef = vec![0.0f64; h * w];
    for i in 0..h * w {
        let mut cov = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] = mean_cc[a * 3 + b][i] - mean_c[a][i] * mean_c[b][i];
            }
            cov[a][a] += eps;
            rhs[a] = mean_cp[a][i] - mean_c[a][i] * mean_p[i];
        }
        let sol = solve3_cramer(cov, rhs);
        for k in 0..3 {
            a_coef[k][i] = sol[k];
        }
        b_coef[i] = mean_p[i] - (0..3).map(|k| sol[k] * mean_c[k][i]).sum::<f64>();
    }
    let mean_a: Vec<Vec<f64>> = a_coef.iter().map(|c| box_filter_direct(c, h, w, r)).collect();
    let mean_b = box_filter_direct(&b_coef, h, w, r);
    (0..h * w)
        .map(|i| {
            let v = (0..3).map(|k| mean_a[k][i] * guide[k][i]).sum::<f64>() + mean_b[i];
            v.clamp(0.0, 1.0)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gradient metric
// ---------------------------------------------------------------------------

/// Gradient magnitudes by full 2-D direct convolution with separable
/// Gaussian-derivative kernels built inline: smoothing normalized to sum
/// 1, derivative scaled so a unit ramp responds with magnitude 1, both
/// truncated at 3 sigma, borders replicated.
pub fn gradient_magnitude_direct(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let gauss: Vec<f64> = (-r..=r).map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let gsum: f64 = gauss.iter().sum();
    let gauss: Vec<f64> = gauss.iter().map(|v| v / gsum).collect();
    let deriv: Vec<f64> =
        (-r..=r).map(|i| -(i as f64) * (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let dscale: f64 = deriv.iter().zip(-r..=r).map(|(&v, i)| v * i as f64).sum::<f64>().abs();
    let deriv: Vec<f64> = deriv.iter().map(|v| v / dscale).collect();

    // 2-D kernels as outer products: x-gradient = deriv (x) x gauss (y)
    let at = |y: i64, x: i64| -> f64 {
        let yy = y.clamp(0, h as i64 - 1) as usize;
        let xx = x.clamp(0, w as i64 - 1) as usize;
        plane[yy * w + xx]
    };
    let mut out = vec![0.0f64; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut gx = 0.0f64;
            let mut gy = 0.0f64;
            for ky in -r..=r {
                for kx in -r..=r {
                    let v = at(y + ky, x + kx);
                    gx += v * deriv[(kx + r) as usize] * gauss[(ky + r) as usize];
                    gy += v * gauss[(kx + r) as usize] * deriv[(ky + r) as usize];
                }
            }
            out[(y * w as i64 + x) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// connectivity metric
// ---------------------------------------------------------------------------

/// All 4-connected components of a boolean grid by label propagation:
/// sweep until no label changes. Returns per-pixel component id (usize::MAX
/// for false pixels).
fn components_by_propagation(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut label: Vec<usize> = (0..h * w).map(|i| if mask[i] { i } else { usize::MAX }).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !mask[i] {
                    continue;
                }
                let mut best = label[i];
                if y > 0 && mask[i - w] {
                    best = best.min(label[i - w]);
                }
                if y + 1 < h && mask[i + w] {
                    best = best.min(label[i + w]);
                }
                if x > 0 && mask[i - 1] {
                    best = best.min(label[i - 1]);
                }
                if x + 1 < w && mask[i + 1] {
                    best = best.min(label[i + 1]);
                }
                if best < label[i] {
                    label[i] = best;
                    changed = true;
                }
            }
        }
        if !changed {
            return label;
        }
    }
}

/// Brute-force connectivity error. Follows the published definition
/// literally: source region = largest 4-connected component fully opaque
/// in both mattes (ties to the component containing the smallest
/// row-major index), l_i = highest threshold k/levels at which pixel i is
/// 4-connected to the source through {alpha >= t}, phi = 1 - d_i with
/// distances below theta forgiven, error = sum over the mask of
/// |phi_pred - phi_gt|.
pub fn connectivity_direct(
    pred: &[f64],
    gt: &[f64],
    h: usize,
    w: usize,
    mask: &[bool],
    levels: usize,
    theta: f64,
    opaque_tol: f64,
) -> f64 {
    let opaque: Vec<bool> =
        (0..h * w).map(|i| pred[i] >= 1.0 - opaque_tol && gt[i] >= 1.0 - opaque_tol).collect();
    let labels = components_by_propagation(&opaque, h, w);
    // pick the largest component; ties -> smallest first (= representative) index
    let mut sizes: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &l in &labels {
        if l != usize::MAX {
            *sizes.entry(l).or_insert(0) += 1;
        }
    }
    let omega_label = sizes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) // larger size, then smaller label
        .map(|(&l, _)| l);
    let omega: Vec<bool> = labels
        .iter()
        .map(|&l| omega_label.map_or(false, |ol| l == ol))
        .collect();

    let l_of = |alpha: &[f64]| -> Vec<f64> {
        let mut l = vec![0.0f64; h * w];
        for k in 1..=levels {
            let t = k as f64 / levels as f64;
            let in_set: Vec<bool> = alpha.iter().map(|&a| a >= t).collect();
            let comp = components_by_propagation(&in_set, h, w);
            // a pixel is connected to omega at this level if it shares a
            // component with any omega pixel that is inside the level set
            let mut omega_comps: Vec<usize> = (0..h * w)
                .filter(|&i| omega[i] && in_set[i])
                .map(|i| comp[i])
                .collect();
            omega_comps.sort_unstable();
            omega_comps.dedup();
            for i in 0..h * w {
                if in_set[i] && omega_comps.binary_search(&comp[i]).is_ok() {
                    l[i] = t;
                }
            }
        }
        l
    };
    let lp = l_of(pred);
    let lg = l_of(gt);
    let phi = |alpha: f64, l: f64| -> f64 {
        let d = alpha - l;
        if d >= theta {
            1.0 - d
        } else {
            1.0
        }
    };
    (0..h * w)
        .filter(|&i| mask[i])
        .map(|i| (phi(pred[i], lp[i]) - phi(gt[i], lg[i])).abs())
        .sum()
}
