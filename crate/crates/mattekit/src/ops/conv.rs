use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One convolution layer: weights (out_c, in_c, kh, kw), bias (out_c,1,1,1),
/// stride and zero padding. Kernel sides must be odd so padding can center
/// the window.
#[derive(Clone, Debug)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<ConvParams> {
        let (oc, _ic, kh, kw) = weights.shape();
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv kernel must have odd sides, got {}x{}",
                kh, kw
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv stride must be >= 1".into()));
        }
        if bias.shape() != (oc, 1, 1, 1) {
            return Err(Error::shape(
                "ConvParams::new bias",
                format!("{}x1x1x1", oc),
                bias.shape_string(),
            ));
        }
        Ok(ConvParams { weights, bias, stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.n()
    }

    pub fn in_channels(&self) -> usize {
        self.weights.c()
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.h(), self.weights.w())
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Stride-1 shift bookkeeping: output index range [o0, o1) whose source
/// index i = o + k - pad stays inside [0, len_in), plus the first source
/// index. Lets inner loops run over contiguous row slices.
#[inline]
fn shifted_range(len_in: usize, len_out: usize, k: usize, pad: usize) -> (usize, usize, usize) {
    let shift = k as isize - pad as isize;
    // Both bounds limited to len_out: on feature maps smaller than the
    // kernel overhang the valid range is empty, not out of bounds.
    let o0 = ((-shift).max(0) as usize).min(len_out);
    let o1 = (len_in as isize - shift).clamp(o0 as isize, len_out as isize) as usize;
    let i0 = (o0 as isize + shift).max(0) as usize;
    (o0, o1, i0)
}

fn output_dims(input: &Tensor, params: &ConvParams) -> Result<(usize, usize)> {
    let (_, _, h, w) = input.shape();
    let (kh, kw) = params.kernel();
    let (ph, pw) = (params.padding, params.padding);
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(Error::shape(
            "conv2d",
            format!("input at least {}x{} after padding {}", kh, kw, params.padding),
            format!("{}x{}", h, w),
        ));
    }
    let oh = (h + 2 * ph - kh) / params.stride + 1;
    let ow = (w + 2 * pw - kw) / params.stride + 1;
    Ok((oh, ow))
}

/// 2-D convolution (cross-correlation, the usual CNN convention).
/// Output (n, out_c, h', w') with h' = (h + 2 pad - kh) / stride + 1.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let (n, cin, h, w) = input.shape();
    let (oc, ic, kh, kw) = params.weights.shape();
    if cin != ic {
        return Err(Error::shape(
            "conv2d input channels",
            format!("{}", ic),
            format!("{}", cin),
        ));
    }
    let (oh, ow) = output_dims(input, params)?;
    let mut out = Tensor::zeros(n, oc, oh, ow);
    let pad = params.padding;
    let stride = params.stride;
    let wdata = params.weights.data();
    let bdata = params.bias.data();
    let out_hw = oh * ow;

    out.data_mut()
        .par_chunks_mut(out_hw)
        .enumerate()
        .for_each(|(chunk, out_plane)| {
            let b = chunk / oc;
            let o = chunk % oc;
            out_plane.fill(bdata[o]);
            for i in 0..ic {
                let in_plane = input.plane(b, i);
                let wbase = (o * ic + i) * kh * kw;
                if stride == 1 {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wdata[wbase + ky * kw + kx];
                            let (ox0, ox1, ix0) = shifted_range(w, ow, kx, pad);
                            if ox1 <= ox0 {
                                continue;
                            }
                            let span = ox1 - ox0;
                            for oy in 0..oh {
                                let iy = oy as isize + ky as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src = &in_plane[iy as usize * w + ix0..][..span];
                                let dst = &mut out_plane[oy * ow + ox0..][..span];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * *s;
                                }
                            }
                        }
                    }
                } else {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0f32;
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wdata[wbase + ky * kw + kx]
                                        * in_plane[iy as usize * w + ix as usize];
                                }
                            }
                            out_plane[oy * ow + ox] += acc;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients produced by [`conv2d_backward`]. `input` is `None` when the
/// caller does not need it (first layer of a network).
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Backward pass of [`conv2d`]. `grad_out` must have the forward output
/// shape. Weight and bias gradients accumulate across the batch in f64
/// (fixed order); the input gradient is the transposed convolution of
/// `grad_out` with the weights.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let (n, cin, h, w) = input.shape();
    let (oc, ic, kh, kw) = params.weights.shape();
    if cin != ic {
        return Err(Error::shape(
            "conv2d_backward input channels",
            format!("{}", ic),
            format!("{}", cin),
        ));
    }
    let (oh, ow) = output_dims(input, params)?;
    if grad_out.shape() != (n, oc, oh, ow) {
        return Err(Error::shape(
            "conv2d_backward grad_out",
            format!("{}x{}x{}x{}", n, oc, oh, ow),
            grad_out.shape_string(),
        ));
    }
    let pad = params.padding;
    let stride = params.stride;
    let wdata = params.weights.data();

    let mut grad_b = Tensor::zeros(oc, 1, 1, 1);
    grad_b
        .data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(o, gb)| {
            let mut acc = 0.0f64;
            for b in 0..n {
                for &g in grad_out.plane(b, o) {
                    acc += f64::from(g);
                }
            }
            *gb = acc as f32;
        });

    let mut grad_w = Tensor::zeros(oc, ic, kh, kw);
    grad_w
        .data_mut()
        .par_chunks_mut(kh * kw)
        .enumerate()
        .for_each(|(chunk, wslab)| {
            let o = chunk / ic;
            let i = chunk % ic;
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = 0.0f64;
                    if stride == 1 {
                        let (ox0, ox1, ix0) = shifted_range(w, ow, kx, pad);
                        if ox1 > ox0 {
                            let span = ox1 - ox0;
                            for b in 0..n {
                                let in_plane = input.plane(b, i);
                                let g_plane = grad_out.plane(b, o);
                                for oy in 0..oh {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let src = &in_plane[iy as usize * w + ix0..][..span];
                                    let g = &g_plane[oy * ow + ox0..][..span];
                                    let mut row = 0.0f32;
                                    for (gv, sv) in g.iter().zip(src) {
                                        row += *gv * *sv;
                                    }
                                    acc += f64::from(row);
                                }
                            }
                        }
                    } else {
                        for b in 0..n {
                            let in_plane = input.plane(b, i);
                            let g_plane = grad_out.plane(b, o);
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += f64::from(
                                        g_plane[oy * ow + ox]
                                            * in_plane[iy as usize * w + ix as usize],
                                    );
                                }
                            }
                        }
                    }
                    wslab[ky * kw + kx] = acc as f32;
                }
            }
        });

    let grad_in = if need_input_grad {
        let mut gi = Tensor::zeros(n, ic, h, w);
        let hw = h * w;
        gi.data_mut()
            .par_chunks_mut(hw)
            .enumerate()
            .for_each(|(chunk, gin_plane)| {
                let b = chunk / ic;
                let i = chunk % ic;
                for o in 0..oc {
                    let g_plane = grad_out.plane(b, o);
                    let wbase = (o * ic + i) * kh * kw;
                    if stride == 1 {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wv = wdata[wbase + ky * kw + kx];
                                let (ox0, ox1, ix0) = shifted_range(w, ow, kx, pad);
                                if ox1 <= ox0 {
                                    continue;
                                }
                                let span = ox1 - ox0;
                                for oy in 0..oh {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let g = &g_plane[oy * ow + ox0..][..span];
                                    let dst = &mut gin_plane[iy as usize * w + ix0..][..span];
                                    for (d, gv) in dst.iter_mut().zip(g) {
                                        *d += wv * *gv;
                                    }
                                }
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = g_plane[oy * ow + ox];
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        gin_plane[iy as usize * w + ix as usize] +=
                                            wdata[wbase + ky * kw + kx] * g;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Some(gi)
    } else {
        None
    };

    Ok(ConvGrads { input: grad_in, weights: grad_w, bias: grad_b })
}
