use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct AxisTap {
    lo: usize,
    hi: usize,
    t: f32,
}

/// Corner-aligned sample positions: output index i maps to source
/// coordinate i * (in - 1) / (out - 1); a single output sample maps to 0.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<AxisTap> {
    (0..out_len)
        .map(|i| {
            let src = if out_len == 1 {
                0.0
            } else {
                i as f32 * (in_len - 1) as f32 / (out_len - 1) as f32
            };
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            AxisTap { lo, hi, t: src - lo as f32 }
        })
        .collect()
}

/// Bilinear resize with corner alignment. Used only for data-pipeline
/// resampling (augmentation crops back to the training size), never inside
/// the networks. Endpoints are preserved exactly.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "bilinear_resize: target {}x{} must be nonzero",
            out_h, out_w
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("bilinear_resize", "nonempty input", input.shape_string()));
    }
    if (out_h, out_w) == (h, w) {
        let mut copy = input.clone();
        copy.drop_grad();
        return Ok(copy);
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut out = Tensor::zeros(n, c, out_h, out_w);

    out.data_mut()
        .par_chunks_mut(out_h * out_w)
        .enumerate()
        .for_each(|(chunk, out_plane)| {
            let src = input.plane(chunk / c, chunk % c);
            for (oy, ty) in ys.iter().enumerate() {
                let row_lo = &src[ty.lo * w..ty.lo * w + w];
                let row_hi = &src[ty.hi * w..ty.hi * w + w];
                let dst = &mut out_plane[oy * out_w..(oy + 1) * out_w];
                for (d, tx) in dst.iter_mut().zip(xs.iter()) {
                    let top = row_lo[tx.lo] + tx.t * (row_lo[tx.hi] - row_lo[tx.lo]);
                    let bot = row_hi[tx.lo] + tx.t * (row_hi[tx.hi] - row_hi[tx.lo]);
                    *d = top + ty.t * (bot - top);
                }
            }
        });
    Ok(out)
}
