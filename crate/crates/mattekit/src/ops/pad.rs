use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pads bottom and right edges by replicating the last row/column until both
/// spatial dims are multiples of `m`. Returns the padded tensor and the
/// original dims for the later crop. Inputs already at a multiple pass
/// through as an exact copy.
pub fn pad_to_multiple(input: &Tensor, m: usize) -> Result<(Tensor, (usize, usize))> {
    if m == 0 {
        return Err(Error::InvalidConfig("pad_to_multiple: multiple must be >= 1".into()));
    }
    let (n, c, h, w) = input.shape();
    if h == 0 || w == 0 {
        return Err(Error::shape("pad_to_multiple", "nonempty input", input.shape_string()));
    }
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    if (ph, pw) == (h, w) {
        let mut copy = input.clone();
        copy.drop_grad();
        return Ok((copy, (h, w)));
    }
    let mut out = Tensor::zeros(n, c, ph, pw);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..ph {
                let sy = y.min(h - 1);
                let src_row = &src[sy * w..sy * w + w];
                let dst_row = &mut dst[y * pw..(y + 1) * pw];
                dst_row[..w].copy_from_slice(src_row);
                let edge = src_row[w - 1];
                for v in &mut dst_row[w..] {
                    *v = edge;
                }
            }
        }
    }
    Ok((out, (h, w)))
}

/// Crops to the top-left h x w region, undoing [`pad_to_multiple`].
pub fn crop_top_left(input: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, ih, iw) = input.shape();
    if h > ih || w > iw || h == 0 || w == 0 {
        return Err(Error::shape(
            "crop_top_left",
            format!("crop {}x{} within input", h, w),
            input.shape_string(),
        ));
    }
    let mut out = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[y * iw..y * iw + w]);
            }
        }
    }
    Ok(out)
}

/// Backward of the crop: zero-extends the cropped gradient back to the
/// padded dims (positions that were cropped away receive no gradient).
pub fn crop_top_left_backward(
    grad_cropped: &Tensor,
    padded_h: usize,
    padded_w: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = grad_cropped.shape();
    if h > padded_h || w > padded_w {
        return Err(Error::shape(
            "crop_top_left_backward",
            format!("padded dims at least {}x{}", h, w),
            format!("{}x{}", padded_h, padded_w),
        ));
    }
    let mut out = Tensor::zeros(n, c, padded_h, padded_w);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_cropped.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                dst[y * padded_w..y * padded_w + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }
    Ok(out)
}
