use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Argmax record from a 2x2 max pool: for every pooled cell, the flat index
/// (y * w + x) of the winner inside its input plane. Consumed by the
/// decoder's unpooling and by the pool backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pooled: [usize; 4],
    input_h: usize,
    input_w: usize,
    idx: Vec<u32>,
}

impl PoolIndices {
    pub fn pooled_shape(&self) -> (usize, usize, usize, usize) {
        let [n, c, h, w] = self.pooled;
        (n, c, h, w)
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_h, self.input_w)
    }

    pub fn indices(&self) -> &[u32] {
        &self.idx
    }

    /// Every recorded index must lie inside the 2x2 window of its pooled
    /// cell; distinctness across a plane follows because windows are
    /// disjoint. Construction via [`maxpool2x2`] guarantees this; data from
    /// elsewhere is rejected.
    fn validate(&self) -> Result<()> {
        let (_, _, ph, pw) = self.pooled_shape();
        let w = self.input_w;
        for (cell, &flat) in self.idx.iter().enumerate() {
            let py = (cell / pw) % ph;
            let px = cell % pw;
            let iy = flat as usize / w;
            let ix = flat as usize % w;
            if flat as usize >= self.input_h * w || iy / 2 != py || ix / 2 != px {
                return Err(Error::InvalidConfig(format!(
                    "pool index {} outside its 2x2 window at pooled cell ({}, {})",
                    flat, py, px
                )));
            }
        }
        Ok(())
    }
}

/// 2x2 max pooling with stride 2. Requires even spatial dims. Ties break to
/// the first maximum in row-major window order, so results do not depend on
/// thread count.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::OddSpatialDims { context: "maxpool2x2", h, w });
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Tensor::zeros(n, c, ph, pw);
    let mut idx = vec![0u32; n * c * ph * pw];
    let plane = ph * pw;

    out.data_mut()
        .par_chunks_mut(plane)
        .zip(idx.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(chunk, (out_plane, idx_plane))| {
            let b = chunk / c;
            let ch = chunk % c;
            let in_plane = input.plane(b, ch);
            for py in 0..ph {
                for px in 0..pw {
                    let y0 = 2 * py;
                    let x0 = 2 * px;
                    let mut best = in_plane[y0 * w + x0];
                    let mut best_at = y0 * w + x0;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let at = (y0 + dy) * w + x0 + dx;
                        let v = in_plane[at];
                        if v > best {
                            best = v;
                            best_at = at;
                        }
                    }
                    out_plane[py * pw + px] = best;
                    idx_plane[py * pw + px] = best_at as u32;
                }
            }
        });

    let indices = PoolIndices { pooled: [n, c, ph, pw], input_h: h, input_w: w, idx };
    Ok((out, indices))
}

/// Max-unpooling: scatters each pooled value back to its recorded argmax
/// position; all other positions are zero. Exact adjoint of [`maxpool2x2`]
/// for fixed indices.
pub fn unpool2x2(pooled: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if pooled.shape() != indices.pooled_shape() {
        let (n, c, h, w) = indices.pooled_shape();
        return Err(Error::shape(
            "unpool2x2",
            format!("{}x{}x{}x{}", n, c, h, w),
            pooled.shape_string(),
        ));
    }
    indices.validate()?;
    let (n, c, ph, pw) = pooled.shape();
    let (h, w) = indices.input_dims();
    let mut out = Tensor::zeros(n, c, h, w);
    let pooled_plane = ph * pw;

    out.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(chunk, out_plane)| {
            let base = chunk * pooled_plane;
            let vals = &pooled.data()[base..base + pooled_plane];
            let ids = &indices.idx[base..base + pooled_plane];
            for (&v, &at) in vals.iter().zip(ids) {
                out_plane[at as usize] = v;
            }
        });
    Ok(out)
}

/// Pool backward: routes each pooled cell's gradient to its argmax source.
/// This is exactly unpooling applied to the gradient.
pub fn maxpool2x2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    unpool2x2(grad_out, indices)
}

/// Unpool backward: gathers the gradient at each recorded scatter target
/// back onto the pooled cell (the adjoint of the scatter).
pub fn unpool2x2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, ph, pw) = indices.pooled_shape();
    let (h, w) = indices.input_dims();
    if grad_out.shape() != (n, c, h, w) {
        return Err(Error::shape(
            "unpool2x2_backward",
            format!("{}x{}x{}x{}", n, c, h, w),
            grad_out.shape_string(),
        ));
    }
    indices.validate()?;
    let mut g = Tensor::zeros(n, c, ph, pw);
    let pooled_plane = ph * pw;

    g.data_mut()
        .par_chunks_mut(pooled_plane)
        .enumerate()
        .for_each(|(chunk, g_plane)| {
            let src = grad_out.plane(chunk / c, chunk % c);
            let ids = &indices.idx[chunk * pooled_plane..(chunk + 1) * pooled_plane];
            for (gv, &at) in g_plane.iter_mut().zip(ids) {
                *gv = src[at as usize];
            }
        });
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_picks_max_and_records_argmax() {
        let input = Tensor::from_vec(
            1,
            1,
            4,
            4,
            vec![
                1.0, 2.0, 5.0, 6.0, //
                3.0, 4.0, 8.0, 7.0, //
                9.0, 1.0, 0.0, 0.0, //
                2.0, 2.0, 0.0, 3.0,
            ],
        )
        .unwrap();
        let (out, idx) = maxpool2x2(&input).unwrap();
        assert_eq!(out.data(), &[4.0, 8.0, 9.0, 3.0]);
        assert_eq!(idx.indices(), &[5, 6, 8, 15]);
    }

    #[test]
    fn pool_ties_break_row_major_first() {
        let input = Tensor::filled(1, 1, 2, 2, 7.0);
        let (out, idx) = maxpool2x2(&input).unwrap();
        assert_eq!(out.data(), &[7.0]);
        assert_eq!(idx.indices(), &[0]);
    }

    #[test]
    fn pool_rejects_odd_dims() {
        assert!(maxpool2x2(&Tensor::zeros(1, 1, 3, 4)).is_err());
        assert!(maxpool2x2(&Tensor::zeros(1, 1, 4, 5)).is_err());
    }

    #[test]
    fn unpool_scatters_to_recorded_positions() {
        let input = Tensor::from_vec(
            1,
            1,
            2,
            4,
            vec![
                0.0, 9.0, 1.0, 1.0, //
                1.0, 0.0, 1.0, 5.0,
            ],
        )
        .unwrap();
        let (pooled, idx) = maxpool2x2(&input).unwrap();
        let up = unpool2x2(&pooled, &idx).unwrap();
        assert_eq!(
            up.data(),
            &[
                0.0, 9.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 5.0
            ]
        );
    }

    #[test]
    fn unpool_rejects_shape_mismatch() {
        let (_, idx) = maxpool2x2(&Tensor::zeros(1, 1, 4, 4)).unwrap();
        assert!(unpool2x2(&Tensor::zeros(1, 1, 3, 3), &idx).is_err());
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let input = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        let (_, idx) = maxpool2x2(&input).unwrap();
        let g = maxpool2x2_backward(&idx, &Tensor::filled(1, 1, 1, 1, 2.5)).unwrap();
        assert_eq!(g.data(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn unpool_backward_gathers_from_targets() {
        let input = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        let (_, idx) = maxpool2x2(&input).unwrap();
        let grad_full = Tensor::from_vec(1, 1, 2, 2, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let g = unpool2x2_backward(&idx, &grad_full).unwrap();
        assert_eq!(g.data(), &[20.0]);
    }
}
