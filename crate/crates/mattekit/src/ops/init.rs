use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::tensor::Tensor;

/// Xavier/Glorot uniform init for a conv weight tensor: U(-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)), fan_in = in_c*kh*kw, fan_out =
/// out_c*kh*kw. Elements are drawn in row-major order so a given RNG state
/// always produces the same tensor.
pub fn xavier_uniform(
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let fan_in = (in_c * kh * kw) as f64;
    let fan_out = (out_c * kh * kw) as f64;
    let a = (6.0 / (fan_in + fan_out)).sqrt() as f32;
    let dist = Uniform::new_inclusive(-a, a);
    let data = (0..out_c * in_c * kh * kw).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(out_c, in_c, kh, kw, data).expect("sized by construction")
}

/// Fresh conv layer: Xavier weights, zero bias.
pub fn conv_params_xavier(
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    rng: &mut impl Rng,
) -> Result<ConvParams> {
    ConvParams::new(
        xavier_uniform(out_c, in_c, kh, kw, rng),
        Tensor::zeros(out_c, 1, 1, 1),
        stride,
        padding,
    )
}

/// Widens a layer's input channels by appending zero-weight channels, e.g.
/// turning an RGB first layer into an RGB+trimap layer whose extra channel
/// contributes nothing until training moves it.
pub fn zero_extend_in_channels(params: &ConvParams, new_in: usize) -> Result<ConvParams> {
    let (oc, ic, kh, kw) = params.weights.shape();
    if new_in < ic {
        return Err(Error::InvalidConfig(format!(
            "zero_extend_in_channels: cannot shrink {} -> {} channels",
            ic, new_in
        )));
    }
    let mut weights = Tensor::zeros(oc, new_in, kh, kw);
    for o in 0..oc {
        for i in 0..ic {
            let src = params.weights.plane(o, i).to_vec();
            weights.plane_mut(o, i).copy_from_slice(&src);
        }
    }
    ConvParams::new(weights, params.bias.clone(), params.stride, params.padding)
}
