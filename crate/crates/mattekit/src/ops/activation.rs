use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// ReLU backward: passes gradient where the forward *input* was strictly
/// positive. The subgradient at exactly zero is taken as zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu_backward", input.shape_string(), grad_out.shape_string()));
    }
    let mut g = grad_out.clone();
    g.drop_grad();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Elementwise clamp to [0, 1]; the final nonlinearity of both alpha heads.
pub fn clamp01(input: &Tensor) -> Tensor {
    input.map(|v| v.clamp(0.0, 1.0))
}

/// Straight-through clamp backward: gradient passes where the pre-clamp
/// value lies inside [0, 1] (inclusive) and is zeroed outside.
pub fn clamp01_backward(pre_clamp: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if pre_clamp.shape() != grad_out.shape() {
        return Err(Error::shape(
            "clamp01_backward",
            pre_clamp.shape_string(),
            grad_out.shape_string(),
        ));
    }
    let mut g = grad_out.clone();
    g.drop_grad();
    for (gv, &x) in g.data_mut().iter_mut().zip(pre_clamp.data()) {
        if !(0.0..=1.0).contains(&x) {
            *gv = 0.0;
        }
    }
    Ok(g)
}
