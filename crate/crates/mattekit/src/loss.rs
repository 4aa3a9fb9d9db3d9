//! Training losses: the Charbonnier alpha-prediction loss, the
//! compositional loss on reconstructed RGB, and their weighted overall
//! combination. Every loss returns its scalar and the analytic gradient
//! w.r.t. the predicted matte.
//!
//! Only trimap-unknown pixels carry weight. Each sample's sum is divided by
//! its own unknown count (and channel count for the compositional term), so
//! the two losses stay at comparable magnitudes across resolutions; the
//! batch loss is the mean over samples. Per-pixel terms are evaluated in
//! f64 so the epsilon floor and gradient identities hold to full precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Charbonnier smoothing constant; also the exact per-term floor.
    pub epsilon: f64,
    /// Weight of the alpha term; the compositional term gets 1 - w_l.
    pub w_l: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { epsilon: 1e-6, w_l: 0.5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "loss epsilon {} must be > 0",
                self.epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.w_l) {
            return Err(Error::InvalidConfig(format!("w_l {} must lie in [0,1]", self.w_l)));
        }
        Ok(())
    }
}

/// Charbonnier penalty and its derivative at `diff`:
/// value sqrt(diff^2 + eps^2), derivative diff / value. The derivative is
/// exactly 0 at diff = 0 and approaches sign(diff) for |diff| >> eps.
pub fn charbonnier(diff: f64, eps: f64) -> (f64, f64) {
    let value = (diff * diff + eps * eps).sqrt();
    (value, diff / value)
}

/// A loss value with its gradient w.r.t. the predicted matte.
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

fn check_mask(mask: &Tensor) -> Result<()> {
    if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidConfig(
            "loss mask must be binary (1 on unknown pixels, 0 elsewhere)".into(),
        ));
    }
    Ok(())
}

/// Unknown-pixel count per sample; errors if any sample has none.
fn mask_counts(mask: &Tensor) -> Result<Vec<f64>> {
    let (n, _, h, w) = mask.shape();
    let hw = h * w;
    let mut counts = Vec::with_capacity(n);
    for b in 0..n {
        let c = mask.plane(b, 0).iter().filter(|&&v| v == 1.0).count();
        if c == 0 {
            return Err(Error::EmptyUnknownRegion);
        }
        counts.push(c as f64);
        debug_assert_eq!(mask.plane(b, 0).len(), hw);
    }
    Ok(counts)
}

/// Charbonnier distance between predicted and ground-truth alpha over the
/// unknown region: mean over samples of
/// sum_i w_i sqrt((a_p - a_g)^2 + eps^2) / |unknown|.
pub fn alpha_prediction_loss(
    pred: &Tensor,
    gt: &Tensor,
    mask: &Tensor,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let (n, c, h, w) = pred.shape();
    if c != 1 {
        return Err(Error::shape("alpha_prediction_loss pred", "Nx1xHxW", pred.shape_string()));
    }
    if gt.shape() != (n, 1, h, w) || mask.shape() != (n, 1, h, w) {
        return Err(Error::shape(
            "alpha_prediction_loss",
            pred.shape_string(),
            format!("gt {} mask {}", gt.shape_string(), mask.shape_string()),
        ));
    }
    check_mask(mask)?;
    let counts = mask_counts(mask)?;

    let mut grad = Tensor::zeros(n, 1, h, w);
    let mut total = 0.0f64;
    for b in 0..n {
        let p = pred.plane(b, 0);
        let g = gt.plane(b, 0);
        let m = mask.plane(b, 0);
        let gout = grad.plane_mut(b, 0);
        let scale = 1.0 / (counts[b] * n as f64);
        let mut sum = 0.0f64;
        for i in 0..p.len() {
            if m[i] == 0.0 {
                continue;
            }
            let diff = f64::from(p[i]) - f64::from(g[i]);
            let (v, dv) = charbonnier(diff, cfg.epsilon);
            sum += v;
            gout[i] = (dv * scale) as f32;
        }
        total += sum / counts[b];
    }
    Ok(LossOutput { value: total / n as f64, grad })
}

/// Charbonnier distance between the image recomposited with the predicted
/// alpha and the ground-truth image, over unknown pixels and all three
/// channels. The predicted composite uses the same f32 expression as
/// dataset compositing, so a perfect prediction on an exactly-composited
/// sample hits the epsilon floor exactly. Gradient flows through
/// d composite / d alpha = F - B.
pub fn compositional_loss(
    pred_alpha: &Tensor,
    gt_fg: &Tensor,
    gt_bg: &Tensor,
    gt_image: &Tensor,
    mask: &Tensor,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let (n, c, h, w) = pred_alpha.shape();
    if c != 1 {
        return Err(Error::shape(
            "compositional_loss pred",
            "Nx1xHxW",
            pred_alpha.shape_string(),
        ));
    }
    let rgb = (n, 3, h, w);
    if gt_fg.shape() != rgb || gt_bg.shape() != rgb || gt_image.shape() != rgb {
        return Err(Error::shape(
            "compositional_loss layers",
            format!("{}x3x{}x{}", n, h, w),
            format!(
                "fg {} bg {} image {}",
                gt_fg.shape_string(),
                gt_bg.shape_string(),
                gt_image.shape_string()
            ),
        ));
    }
    if mask.shape() != (n, 1, h, w) {
        return Err(Error::shape(
            "compositional_loss mask",
            format!("{}x1x{}x{}", n, h, w),
            mask.shape_string(),
        ));
    }
    check_mask(mask)?;
    let counts = mask_counts(mask)?;

    let mut grad = Tensor::zeros(n, 1, h, w);
    let mut total = 0.0f64;
    for b in 0..n {
        let a = pred_alpha.plane(b, 0);
        let m = mask.plane(b, 0);
        let norm = counts[b] * 3.0;
        let gscale = 1.0 / (norm * n as f64);
        let mut sum = 0.0f64;
        for ch in 0..3 {
            let f = gt_fg.plane(b, ch);
            let bgp = gt_bg.plane(b, ch);
            let img = gt_image.plane(b, ch);
            let gout = grad.plane_mut(b, 0);
            for i in 0..a.len() {
                if m[i] == 0.0 {
                    continue;
                }
                // f32 on purpose: must reproduce the dataset's compositing
                // arithmetic bit for bit.
                let cp = a[i] * f[i] + (1.0 - a[i]) * bgp[i];
                let diff = f64::from(cp) - f64::from(img[i]);
                let (v, dv) = charbonnier(diff, cfg.epsilon);
                sum += v;
                gout[i] += (dv * f64::from(f[i] - bgp[i]) * gscale) as f32;
            }
        }
        total += sum / norm;
    }
    Ok(LossOutput { value: total / n as f64, grad })
}

/// Ground-truth views a loss evaluation needs, normally slices of a
/// training batch.
pub struct LossBatch<'a> {
    pub gt_alpha: &'a Tensor,
    pub fg: &'a Tensor,
    pub bg: &'a Tensor,
    pub image: &'a Tensor,
    pub mask: &'a Tensor,
}

pub struct OverallLoss {
    /// w_l * alpha term + (1 - w_l) * compositional term.
    pub overall: f64,
    pub alpha_term: f64,
    pub comp_term: f64,
    pub grad: Tensor,
}

/// The combined training loss with both constituent scalars exposed for
/// logging.
pub fn overall_loss(pred: &Tensor, batch: &LossBatch, cfg: &LossConfig) -> Result<OverallLoss> {
    let la = alpha_prediction_loss(pred, batch.gt_alpha, batch.mask, cfg)?;
    let lc = compositional_loss(pred, batch.fg, batch.bg, batch.image, batch.mask, cfg)?;
    let wl = cfg.w_l;
    let mut grad = la.grad;
    for (g, &gc) in grad.data_mut().iter_mut().zip(lc.grad.data()) {
        *g = (wl * f64::from(*g) + (1.0 - wl) * f64::from(gc)) as f32;
    }
    Ok(OverallLoss {
        overall: wl * la.value + (1.0 - wl) * lc.value,
        alpha_term: la.value,
        comp_term: lc.value,
        grad,
    })
}
