//! The two-stage matting network.
//!
//! Stage 1 is an encoder-decoder alpha predictor: a VGG-16-shaped encoder
//! (13 3x3 convs plus the former fc6 realized as a 7x7 conv, 5 max-pools)
//! and a mirrored decoder that upsamples by max-unpooling with the
//! encoder's recorded argmax indices, ending in a 1-channel prediction conv
//! clamped to [0,1]. Input is the RGB image with the trimap appended as a
//! fourth channel. Stage 2 is a small fully-convolutional refinement head
//! with a skip connection: it sees (image, raw alpha) and adds its output
//! back onto the raw alpha, so zero weights give the identity.
//!
//! Channel widths shrink uniformly through a width multiplier so the same
//! topology runs at desk scale. Backpropagation is hand-written by walking
//! the forward op sequence in reverse over a recorded tape.

use serde::{Deserialize, Serialize};

use crate::dataset::Trimap;
use crate::error::{Error, Result};
use crate::guided::{guided_filter, GuidedFilterConfig};
use crate::ops::{
    clamp01, clamp01_backward, conv2d, conv2d_backward, conv_params_xavier, crop_top_left,
    crop_top_left_backward, maxpool2x2, maxpool2x2_backward, pad_to_multiple, relu,
    relu_backward, unpool2x2, unpool2x2_backward, ConvParams, PoolIndices,
};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

pub const S1_ENC_CONVS: usize = 14;
pub const S1_DEC_CONVS: usize = 6;
/// Encoder convs + decoder convs + the prediction layer.
pub const S1_CONVS: usize = S1_ENC_CONVS + S1_DEC_CONVS + 1;
pub const S2_CONVS: usize = 4;
pub const POOL_COUNT: usize = 5;
/// Spatial dims are padded up to a multiple of 2^POOL_COUNT so every pool
/// sees even dims.
pub const PAD_MULTIPLE: usize = 32;
/// The refinement head sees the raw alpha rescaled by this factor in its
/// input channel; the skip connection adds the unscaled alpha back.
pub const STAGE2_ALPHA_SCALE: f32 = 255.0;

/// Encoder conv indices immediately followed by a max-pool.
const POOL_AFTER: [usize; POOL_COUNT] = [1, 3, 6, 9, 12];
const ENC_WIDTHS: [usize; S1_ENC_CONVS] =
    [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512, 4096];
/// Decoder conv output widths. Each conv feeding an unpool must emit
/// exactly the channel count recorded at the matching encoder pool, so the
/// first five widths mirror the encoder at pools 5..1; the last is free.
const DEC_WIDTHS: [usize; S1_DEC_CONVS] = [512, 512, 256, 128, 64, 64];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Uniform scale on all channel widths; 1.0 is the full-size network.
    pub width_multiplier: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config { width_multiplier: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    /// Uniform scale on the refinement head's hidden widths.
    pub width_multiplier: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config { width_multiplier: 1.0 }
    }
}

fn scaled(base: usize, multiplier: f64) -> usize {
    ((base as f64 * multiplier).round() as usize).max(1)
}

fn check_multiplier(m: f64) -> Result<()> {
    if m.is_finite() && m > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("width_multiplier {} must be positive", m)))
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    in_c: usize,
    out_c: usize,
    k: usize,
    pad: usize,
}

/// The 21 stage-1 conv layer shapes for a given width multiplier.
fn stage1_specs(cfg: &Stage1Config) -> Vec<ConvSpec> {
    let m = cfg.width_multiplier;
    let mut specs = Vec::with_capacity(S1_CONVS);
    let mut in_c = 4;
    for (i, &base) in ENC_WIDTHS.iter().enumerate() {
        let out_c = scaled(base, m);
        let (k, pad) = if i == S1_ENC_CONVS - 1 { (7, 3) } else { (3, 1) };
        specs.push(ConvSpec { in_c, out_c, k, pad });
        in_c = out_c;
    }
    for &base in DEC_WIDTHS.iter() {
        let out_c = scaled(base, m);
        specs.push(ConvSpec { in_c, out_c, k: 5, pad: 2 });
        in_c = out_c;
    }
    specs.push(ConvSpec { in_c, out_c: 1, k: 5, pad: 2 });
    specs
}

/// The 4 refinement conv shapes; input is RGB + scaled alpha, output 1.
fn stage2_specs(cfg: &Stage2Config) -> Vec<ConvSpec> {
    let m = cfg.width_multiplier;
    let hidden = scaled(64, m);
    let widths = [hidden, hidden, hidden, 1];
    let mut specs = Vec::with_capacity(S2_CONVS);
    let mut in_c = 4;
    for &out_c in &widths {
        specs.push(ConvSpec { in_c, out_c, k: 3, pad: 1 });
        in_c = out_c;
    }
    specs
}

/// Stage-1 op sequence; conv indices refer to `ModelParams::stage1`,
/// pool/unpool indices into the recorded pool stack.
#[derive(Clone, Copy, Debug)]
enum S1Op {
    Conv(usize),
    Relu,
    Pool,
    Unpool(usize),
}

fn stage1_ops() -> Vec<S1Op> {
    let mut ops = Vec::new();
    for i in 0..S1_ENC_CONVS {
        ops.push(S1Op::Conv(i));
        ops.push(S1Op::Relu);
        if POOL_AFTER.contains(&i) {
            ops.push(S1Op::Pool);
        }
    }
    for j in 0..S1_DEC_CONVS {
        ops.push(S1Op::Conv(S1_ENC_CONVS + j));
        ops.push(S1Op::Relu);
        if j < POOL_COUNT {
            ops.push(S1Op::Unpool(POOL_COUNT - 1 - j));
        }
    }
    ops.push(S1Op::Conv(S1_CONVS - 1));
    ops
}

/// All trainable tensors of both stages, in a fixed named order, plus
/// per-stage freeze flags consulted by the training driver.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub stage1: Vec<ConvParams>,
    pub stage2: Vec<ConvParams>,
    pub stage1_trainable: bool,
    pub stage2_trainable: bool,
}

/// Stable name for a stage-1 layer, used for checkpoints and optimizer
/// state keys.
pub fn stage1_layer_name(i: usize) -> String {
    if i < S1_ENC_CONVS {
        format!("s1.enc{:02}", i)
    } else if i < S1_ENC_CONVS + S1_DEC_CONVS {
        format!("s1.dec{:02}", i - S1_ENC_CONVS)
    } else {
        "s1.pred".to_string()
    }
}

pub fn stage2_layer_name(i: usize) -> String {
    format!("s2.conv{:02}", i)
}

impl ModelParams {
    pub fn parameter_count(&self) -> usize {
        self.stage1
            .iter()
            .chain(&self.stage2)
            .map(ConvParams::parameter_count)
            .sum()
    }

    /// (name, tensor) pairs in fixed order: stage-1 layers then stage-2,
    /// weights before bias.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * (self.stage1.len() + self.stage2.len()));
        for (i, layer) in self.stage1.iter().enumerate() {
            let name = stage1_layer_name(i);
            out.push((format!("{}.w", name), &layer.weights));
            out.push((format!("{}.b", name), &layer.bias));
        }
        for (i, layer) in self.stage2.iter().enumerate() {
            let name = stage2_layer_name(i);
            out.push((format!("{}.w", name), &layer.weights));
            out.push((format!("{}.b", name), &layer.bias));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(2 * (self.stage1.len() + self.stage2.len()));
        for (i, layer) in self.stage1.iter_mut().enumerate() {
            let name = stage1_layer_name(i);
            out.push((format!("{}.w", name), &mut layer.weights));
            out.push((format!("{}.b", name), &mut layer.bias));
        }
        for (i, layer) in self.stage2.iter_mut().enumerate() {
            let name = stage2_layer_name(i);
            out.push((format!("{}.w", name), &mut layer.weights));
            out.push((format!("{}.b", name), &mut layer.bias));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.stage1
            .iter()
            .chain(&self.stage2)
            .all(|l| l.weights.all_finite() && l.bias.all_finite())
    }

    /// Sets every stage-2 weight and bias to zero, making the refinement
    /// head an exact identity via its skip connection.
    pub fn zero_stage2(&mut self) {
        for layer in &mut self.stage2 {
            layer.weights.data_mut().fill(0.0);
            layer.bias.data_mut().fill(0.0);
        }
    }

    /// Checks the layer list against the configs' derived shapes.
    pub fn validate(&self, cfg1: &Stage1Config, cfg2: &Stage2Config) -> Result<()> {
        self.validate_stage1(cfg1)?;
        self.validate_stage2(cfg2)
    }

    fn validate_stage1(&self, cfg: &Stage1Config) -> Result<()> {
        check_multiplier(cfg.width_multiplier)?;
        let specs = stage1_specs(cfg);
        if self.stage1.len() != specs.len() {
            return Err(Error::shape(
                "stage-1 layer count",
                format!("{}", specs.len()),
                format!("{}", self.stage1.len()),
            ));
        }
        for (i, (layer, spec)) in self.stage1.iter().zip(&specs).enumerate() {
            let got = layer.weights.shape();
            let want = (spec.out_c, spec.in_c, spec.k, spec.k);
            if got != want {
                return Err(Error::shape(
                    "stage-1 layer shape",
                    format!("{} {:?}", stage1_layer_name(i), want),
                    format!("{:?}", got),
                ));
            }
        }
        Ok(())
    }

    fn validate_stage2(&self, cfg: &Stage2Config) -> Result<()> {
        check_multiplier(cfg.width_multiplier)?;
        let specs = stage2_specs(cfg);
        if self.stage2.len() != specs.len() {
            return Err(Error::shape(
                "stage-2 layer count",
                format!("{}", specs.len()),
                format!("{}", self.stage2.len()),
            ));
        }
        for (i, (layer, spec)) in self.stage2.iter().zip(&specs).enumerate() {
            let got = layer.weights.shape();
            let want = (spec.out_c, spec.in_c, spec.k, spec.k);
            if got != want {
                return Err(Error::shape(
                    "stage-2 layer shape",
                    format!("{} {:?}", stage2_layer_name(i), want),
                    format!("{:?}", got),
                ));
            }
        }
        Ok(())
    }
}

/// Fresh model: every conv Xavier-initialized with zero bias, each layer on
/// its own derived RNG stream. The first stage-1 layer is initialized for 3
/// channels and zero-extended to 4, so an untrained network ignores the
/// trimap channel.
pub fn build_model(cfg1: &Stage1Config, cfg2: &Stage2Config, seed: u64) -> Result<ModelParams> {
    check_multiplier(cfg1.width_multiplier)?;
    check_multiplier(cfg2.width_multiplier)?;
    let mut stage1 = Vec::with_capacity(S1_CONVS);
    for (i, spec) in stage1_specs(cfg1).iter().enumerate() {
        let mut rng = seeded_rng(seed, "init-s1", &[i as u64]);
        let layer = if i == 0 {
            let rgb =
                conv_params_xavier(spec.out_c, 3, spec.k, spec.k, 1, spec.pad, &mut rng)?;
            crate::ops::zero_extend_in_channels(&rgb, 4)?
        } else {
            conv_params_xavier(spec.out_c, spec.in_c, spec.k, spec.k, 1, spec.pad, &mut rng)?
        };
        stage1.push(layer);
    }
    let mut stage2 = Vec::with_capacity(S2_CONVS);
    for (i, spec) in stage2_specs(cfg2).iter().enumerate() {
        let mut rng = seeded_rng(seed, "init-s2", &[i as u64]);
        stage2.push(conv_params_xavier(
            spec.out_c, spec.in_c, spec.k, spec.k, 1, spec.pad, &mut rng,
        )?);
    }
    Ok(ModelParams { stage1, stage2, stage1_trainable: true, stage2_trainable: true })
}

/// All-zero parameters with the architecture's shapes, for callers that
/// overwrite every tensor afterwards (checkpoint loading).
pub fn zeroed_model(cfg1: &Stage1Config, cfg2: &Stage2Config) -> Result<ModelParams> {
    check_multiplier(cfg1.width_multiplier)?;
    check_multiplier(cfg2.width_multiplier)?;
    let build = |specs: Vec<ConvSpec>| -> Result<Vec<ConvParams>> {
        specs
            .iter()
            .map(|s| {
                ConvParams::new(
                    Tensor::zeros(s.out_c, s.in_c, s.k, s.k),
                    Tensor::zeros(s.out_c, 1, 1, 1),
                    1,
                    s.pad,
                )
            })
            .collect()
    };
    Ok(ModelParams {
        stage1: build(stage1_specs(cfg1))?,
        stage2: build(stage2_specs(cfg2))?,
        stage1_trainable: true,
        stage2_trainable: true,
    })
}

/// Per-layer weight/bias gradients; `None` until a backward pass touches
/// the layer. Repeated backward passes accumulate.
#[derive(Debug, Default)]
pub struct ModelGrads {
    pub stage1: Vec<Option<LayerGrads>>,
    pub stage2: Vec<Option<LayerGrads>>,
}

#[derive(Debug)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ModelGrads {
    pub fn new() -> ModelGrads {
        ModelGrads {
            stage1: (0..S1_CONVS).map(|_| None).collect(),
            stage2: (0..S2_CONVS).map(|_| None).collect(),
        }
    }

    fn accumulate(slot: &mut Option<LayerGrads>, weights: Tensor, bias: Tensor) -> Result<()> {
        match slot {
            None => *slot = Some(LayerGrads { weights, bias }),
            Some(g) => {
                add_assign(&mut g.weights, &weights)?;
                add_assign(&mut g.bias, &bias)?;
            }
        }
        Ok(())
    }
}

fn add_assign(dst: &mut Tensor, src: &Tensor) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(Error::shape("grad accumulate", dst.shape_string(), src.shape_string()));
    }
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
    Ok(())
}

/// Everything stage-1 backward needs: per-conv inputs, pre-ReLU outputs,
/// pool indices and the cropped pre-clamp prediction.
pub struct Stage1Tape {
    conv_inputs: Vec<Tensor>,
    pre_relu: Vec<Tensor>,
    pools: Vec<PoolIndices>,
    pre_clamp: Tensor,
    padded_hw: (usize, usize),
}

pub struct Stage1Output {
    /// Clamped alpha prediction, (n, 1, h, w) at the input resolution.
    pub alpha: Tensor,
    tape: Stage1Tape,
}

/// Runs the encoder-decoder over a batch. `trimap_channel` is the {0, 0.5,
/// 1} encoding, one channel per sample. Spatial dims are padded internally
/// to a multiple of 32 with edge replication and cropped back.
pub fn stage1_forward(
    image: &Tensor,
    trimap_channel: &Tensor,
    params: &ModelParams,
    cfg: &Stage1Config,
) -> Result<Stage1Output> {
    let (n, c, h, w) = image.shape();
    if c != 3 {
        return Err(Error::shape("stage1_forward image", "Nx3xHxW", image.shape_string()));
    }
    if trimap_channel.shape() != (n, 1, h, w) {
        return Err(Error::shape(
            "stage1_forward trimap",
            format!("{}x1x{}x{}", n, h, w),
            trimap_channel.shape_string(),
        ));
    }
    params.validate_stage1(cfg)?;

    let input = Tensor::concat_channels(&[image, trimap_channel])?;
    let (padded, (oh, ow)) = pad_to_multiple(&input, PAD_MULTIPLE)?;
    let padded_hw = (padded.h(), padded.w());

    let mut cur = padded;
    let mut conv_inputs = Vec::with_capacity(S1_CONVS);
    let mut pre_relu = Vec::with_capacity(S1_CONVS - 1);
    let mut pools: Vec<PoolIndices> = Vec::with_capacity(POOL_COUNT);
    for op in stage1_ops() {
        match op {
            S1Op::Conv(i) => {
                let out = conv2d(&cur, &params.stage1[i])?;
                conv_inputs.push(std::mem::replace(&mut cur, out));
            }
            S1Op::Relu => {
                let out = relu(&cur);
                pre_relu.push(std::mem::replace(&mut cur, out));
            }
            S1Op::Pool => {
                let (out, idx) = maxpool2x2(&cur)?;
                pools.push(idx);
                cur = out;
            }
            S1Op::Unpool(k) => {
                cur = unpool2x2(&cur, &pools[k])?;
            }
        }
    }
    let pre_clamp = crop_top_left(&cur, oh, ow)?;
    let alpha = clamp01(&pre_clamp);
    Ok(Stage1Output {
        alpha,
        tape: Stage1Tape { conv_inputs, pre_relu, pools, pre_clamp, padded_hw },
    })
}

/// Single-sample convenience wrapper taking a [`Trimap`] directly.
pub fn stage1_forward_single(
    image: &Tensor,
    trimap: &Trimap,
    params: &ModelParams,
    cfg: &Stage1Config,
) -> Result<Stage1Output> {
    stage1_forward(image, &trimap.to_channel(), params, cfg)
}

/// Backpropagates `grad_alpha` through stage 1, accumulating layer
/// gradients into `grads`. The gradient w.r.t. the image/trimap input is
/// not materialized (inputs are data, not parameters).
pub fn stage1_backward(
    out: &Stage1Output,
    grad_alpha: &Tensor,
    params: &ModelParams,
    grads: &mut ModelGrads,
) -> Result<()> {
    let tape = &out.tape;
    if grad_alpha.shape() != out.alpha.shape() {
        return Err(Error::shape(
            "stage1_backward grad",
            out.alpha.shape_string(),
            grad_alpha.shape_string(),
        ));
    }
    let mut g = clamp01_backward(&tape.pre_clamp, grad_alpha)?;
    g = crop_top_left_backward(&g, tape.padded_hw.0, tape.padded_hw.1)?;

    let ops = stage1_ops();
    let mut conv_i = tape.conv_inputs.len();
    let mut relu_i = tape.pre_relu.len();
    let mut pool_seen = 0; // pools encountered while walking backward
    for op in ops.iter().rev() {
        match *op {
            S1Op::Conv(i) => {
                conv_i -= 1;
                debug_assert_eq!(conv_i, i);
                let cg = conv2d_backward(
                    &tape.conv_inputs[i],
                    &params.stage1[i],
                    &g,
                    i > 0,
                )?;
                ModelGrads::accumulate(&mut grads.stage1[i], cg.weights, cg.bias)?;
                match cg.input {
                    Some(gi) => g = gi,
                    None => break, // first layer: gradient stops at the data
                }
            }
            S1Op::Relu => {
                relu_i -= 1;
                g = relu_backward(&tape.pre_relu[relu_i], &g)?;
            }
            S1Op::Pool => {
                pool_seen += 1;
                let k = POOL_COUNT - pool_seen;
                g = maxpool2x2_backward(&tape.pools[k], &g)?;
            }
            S1Op::Unpool(k) => {
                g = unpool2x2_backward(&tape.pools[k], &g)?;
            }
        }
    }
    Ok(())
}

pub struct Stage2Tape {
    conv_inputs: Vec<Tensor>,
    pre_relu: Vec<Tensor>,
    pre_clamp: Tensor,
}

pub struct Stage2Output {
    /// Refined alpha, (n, 1, h, w), clamped to [0, 1].
    pub refined: Tensor,
    tape: Stage2Tape,
}

/// Refinement head: net input is concat(image, alpha_raw * 255); the
/// network output is added to the unscaled raw alpha (skip connection) and
/// clamped. No pooling, so dims are preserved without padding.
pub fn stage2_forward(
    image: &Tensor,
    alpha_raw: &Tensor,
    params: &ModelParams,
    cfg: &Stage2Config,
) -> Result<Stage2Output> {
    let (n, c, h, w) = image.shape();
    if c != 3 {
        return Err(Error::shape("stage2_forward image", "Nx3xHxW", image.shape_string()));
    }
    if alpha_raw.shape() != (n, 1, h, w) {
        return Err(Error::shape(
            "stage2_forward alpha",
            format!("{}x1x{}x{}", n, h, w),
            alpha_raw.shape_string(),
        ));
    }
    params.validate_stage2(cfg)?;

    let scaled_alpha = alpha_raw.map(|v| v * STAGE2_ALPHA_SCALE);
    let mut cur = Tensor::concat_channels(&[image, &scaled_alpha])?;
    let mut conv_inputs = Vec::with_capacity(S2_CONVS);
    let mut pre_relu = Vec::with_capacity(S2_CONVS - 1);
    for (i, layer) in params.stage2.iter().enumerate() {
        let out = conv2d(&cur, layer)?;
        conv_inputs.push(std::mem::replace(&mut cur, out));
        if i < S2_CONVS - 1 {
            let out = relu(&cur);
            pre_relu.push(std::mem::replace(&mut cur, out));
        }
    }
    let mut pre_clamp = cur;
    for (p, &a) in pre_clamp.data_mut().iter_mut().zip(alpha_raw.data()) {
        *p += a;
    }
    let refined = clamp01(&pre_clamp);
    Ok(Stage2Output { refined, tape: Stage2Tape { conv_inputs, pre_relu, pre_clamp } })
}

/// Backpropagates through the refinement head. Returns the gradient w.r.t.
/// the raw stage-1 alpha (both through the skip connection and through the
/// scaled input channel), which the caller feeds into [`stage1_backward`]
/// when fine-tuning end to end.
pub fn stage2_backward(
    out: &Stage2Output,
    grad_refined: &Tensor,
    params: &ModelParams,
    grads: &mut ModelGrads,
) -> Result<Tensor> {
    let tape = &out.tape;
    if grad_refined.shape() != out.refined.shape() {
        return Err(Error::shape(
            "stage2_backward grad",
            out.refined.shape_string(),
            grad_refined.shape_string(),
        ));
    }
    let g_pre = clamp01_backward(&tape.pre_clamp, grad_refined)?;
    // Skip branch: refined = clamp(alpha_raw + net), so d/d alpha_raw
    // passes g_pre straight through.
    let mut grad_alpha = g_pre.clone();

    let mut g = g_pre;
    for i in (0..S2_CONVS).rev() {
        let cg = conv2d_backward(&tape.conv_inputs[i], &params.stage2[i], &g, true)?;
        ModelGrads::accumulate(&mut grads.stage2[i], cg.weights, cg.bias)?;
        g = cg.input.expect("requested input grad");
        if i > 0 {
            g = relu_backward(&tape.pre_relu[i - 1], &g)?;
        }
    }
    // Input channel 3 carried alpha_raw * 255.
    let n = g.n();
    for b in 0..n {
        let src = g.plane(b, 3).to_vec();
        let dst = grad_alpha.plane_mut(b, 0);
        for (d, s) in dst.iter_mut().zip(src) {
            *d += STAGE2_ALPHA_SCALE * s;
        }
    }
    Ok(grad_alpha)
}

pub struct FullForward {
    pub stage1: Stage1Output,
    pub stage2: Stage2Output,
}

/// Both stages composed: exactly stage2_forward(image,
/// stage1_forward(image, trimap)).
pub fn full_forward(
    image: &Tensor,
    trimap_channel: &Tensor,
    params: &ModelParams,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
) -> Result<FullForward> {
    let stage1 = stage1_forward(image, trimap_channel, params, cfg1)?;
    let stage2 = stage2_forward(image, &stage1.alpha, params, cfg2)?;
    Ok(FullForward { stage1, stage2 })
}

/// Which post-processing follows the stage-1 prediction at inference time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RefineMode {
    /// Raw encoder-decoder output.
    None,
    /// Learned refinement head.
    Stage2,
    /// Guided filter with the image as guide.
    Guided(GuidedFilterConfig),
}

impl std::str::FromStr for RefineMode {
    type Err = Error;

    /// Accepts `none`, `stage2`, `guided` or `guided:r=20,eps=1e-4`.
    fn from_str(s: &str) -> Result<RefineMode> {
        match s {
            "none" => return Ok(RefineMode::None),
            "stage2" => return Ok(RefineMode::Stage2),
            "guided" => return Ok(RefineMode::Guided(GuidedFilterConfig::default())),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("guided:") {
            let mut cfg = GuidedFilterConfig::default();
            for part in rest.split(',') {
                let (key, value) = part.split_once('=').ok_or_else(|| {
                    Error::InvalidConfig(format!("refine option `{}` is not key=value", part))
                })?;
                match key.trim() {
                    "r" => {
                        cfg.radius = value.trim().parse().map_err(|_| {
                            Error::InvalidConfig(format!("bad guided radius `{}`", value))
                        })?
                    }
                    "eps" => {
                        cfg.eps = value.trim().parse().map_err(|_| {
                            Error::InvalidConfig(format!("bad guided eps `{}`", value))
                        })?
                    }
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "unknown guided option `{}` (expected r, eps)",
                            other
                        )))
                    }
                }
            }
            return Ok(RefineMode::Guided(cfg));
        }
        Err(Error::InvalidConfig(format!(
            "unknown refine mode `{}` (expected none | stage2 | guided[:r=..,eps=..])",
            s
        )))
    }
}

impl std::fmt::Display for RefineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefineMode::None => write!(f, "none"),
            RefineMode::Stage2 => write!(f, "stage2"),
            RefineMode::Guided(c) => write!(f, "guided:r={},eps={}", c.radius, c.eps),
        }
    }
}

/// Inference entry point: stage 1 plus the chosen refinement.
pub fn predict_matte(
    image: &Tensor,
    trimap: &Trimap,
    params: &ModelParams,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
    refine: RefineMode,
) -> Result<Tensor> {
    let s1 = stage1_forward_single(image, trimap, params, cfg1)?;
    match refine {
        RefineMode::None => Ok(s1.alpha),
        RefineMode::Stage2 => {
            Ok(stage2_forward(image, &s1.alpha, params, cfg2)?.refined)
        }
        RefineMode::Guided(gcfg) => {
            let filtered = guided_filter(image, &s1.alpha, &gcfg)?;
            Ok(filtered)
        }
    }
}
