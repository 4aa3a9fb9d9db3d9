//! Dataset synthesis and the training-time augmentation pipeline.
//!
//! A matting dataset is generated, not collected: every foreground asset
//! (RGB layer + ground-truth alpha) is composited over several fresh
//! backgrounds, multiplying a small set of mattes into a large corpus of
//! exactly-composited training samples. Trimaps are derived from the alpha
//! with a random erosion width so the network never sees a fixed unknown
//! band.

pub mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

/// Alpha values within this tolerance of 0 or 1 count as definite
/// background / foreground when deriving trimaps.
pub const TRIMAP_TOLERANCE: f32 = 1e-3;

/// A foreground layer with its ground-truth alpha matte.
#[derive(Clone, Debug)]
pub struct ForegroundAsset {
    pub id: String,
    /// RGB, (1, 3, h, w), values in [0, 1].
    pub fg: Tensor,
    /// Alpha, (1, 1, h, w), values in [0, 1].
    pub alpha: Tensor,
}

impl ForegroundAsset {
    pub fn new(id: impl Into<String>, fg: Tensor, alpha: Tensor) -> Result<ForegroundAsset> {
        let (n, c, h, w) = fg.shape();
        if n != 1 || c != 3 {
            return Err(Error::shape("ForegroundAsset fg", "1x3xHxW", fg.shape_string()));
        }
        if alpha.shape() != (1, 1, h, w) {
            return Err(Error::shape(
                "ForegroundAsset alpha",
                format!("1x1x{}x{}", h, w),
                alpha.shape_string(),
            ));
        }
        Ok(ForegroundAsset { id: id.into(), fg, alpha })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.fg.h(), self.fg.w())
    }
}

/// A plain RGB background image.
#[derive(Clone, Debug)]
pub struct BackgroundAsset {
    pub id: String,
    /// RGB, (1, 3, h, w), values in [0, 1].
    pub image: Tensor,
}

impl BackgroundAsset {
    pub fn new(id: impl Into<String>, image: Tensor) -> Result<BackgroundAsset> {
        let (n, c, ..) = image.shape();
        if n != 1 || c != 3 {
            return Err(Error::shape("BackgroundAsset", "1x3xHxW", image.shape_string()));
        }
        Ok(BackgroundAsset { id: id.into(), image })
    }
}

/// Per-pixel trimap label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrimapLabel {
    Background,
    Unknown,
    Foreground,
}

/// Dense per-pixel label map guiding both the network (as an extra input
/// channel) and the losses/metrics (which only look at Unknown pixels).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trimap {
    h: usize,
    w: usize,
    labels: Vec<TrimapLabel>,
}

impl Trimap {
    pub fn new(h: usize, w: usize, labels: Vec<TrimapLabel>) -> Result<Trimap> {
        if labels.len() != h * w {
            return Err(Error::shape(
                "Trimap::new",
                format!("{} labels", h * w),
                format!("{}", labels.len()),
            ));
        }
        Ok(Trimap { h, w, labels })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> TrimapLabel {
        self.labels[y * self.w + x]
    }

    pub fn unknown_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == TrimapLabel::Unknown).count()
    }

    /// Network input encoding: background 0.0, unknown 0.5, foreground 1.0.
    pub fn to_channel(&self) -> Tensor {
        let data = self
            .labels
            .iter()
            .map(|l| match l {
                TrimapLabel::Background => 0.0,
                TrimapLabel::Unknown => 0.5,
                TrimapLabel::Foreground => 1.0,
            })
            .collect();
        Tensor::from_vec(1, 1, self.h, self.w, data).expect("sized by construction")
    }

    /// 1.0 on Unknown pixels, 0.0 elsewhere; the loss/metric weight map.
    pub fn unknown_mask(&self) -> Tensor {
        let data = self
            .labels
            .iter()
            .map(|&l| if l == TrimapLabel::Unknown { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_vec(1, 1, self.h, self.w, data).expect("sized by construction")
    }

    pub fn crop_rect(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<Trimap> {
        if ch == 0 || cw == 0 || y0 + ch > self.h || x0 + cw > self.w {
            return Err(Error::shape(
                "Trimap::crop_rect",
                format!("rect {}+{}x{}+{} inside", y0, ch, x0, cw),
                format!("{}x{}", self.h, self.w),
            ));
        }
        let mut labels = Vec::with_capacity(ch * cw);
        for y in 0..ch {
            let s = (y0 + y) * self.w + x0;
            labels.extend_from_slice(&self.labels[s..s + cw]);
        }
        Ok(Trimap { h: ch, w: cw, labels })
    }

    pub fn flip_horizontal(&self) -> Trimap {
        let mut labels = self.labels.clone();
        for y in 0..self.h {
            labels[y * self.w..(y + 1) * self.w].reverse();
        }
        Trimap { h: self.h, w: self.w, labels }
    }

    /// Row-major flat indices of all Unknown pixels.
    pub fn unknown_pixels(&self) -> Vec<u32> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == TrimapLabel::Unknown)
            .map(|(i, _)| i as u32)
            .collect()
    }
}

/// Where a sample came from and which random choices produced it; enough to
/// regenerate the sample bit-for-bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub fg_id: String,
    pub bg_id: String,
    pub seed: u64,
    pub dilation: u32,
}

/// One training/eval sample: the composite and every layer that produced
/// it. `image` always equals `alpha * fg + (1 - alpha) * bg` exactly in
/// f32, including after augmentation.
#[derive(Clone, Debug)]
pub struct CompositeSample {
    pub image: Tensor,
    pub trimap: Trimap,
    pub alpha: Tensor,
    pub fg: Tensor,
    pub bg: Tensor,
    pub provenance: Provenance,
}

/// Knobs for synthesis and augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// How many backgrounds each foreground is composited over.
    pub backgrounds_per_fg: usize,
    /// Trimap erosion width range (inclusive), pixels.
    pub d_min: u32,
    pub d_max: u32,
    /// Candidate crop sizes for augmentation; crops larger than
    /// `train_size` are resized down to it.
    pub crop_sizes: Vec<usize>,
    /// Network input side length.
    pub train_size: usize,
    /// Largest factor a background may be scaled up to cover a foreground;
    /// pairs needing more are skipped.
    pub max_bg_upscale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            backgrounds_per_fg: 100,
            d_min: 1,
            d_max: 25,
            crop_sizes: vec![320, 480, 640],
            train_size: 320,
            max_bg_upscale: 4.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backgrounds_per_fg == 0 {
            return Err(Error::InvalidConfig("backgrounds_per_fg must be >= 1".into()));
        }
        if self.d_min > self.d_max {
            return Err(Error::InvalidConfig(format!(
                "trimap dilation range [{}, {}] is empty",
                self.d_min, self.d_max
            )));
        }
        if self.train_size == 0 {
            return Err(Error::InvalidConfig("train_size must be >= 1".into()));
        }
        if self.crop_sizes.is_empty() {
            return Err(Error::InvalidConfig("crop_sizes must not be empty".into()));
        }
        if self.crop_sizes.iter().any(|&s| s < self.train_size) {
            return Err(Error::InvalidConfig(format!(
                "crop sizes {:?} must all be >= train_size {}",
                self.crop_sizes, self.train_size
            )));
        }
        if !(self.max_bg_upscale >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "max_bg_upscale {} must be >= 1",
                self.max_bg_upscale
            )));
        }
        Ok(())
    }
}

/// The compositing equation: I = alpha * F + (1 - alpha) * B, evaluated
/// independently per pixel and channel in f32. This exact expression is the
/// ground-truth contract for the whole pipeline.
pub fn composite(fg: &Tensor, bg: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = fg.shape();
    if bg.shape() != (n, c, h, w) {
        return Err(Error::shape("composite bg", fg.shape_string(), bg.shape_string()));
    }
    if alpha.shape() != (n, 1, h, w) {
        return Err(Error::shape(
            "composite alpha",
            format!("{}x1x{}x{}", n, h, w),
            alpha.shape_string(),
        ));
    }
    let mut out = Tensor::zeros(n, c, h, w);
    for b in 0..n {
        let a_plane = alpha.plane(b, 0);
        for ch in 0..c {
            let f = fg.plane(b, ch);
            let bgp = bg.plane(b, ch);
            let o = out.plane_mut(b, ch);
            for i in 0..o.len() {
                let a = a_plane[i];
                o[i] = a * f[i] + (1.0 - a) * bgp[i];
            }
        }
    }
    Ok(out)
}

/// Erosion of a binary mask by a (2d+1)^2 square structuring element,
/// runs as two separable 1-D min passes. Windows are clipped at the image
/// border (out-of-bounds cells are ignored), so a mask that is all-true
/// stays all-true.
fn erode(mask: &[bool], h: usize, w: usize, d: usize) -> Vec<bool> {
    if d == 0 {
        return mask.to_vec();
    }
    let mut horiz = vec![false; h * w];
    for y in 0..h {
        let row = &mask[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        for x in 0..w {
            let x0 = x.saturating_sub(d);
            let x1 = (x + d).min(w - 1);
            out[x] = row[x0..=x1].iter().all(|&v| v);
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(d);
        let y1 = (y + d).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (y0..=y1).all(|yy| horiz[yy * w + x]);
        }
    }
    out
}

/// Derives a trimap from ground-truth alpha: pixels that stay within the
/// eroded near-1 region are Foreground, within the eroded near-0 region
/// Background, everything else Unknown. Larger `d` erodes both cores
/// further, monotonically growing the unknown band.
pub fn trimap_from_alpha(alpha: &Tensor, d: u32) -> Result<Trimap> {
    let (n, c, h, w) = alpha.shape();
    if n != 1 || c != 1 {
        return Err(Error::shape("trimap_from_alpha", "1x1xHxW", alpha.shape_string()));
    }
    let data = alpha.data();
    let fg_mask: Vec<bool> = data.iter().map(|&a| a >= 1.0 - TRIMAP_TOLERANCE).collect();
    let bg_mask: Vec<bool> = data.iter().map(|&a| a <= TRIMAP_TOLERANCE).collect();
    let fg_core = erode(&fg_mask, h, w, d as usize);
    let bg_core = erode(&bg_mask, h, w, d as usize);
    let labels = fg_core
        .iter()
        .zip(&bg_core)
        .map(|(&f, &b)| {
            if f {
                TrimapLabel::Foreground
            } else if b {
                TrimapLabel::Background
            } else {
                TrimapLabel::Unknown
            }
        })
        .collect();
    Trimap::new(h, w, labels)
}

/// Trimap with an erosion width drawn uniformly from [d_min, d_max].
/// Returns the width actually used so it can be recorded in provenance.
pub fn make_trimap(
    alpha: &Tensor,
    d_min: u32,
    d_max: u32,
    rng: &mut impl Rng,
) -> Result<(Trimap, u32)> {
    if d_min > d_max {
        return Err(Error::InvalidConfig(format!(
            "trimap dilation range [{}, {}] is empty",
            d_min, d_max
        )));
    }
    let d = rng.gen_range(d_min..=d_max);
    Ok((trimap_from_alpha(alpha, d)?, d))
}

/// Outcome of composing one (foreground, background) pair.
pub enum PairOutcome {
    Sample(CompositeSample),
    /// Pair could not be used; the string says why (e.g. background too
    /// small even after the allowed upscale).
    Skip(String),
}

/// Fits a background to the foreground dims: upscale if needed (bounded by
/// `max_bg_upscale`), then take a random crop.
fn fit_background(
    bg: &Tensor,
    fh: usize,
    fw: usize,
    max_upscale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Tensor>> {
    let (bh, bw) = (bg.h(), bg.w());
    let scale = (fh as f64 / bh as f64).max(fw as f64 / bw as f64);
    let scaled = if scale > 1.0 {
        if scale > max_upscale {
            return Ok(None);
        }
        let nh = ((bh as f64 * scale).ceil() as usize).max(fh);
        let nw = ((bw as f64 * scale).ceil() as usize).max(fw);
        bilinear_resize(bg, nh, nw)?
    } else {
        bg.clone()
    };
    let (sh, sw) = (scaled.h(), scaled.w());
    let y0 = if sh > fh { rng.gen_range(0..=sh - fh) } else { 0 };
    let x0 = if sw > fw { rng.gen_range(0..=sw - fw) } else { 0 };
    Ok(Some(scaled.crop_rect(y0, x0, fh, fw)?))
}

/// Composites one foreground over one background with a freshly drawn
/// trimap. All randomness comes from `sample_seed`, which is stored in the
/// sample's provenance.
pub fn synthesize_pair(
    fg: &ForegroundAsset,
    bg: &BackgroundAsset,
    cfg: &DatasetConfig,
    sample_seed: u64,
) -> Result<PairOutcome> {
    let (fh, fw) = fg.dims();
    let mut rng = seeded_rng(sample_seed, "pair", &[]);
    let Some(bg_fit) = fit_background(&bg.image, fh, fw, cfg.max_bg_upscale, &mut rng)? else {
        return Ok(PairOutcome::Skip(format!(
            "background {}x{} needs more than {}x upscale to cover {}x{}",
            bg.image.h(),
            bg.image.w(),
            cfg.max_bg_upscale,
            fh,
            fw
        )));
    };
    let image = composite(&fg.fg, &bg_fit, &fg.alpha)?;
    let (trimap, d) = make_trimap(&fg.alpha, cfg.d_min, cfg.d_max, &mut rng)?;
    if trimap.unknown_count() == 0 {
        return Ok(PairOutcome::Skip("trimap has no unknown pixels".into()));
    }
    Ok(PairOutcome::Sample(CompositeSample {
        image,
        trimap,
        alpha: fg.alpha.clone(),
        fg: fg.fg.clone(),
        bg: bg_fit,
        provenance: Provenance {
            fg_id: fg.id.clone(),
            bg_id: bg.id.clone(),
            seed: sample_seed,
            dilation: d,
        },
    }))
}

/// A pair that could not be synthesized, with its reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub fg_id: String,
    pub bg_id: String,
    pub reason: String,
}

/// Synthesis result: samples in deterministic order plus skipped pairs.
pub struct SynthReport {
    pub samples: Vec<CompositeSample>,
    pub skipped: Vec<SkipRecord>,
}

/// The full (fg, bg) pairing: each foreground is composited over
/// `backgrounds_per_fg` backgrounds assigned round-robin. Returns
/// (fg index, bg index, sample seed) triples in generation order.
pub fn pairing(
    fg_count: usize,
    bg_count: usize,
    cfg: &DatasetConfig,
    seed: u64,
) -> Vec<(usize, usize, u64)> {
    let n = cfg.backgrounds_per_fg;
    (0..fg_count)
        .flat_map(|i| {
            (0..n).map(move |k| {
                let bg = (i * n + k) % bg_count.max(1);
                (i, bg, crate::rng::derive_seed(seed, "synth", &[i as u64, k as u64]))
            })
        })
        .collect()
}

/// Builds the whole corpus in parallel. Sample order and content depend
/// only on the inputs and `seed`, never on thread count.
pub fn synthesize_dataset(
    fgs: &[ForegroundAsset],
    bgs: &[BackgroundAsset],
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<SynthReport> {
    cfg.validate()?;
    if fgs.is_empty() || bgs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "synthesis needs at least one foreground and one background (got {} / {})",
            fgs.len(),
            bgs.len()
        )));
    }
    let pairs = pairing(fgs.len(), bgs.len(), cfg, seed);
    let outcomes: Vec<Result<PairOutcome>> = pairs
        .par_iter()
        .map(|&(fi, bi, s)| synthesize_pair(&fgs[fi], &bgs[bi], cfg, s))
        .collect();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (outcome, &(fi, bi, _)) in outcomes.into_iter().zip(&pairs) {
        match outcome? {
            PairOutcome::Sample(s) => samples.push(s),
            PairOutcome::Skip(reason) => skipped.push(SkipRecord {
                fg_id: fgs[fi].id.clone(),
                bg_id: bgs[bi].id.clone(),
                reason,
            }),
        }
    }
    Ok(SynthReport { samples, skipped })
}

/// One augmentation draw: crop around a random unknown pixel (multi-scale),
/// maybe flip, resize to the training size, and rebuild trimap + composite
/// so every invariant still holds. With `redilate` the trimap gets a fresh
/// random erosion width; without it the sample's stored width is reused
/// (refinement-stage training must not see fresh trimap randomness).
pub fn augment_crop(
    sample: &CompositeSample,
    cfg: &DatasetConfig,
    rng: &mut ChaCha8Rng,
    redilate: bool,
) -> Result<CompositeSample> {
    let (h, w) = sample.trimap.dims();
    let limit = h.min(w);
    // Crop sizes that fit the source; degrade to the full short side when
    // the image is smaller than every configured size.
    let usable: Vec<usize> =
        cfg.crop_sizes.iter().copied().filter(|&s| s <= limit).collect();
    let unknown = sample.trimap.unknown_pixels();
    if unknown.is_empty() {
        return Err(Error::EmptyUnknownRegion);
    }

    for _attempt in 0..16 {
        let size = if usable.is_empty() {
            limit
        } else {
            usable[rng.gen_range(0..usable.len())]
        };
        let center = unknown[rng.gen_range(0..unknown.len())] as usize;
        let (cy, cx) = (center / w, center % w);
        let y0 = cy.saturating_sub(size / 2).min(h - size);
        let x0 = cx.saturating_sub(size / 2).min(w - size);
        let flip = rng.gen_bool(0.5);
        let d = if redilate {
            rng.gen_range(cfg.d_min..=cfg.d_max)
        } else {
            sample.provenance.dilation
        };

        let mut fg = sample.fg.crop_rect(y0, x0, size, size)?;
        let mut bg = sample.bg.crop_rect(y0, x0, size, size)?;
        let mut alpha = sample.alpha.crop_rect(y0, x0, size, size)?;
        let mut image = sample.image.crop_rect(y0, x0, size, size)?;
        let mut trimap = sample.trimap.crop_rect(y0, x0, size, size)?;
        if flip {
            fg = fg.flip_horizontal();
            bg = bg.flip_horizontal();
            alpha = alpha.flip_horizontal();
            image = image.flip_horizontal();
            trimap = trimap.flip_horizontal();
        }
        if size != cfg.train_size {
            // Resize the layers, then recomposite and re-derive the trimap
            // from the resized alpha; resizing the composite or the labels
            // directly would break the compositing and label invariants.
            fg = bilinear_resize(&fg, cfg.train_size, cfg.train_size)?;
            bg = bilinear_resize(&bg, cfg.train_size, cfg.train_size)?;
            alpha = bilinear_resize(&alpha, cfg.train_size, cfg.train_size)?;
            image = composite(&fg, &bg, &alpha)?;
            trimap = trimap_from_alpha(&alpha, d)?;
        } else if redilate {
            trimap = trimap_from_alpha(&alpha, d)?;
        }
        if trimap.unknown_count() == 0 {
            continue;
        }
        return Ok(CompositeSample {
            image,
            trimap,
            alpha,
            fg,
            bg,
            provenance: Provenance { dilation: d, ..sample.provenance.clone() },
        });
    }
    Err(Error::EmptyUnknownRegion)
}

/// Lazily regenerates an epoch's worth of augmented samples in a freshly
/// shuffled order. Each source sample's draws are seeded by (its own seed,
/// epoch), so epoch k is identical no matter how earlier epochs were
/// consumed.
pub struct EpochSamples<'a> {
    dataset: &'a [CompositeSample],
    order: Vec<usize>,
    cfg: &'a DatasetConfig,
    epoch: u64,
    redilate: bool,
    next: usize,
}

impl<'a> Iterator for EpochSamples<'a> {
    type Item = Result<CompositeSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let &i = self.order.get(self.next)?;
        self.next += 1;
        let sample = &self.dataset[i];
        let mut rng = seeded_rng(sample.provenance.seed, "augment", &[self.epoch]);
        Some(augment_crop(sample, self.cfg, &mut rng, self.redilate))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.order.len() - self.next;
        (rest, Some(rest))
    }
}

impl ExactSizeIterator for EpochSamples<'_> {}

/// Fresh augmented pass over the dataset for one epoch.
pub fn regenerate_epoch<'a>(
    dataset: &'a [CompositeSample],
    root_seed: u64,
    epoch: u64,
    cfg: &'a DatasetConfig,
    redilate: bool,
) -> EpochSamples<'a> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeded_rng(root_seed, "epoch-order", &[epoch]));
    EpochSamples { dataset, order, cfg, epoch, redilate, next: 0 }
}
