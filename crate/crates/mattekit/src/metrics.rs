//! The four standard matting error measures — SAD, MSE, gradient error,
//! connectivity error — plus the trimap-dilation robustness sweep and
//! CSV/JSON report writers.
//!
//! All metrics are restricted to the trimap's unknown region and computed
//! in f64. Every report embeds the metric parameter block so results are
//! self-describing. CSV reports start with a `# params {json}` comment
//! line, then per-image rows, then one `__mean__` row per aggregate group.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{trimap_from_alpha, CompositeSample, Trimap, TrimapLabel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the gradient and connectivity metrics, recorded verbatim
/// in every report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// Gaussian-derivative scale for the gradient metric.
    pub sigma: f64,
    /// Exponent of the gradient-magnitude difference.
    pub grad_q: u32,
    /// Threshold step of the connectivity level sets. Rounded to the
    /// nearest 1/K partition of [0,1] so the top level is exactly 1.
    pub delta: f64,
    /// Connectivity distances below theta are forgiven (treated as 0).
    pub theta: f64,
    /// Exponent of the connectivity difference.
    pub conn_q: u32,
    /// Pixel neighborhood for connected components (4 = edges only).
    pub neighborhood: u32,
    /// Alpha within this tolerance of 1 counts as fully opaque when
    /// selecting the connectivity source region.
    pub opaque_tol: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            sigma: 1.4,
            grad_q: 2,
            delta: 0.1,
            theta: 0.15,
            conn_q: 1,
            neighborhood: 4,
            opaque_tol: 1e-6,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("metric sigma {} must be > 0", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "metric delta {} must lie in (0,1]",
                self.delta
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!(
                "metric theta {} must lie in [0,1]",
                self.theta
            )));
        }
        if self.neighborhood != 4 {
            return Err(Error::InvalidConfig(format!(
                "only 4-connectivity is implemented, got {}",
                self.neighborhood
            )));
        }
        Ok(())
    }

    /// Number of threshold levels; thresholds are k/levels for k in 1..=levels.
    pub fn levels(&self) -> usize {
        (1.0 / self.delta).round().max(1.0) as usize
    }
}

fn check_single_matte(name: &'static str, t: &Tensor) -> Result<()> {
    let (n, c, _, _) = t.shape();
    if n != 1 || c != 1 {
        return Err(Error::shape(name, "1x1xHxW", t.shape_string()));
    }
    Ok(())
}

fn check_metric_inputs(
    name: &'static str,
    pred: &Tensor,
    gt: &Tensor,
    mask: &Tensor,
) -> Result<usize> {
    check_single_matte(name, pred)?;
    if gt.shape() != pred.shape() || mask.shape() != pred.shape() {
        return Err(Error::shape(
            name,
            pred.shape_string(),
            format!("gt {} mask {}", gt.shape_string(), mask.shape_string()),
        ));
    }
    let count = mask.data().iter().filter(|&&v| v != 0.0).count();
    if count == 0 {
        return Err(Error::EmptyUnknownRegion);
    }
    Ok(count)
}

/// Sum of absolute alpha differences over the unknown region (raw scale;
/// divide by 1000 for the conventional reporting unit).
pub fn sad(pred: &Tensor, gt: &Tensor, unknown_mask: &Tensor) -> Result<f64> {
    check_metric_inputs("sad", pred, gt, unknown_mask)?;
    let mut total = 0.0f64;
    for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(unknown_mask.data()) {
        if m != 0.0 {
            total += (f64::from(p) - f64::from(g)).abs();
        }
    }
    Ok(total)
}

/// Mean squared alpha difference over the unknown region.
pub fn mse(pred: &Tensor, gt: &Tensor, unknown_mask: &Tensor) -> Result<f64> {
    let count = check_metric_inputs("mse", pred, gt, unknown_mask)?;
    let mut total = 0.0f64;
    for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(unknown_mask.data()) {
        if m != 0.0 {
            let d = f64::from(p) - f64::from(g);
            total += d * d;
        }
    }
    Ok(total / count as f64)
}

/// Normalized 1-D Gaussian, truncated at 3 sigma.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// 1-D Gaussian first derivative, truncated at 3 sigma and scaled so a
/// unit ramp responds with magnitude exactly 1. Antisymmetric by
/// construction.
fn gaussian_deriv_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> =
        (-r..=r).map(|i| -(i as f64) * (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let scale: f64 = k.iter().zip(-r..=r).map(|(&v, i)| i as f64 * v).sum::<f64>().abs();
    for v in &mut k {
        *v /= scale;
    }
    k
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Cross-correlate one axis with a symmetric kernel, replicating borders.
fn correlate_axis(src: &[f64], h: usize, w: usize, kernel: &[f64], axis: Axis) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0f64; src.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0f64;
            for (ki, &kv) in kernel.iter().enumerate() {
                let o = ki as i64 - r;
                let (sy, sx) = match axis {
                    Axis::X => (y, (x + o).clamp(0, w as i64 - 1)),
                    Axis::Y => ((y + o).clamp(0, h as i64 - 1), x),
                };
                acc += kv * src[(sy * w as i64 + sx) as usize];
            }
            out[(y * w as i64 + x) as usize] = acc;
        }
    }
    out
}

/// Cross-correlate one axis with an antisymmetric kernel, pairing the
/// +o/-o taps so constant inputs produce exactly zero.
fn correlate_axis_antisym(src: &[f64], h: usize, w: usize, kernel: &[f64], axis: Axis) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0f64; src.len()];
    let at = |y: i64, x: i64| -> f64 {
        let sy = y.clamp(0, h as i64 - 1);
        let sx = x.clamp(0, w as i64 - 1);
        src[(sy * w as i64 + sx) as usize]
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0f64;
            for o in 1..=r as i64 {
                let kv = kernel[(r as i64 + o) as usize];
                let (hi, lo) = match axis {
                    Axis::X => (at(y, x + o), at(y, x - o)),
                    Axis::Y => (at(y + o, x), at(y - o, x)),
                };
                acc += kv * (hi - lo);
            }
            out[(y * w as i64 + x) as usize] = acc;
        }
    }
    out
}

/// Per-pixel gradient magnitude from separable Gaussian-derivative
/// filtering.
fn gradient_magnitude(plane: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let smooth = gaussian_kernel(sigma);
    let deriv = gaussian_deriv_kernel(sigma);
    let src: Vec<f64> = plane.iter().map(|&v| f64::from(v)).collect();
    let dx = correlate_axis_antisym(&src, h, w, &deriv, Axis::X);
    let gx = correlate_axis(&dx, h, w, &smooth, Axis::Y);
    let dy = correlate_axis_antisym(&src, h, w, &deriv, Axis::Y);
    let gy = correlate_axis(&dy, h, w, &smooth, Axis::X);
    gx.iter().zip(&gy).map(|(&a, &b)| (a * a + b * b).sqrt()).collect()
}

/// Sum over unknown pixels of the gradient-magnitude difference raised to
/// `grad_q`, with gradients from first-order Gaussian derivative filters.
pub fn gradient_error(
    pred: &Tensor,
    gt: &Tensor,
    unknown_mask: &Tensor,
    params: &MetricParams,
) -> Result<f64> {
    params.validate()?;
    check_metric_inputs("gradient_error", pred, gt, unknown_mask)?;
    let (_, _, h, w) = pred.shape();
    let gp = gradient_magnitude(pred.plane(0, 0), h, w, params.sigma);
    let gg = gradient_magnitude(gt.plane(0, 0), h, w, params.sigma);
    let mut total = 0.0f64;
    for ((&a, &b), &m) in gp.iter().zip(&gg).zip(unknown_mask.data()) {
        if m != 0.0 {
            total += (a - b).abs().powi(params.grad_q as i32);
        }
    }
    Ok(total)
}

/// Largest 4-connected true component; ties resolved toward the component
/// containing the smallest row-major pixel index. Returns a membership
/// mask, or None if there are no true pixels.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Option<Vec<bool>> {
    let mut visited = vec![false; mask.len()];
    let mut best: Option<Vec<usize>> = None;
    for start in 0..mask.len() {
        if !mask[start] || visited[start] {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (y, x) = (i / w, i % w);
            let mut push = |j: usize| {
                if mask[j] && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
        }
        // Strict > keeps the earlier (smaller first-pixel) component on ties.
        if best.as_ref().map_or(true, |b| component.len() > b.len()) {
            best = Some(component);
        }
    }
    best.map(|indices| {
        let mut member = vec![false; mask.len()];
        for i in indices {
            member[i] = true;
        }
        member
    })
}

/// Per-pixel l_i: the highest threshold level at which the pixel is
/// 4-connected to the source region omega through the level set
/// {alpha >= threshold}. Levels are k/levels for k = 1..=levels; pixels
/// never connected (or an empty omega) get l_i = 0.
fn connection_levels(alpha: &[f32], h: usize, w: usize, omega: &[bool], levels: usize) -> Vec<f64> {
    let mut l = vec![0.0f64; alpha.len()];
    let mut reachable = vec![false; alpha.len()];
    for k in 1..=levels {
        let t = k as f64 / levels as f64;
        let in_set: Vec<bool> = alpha.iter().map(|&a| f64::from(a) >= t).collect();
        reachable.iter_mut().for_each(|r| *r = false);
        let mut queue: VecDeque<usize> = (0..alpha.len())
            .filter(|&i| omega[i] && in_set[i])
            .inspect(|&i| reachable[i] = true)
            .collect();
        if queue.is_empty() {
            break; // higher levels only shrink the set further
        }
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            let mut push = |j: usize| {
                if in_set[j] && !reachable[j] {
                    reachable[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
        }
        for (li, &r) in l.iter_mut().zip(&reachable) {
            if r {
                *li = t;
            }
        }
    }
    l
}

/// Connectivity error: compares per-pixel degrees of connectedness to the
/// shared source region (the largest component fully opaque in both
/// mattes) across threshold level sets. Distances below theta are
/// forgiven. Sums |phi_pred - phi_gt|^conn_q over unknown pixels.
pub fn connectivity_error(
    pred: &Tensor,
    gt: &Tensor,
    unknown_mask: &Tensor,
    params: &MetricParams,
) -> Result<f64> {
    params.validate()?;
    check_metric_inputs("connectivity_error", pred, gt, unknown_mask)?;
    let (_, _, h, w) = pred.shape();
    let p = pred.plane(0, 0);
    let g = gt.plane(0, 0);

    let opaque_both: Vec<bool> = p
        .iter()
        .zip(g)
        .map(|(&a, &b)| {
            f64::from(a) >= 1.0 - params.opaque_tol && f64::from(b) >= 1.0 - params.opaque_tol
        })
        .collect();
    let levels = params.levels();
    let empty_omega = vec![false; p.len()];
    let omega = largest_component(&opaque_both, h, w);
    let omega = omega.as_deref().unwrap_or(&empty_omega);

    let lp = connection_levels(p, h, w, omega, levels);
    let lg = connection_levels(g, h, w, omega, levels);

    let phi = |alpha: f32, l: f64| -> f64 {
        let d = f64::from(alpha) - l;
        if d >= params.theta {
            1.0 - d
        } else {
            1.0
        }
    };
    let mut total = 0.0f64;
    for (i, &m) in unknown_mask.data().iter().enumerate() {
        if m != 0.0 {
            total += (phi(p[i], lp[i]) - phi(g[i], lg[i])).abs().powi(params.conn_q as i32);
        }
    }
    Ok(total)
}

/// The no-learning reference matte: copies the trimap's labels (1 on
/// foreground, 0 on background, 0.5 on unknown).
pub fn trimap_copy_baseline(trimap: &Trimap) -> Tensor {
    let (h, w) = trimap.dims();
    let data = trimap
        .labels()
        .iter()
        .map(|l| match l {
            TrimapLabel::Background => 0.0,
            TrimapLabel::Unknown => 0.5,
            TrimapLabel::Foreground => 1.0,
        })
        .collect();
    Tensor::from_vec(1, 1, h, w, data).expect("sized by construction")
}

/// One evaluated image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub image_id: String,
    /// Trimap dilation radius when produced by the sweep.
    pub d: Option<u32>,
    pub sad_raw: f64,
    pub sad_k: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

/// Mean of the rows sharing one dilation value (or of all rows for a
/// plain evaluation).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateRow {
    pub d: Option<u32>,
    pub images: usize,
    pub sad_raw: f64,
    pub sad_k: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

/// An image the predictor failed on; excluded from aggregates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MissingRow {
    pub image_id: String,
    pub d: Option<u32>,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub params: MetricParams,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<AggregateRow>,
    pub missing: Vec<MissingRow>,
}

/// Evaluates one prediction against ground truth under the given mask.
pub fn evaluate_single(
    image_id: &str,
    d: Option<u32>,
    pred: &Tensor,
    gt: &Tensor,
    unknown_mask: &Tensor,
    params: &MetricParams,
) -> Result<MetricRow> {
    let sad_raw = sad(pred, gt, unknown_mask)?;
    Ok(MetricRow {
        image_id: image_id.to_string(),
        d,
        sad_raw,
        sad_k: sad_raw / 1000.0,
        mse: mse(pred, gt, unknown_mask)?,
        grad: gradient_error(pred, gt, unknown_mask, params)?,
        conn: connectivity_error(pred, gt, unknown_mask, params)?,
    })
}

fn aggregate(rows: &[MetricRow], d: Option<u32>) -> AggregateRow {
    let n = rows.len().max(1) as f64;
    let mut agg = AggregateRow {
        d,
        images: rows.len(),
        sad_raw: 0.0,
        sad_k: 0.0,
        mse: 0.0,
        grad: 0.0,
        conn: 0.0,
    };
    for r in rows {
        agg.sad_raw += r.sad_raw;
        agg.sad_k += r.sad_k;
        agg.mse += r.mse;
        agg.grad += r.grad;
        agg.conn += r.conn;
    }
    agg.sad_raw /= n;
    agg.sad_k /= n;
    agg.mse /= n;
    agg.grad /= n;
    agg.conn /= n;
    agg
}

/// Builds a report from already-computed rows: rows sorted by (d, id),
/// one aggregate per distinct d.
pub fn assemble_report(
    params: &MetricParams,
    mut rows: Vec<MetricRow>,
    mut missing: Vec<MissingRow>,
) -> MetricsReport {
    rows.sort_by(|a, b| (a.d, &a.image_id).cmp(&(b.d, &b.image_id)));
    missing.sort_by(|a, b| (a.d, &a.image_id).cmp(&(b.d, &b.image_id)));
    let mut ds: Vec<Option<u32>> = rows.iter().map(|r| r.d).collect();
    ds.dedup();
    let aggregates = ds
        .into_iter()
        .map(|d| {
            let group: Vec<MetricRow> = rows.iter().filter(|r| r.d == d).cloned().collect();
            aggregate(&group, d)
        })
        .collect();
    MetricsReport { params: *params, rows, aggregates, missing }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Trimap dilation radii to evaluate; must be strictly increasing.
    pub d_list: Vec<u32>,
    /// Keep one sample per unique foreground asset (chosen by seed).
    pub one_per_foreground: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { d_list: vec![1, 4, 7, 10, 13, 16, 19], one_per_foreground: true }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_list.is_empty() {
            return Err(Error::InvalidConfig("sweep d_list is empty".into()));
        }
        if !self.d_list.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::InvalidConfig(format!(
                "sweep d_list {:?} must be strictly increasing",
                self.d_list
            )));
        }
        Ok(())
    }
}

/// Picks the sweep evaluation subset: one sample per unique foreground,
/// chosen by the seed, in first-appearance order of the foreground ids.
pub fn sweep_subset<'a>(
    samples: &'a [CompositeSample],
    cfg: &SweepConfig,
    seed: u64,
) -> Vec<&'a CompositeSample> {
    if !cfg.one_per_foreground {
        return samples.iter().collect();
    }
    let mut order: Vec<&str> = Vec::new();
    for s in samples {
        if !order.contains(&s.provenance.fg_id.as_str()) {
            order.push(&s.provenance.fg_id);
        }
    }
    order
        .into_iter()
        .enumerate()
        .map(|(i, fg)| {
            let group: Vec<&CompositeSample> =
                samples.iter().filter(|s| s.provenance.fg_id == fg).collect();
            use rand::Rng;
            let mut rng = crate::rng::seeded_rng(seed, "sweep-subset", &[i as u64]);
            group[rng.gen_range(0..group.len())]
        })
        .collect()
}

/// Runs the trimap-dilation sweep: for each d, regenerate every subset
/// sample's trimap at that uniform dilation, run the predictor, and score
/// it. Predictor failures are recorded as missing rows and excluded from
/// the means.
pub fn trimap_sweep<P>(
    predictor: P,
    samples: &[&CompositeSample],
    cfg: &SweepConfig,
    params: &MetricParams,
) -> Result<MetricsReport>
where
    P: Fn(&Tensor, &Trimap) -> Result<Tensor> + Sync,
{
    cfg.validate()?;
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one sample".into()));
    }

    let mut jobs: Vec<(u32, &CompositeSample)> = Vec::new();
    for &d in &cfg.d_list {
        for &s in samples {
            jobs.push((d, s));
        }
    }
    let outcomes: Vec<std::result::Result<MetricRow, MissingRow>> = jobs
        .par_iter()
        .map(|&(d, sample)| {
            let id = format!("{}+{}", sample.provenance.fg_id, sample.provenance.bg_id);
            let trimap = match trimap_from_alpha(&sample.alpha, d) {
                Ok(t) => t,
                Err(e) => {
                    return Err(MissingRow { image_id: id, d: Some(d), reason: e.to_string() })
                }
            };
            if trimap.unknown_count() == 0 {
                return Err(MissingRow {
                    image_id: id,
                    d: Some(d),
                    reason: "trimap has no unknown pixels".into(),
                });
            }
            let pred = match predictor(&sample.image, &trimap) {
                Ok(p) => p,
                Err(e) => {
                    return Err(MissingRow { image_id: id, d: Some(d), reason: e.to_string() })
                }
            };
            evaluate_single(&id, Some(d), &pred, &sample.alpha, &trimap.unknown_mask(), params)
                .map_err(|e| MissingRow { image_id: id, d: Some(d), reason: e.to_string() })
        })
        .collect();

    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(m) => missing.push(m),
        }
    }
    Ok(assemble_report(params, rows, missing))
}

fn fmt_d(d: Option<u32>) -> String {
    d.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV form: `# params {json}`, a header, per-image rows, then one
/// `__mean__` row per aggregate group.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let params = serde_json::to_string(&report.params).expect("params serialize");
    let mut out = format!("# params {}\n", params);
    out.push_str("image_id,d,sad_raw,sad_k,mse,grad,conn\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.image_id,
            fmt_d(r.d),
            r.sad_raw,
            r.sad_k,
            r.mse,
            r.grad,
            r.conn
        ));
    }
    for a in &report.aggregates {
        out.push_str(&format!(
            "__mean__,{},{},{},{},{},{}\n",
            fmt_d(a.d),
            a.sad_raw,
            a.sad_k,
            a.mse,
            a.grad,
            a.conn
        ));
    }
    out
}

pub fn write_report_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_to_csv(report)).map_err(|e| Error::io(path, e))
}

pub fn write_report_json(report: &MetricsReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serialize");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
