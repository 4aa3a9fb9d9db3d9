//! One function per subcommand. Each resolves its inputs from flags first
//! and the `[paths]` config section second, then drives the library and
//! reports via stdout plus `run.jsonl`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mattekit::checkpoint::{inspect_checkpoint, load_checkpoint, save_checkpoint};
use mattekit::config::{load_config, PipelineConfig};
use mattekit::dataset::synthesize_dataset;
use mattekit::imageio::{
    load_backgrounds, load_foreground_assets, read_dataset, read_manifest, read_matte_png,
    read_rgb_png, read_trimap_png, write_dataset, write_matte_png16,
};
use mattekit::metrics::{
    assemble_report, evaluate_single, report_to_csv, sweep_subset, trimap_copy_baseline,
    trimap_sweep, write_report_csv, write_report_json, AggregateRow, MetricsReport, MissingRow,
};
use mattekit::model::{build_model, predict_matte};
use mattekit::rng::derive_seed;
use mattekit::train::{write_history_csv, TrainContext};
use serde_json::json;

use crate::runlog::RunLog;
use crate::{EvalArgs, InferArgs, InspectArgs, SweepArgs, SynthArgs, TrainArgs};

fn load_pipeline_config(common: &crate::ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// A file's directory, with the empty parent of bare names mapped to ".".
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn aggregate_line(a: &AggregateRow) -> String {
    let scope = match a.d {
        Some(d) => format!("d={d}"),
        None => "all".into(),
    };
    format!(
        "{scope}: {} images  sad {:.4}  mse {:.6}  grad {:.4}  conn {:.4}",
        a.images, a.sad_raw, a.mse, a.grad, a.conn
    )
}

/// Writes report.csv/report.json under `out`, or dumps CSV to stdout when
/// no output directory was given.
fn emit_report(report: &MetricsReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating output directory {}", dir.display()))?;
            write_report_csv(report, &dir.join("report.csv"))?;
            write_report_json(report, &dir.join("report.json"))?;
            for agg in &report.aggregates {
                println!("{}", aggregate_line(agg));
            }
            if !report.missing.is_empty() {
                println!("{} predictions missing or failed", report.missing.len());
            }
            println!("report -> {}", dir.join("report.{csv,json}").display());
        }
        None => print!("{}", report_to_csv(report)),
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = load_pipeline_config(&args.common)?;
    let assets = cfg
        .paths
        .assets
        .clone()
        .context("no asset directory: set [paths] assets in the config")?;
    let out = args
        .out
        .or_else(|| cfg.paths.dataset.clone())
        .context("no dataset directory: pass --out or set [paths] dataset")?;

    let mut log = RunLog::create(Some(&out))?;
    log.event("synth", json!({ "assets": assets, "out": out, "seed": cfg.seed }));

    let fgs = load_foreground_assets(&assets)?;
    let bgs = load_backgrounds(&assets)?;
    log.event("assets", json!({ "foregrounds": fgs.len(), "backgrounds": bgs.len() }));

    let report = synthesize_dataset(&fgs, &bgs, &cfg.dataset, cfg.seed)?;
    for skip in &report.skipped {
        log.warn(&format!("skipped {} over {}: {}", skip.fg_id, skip.bg_id, skip.reason));
    }
    let manifest = write_dataset(&out, &report.samples, cfg.seed)?;
    log.event(
        "written",
        json!({ "samples": manifest.samples.len(), "skipped": report.skipped.len() }),
    );
    log.finish();

    println!(
        "synthesized {} samples ({} pairs skipped) -> {}",
        manifest.samples.len(),
        report.skipped.len(),
        out.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_pipeline_config(&args.common)?;
    let dataset_dir = cfg
        .paths
        .dataset
        .clone()
        .context("no dataset directory: set [paths] dataset in the config")?;
    let ckpt_path = args
        .checkpoint
        .or_else(|| cfg.paths.checkpoint.clone())
        .context("no checkpoint path: pass --checkpoint or set [paths] checkpoint")?;
    let out = args
        .out
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| parent_dir(&ckpt_path));

    let mut log = RunLog::create(Some(&out))?;
    log.event(
        "train",
        json!({ "dataset": dataset_dir, "checkpoint": ckpt_path, "seed": cfg.seed }),
    );

    let (samples, manifest) = read_dataset(&dataset_dir)?;
    log.event(
        "dataset",
        json!({ "samples": samples.len(), "dataset_seed": manifest.seed }),
    );

    let mut params = build_model(
        &cfg.model.stage1,
        &cfg.model.stage2,
        derive_seed(cfg.seed, "model-init", &[]),
    )?;
    let ctx = TrainContext {
        dataset: &samples,
        dataset_cfg: &cfg.dataset,
        stage1_cfg: &cfg.model.stage1,
        stage2_cfg: &cfg.model.stage2,
    };
    let outcome = mattekit::train::train(&mut params, &ctx, &cfg.training, cfg.seed, |rec| {
        log.event(
            "step",
            json!({
                "step": rec.step,
                "phase": rec.phase,
                "l_alpha": rec.l_alpha,
                "l_comp": rec.l_comp,
                "l_overall": rec.l_overall,
            }),
        );
        if rec.step % 25 == 0 {
            log::info!(
                "step {} (phase {}): loss {:.6}",
                rec.step,
                rec.phase,
                rec.l_overall
            );
        }
    })?;

    let (phase, step) = outcome.history.last().map(|r| (r.phase, r.step)).unwrap_or((1, 0));
    std::fs::create_dir_all(parent_dir(&ckpt_path))
        .with_context(|| format!("creating checkpoint directory for {}", ckpt_path.display()))?;
    save_checkpoint(
        &ckpt_path,
        &params,
        Some(&outcome.optimizer_state),
        &cfg.model.stage1,
        &cfg.model.stage2,
        phase,
        step,
    )?;
    write_history_csv(&outcome.history, &out.join("history.csv"))?;
    log.event(
        "saved",
        json!({
            "checkpoint": ckpt_path,
            "phase": phase,
            "step": step,
            "phase_steps": outcome.phase_steps,
            "converged_early": outcome.converged_early,
        }),
    );
    log.finish();

    let final_loss = outcome.history.last().map_or(f64::NAN, |r| r.l_overall);
    println!(
        "trained {step} steps (per phase: {:?}); final overall loss {final_loss:.6}",
        outcome.phase_steps
    );
    println!("checkpoint -> {}", ckpt_path.display());
    println!("history    -> {}", out.join("history.csv").display());
    Ok(())
}

pub fn infer(args: InferArgs) -> Result<()> {
    let cfg = load_pipeline_config(&args.common)?;
    let refine = match args.refine {
        Some(mode) => mode,
        None => cfg.eval.refine_mode()?,
    };
    let loaded = load_checkpoint(&args.checkpoint, &cfg.model.stage1, &cfg.model.stage2)?;
    let params = loaded.params;

    if args.input.is_dir() {
        if !args.input.join("manifest.json").is_file() {
            bail!(
                "{} is a directory without manifest.json; point at a synthesized \
                 dataset or pass IMAGE TRIMAP",
                args.input.display()
            );
        }
        let out = args
            .out
            .or_else(|| cfg.paths.out.clone())
            .context("no output directory: pass --out or set [paths] out")?;
        let mut log = RunLog::create(Some(&out))?;
        log.event(
            "infer",
            json!({
                "input": args.input,
                "checkpoint": args.checkpoint,
                "refine": refine.to_string(),
                "checkpoint_phase": loaded.phase,
                "checkpoint_step": loaded.step,
            }),
        );
        let manifest = read_manifest(&args.input)?;
        for rec in &manifest.samples {
            let dir = args.input.join(&rec.id);
            let image = read_rgb_png(&dir.join("image.png"))?;
            let (trimap, snapped) = read_trimap_png(&dir.join("trimap.png"))?;
            if snapped > 0 {
                log.warn(&format!("{}: {snapped} trimap pixels snapped to 0/128/255", rec.id));
            }
            let alpha = predict_matte(
                &image,
                &trimap,
                &params,
                &cfg.model.stage1,
                &cfg.model.stage2,
                refine,
            )?;
            write_matte_png16(&out.join(format!("{}.png", rec.id)), &alpha)?;
        }
        log.event("predicted", json!({ "mattes": manifest.samples.len() }));
        log.finish();
        println!("wrote {} mattes -> {}", manifest.samples.len(), out.display());
    } else {
        let trimap_path = args
            .trimap
            .context("single-image mode needs a trimap: mattekit infer IMAGE TRIMAP")?;
        let image = read_rgb_png(&args.input)?;
        let (trimap, snapped) = read_trimap_png(&trimap_path)?;
        if snapped > 0 {
            log::warn!("{snapped} trimap pixels snapped to 0/128/255");
        }
        let alpha = predict_matte(
            &image,
            &trimap,
            &params,
            &cfg.model.stage1,
            &cfg.model.stage2,
            refine,
        )?;
        let out_dir = args
            .out
            .or_else(|| cfg.paths.out.clone())
            .unwrap_or_else(|| parent_dir(&args.input));
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("matte");
        let out_path = out_dir.join(format!("{stem}_alpha.png"));
        write_matte_png16(&out_path, &alpha)?;
        println!("wrote {}", out_path.display());
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_pipeline_config(&args.common)?;
    let params = cfg.eval.metrics.clone();

    let mut ids: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(&args.gt)
        .with_context(|| format!("reading ground-truth directory {}", args.gt.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() && path.join("alpha.png").is_file() && path.join("trimap.png").is_file() {
            if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!(
            "no ground truth under {} (need <id>/alpha.png and <id>/trimap.png)",
            args.gt.display()
        );
    }

    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for id in &ids {
        let gt = read_matte_png(&args.gt.join(id).join("alpha.png"))?;
        let (trimap, _) = read_trimap_png(&args.gt.join(id).join("trimap.png"))?;
        let mask = trimap.unknown_mask();

        // Predictions live flat (<id>.png, as `infer` writes them) or in
        // per-sample directories mirroring the dataset layout.
        let flat = args.pred.join(format!("{id}.png"));
        let nested = args.pred.join(id).join("alpha.png");
        let pred_path = if flat.is_file() { flat } else { nested };
        if !pred_path.is_file() {
            missing.push(MissingRow {
                image_id: id.clone(),
                d: None,
                reason: format!("no prediction named {id}.png or {id}/alpha.png"),
            });
            continue;
        }
        let scored = read_matte_png(&pred_path)
            .and_then(|pred| evaluate_single(id, None, &pred, &gt, &mask, &params));
        match scored {
            Ok(row) => rows.push(row),
            Err(e) => missing.push(MissingRow {
                image_id: id.clone(),
                d: None,
                reason: e.to_string(),
            }),
        }
    }

    let report = assemble_report(&params, rows, missing);
    emit_report(&report, args.out.as_deref())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_pipeline_config(&args.common)?;
    let dataset_dir = cfg
        .paths
        .dataset
        .clone()
        .context("no dataset directory: set [paths] dataset in the config")?;
    let mut sweep_cfg = cfg.eval.sweep.clone();
    if let Some(d_list) = args.d_list {
        sweep_cfg.d_list = d_list;
    }

    let (samples, _) = read_dataset(&dataset_dir)?;
    let subset = sweep_subset(&samples, &sweep_cfg, cfg.seed);

    // Reports default to stdout; paths.out stays reserved for training
    // artifacts so a configured pipeline still pipes cleanly.
    let out = args.out;
    let mut log = RunLog::create(out.as_deref())?;
    log.event(
        "sweep",
        json!({
            "dataset": dataset_dir,
            "d_list": sweep_cfg.d_list,
            "subset": subset.len(),
            "checkpoint": args.checkpoint,
        }),
    );

    let report = match &args.checkpoint {
        Some(ckpt) => {
            let refine = match args.refine {
                Some(mode) => mode,
                None => cfg.eval.refine_mode()?,
            };
            let loaded = load_checkpoint(ckpt, &cfg.model.stage1, &cfg.model.stage2)?;
            let params = loaded.params;
            trimap_sweep(
                |image, trimap| {
                    predict_matte(
                        image,
                        trimap,
                        &params,
                        &cfg.model.stage1,
                        &cfg.model.stage2,
                        refine,
                    )
                },
                &subset,
                &sweep_cfg,
                &cfg.eval.metrics,
            )?
        }
        None => {
            log.warn("no --checkpoint given; sweeping the trimap-copy baseline");
            trimap_sweep(
                |_, trimap| Ok(trimap_copy_baseline(trimap)),
                &subset,
                &sweep_cfg,
                &cfg.eval.metrics,
            )?
        }
    };
    log.event(
        "swept",
        json!({ "rows": report.rows.len(), "missing": report.missing.len() }),
    );
    log.finish();
    emit_report(&report, out.as_deref())
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let meta = inspect_checkpoint(&args.checkpoint)?;
    let fingerprint: String = meta.fingerprint.iter().map(|b| format!("{b:02x}")).collect();
    let values: u64 = meta.tensors.iter().map(|t| t.len).sum();

    println!("checkpoint {}", args.checkpoint.display());
    println!("  version      {}", meta.version);
    println!("  fingerprint  {fingerprint}");
    println!("  phase        {}", meta.phase);
    println!("  step         {}", meta.step);
    println!("  tensors      {}", meta.tensors.len());
    println!("  payload      {} bytes ({values} values)", meta.payload_bytes);
    println!();
    println!("  {:<24} {:>16} {:>10} {:>8}", "name", "shape", "values", "adam_t");
    for t in &meta.tensors {
        let shape = format!("{}x{}x{}x{}", t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        println!("  {:<24} {:>16} {:>10} {:>8}", t.name, shape, t.len, t.adam_t);
    }
    Ok(())
}
