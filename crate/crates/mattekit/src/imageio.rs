//! PNG and dataset directory I/O.
//!
//! Images are 8-bit RGB; mattes are grayscale, read at 8 or 16 bits and
//! always written at 16 bits so evaluation pipelines don't quantize twice.
//! Trimaps are 8-bit grayscale using the {0, 128, 255} = {background,
//! unknown, foreground} convention; off-convention values are snapped to
//! the nearest label and counted. All pixel values map to [0,1].
//!
//! A synthesized dataset is a directory of per-sample subdirectories
//! (`image.png`, `trimap.png`, `alpha.png`, `fg.png`, `bg.png`) plus a
//! `manifest.json` recording the seed and each sample's provenance.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    BackgroundAsset, CompositeSample, ForegroundAsset, Provenance, Trimap, TrimapLabel,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn bad_image(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadImage { path: path.to_path_buf(), reason: reason.into() }
}

fn bad_dataset(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadDataset { path: path.to_path_buf(), reason: reason.into() }
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// Reads an 8-bit RGB PNG into a (1,3,h,w) tensor scaled to [0,1].
pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let img = match open(path)? {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(bad_image(
                path,
                format!("expected 8-bit RGB, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + i] = f32::from(raw[i * 3 + ch]) / 255.0;
        }
    }
    Tensor::from_vec(1, 3, h, w, data)
}

/// Writes a (1,3,h,w) tensor as an 8-bit RGB PNG, rounding [0,1] to 0..255.
pub fn write_rgb_png(path: &Path, image: &Tensor) -> Result<()> {
    let (n, c, h, w) = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::shape("write_rgb_png", "1x3xHxW", image.shape_string()));
    }
    let mut raw = vec![0u8; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            let v = image.data()[ch * h * w + i];
            raw[i * 3 + ch] = (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    buf.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// Reads a grayscale matte PNG (8- or 16-bit) into (1,1,h,w) in [0,1].
pub fn read_matte_png(path: &Path) -> Result<Tensor> {
    let (w, h, data) = match open(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
            (w, h, data)
        }
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data = img.into_raw().iter().map(|&v| f32::from(v) / 65535.0).collect();
            (w, h, data)
        }
        other => {
            return Err(bad_image(
                path,
                format!("expected 8- or 16-bit grayscale, got {:?}", other.color()),
            ))
        }
    };
    Tensor::from_vec(1, 1, h, w, data)
}

/// Writes a (1,1,h,w) matte as 16-bit grayscale PNG.
pub fn write_matte_png16(path: &Path, matte: &Tensor) -> Result<()> {
    let (n, c, h, w) = matte.shape();
    if n != 1 || c != 1 {
        return Err(Error::shape("write_matte_png16", "1x1xHxW", matte.shape_string()));
    }
    let raw: Vec<u16> = matte
        .data()
        .iter()
        .map(|&v| (f64::from(v) * 65535.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    buf.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// Reads an 8-bit trimap PNG. Returns the trimap and how many pixels were
/// off the {0,128,255} convention and snapped to the nearest label (ties
/// resolve toward the darker label).
pub fn read_trimap_png(path: &Path) -> Result<(Trimap, usize)> {
    let img = match open(path)? {
        DynamicImage::ImageLuma8(img) => img,
        other => {
            return Err(bad_image(
                path,
                format!("expected 8-bit grayscale trimap, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut snapped = 0usize;
    let labels = img
        .into_raw()
        .iter()
        .map(|&v| {
            let label = match v {
                0 => TrimapLabel::Background,
                128 => TrimapLabel::Unknown,
                255 => TrimapLabel::Foreground,
                other => {
                    snapped += 1;
                    let to_bg = other;
                    let to_unknown = other.abs_diff(128);
                    let to_fg = 255 - other;
                    if to_bg <= to_unknown && to_bg <= to_fg {
                        TrimapLabel::Background
                    } else if to_unknown <= to_fg {
                        TrimapLabel::Unknown
                    } else {
                        TrimapLabel::Foreground
                    }
                }
            };
            label
        })
        .collect();
    if snapped > 0 {
        log::warn!("{}: snapped {} off-convention trimap pixels", path.display(), snapped);
    }
    Ok((Trimap::new(h, w, labels)?, snapped))
}

pub fn write_trimap_png(path: &Path, trimap: &Trimap) -> Result<()> {
    let (h, w) = trimap.dims();
    let raw: Vec<u8> = trimap
        .labels()
        .iter()
        .map(|l| match l {
            TrimapLabel::Background => 0u8,
            TrimapLabel::Unknown => 128,
            TrimapLabel::Foreground => 255,
        })
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    buf.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

fn png_files_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads foreground assets from `<id>_fg.png` / `<id>_alpha.png` pairs,
/// sorted by id. Errors if a foreground lacks its matte.
pub fn load_foreground_assets(dir: &Path) -> Result<Vec<ForegroundAsset>> {
    let mut out = Vec::new();
    for path in png_files_sorted(dir)? {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let Some(id) = stem.strip_suffix("_fg") else { continue };
        let alpha_path = dir.join(format!("{}_alpha.png", id));
        if !alpha_path.exists() {
            return Err(bad_dataset(
                dir,
                format!("foreground {} has no matching {}_alpha.png", id, id),
            ));
        }
        let fg = read_rgb_png(&path)?;
        let alpha = read_matte_png(&alpha_path)?;
        out.push(ForegroundAsset::new(id.to_string(), fg, alpha)?);
    }
    if out.is_empty() {
        return Err(bad_dataset(dir, "no *_fg.png foregrounds found"));
    }
    Ok(out)
}

/// Loads every PNG in the directory as a background (id = file stem),
/// skipping matte files from a mixed asset directory.
pub fn load_backgrounds(dir: &Path) -> Result<Vec<BackgroundAsset>> {
    let mut out = Vec::new();
    for path in png_files_sorted(dir)? {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if stem.ends_with("_fg") || stem.ends_with("_alpha") {
            continue;
        }
        out.push(BackgroundAsset::new(stem.to_string(), read_rgb_png(&path)?)?);
    }
    if out.is_empty() {
        return Err(bad_dataset(dir, "no background PNGs found"));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub samples: Vec<SampleRecord>,
}

pub fn sample_id(index: usize) -> String {
    format!("s{:05}", index)
}

const SAMPLE_FILES: [&str; 5] = ["image.png", "trimap.png", "alpha.png", "fg.png", "bg.png"];

/// Writes samples into per-sample subdirectories plus `manifest.json`.
pub fn write_dataset(out_dir: &Path, samples: &[CompositeSample], seed: u64) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let id = sample_id(i);
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_rgb_png(&dir.join("image.png"), &sample.image)?;
        write_trimap_png(&dir.join("trimap.png"), &sample.trimap)?;
        write_matte_png16(&dir.join("alpha.png"), &sample.alpha)?;
        write_rgb_png(&dir.join("fg.png"), &sample.fg)?;
        write_rgb_png(&dir.join("bg.png"), &sample.bg)?;
        records.push(SampleRecord { id, provenance: sample.provenance.clone() });
    }
    let manifest = DatasetManifest { seed, samples: records };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&json).map_err(|e| bad_dataset(&path, format!("manifest: {}", e)))
}

/// Reads a dataset directory back. Pixel data is quantized by the PNG
/// round trip (8-bit layers, 16-bit matte); provenance comes from the
/// manifest so augmentation replays the synthesis-time choices.
pub fn read_dataset(dir: &Path) -> Result<(Vec<CompositeSample>, DatasetManifest)> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for record in &manifest.samples {
        let sdir = dir.join(&record.id);
        for f in SAMPLE_FILES {
            if !sdir.join(f).exists() {
                return Err(bad_dataset(&sdir, format!("missing {}", f)));
            }
        }
        let image = read_rgb_png(&sdir.join("image.png"))?;
        let (trimap, _) = read_trimap_png(&sdir.join("trimap.png"))?;
        let alpha = read_matte_png(&sdir.join("alpha.png"))?;
        let fg = read_rgb_png(&sdir.join("fg.png"))?;
        let bg = read_rgb_png(&sdir.join("bg.png"))?;
        if trimap.dims() != (image.h(), image.w()) {
            return Err(bad_dataset(&sdir, "trimap size differs from image"));
        }
        samples.push(CompositeSample {
            image,
            trimap,
            alpha,
            fg,
            bg,
            provenance: record.provenance.clone(),
        });
    }
    Ok((samples, manifest))
}
