use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::{Error, Result};

/// Files backing a loaded folder, in load order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub files: Vec<String>,
}

/// Center-crops an interleaved RGB8 image to a square and resizes it to
/// `size x size` with bilinear interpolation, returning planar `(3, size, size)`
/// values still on the `[0, 255]` scale.
///
/// Output pixel `o` samples source coordinate `(o + 0.5) * side / size - 0.5`
/// (half-pixel centers) clamped to `[0, side - 1]`, then interpolates between
/// the two neighbouring source pixels on each axis.
pub fn center_crop_resize(rgb: &[u8], width: usize, height: usize, size: usize) -> Vec<f64> {
    let side = width.min(height);
    let (x0, y0) = ((width - side) / 2, (height - side) / 2);
    let scale = side as f64 / size as f64;
    let taps: Vec<(usize, usize, f64)> = (0..size)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(side - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();
    let px = |x: usize, y: usize, c: usize| rgb[((y0 + y) * width + x0 + x) * 3 + c] as f64;
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for (oy, &(ylo, yhi, fy)) in taps.iter().enumerate() {
            for (ox, &(xlo, xhi, fx)) in taps.iter().enumerate() {
                let top = px(xlo, ylo, c) * (1.0 - fx) + px(xhi, ylo, c) * fx;
                let bottom = px(xlo, yhi, c) * (1.0 - fx) + px(xhi, yhi, c) * fx;
                out[(c * size + oy) * size + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// `[0, 255]` -> `[-1, 1]`.
pub fn normalize_rgb8(v: f64) -> f64 {
    v / 127.5 - 1.0
}

/// `(3, d, d)` tensor in `[-1, 1]` -> interleaved RGB8.
pub fn denormalize_to_rgb8(image: &Tensor<f32>) -> Result<RgbImage> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        _ => return Err(Error::shape("rgb image", image.shape(), &[3, 0, 0])),
    };
    let d = image.data();
    let to_u8 = |v: f32| (((v as f64 + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            to_u8(d[y * w + x]),
            to_u8(d[(h + y) * w + x]),
            to_u8(d[(2 * h + y) * w + x]),
        ])
    }))
}

pub fn save_png(image: &Tensor<f32>, path: &Path) -> Result<()> {
    denormalize_to_rgb8(image)?
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads every `.png` in `dir` (sorted by file name) as a `(3, size, size)`
/// tensor in `[-1, 1]`. Alpha channels are dropped.
pub fn load_image_folder(dir: &Path, size: usize) -> Result<(Vec<Tensor<f32>>, ImageManifest)> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no PNG images in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut files = Vec::with_capacity(paths.len());
    for path in paths {
        let decoded = image::open(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let values = center_crop_resize(rgb.as_raw(), w, h, size);
        let data: Vec<f32> = values.iter().map(|&v| normalize_rgb8(v) as f32).collect();
        images.push(Tensor::new(vec![3, size, size], data)?);
        files.push(
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    Ok((images, ImageManifest { files }))
}
