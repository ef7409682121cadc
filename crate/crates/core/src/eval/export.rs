//! PNG and CSV renderings of analysis results.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::diffcore::Tensor;
use crate::{Error, Result};

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Maps `t` in `[0, 1]` to a dark-blue → yellow ramp.
fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(20.0, 250.0), lerp(20.0, 220.0), lerp(90.0, 40.0)])
}

/// Writes a `(H, W)` map as a heatmap normalized by its maximum, upscaled by
/// an integer factor.
pub fn heatmap_png(map: &Tensor<f64>, scale: u32, path: &Path) -> Result<()> {
    let (h, w) = match *map.shape() {
        [h, w] => (h, w),
        _ => return Err(Error::shape("heatmap", map.shape(), &[0, 0])),
    };
    let max = map.data().iter().copied().fold(0.0, f64::max);
    let scale = scale.max(1);
    let img = RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let v = map.data()[(y / scale) as usize * w + (x / scale) as usize];
        ramp(if max > 0.0 { v / max } else { 0.0 })
    });
    save(&img, path)
}

const SCATTER_COLORS: [[u8; 3]; 4] = [[230, 80, 60], [60, 140, 230], [90, 190, 90], [220, 170, 40]];

/// Square scatter plot of 2-D points; `groups[i]` picks the marker color.
pub fn scatter_png(points: &[Vec<f64>], groups: &[usize], size: u32, path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(size, size, Rgb([250, 250, 250]));
    let coord = |k: usize| points.iter().map(move |p| p.get(k).copied().unwrap_or(0.0));
    let bounds = |k: usize| {
        let lo = coord(k).fold(f64::INFINITY, f64::min);
        let hi = coord(k).fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xs), (y0, ys)) = (bounds(0), bounds(1));
    let margin = 6.0;
    let span = size as f64 - 2.0 * margin;
    for (i, p) in points.iter().enumerate() {
        let px = margin + (p.first().copied().unwrap_or(0.0) - x0) / xs * span;
        let py = margin + (1.0 - (p.get(1).copied().unwrap_or(0.0) - y0) / ys) * span;
        let color = Rgb(SCATTER_COLORS[groups.get(i).copied().unwrap_or(0) % SCATTER_COLORS.len()]);
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                if dx * dx + dy * dy > 5 {
                    continue;
                }
                let (x, y) = (px.round() as i64 + dx, py.round() as i64 + dy);
                if x >= 0 && y >= 0 && (x as u32) < size && (y as u32) < size {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    save(&img, path)
}

/// Comma-separated rows under a header line.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
