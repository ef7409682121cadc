use std::path::Path;

use image::RgbImage;
use transvec::data::{
    default_manipulation, denormalize_to_rgb8, manipulation_sequence, render, save_png,
    GridGeometry, SyntheticKind,
};
use transvec::diffcore::Tensor;
use transvec::eval::manipulation_consistency;
use transvec::trainer::Direction;

use crate::common::{generator, load_images, load_state, parse_direction, write_json};
use crate::config::RunConfig;
use crate::error::CliError;

/// Stacks `(input, output)` pairs into one image, one pair per row.
pub fn pair_grid(
    inputs: &[Tensor<f32>],
    outputs: &[Tensor<f32>],
    path: &Path,
) -> Result<(), CliError> {
    let d = inputs[0].shape()[2] as u32;
    let mut grid = RgbImage::new(2 * d, d * inputs.len() as u32);
    for (row, (a, b)) in inputs.iter().zip(outputs).enumerate() {
        for (col, img) in [a, b].into_iter().enumerate() {
            let rgb = denormalize_to_rgb8(img)?;
            image::imageops::replace(
                &mut grid,
                &rgb,
                col as i64 * d as i64,
                row as i64 * d as i64,
            );
        }
    }
    grid.save(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let state = load_state(&cfg.path("checkpoint"))?;
    let d = state.config.arch.image_size;
    let wanted: usize = cfg.get("image_size")?;
    if wanted != 0 && wanted != d {
        return Err(transvec::Error::Incompatible(format!(
            "checkpoint was trained on {d}x{d} images, image_size asks for {wanted}"
        ))
        .into());
    }
    let direction = parse_direction(cfg)?;
    let g = generator(&state, direction)?;
    let out = cfg.out_dir();
    match cfg.choice("mode", &["translate", "manipulation"])? {
        "translate" => {
            let count: usize = cfg.get("count")?;
            let mut inputs = load_images(&cfg.path("input"), d)?;
            inputs.truncate(count.max(1));
            let outputs = g.infer_many(&inputs, 32)?;
            for (i, (a, b)) in inputs.iter().zip(&outputs).enumerate() {
                save_png(a, &out.join(format!("input_{i:03}.png")))?;
                save_png(b, &out.join(format!("output_{i:03}.png")))?;
            }
            pair_grid(&inputs, &outputs, &out.join("grid.png"))?;
            log::info!("translated {} images", inputs.len());
        }
        _ => {
            let geometry = GridGeometry::new(d, cfg.get("cells_per_side")?)?;
            let kind = match direction {
                Direction::Xy => SyntheticKind::Beads,
                Direction::Yx => SyntheticKind::Grid,
            };
            let (base, path) = default_manipulation(&geometry)?;
            let frames: Vec<Tensor<f32>> = manipulation_sequence(kind, &geometry, &base, &path)?
                .into_iter()
                .map(|s| s.image)
                .collect();
            let mut inputs = vec![render(kind, &geometry, &base)];
            inputs.extend(frames.iter().cloned());
            let mut outputs = g.infer_many(&inputs, 16)?;
            save_png(&inputs[0], &out.join("base_input.png"))?;
            save_png(&outputs[0], &out.join("base_output.png"))?;
            for (i, (a, b)) in frames.iter().zip(&outputs[1..]).enumerate() {
                save_png(a, &out.join(format!("frame_{i}.png")))?;
                save_png(b, &out.join(format!("generated_{i}.png")))?;
            }
            pair_grid(&frames, &outputs[1..], &out.join("grid.png"))?;
            let base_output = outputs.remove(0);
            let report = manipulation_consistency(&base_output, &outputs, &path, &geometry)?;
            log::info!(
                "manipulation accuracy {:.3}, rank correlation {:?}",
                report.accuracy,
                report.rank_correlation
            );
            write_json(&out.join("manipulation.json"), &report)?;
        }
    }
    Ok(())
}
