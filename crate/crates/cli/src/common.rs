use std::path::Path;

use transvec::data::{
    load_factor_manifest, load_image_folder, render, FactorManifest, GridGeometry,
};
use transvec::diffcore::Tensor;
use transvec::trainer::{load_checkpoint, Direction, TrainState};

use crate::config::RunConfig;
use crate::error::CliError;

/// Creates the output directory, refusing to reuse a non-empty one unless
/// `force` is set.
pub fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    if let Ok(mut entries) = std::fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(CliError::usage(format!(
                "output directory {} is not empty (pass --force to reuse it)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

pub fn load_images(dir: &Path, size: usize) -> Result<Vec<Tensor<f32>>, CliError> {
    require_exists(dir, "dataset")?;
    let (images, _) = load_image_folder(dir, size)?;
    if images.is_empty() {
        return Err(CliError::usage(format!(
            "dataset {} contains no images",
            dir.display()
        )));
    }
    Ok(images)
}

pub fn load_state(path: &Path) -> Result<TrainState, CliError> {
    require_exists(path, "checkpoint")?;
    Ok(load_checkpoint(path)?)
}

pub fn parse_direction(cfg: &RunConfig) -> Result<Direction, CliError> {
    Ok(match cfg.choice("direction", &["xy", "yx"])? {
        "xy" => Direction::Xy,
        _ => Direction::Yx,
    })
}

pub fn direction_name(dir: Direction) -> &'static str {
    match dir {
        Direction::Xy => "xy",
        Direction::Yx => "yx",
    }
}

pub fn generator(
    state: &TrainState,
    dir: Direction,
) -> Result<&transvec::networks::NetworkParams<f32>, CliError> {
    state.generator(dir).ok_or_else(|| {
        CliError::usage(format!(
            "checkpoint has no {} generator",
            direction_name(dir)
        ))
    })
}

/// Correct translations of the first `n` images of a synthetic folder: the
/// same factors rendered in the other domain's style. `None` when the folder
/// has no factor manifest.
pub fn ground_truth(
    dir: &Path,
    n: usize,
    image_size: usize,
) -> Result<Option<Vec<Tensor<f32>>>, CliError> {
    if !dir.join("factors.json").exists() {
        return Ok(None);
    }
    let manifest: FactorManifest = load_factor_manifest(dir)?;
    let geometry = GridGeometry::new(image_size, manifest.cells_per_side)?;
    let other = match manifest.kind {
        transvec::data::SyntheticKind::Beads => transvec::data::SyntheticKind::Grid,
        transvec::data::SyntheticKind::Grid => transvec::data::SyntheticKind::Beads,
    };
    Ok(Some(
        manifest
            .samples
            .iter()
            .take(n)
            .map(|e| render(other, &geometry, &e.factors))
            .collect(),
    ))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
