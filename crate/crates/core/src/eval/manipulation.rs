use serde::{Deserialize, Serialize};

use super::geometry::spearman;
use crate::data::GridGeometry;
use crate::diffcore::Tensor;
use crate::networks::NetworkParams;
use crate::{Error, Result};

/// Below this mean absolute difference a frame is treated as unchanged.
const CHANGE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulationReport {
    /// Detected `(row, col)` per frame.
    pub detected: Vec<[usize; 2]>,
    pub expected: Vec<[usize; 2]>,
    /// Fraction of frames whose detected cell equals the manipulated cell.
    pub accuracy: f64,
    /// Spearman correlation between manipulated and detected linear cell
    /// indices (`row * cells_per_side + col`); `None` when either is constant.
    pub rank_correlation: Option<f64>,
    /// Set when some output showed no change at all, so its detection is a
    /// tie-break rather than evidence.
    pub degenerate: bool,
}

/// The cell with the largest mean absolute difference between two outputs;
/// ties go to the lowest row, then the lowest column. Returns the cell and
/// its score.
pub fn strongest_change_cell(
    base: &Tensor<f32>,
    frame: &Tensor<f32>,
    geometry: &GridGeometry,
) -> Result<([usize; 2], f64)> {
    if base.shape() != frame.shape() {
        return Err(Error::shape(
            "manipulation frame",
            base.shape(),
            frame.shape(),
        ));
    }
    let d = geometry.image_size;
    if base.shape().len() != 3 || base.shape()[1] != d || base.shape()[2] != d {
        return Err(Error::shape("manipulation frame", base.shape(), &[3, d, d]));
    }
    let channels = base.shape()[0];
    let mut best = ([0, 0], f64::NEG_INFINITY);
    for row in 0..geometry.cells_per_side {
        for col in 0..geometry.cells_per_side {
            let (x0, y0, x1, y1) = geometry.cell_rect([row, col]);
            let mut sum = 0.0;
            for c in 0..channels {
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = (c * d + y) * d + x;
                        sum += (frame.data()[i] as f64 - base.data()[i] as f64).abs();
                    }
                }
            }
            let score = sum / (channels * (x1 - x0) * (y1 - y0)) as f64;
            if score > best.1 {
                best = ([row, col], score);
            }
        }
    }
    Ok(best)
}

/// Compares where each output changed (relative to `base_output`) against the
/// cell that was manipulated in the corresponding input frame.
pub fn manipulation_consistency(
    base_output: &Tensor<f32>,
    outputs: &[Tensor<f32>],
    path: &[[usize; 2]],
    geometry: &GridGeometry,
) -> Result<ManipulationReport> {
    if outputs.len() != path.len() {
        return Err(Error::Config(format!(
            "{} outputs for a path of {} cells",
            outputs.len(),
            path.len()
        )));
    }
    let mut detected = Vec::with_capacity(outputs.len());
    let mut degenerate = false;
    for out in outputs {
        let (cell, score) = strongest_change_cell(base_output, out, geometry)?;
        degenerate |= score <= CHANGE_FLOOR;
        detected.push(cell);
    }
    let hits = detected.iter().zip(path).filter(|(a, b)| a == b).count();
    let linear = |cells: &[[usize; 2]]| -> Vec<f64> {
        cells
            .iter()
            .map(|c| (c[0] * geometry.cells_per_side + c[1]) as f64)
            .collect()
    };
    let rank_correlation = if path.len() >= 2 {
        spearman(&linear(path), &linear(&detected))
    } else {
        None
    };
    if degenerate {
        log::warn!(
            "manipulation_consistency: some outputs did not change; detections are tie-breaks"
        );
    }
    Ok(ManipulationReport {
        accuracy: if path.is_empty() {
            0.0
        } else {
            hits as f64 / path.len() as f64
        },
        detected,
        expected: path.to_vec(),
        rank_correlation,
        degenerate,
    })
}

/// Runs `generator` (eval mode) on the base image and every frame, then
/// applies [`manipulation_consistency`].
pub fn generator_manipulation_consistency(
    generator: &NetworkParams<f32>,
    base_image: &Tensor<f32>,
    frames: &[Tensor<f32>],
    path: &[[usize; 2]],
    geometry: &GridGeometry,
) -> Result<ManipulationReport> {
    let mut inputs = vec![base_image.clone()];
    inputs.extend_from_slice(frames);
    let mut outputs = generator.infer_many(&inputs, 16)?;
    let base_output = outputs.remove(0);
    manipulation_consistency(&base_output, &outputs, path, geometry)
}
