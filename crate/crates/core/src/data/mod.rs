//! Image ingestion and the procedural two-domain datasets.

mod folder;
mod sampler;
mod synthetic;

pub use folder::{
    center_crop_resize, denormalize_to_rgb8, load_image_folder, normalize_rgb8, save_png,
    ImageManifest,
};
pub use sampler::{BatchSampler, SamplerState};
pub use synthetic::{
    default_manipulation, export_dataset, gen_beads_domain, gen_domain, gen_grid_domain,
    load_factor_manifest, manipulation_sequence, render, FactorEntry, FactorManifest, FactorRecord,
    GridGeometry, Sample, SyntheticKind, SyntheticSpec, BACKGROUNDS, PALETTES,
};

use crate::diffcore::Tensor;

/// Stacks the images at `indices` into an `(N, 3, d, d)` batch.
pub fn gather_batch(images: &[Tensor<f32>], indices: &[usize]) -> crate::Result<Tensor<f32>> {
    let picked: Vec<Tensor<f32>> = indices.iter().map(|&i| images[i].clone()).collect();
    Tensor::stack(&picked)
}
