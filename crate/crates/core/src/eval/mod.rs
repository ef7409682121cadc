//! Image metrics and analysis instruments.
//!
//! All image metrics operate in `[0, 1]` after mapping network images out of
//! `[-1, 1]`.

mod disc_score;
pub mod export;
mod frechet;
mod geometry;
mod image_metrics;
mod manipulation;
mod report;
mod salience;

pub use disc_score::{discriminator_score, DiscriminatorScoreConfig};
pub use frechet::{
    fid_score, frechet_distance, ExtractorKind, FeatureExtractor, FeatureExtractorSpec, FidOutcome,
    GaussianFit, COVARIANCE_RIDGE,
};
pub use geometry::{
    latent_vectors, pairwise_distance_correlation, pca_projection, pearson, pixel_vectors, ranks,
    spearman, PcaProjection,
};
pub use image_metrics::{
    gaussian_taps, pixel_mse, pixel_mse_images, ssim, ssim_images, to_unit, SSIM_K1, SSIM_K2,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use manipulation::{
    generator_manipulation_consistency, manipulation_consistency, strongest_change_cell,
    ManipulationReport,
};
pub use report::{evaluate_direction, DirectionInputs, DirectionReport, EvalReport, MetricSet};
pub use salience::{salience_map, DifferentiableMap};
