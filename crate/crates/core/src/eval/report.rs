use serde::{Deserialize, Serialize};

use super::disc_score::{discriminator_score, DiscriminatorScoreConfig};
use super::frechet::{fid_score, FeatureExtractor, FeatureExtractorSpec};
use super::geometry::{latent_vectors, pairwise_distance_correlation, pixel_vectors};
use super::image_metrics::{pixel_mse_images, ssim_images};
use crate::diffcore::Tensor;
use crate::networks::NetworkParams;
use crate::{Error, Result};

/// Which metrics an evaluation computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricSet {
    pub ssim: bool,
    pub mse: bool,
    pub fid: bool,
    pub disc: bool,
    pub r2_pixel: bool,
    pub r2_latent: bool,
}

impl MetricSet {
    pub const NAMES: [&'static str; 6] = ["ssim", "mse", "fid", "disc", "r2_pixel", "r2_latent"];

    pub fn all() -> Self {
        Self {
            ssim: true,
            mse: true,
            fid: true,
            disc: true,
            r2_pixel: true,
            r2_latent: true,
        }
    }

    pub fn none() -> Self {
        Self {
            ssim: false,
            mse: false,
            fid: false,
            disc: false,
            r2_pixel: false,
            r2_latent: false,
        }
    }

    /// Parses `all` or a comma-separated list of metric names.
    pub fn parse(list: &str) -> Result<Self> {
        let mut set = Self::none();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "all" => set = Self::all(),
                "ssim" => set.ssim = true,
                "mse" => set.mse = true,
                "fid" => set.fid = true,
                "disc" => set.disc = true,
                "r2_pixel" => set.r2_pixel = true,
                "r2_latent" => set.r2_latent = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown metric `{other}` (expected all or {})",
                        Self::NAMES.join(", ")
                    )))
                }
            }
        }
        if set == Self::none() {
            return Err(Error::Config("no metrics selected".into()));
        }
        Ok(set)
    }
}

/// Everything needed to score one mapping direction.
pub struct DirectionInputs<'a> {
    pub direction: String,
    /// Source-domain images fed to the generator.
    pub sources: &'a [Tensor<f32>],
    /// Generator outputs, paired with `sources` by index.
    pub generated: &'a [Tensor<f32>],
    /// Real target-domain images (unpaired).
    pub real_targets: &'a [Tensor<f32>],
    /// Known correct translations of `sources`, when they exist.
    pub ground_truth: Option<&'a [Tensor<f32>]>,
    /// Siamese encoder for the latent-space distance correlation.
    pub siamese: Option<&'a NetworkParams<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: String,
    pub samples: usize,
    pub ssim_mean: Option<f64>,
    pub pixel_mse_mean: Option<f64>,
    pub frechet_distance: Option<f64>,
    pub fid_regularized: bool,
    pub discriminator_score: Option<f64>,
    /// `None` when the correlation is undefined (constant distances).
    pub r2_pixel: Option<f64>,
    pub r2_latent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ssim_mean: Option<f64>,
    pub pixel_mse_mean: Option<f64>,
    pub frechet_distance: Option<f64>,
    pub discriminator_score: Option<f64>,
    pub r2_pixel: Option<f64>,
    pub r2_latent: Option<f64>,
    pub samples: usize,
    pub feature_extractor: FeatureExtractorSpec,
    pub directions: Vec<DirectionReport>,
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(why)) => {
            log::warn!("correlation undefined: {why}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub fn evaluate_direction(
    inputs: &DirectionInputs<'_>,
    extractor: &FeatureExtractor,
    disc: &DiscriminatorScoreConfig,
    metrics: MetricSet,
) -> Result<DirectionReport> {
    let n = inputs.sources.len();
    if inputs.generated.len() != n {
        return Err(Error::Config(format!(
            "{} generated images for {n} sources",
            inputs.generated.len()
        )));
    }
    let (ssim_mean, pixel_mse_mean) = match inputs.ground_truth {
        Some(truth) if truth.len() == n && n > 0 => {
            let mut s = 0.0;
            let mut m = 0.0;
            for (g, t) in inputs.generated.iter().zip(truth) {
                if metrics.ssim {
                    s += ssim_images(g, t)?;
                }
                if metrics.mse {
                    m += pixel_mse_images(g, t)?;
                }
            }
            (
                metrics.ssim.then(|| s / n as f64),
                metrics.mse.then(|| m / n as f64),
            )
        }
        Some(truth) => {
            return Err(Error::Config(format!(
                "{} ground-truth images for {n} sources",
                truth.len()
            )))
        }
        None => (None, None),
    };
    let fid = if metrics.fid {
        Some(fid_score(inputs.real_targets, inputs.generated, extractor)?)
    } else {
        None
    };
    let score = if metrics.disc {
        Some(discriminator_score(
            inputs.real_targets,
            inputs.generated,
            disc,
        )?)
    } else {
        None
    };
    let r2_pixel = if metrics.r2_pixel {
        undefined_as_none(pairwise_distance_correlation(
            &pixel_vectors(inputs.sources),
            &pixel_vectors(inputs.generated),
        ))?
    } else {
        None
    };
    let r2_latent = match inputs.siamese {
        Some(s) if metrics.r2_latent => undefined_as_none(pairwise_distance_correlation(
            &latent_vectors(s, inputs.sources)?,
            &latent_vectors(s, inputs.generated)?,
        ))?,
        _ => None,
    };
    Ok(DirectionReport {
        direction: inputs.direction.clone(),
        samples: n,
        ssim_mean,
        pixel_mse_mean,
        frechet_distance: fid.as_ref().map(|f| f.value),
        fid_regularized: fid.is_some_and(|f| f.regularized),
        discriminator_score: score,
        r2_pixel,
        r2_latent,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

impl EvalReport {
    /// Averages the per-direction values.
    pub fn from_directions(
        directions: Vec<DirectionReport>,
        feature_extractor: FeatureExtractorSpec,
    ) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Config(
                "an evaluation report needs a direction".into(),
            ));
        }
        Ok(Self {
            ssim_mean: mean_of(directions.iter().map(|d| d.ssim_mean)),
            pixel_mse_mean: mean_of(directions.iter().map(|d| d.pixel_mse_mean)),
            frechet_distance: mean_of(directions.iter().map(|d| d.frechet_distance)),
            discriminator_score: mean_of(directions.iter().map(|d| d.discriminator_score)),
            r2_pixel: mean_of(directions.iter().map(|d| d.r2_pixel)),
            r2_latent: mean_of(directions.iter().map(|d| d.r2_latent)),
            samples: directions.iter().map(|d| d.samples).sum(),
            feature_extractor,
            directions,
        })
    }
}
