use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::networks::{ArchitectureSpec, LayerKind, NetworkParams, Role};
use crate::{Error, Result};

/// Diagonal loading applied when a covariance is estimated from no more
/// samples than it has dimensions.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped to 0.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between `N(mu1, cov1)` and `N(mu2, cov2)`.
///
/// `Tr((Σ1 Σ2)^½)` is evaluated as the trace of the square root of the
/// symmetric matrix `√Σ1 Σ2 √Σ1`, which has the same eigenvalues as `Σ1 Σ2`.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let k = mu1.len();
    let dims_ok = mu2.len() == k && cov1.shape() == (k, k) && cov2.shape() == (k, k);
    if !dims_ok {
        return Err(Error::shape(
            "frechet_distance",
            &[mu1.len(), cov1.nrows(), cov1.ncols()],
            &[mu2.len(), cov2.nrows(), cov2.ncols()],
        ));
    }
    let (s1, s2) = (symmetrize(cov1), symmetrize(cov2));
    let r1 = psd_sqrt(&s1);
    let inner = symmetrize(&(&r1 * &s2 * &r1));
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let dist = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(dist.max(0.0))
}

/// Mean and unbiased covariance of row samples.
#[derive(Clone, Debug)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub samples: usize,
    /// Whether [`COVARIANCE_RIDGE`] was added because `samples <= dim`.
    pub regularized: bool,
}

impl GaussianFit {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Undefined("cannot fit a Gaussian to an empty set".into()))?;
        let data = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        let mean = DVector::from_fn(dim, |j, _| data.column(j).mean());
        let centered = DMatrix::from_fn(n, dim, |i, j| data[(i, j)] - mean[j]);
        let mut cov = if n > 1 {
            centered.transpose() * &centered / (n - 1) as f64
        } else {
            DMatrix::zeros(dim, dim)
        };
        let regularized = n <= dim;
        if regularized {
            for i in 0..dim {
                cov[(i, i)] += COVARIANCE_RIDGE;
            }
        }
        Ok(Self {
            mean,
            cov,
            samples: n,
            regularized,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    SeededRandomConvnet,
    TrainedDiscriminatorTrunk,
}

/// Describes the fixed feature map used by [`fid_score`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub kind: ExtractorKind,
    pub seed: u64,
    pub image_size: usize,
    /// Width of the discriminator trunk used as the feature network.
    pub base_filters: usize,
    /// Output width after a seeded Gaussian projection of the flattened trunk;
    /// 0 keeps the raw flattened trunk.
    pub feature_dim: usize,
}

impl FeatureExtractorSpec {
    pub fn random(image_size: usize, seed: u64) -> Self {
        Self {
            kind: ExtractorKind::SeededRandomConvnet,
            seed,
            image_size,
            base_filters: 8,
            feature_dim: 64,
        }
    }
}

fn dense_fan_in(net: &NetworkParams<f32>) -> usize {
    net.params.get("dense.weight").map_or(0, |w| w.shape()[0])
}

/// A discriminator trunk in eval mode followed by an optional projection.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub spec: FeatureExtractorSpec,
    trunk: NetworkParams<f32>,
    projection: Option<DMatrix<f64>>,
}

impl FeatureExtractor {
    /// Random trunk with fan-in scaled kernels so activations stay O(1) through
    /// every layer (the training initializer would shrink them geometrically).
    pub fn seeded(spec: FeatureExtractorSpec) -> Result<Self> {
        if spec.kind != ExtractorKind::SeededRandomConvnet {
            return Err(Error::Config(
                "a trained trunk must be supplied through FeatureExtractor::from_trunk".into(),
            ));
        }
        let arch = ArchitectureSpec::new(spec.image_size, spec.base_filters);
        let mut trunk: NetworkParams<f32> =
            NetworkParams::build(&arch, Role::Discriminator, spec.seed)?;
        let convs: Vec<String> = trunk
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::ConvS2)
            .map(|l| format!("{}.kernel", l.name))
            .collect();
        for name in convs {
            let kernel = trunk.params.get_mut(&name).expect("planned kernel");
            let fan_in: usize = kernel.shape()[1..].iter().product();
            let factor = ((2.0 / fan_in as f64).sqrt() / crate::networks::INIT_STD) as f32;
            kernel.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
        Self::with_projection(spec, trunk)
    }

    /// Uses a trained discriminator's convolutional trunk as the feature map.
    pub fn from_trunk(
        discriminator: &NetworkParams<f32>,
        seed: u64,
        feature_dim: usize,
    ) -> Result<Self> {
        if discriminator.role != Role::Discriminator {
            return Err(Error::Config(
                "feature trunk must be a discriminator".into(),
            ));
        }
        let spec = FeatureExtractorSpec {
            kind: ExtractorKind::TrainedDiscriminatorTrunk,
            seed,
            image_size: discriminator.arch.image_size,
            base_filters: discriminator.arch.base_filters,
            feature_dim,
        };
        Self::with_projection(spec, discriminator.clone())
    }

    fn with_projection(spec: FeatureExtractorSpec, trunk: NetworkParams<f32>) -> Result<Self> {
        let raw = dense_fan_in(&trunk);
        let projection = (spec.feature_dim > 0 && spec.feature_dim < raw).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
            let scale = 1.0 / (spec.feature_dim as f64).sqrt();
            let t = Tensor::<f64>::randn(&[raw, spec.feature_dim], scale, &mut rng);
            DMatrix::from_row_slice(raw, spec.feature_dim, t.data())
        });
        Ok(Self {
            spec,
            trunk,
            projection,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.projection
            .as_ref()
            .map_or_else(|| dense_fan_in(&self.trunk), |p| p.ncols())
    }

    /// One feature row per image.
    pub fn extract(&self, images: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let feats = self.trunk.infer_features(&Tensor::stack(chunk)?)?;
            for f in feats.unstack() {
                let raw = DVector::from_iterator(f.len(), f.data().iter().map(|&v| v as f64));
                let row = match &self.projection {
                    Some(p) => (p.transpose() * raw).iter().copied().collect(),
                    None => raw.iter().copied().collect(),
                };
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidOutcome {
    pub value: f64,
    /// Set when either side had no more samples than feature dimensions.
    pub regularized: bool,
    pub real_samples: usize,
    pub gen_samples: usize,
}

/// Fréchet distance between Gaussian fits of extracted features.
pub fn fid_score(
    real: &[Tensor<f32>],
    generated: &[Tensor<f32>],
    extractor: &FeatureExtractor,
) -> Result<FidOutcome> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Undefined(
            "fid_score needs non-empty image sets".into(),
        ));
    }
    let a = GaussianFit::from_rows(&extractor.extract(real)?)?;
    let b = GaussianFit::from_rows(&extractor.extract(generated)?)?;
    if a.regularized || b.regularized {
        log::warn!(
            "fid_score: {} / {} samples for {} feature dimensions; covariance regularized",
            a.samples,
            b.samples,
            a.mean.len()
        );
    }
    Ok(FidOutcome {
        value: frechet_distance(&a.mean, &a.cov, &b.mean, &b.cov)?,
        regularized: a.regularized || b.regularized,
        real_samples: a.samples,
        gen_samples: b.samples,
    })
}
