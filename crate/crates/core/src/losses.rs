//! Adversarial, transformation-vector and margin losses.
//!
//! Each loss exists twice: as a graph term (`*_term`) used during training,
//! and as a plain value function for evaluation and tests. The value
//! functions record a throwaway graph so both paths share one implementation.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistMetric {
    Cosine,
    CosinePlusL2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Minimum latent distance the margin loss enforces between any two samples.
    pub margin: f64,
    pub dist_metric: DistMetric,
    /// Weight of the squared-difference term under [`DistMetric::CosinePlusL2`].
    pub l2_weight: f64,
    pub adv_weight: f64,
    pub travel_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            dist_metric: DistMetric::Cosine,
            l2_weight: 0.0,
            adv_weight: 1.0,
            travel_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        for (name, w) in [
            ("l2_weight", self.l2_weight),
            ("adv_weight", self.adv_weight),
            ("travel_weight", self.travel_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }

    fn effective_l2(&self) -> f64 {
        match self.dist_metric {
            DistMetric::Cosine => 0.0,
            DistMetric::CosinePlusL2 => self.l2_weight,
        }
    }
}

/// Field of latent differences `v[i][j] = latent[j] - latent[i]` over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseVectors<T> {
    vectors: Tensor<T>,
}

impl<T: Scalar> PairwiseVectors<T> {
    pub fn batch(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.vectors.shape()[2]
    }

    pub fn get(&self, i: usize, j: usize) -> &[T] {
        let (b, l) = (self.batch(), self.latent_dim());
        &self.vectors.data()[(i * b + j) * l..(i * b + j + 1) * l]
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.vectors
    }

    /// Wraps a raw `(B, B, L)` field.
    pub fn from_tensor(vectors: Tensor<T>) -> Result<Self> {
        match *vectors.shape() {
            [b, b2, _] if b == b2 => Ok(Self { vectors }),
            _ => Err(Error::shape(
                "pairwise vectors",
                vectors.shape(),
                &[0, 0, 0],
            )),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let f = T::of(factor);
        Self {
            vectors: self.vectors.map(|v| v * f),
        }
    }
}

/// Builds the pairwise transformation vectors of a `(B, latent_dim)` batch.
pub fn transformation_vectors<T: Scalar>(latents: &Tensor<T>) -> Result<PairwiseVectors<T>> {
    let mut g = Graph::new();
    let x = g.constant(latents.clone());
    let nu = g.pair_diff(x)?;
    Ok(PairwiseVectors {
        vectors: g.value(nu).clone(),
    })
}

/// Mean over ordered pairs of `Dist(real[i][j], gen[i][j])`.
pub fn travel_loss<T: Scalar>(
    real: &PairwiseVectors<T>,
    gen: &PairwiseVectors<T>,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let r = g.constant(real.vectors.clone());
    let q = g.constant(gen.vectors.clone());
    let l = g.cosine_travel(r, q, cfg.effective_l2())?;
    Ok(g.value(l).item().to_f64_lossless())
}

/// Mean over ordered pairs of `max(0, margin - |v[i][j]|)`.
pub fn margin_loss<T: Scalar>(real: &PairwiseVectors<T>, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let r = g.constant(real.vectors.clone());
    let l = g.margin_hinge(r, cfg.margin)?;
    Ok(g.value(l).item().to_f64_lossless())
}

/// Binary cross-entropy of the discriminator on separate real and fake batches.
pub fn adversarial_d_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let r = g.constant(d_real.clone());
    let f = g.constant(d_fake.clone());
    let l = d_loss_term(&mut g, r, f)?;
    Ok(g.value(l).item().to_f64_lossless())
}

/// Non-saturating generator loss `-mean(log D(G(x)))`.
pub fn adversarial_g_loss<T: Scalar>(d_fake: &Tensor<T>) -> f64 {
    let mut g = Graph::new();
    let f = g.constant(d_fake.clone());
    let l = g_adv_term(&mut g, f);
    g.value(l).item().to_f64_lossless()
}

pub fn d_loss_term<T: Scalar>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = g.neg_log_likelihood(d_real, true);
    let fake = g.neg_log_likelihood(d_fake, false);
    g.add(real, fake)
}

pub fn g_adv_term<T: Scalar>(g: &mut Graph<T>, d_fake: Var) -> Var {
    g.neg_log_likelihood(d_fake, true)
}

/// Transformation-vector loss between two `(B, latent_dim)` latent batches.
pub fn travel_term<T: Scalar>(
    g: &mut Graph<T>,
    real_latents: Var,
    gen_latents: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let real = g.pair_diff(real_latents)?;
    let gen = g.pair_diff(gen_latents)?;
    g.cosine_travel(real, gen, cfg.effective_l2())
}

pub fn margin_term<T: Scalar>(g: &mut Graph<T>, latents: Var, cfg: &LossConfig) -> Result<Var> {
    let nu = g.pair_diff(latents)?;
    g.margin_hinge(nu, cfg.margin)
}

/// `adv_weight * adv + travel_weight * travel`.
pub fn generator_objective<T: Scalar>(
    g: &mut Graph<T>,
    adv: Var,
    travel: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let a = g.scale(adv, cfg.adv_weight);
    let t = g.scale(travel, cfg.travel_weight);
    g.add(a, t)
}

/// `margin + travel_weight * travel`.
pub fn siamese_objective<T: Scalar>(
    g: &mut Graph<T>,
    margin: Var,
    travel: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let t = g.scale(travel, cfg.travel_weight);
    g.add(margin, t)
}

/// Raw loss values measured in one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_adv_g: f64,
    pub l_travel: f64,
    pub l_sc: f64,
    pub l_d: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_adv_g: f64,
    pub l_travel: f64,
    pub l_sc: f64,
    pub l_d: f64,
    pub l_g_total: f64,
    pub l_s_total: f64,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [
            self.l_adv_g,
            self.l_travel,
            self.l_sc,
            self.l_d,
            self.l_g_total,
            self.l_s_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn compose_losses(parts: LossParts, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        l_adv_g: parts.l_adv_g,
        l_travel: parts.l_travel,
        l_sc: parts.l_sc,
        l_d: parts.l_d,
        l_g_total: cfg.adv_weight * parts.l_adv_g + cfg.travel_weight * parts.l_travel,
        l_s_total: parts.l_sc + cfg.travel_weight * parts.l_travel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latents(b: usize, l: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![b, l], data).unwrap()
    }

    #[test]
    fn vectors_follow_target_minus_source() {
        let nu = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(nu.get(0, 1), &[1.0, 0.0]);
        assert_eq!(nu.get(1, 0), &[-1.0, 0.0]);
        assert_eq!(nu.get(0, 0), &[0.0, 0.0]);
    }

    #[test]
    fn single_sample_has_no_pairs() {
        let nu = transformation_vectors(&latents(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(nu.batch(), 1);
        assert!(nu.get(0, 0).iter().all(|&v| v == 0.0));
        let cfg = LossConfig::default();
        assert_eq!(travel_loss(&nu, &nu, &cfg).unwrap(), 0.0);
        assert_eq!(margin_loss(&nu, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_pair_vectors_cost_one() {
        let real = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 1.0, 0.0])).unwrap();
        let gen = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 0.0, 1.0])).unwrap();
        let loss = travel_loss(&real, &gen, &LossConfig::default()).unwrap();
        assert!((loss - 1.0).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn cosine_ignores_scale_but_l2_does_not() {
        let real =
            transformation_vectors(&latents(3, 2, &[0.1, 0.5, -1.0, 2.0, 0.3, 0.3])).unwrap();
        let doubled = real.scaled(2.0);
        let cos = LossConfig::default();
        assert!(travel_loss(&real, &doubled, &cos).unwrap().abs() < 1e-9);
        let l2 = LossConfig {
            dist_metric: DistMetric::CosinePlusL2,
            l2_weight: 0.5,
            ..LossConfig::default()
        };
        assert!(travel_loss(&real, &doubled, &l2).unwrap() > 0.0);
        assert!(travel_loss(&real, &real, &l2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn margin_examples() {
        let cfg = LossConfig::default();
        let same = transformation_vectors(&latents(2, 2, &[0.3, 0.3, 0.3, 0.3])).unwrap();
        assert!((margin_loss(&same, &cfg).unwrap() - 1.0).abs() < 1e-12);
        let close = transformation_vectors(&latents(2, 2, &[0.0, 0.0, 0.4, 0.0])).unwrap();
        assert!((margin_loss(&close, &cfg).unwrap() - 0.6).abs() < 1e-12);
        let far = transformation_vectors(&latents(3, 1, &[0.0, 1.0, 2.5])).unwrap();
        assert_eq!(margin_loss(&far, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn adversarial_values() {
        let half = Tensor::<f64>::full(&[4, 1], 0.5);
        let ln2 = std::f64::consts::LN_2;
        assert!((adversarial_d_loss(&half, &half).unwrap() - 2.0 * ln2).abs() < 1e-12);
        assert!((adversarial_g_loss(&half) - ln2).abs() < 1e-12);
        let quarter = Tensor::<f64>::full(&[2, 1], 0.25);
        assert!((adversarial_g_loss(&quarter) - 4f64.ln()).abs() < 1e-12);
        let real = Tensor::<f64>::full(&[2, 1], 0.9);
        let fake = Tensor::<f64>::full(&[2, 1], 0.1);
        let expect = -(0.9f64.ln()) - (0.9f64.ln());
        assert!((adversarial_d_loss(&real, &fake).unwrap() - expect).abs() < 1e-12);
        let one = Tensor::<f64>::full(&[2, 1], 1.0);
        let zero = Tensor::<f64>::zeros(&[2, 1]);
        assert!(adversarial_d_loss(&one, &zero).unwrap() < 1e-6);
        assert!(adversarial_g_loss(&one) < 1e-6);
    }

    #[test]
    fn composition() {
        let cfg = LossConfig::default();
        let b = compose_losses(
            LossParts {
                l_adv_g: 0.7,
                l_travel: 0.3,
                l_sc: 0.2,
                l_d: 1.0,
            },
            &cfg,
        );
        assert!((b.l_g_total - 1.0).abs() < 1e-12);
        assert!((b.l_s_total - 0.5).abs() < 1e-12);
        let pure_adv = LossConfig {
            travel_weight: 0.0,
            ..cfg
        };
        let b = compose_losses(
            LossParts {
                l_adv_g: 0.7,
                l_travel: 0.3,
                ..LossParts::default()
            },
            &pure_adv,
        );
        assert_eq!(b.l_g_total, 0.7);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            margin: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            travel_weight: f64::NAN,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
