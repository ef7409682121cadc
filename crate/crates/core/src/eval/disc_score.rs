use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gather_batch, BatchSampler};
use crate::diffcore::{AdamConfig, AdamState, Graph, Tensor};
use crate::losses::d_loss_term;
use crate::networks::{ArchitectureSpec, Mode, NetworkParams, Role};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorScoreConfig {
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub train_steps: usize,
    pub batch_size: usize,
    /// Fraction of each set used for training; the rest is held out.
    pub train_fraction: f64,
    pub adam: AdamConfig,
}

impl DiscriminatorScoreConfig {
    pub fn new(arch: ArchitectureSpec, seed: u64) -> Self {
        Self {
            arch,
            seed,
            train_steps: 300,
            batch_size: 16,
            train_fraction: 0.5,
            adam: AdamConfig::default(),
        }
    }
}

fn split(
    images: &[Tensor<f32>],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(rng);
    let cut = (images.len() as f64 * fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect();
    (pick(&order[..cut]), pick(&order[cut..]))
}

/// Trains a fresh discriminator to separate `real` from `generated` on a
/// random split of each set, then returns its mean eval-mode probability of
/// "real" on the held-out generated images. 0 means every held-out generated
/// image was confidently recognized as fake.
///
/// Batch normalization runs on its initial running statistics in both
/// training and scoring, so each image is judged on its own. Train-mode batch
/// statistics would let a batch of near-identical fakes normalize to nothing
/// during training and then look different at scoring time.
pub fn discriminator_score(
    real: &[Tensor<f32>],
    generated: &[Tensor<f32>],
    cfg: &DiscriminatorScoreConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (real_train, _) = split(real, cfg.train_fraction, &mut rng);
    let (gen_train, gen_held) = split(generated, cfg.train_fraction, &mut rng);
    let batch = cfg.batch_size;
    if real_train.len() < batch || gen_train.len() < batch || gen_held.is_empty() {
        return Err(Error::Config(format!(
            "discriminator_score needs at least {batch} training images per side and a held-out \
             set; got {} real / {} generated",
            real.len(),
            generated.len()
        )));
    }
    let mut d: NetworkParams<f32> =
        NetworkParams::build(&cfg.arch, Role::Discriminator, cfg.seed.wrapping_add(1))?;
    let mut opt = AdamState::new(&d.params, cfg.adam);
    let mut real_sampler = BatchSampler::new(real_train.len(), batch, cfg.seed.wrapping_add(2))?;
    let mut gen_sampler = BatchSampler::new(gen_train.len(), batch, cfg.seed.wrapping_add(3))?;
    for _ in 0..cfg.train_steps {
        let rb = gather_batch(&real_train, &real_sampler.next_batch())?;
        let gb = gather_batch(&gen_train, &gen_sampler.next_batch())?;
        let mut graph = Graph::new();
        let rin = graph.constant(rb);
        let r = d.forward(&mut graph, rin, Mode::Eval, true)?;
        let gin = graph.constant(gb);
        let f = d.forward(&mut graph, gin, Mode::Eval, true)?;
        let loss = d_loss_term(&mut graph, r.output, f.output)?;
        let grads = graph.backward(loss)?;
        let summed = d
            .params
            .names()
            .map(|name| {
                let mut g = grads.wrt(r.params[name]);
                let other = grads.wrt(f.params[name]);
                g.data_mut()
                    .iter_mut()
                    .zip(other.data())
                    .for_each(|(a, b)| *a += b);
                (name.to_string(), g)
            })
            .collect();
        opt.step(&mut d.params, &summed)?;
    }
    let probs = d.infer_many(&gen_held, 64)?;
    Ok(probs.iter().map(|p| p.item() as f64).sum::<f64>() / probs.len() as f64)
}
