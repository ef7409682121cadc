use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Position of a [`BatchSampler`] in its stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: usize,
}

/// Epoch-wise seeded permutations; the trailing partial batch is dropped.
///
/// Each epoch's permutation depends only on `(seed, epoch)`, so a sampler can
/// be restored from its [`SamplerState`] alone.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    len: usize,
    batch_size: usize,
    state: SamplerState,
    perm: Vec<usize>,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::restore(
            len,
            batch_size,
            SamplerState {
                seed,
                epoch: 0,
                cursor: 0,
            },
        )
    }

    pub fn restore(len: usize, batch_size: usize, state: SamplerState) -> Result<Self> {
        if batch_size == 0 || len < batch_size {
            return Err(Error::Config(format!(
                "dataset of {len} items cannot fill a batch of {batch_size}"
            )));
        }
        let perm = permutation(len, state.seed, state.epoch);
        Ok(Self {
            len,
            batch_size,
            state,
            perm,
        })
    }

    pub fn state(&self) -> SamplerState {
        self.state
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len / self.batch_size
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.state.cursor >= self.batches_per_epoch() {
            self.state.epoch += 1;
            self.state.cursor = 0;
            self.perm = permutation(self.len, self.state.seed, self.state.epoch);
        }
        let start = self.state.cursor * self.batch_size;
        self.state.cursor += 1;
        self.perm[start..start + self.batch_size].to_vec()
    }
}

fn permutation(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng);
    perm
}
