//! Unpaired image-domain mapping that preserves transformation vectors.
//!
//! Three networks are trained together for each mapping direction: a U-Net
//! generator, a stride-two convolutional discriminator and a siamese encoder
//! that cooperates with the generator. The generator is pushed to make the
//! latent-space difference between any two generated images match the
//! difference between their sources, while the siamese encoder keeps all
//! embeddings at least a margin apart so the latent space cannot collapse.
//!
//! The crate is self-contained: [`diffcore`] provides the tensor operations,
//! reverse-mode gradients and Adam; [`networks`], [`losses`] and [`trainer`]
//! build the model; [`data`] renders the procedural beads/grid domains; and
//! [`eval`] holds the image metrics and analysis instruments.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod trainer;

pub use error::{Error, Result};
