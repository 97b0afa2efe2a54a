pub mod cli;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod env;
pub mod error;
pub mod generator;
pub mod lm;
pub mod nn;
pub mod oracle;
pub mod poem;
pub mod prompter;
pub mod rl;
pub mod rhyme;
pub mod sampling;
pub mod seq;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Seeded generator used for every stochastic operation.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
