use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor2;

/// The generator used everywhere in the crate. ChaCha keeps streams
/// identical across platforms, including wasm.
pub type Rng = ChaCha8Rng;

/// Independent sub-streams derived from one run seed, so that e.g. drawing
/// episode partners never shifts the batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Batches = 1,
    Episodes = 2,
    Data = 3,
    Eval = 4,
    Split = 5,
}

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `rows × cols` tensor of i.i.d. `N(0, scale²)` entries.
pub fn gaussian_init(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| scale * gaussian(rng))
}
