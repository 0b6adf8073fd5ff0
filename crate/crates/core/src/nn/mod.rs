//! Minimal deterministic neural-network substrate.

pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{softmax, softmax_cross_entropy};
pub use mlp::{Activation, DenseLayer, LayerGrads, Mlp, ParamGrads, Trace};
pub use optim::{LrSchedule, SgdState};
pub use rng::{gaussian_init, seeded_rng, stream_rng, Rng, Stream};
pub use tensor::Tensor2;
