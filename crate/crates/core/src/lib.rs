//! Core library for one-step discrete generation over finite state spaces:
//! exact continuous-time Markov-chain references, an f64 autodiff tape, the
//! boundary-respecting kernel models, training objectives, and evaluation.

pub mod ctmc;
pub mod data;
pub mod error;
pub mod eval;
pub mod fastmath;
pub mod gradcheck;
pub mod masking;
pub mod model;
pub mod optim;
pub mod rng;
pub mod runner;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{CoreError, Result};
pub use rng::SeedStream;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
