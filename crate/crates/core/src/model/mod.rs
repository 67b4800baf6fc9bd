//! Learnable transition-kernel models.
//!
//! Everything here shares one structural idea: the kernel is a mixture
//! (1−α)δ + α·softmax(f_θ) whose α vanishes (linearly, exactly) at t = r, so
//! identity-at-zero-interval is an architectural property, not a trained
//! one. Submodules: α schedules, sinusoidal time features, parameter
//! storage, binary checkpoints, the exact-chain MLP, and the sequence
//! Transformer pair (interval-conditioned kernel vs single-time posterior).

pub mod alpha;
pub mod checkpoint;
pub mod embed;
pub mod exact;
pub mod params;
pub mod seq;

pub use alpha::AlphaSchedule;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use embed::{sinusoidal, sinusoidal_into};
pub use exact::{
    dmf_prediction_on, kernel_column, kernel_columns_batch, kernel_time_derivative,
    unconstrained_kernel_column, ExactKernelNet, TIME_FEATURES_EXACT,
};
pub use params::ParamSet;
pub use seq::{
    seq_dmf_prediction_on, seq_dmf_with_mid_logits_on, seq_kernel_rows, seq_kernel_rows_batch,
    PosteriorNet, SequenceKernelNet, TIME_FEATURES_SEQ,
};
