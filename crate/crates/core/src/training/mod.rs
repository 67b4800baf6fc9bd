//! Interval sampling, training objectives, and the optimization loop.

pub mod driver;
pub mod losses;
pub mod sampler;

pub use driver::{train_driver, write_loss_csv, StepRecord, TrainSettings};
pub use losses::{
    boundary_penalty_loss, boundary_penalty_loss_on_batch, draw_corrupted_batch, draw_exact_batch,
    draw_posterior_batch, draw_seq_batch, hybrid_loss, hybrid_seq_loss_on_batch, kce_loss,
    kce_loss_on_batch, kr_exact_loss_on_batch, kr_loss_exact, kr_loss_seq, kr_seq_loss_on_batch,
    pr_loss, pr_loss_on_batch, CorruptedBatch, ExactBatch, HybridWeight, LossAndGrads,
    PosteriorBatch, SeqBatch, FD_STEP,
};
pub use sampler::{TimeSampler, TimeSamplerKind};
