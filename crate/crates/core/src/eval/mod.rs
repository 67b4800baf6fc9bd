//! Evaluation and generation: kernel-error grids, one-/multi-step sampling,
//! sequence generation metrics, the target-variance probe, and the boundary
//! ablation assembly.
//!
//! Everything here is read-only on model parameters and deterministic given
//! an RNG stream; bulk sampling helpers precompute kernel columns so repeated
//! draws cost one categorical each.

pub mod ablation;
pub mod generate;
pub mod grid;
pub mod metrics;
pub mod variance;

pub use ablation::{boundary_ablation_report, kernel_ablation_metrics, AblationMetrics, BoundaryAblationReport};
pub use generate::{
    chain_generate, multi_step_empirical, multi_step_generate, one_step_generate,
    oracle_kernel_matrix, posterior_generate, posterior_generate_batch, seq_multi_step_batch,
    seq_multi_step_generate, seq_one_step_generate,
};
pub use grid::{
    kernel_error_grid, model_kernel_matrix, unconstrained_kernel_matrix, write_grid_csv,
    write_kernel_heatmap_csv, GridCell, KernelErrorGrid,
};
pub use metrics::{seq_generation_metrics, seq_generation_metrics_batched, GenerationReport};
pub use variance::{variance_probe, VarianceProbeReport, VARIANCE_T_GRID};

/// Total variation distance: half the L1 distance. Panics on length mismatch
/// (a programming error, not a data condition).
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "tv_distance: length mismatch {} vs {}", p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
