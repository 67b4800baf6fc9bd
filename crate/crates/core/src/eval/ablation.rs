//! Boundary-treatment ablation assembly: the same four metrics for a
//! built-in-boundary kernel and a penalty-trained one, compared per seed.

use crate::ctmc::{kernel_between, Generator};
use crate::error::Result;
use crate::eval::generate::multi_step_empirical;
use crate::eval::grid::kernel_error_grid;
use crate::eval::tv_distance;
use crate::rng::SeedStream;

/// The four summary metrics used to compare trained kernels.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AblationMetrics {
    pub max_err: f64,
    pub mean_err: f64,
    pub col_tv: f64,
    pub gen_tv: f64,
}

/// Grid metrics plus one-step generation TV (averaged over start states,
/// `gen_samples` trajectories each) for a kernel given as a column-matrix
/// closure.
pub fn kernel_ablation_metrics(
    mut matrix: impl FnMut(f64, f64) -> Vec<Vec<f64>>,
    q: &Generator,
    grid_n: usize,
    gen_samples: usize,
    rng: &mut SeedStream,
) -> Result<AblationMetrics> {
    let grid = kernel_error_grid(&mut matrix, q, grid_n)?;
    let s = q.n_states();
    let truth = kernel_between(q, 0.0, 1.0)?;
    let mut tv_sum = 0.0;
    for x0 in 0..s {
        let emp = multi_step_empirical(&mut matrix, x0, 1, gen_samples, rng)?;
        tv_sum += tv_distance(&emp, &truth.column(x0));
    }
    Ok(AblationMetrics {
        max_err: grid.max_error,
        mean_err: grid.mean_error,
        col_tv: grid.mean_col_tv,
        gen_tv: tv_sum / s as f64,
    })
}

/// Per-seed construction-vs-penalty comparison with aggregate verdicts.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundaryAblationReport {
    pub seeds: Vec<u64>,
    pub construction: Vec<AblationMetrics>,
    pub penalty: Vec<AblationMetrics>,
    /// Min over seeds × metrics of penalty/construction.
    pub min_ratio: f64,
    /// True when, for every metric, the worst construction value beats the
    /// best penalty value across seeds — disjoint distributions.
    pub overlap_free: bool,
}

pub fn boundary_ablation_report(
    entries: &[(u64, AblationMetrics, AblationMetrics)],
) -> BoundaryAblationReport {
    let seeds: Vec<u64> = entries.iter().map(|e| e.0).collect();
    let construction: Vec<AblationMetrics> = entries.iter().map(|e| e.1).collect();
    let penalty: Vec<AblationMetrics> = entries.iter().map(|e| e.2).collect();

    let fields: [fn(&AblationMetrics) -> f64; 4] = [
        |m| m.max_err,
        |m| m.mean_err,
        |m| m.col_tv,
        |m| m.gen_tv,
    ];
    let mut min_ratio = f64::INFINITY;
    let mut overlap_free = true;
    for f in fields {
        for (c, p) in construction.iter().zip(&penalty) {
            min_ratio = min_ratio.min(f(p) / f(c));
        }
        let worst_c = construction.iter().map(f).fold(0.0, f64::max);
        let best_p = penalty.iter().map(f).fold(f64::INFINITY, f64::min);
        if best_p <= worst_c {
            overlap_free = false;
        }
    }
    BoundaryAblationReport { seeds, construction, penalty, min_ratio, overlap_free }
}
