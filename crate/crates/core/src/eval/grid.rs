//! Kernel-error grids: learned vs oracle transition kernels over an
//! inclusive (r, t) lattice, plus CSV emission for grids and heatmaps.

use crate::ctmc::{kernel_between, Generator};
use crate::error::{CoreError, Result};
use crate::eval::tv_distance;
use crate::model::{kernel_columns_batch, AlphaSchedule, ExactKernelNet};
use std::fmt::Write as _;
use std::path::Path;

// ── Kernel-matrix adapters ────────────────────────────────────────────────

/// Learned mixture kernel as a column matrix: `matrix(r, t)[x][y]` is
/// K_θ(y, x, r, t). One batched forward per call.
pub fn model_kernel_matrix<'a>(
    net: &'a ExactKernelNet,
    schedule: &'a AlphaSchedule,
) -> impl FnMut(f64, f64) -> Vec<Vec<f64>> + 'a {
    let s = net.n_states();
    move |r, t| {
        let xs: Vec<usize> = (0..s).collect();
        kernel_columns_batch(net, schedule, &xs, &vec![r; s], &vec![t; s])
    }
}

/// The ablation variant: raw softmax head with no mixture, so the boundary
/// is whatever the network learned.
pub fn unconstrained_kernel_matrix(
    net: &ExactKernelNet,
) -> impl FnMut(f64, f64) -> Vec<Vec<f64>> + '_ {
    let s = net.n_states();
    move |r, t| {
        let xs: Vec<usize> = (0..s).collect();
        let flat = net.q_rows(&xs, &vec![r; s], &vec![t; s]);
        flat.chunks(s).map(|c| c.to_vec()).collect()
    }
}

// ── Error grid ────────────────────────────────────────────────────────────

/// One (r, t) cell: entrywise error extrema and the mean per-column TV.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GridCell {
    pub r: f64,
    pub t: f64,
    pub max_err: f64,
    pub mean_err: f64,
    pub col_tv: f64,
}

/// All cells with t ≥ r on an inclusive grid_n-point lattice, plus grid-wide
/// aggregates.
#[derive(Debug, Clone, serde::Serialize)]
pub struct KernelErrorGrid {
    pub grid_n: usize,
    pub cells: Vec<GridCell>,
    /// Max over cells of the cell max error.
    pub max_error: f64,
    /// Mean over cells of the cell mean error.
    pub mean_error: f64,
    /// Mean over cells of the cell mean column TV.
    pub mean_col_tv: f64,
}

/// Compare a learned kernel against exp((t−r)Q) over the lattice. Pure in
/// (matrix, Q, grid_n): repeated calls agree bit-for-bit.
pub fn kernel_error_grid(
    mut matrix: impl FnMut(f64, f64) -> Vec<Vec<f64>>,
    q: &Generator,
    grid_n: usize,
) -> Result<KernelErrorGrid> {
    if grid_n < 2 {
        return Err(CoreError::invalid(format!("kernel_error_grid: grid_n must be ≥ 2, got {grid_n}")));
    }
    let s = q.n_states();
    let pts: Vec<f64> = (0..grid_n).map(|i| i as f64 / (grid_n - 1) as f64).collect();
    let mut cells = Vec::with_capacity(grid_n * (grid_n + 1) / 2);
    for &r in &pts {
        for &t in &pts {
            if t < r {
                continue;
            }
            let learned = matrix(r, t);
            let oracle = kernel_between(q, r, t)?;
            let mut max_err: f64 = 0.0;
            let mut sum_err = 0.0;
            let mut sum_tv = 0.0;
            for x in 0..s {
                let truth = oracle.column(x);
                for y in 0..s {
                    let e = (learned[x][y] - truth[y]).abs();
                    max_err = max_err.max(e);
                    sum_err += e;
                }
                sum_tv += tv_distance(&learned[x], &truth);
            }
            cells.push(GridCell {
                r,
                t,
                max_err,
                mean_err: sum_err / (s * s) as f64,
                col_tv: sum_tv / s as f64,
            });
        }
    }
    let n_cells = cells.len() as f64;
    let max_error = cells.iter().map(|c| c.max_err).fold(0.0, f64::max);
    let mean_error = cells.iter().map(|c| c.mean_err).sum::<f64>() / n_cells;
    let mean_col_tv = cells.iter().map(|c| c.col_tv).sum::<f64>() / n_cells;
    Ok(KernelErrorGrid { grid_n, cells, max_error, mean_error, mean_col_tv })
}

// ── CSV emission ──────────────────────────────────────────────────────────

/// Grid cells as CSV with header `r,t,max_err,mean_err,col_tv`.
pub fn write_grid_csv(grid: &KernelErrorGrid, path: &Path) -> Result<()> {
    let mut out = String::from("r,t,max_err,mean_err,col_tv\n");
    for c in &grid.cells {
        let _ = writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            c.r, c.t, c.max_err, c.mean_err, c.col_tv
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-entry heatmap triples (true, learned, |error|) as CSV with header
/// `r,t,x,y,true_prob,learned_prob,abs_err`.
pub fn write_kernel_heatmap_csv(
    mut matrix: impl FnMut(f64, f64) -> Vec<Vec<f64>>,
    q: &Generator,
    grid_n: usize,
    path: &Path,
) -> Result<()> {
    if grid_n < 2 {
        return Err(CoreError::invalid(format!("heatmap: grid_n must be ≥ 2, got {grid_n}")));
    }
    let s = q.n_states();
    let pts: Vec<f64> = (0..grid_n).map(|i| i as f64 / (grid_n - 1) as f64).collect();
    let mut out = String::from("r,t,x,y,true_prob,learned_prob,abs_err\n");
    for &r in &pts {
        for &t in &pts {
            if t < r {
                continue;
            }
            let learned = matrix(r, t);
            let oracle = kernel_between(q, r, t)?;
            for x in 0..s {
                for y in 0..s {
                    let tr = oracle.prob(y, x);
                    let le = learned[x][y];
                    let _ = writeln!(
                        out,
                        "{:.17e},{:.17e},{x},{y},{:.17e},{:.17e},{:.17e}",
                        r,
                        t,
                        tr,
                        le,
                        (le - tr).abs()
                    );
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
