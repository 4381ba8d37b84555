//! Cosine-transform diagonalization of the reflected-ghost Neumann stencil.
//!
//! The cell-centered Neumann Laplacian along one axis has eigenvectors
//! `cos(k pi (j + 1/2) / n)` with eigenvalues of `-Δ_h` equal to
//! `(2 / h²)(1 - cos(k pi / n))`. A DCT-II maps cell values to these modes and
//! a scaled DCT-III maps back.

use std::sync::Arc;

use rayon::prelude::*;
use rustdct::{DctPlanner, TransformType2And3};

use crate::grid::Grid;

/// Eigenvalue of `-Δ_h` for mode `k` on an axis with `n` cells of width `h`.
pub fn neumann_eigenvalue(n: usize, h: f64, k: usize) -> f64 {
    (2.0 / (h * h)) * (1.0 - (k as f64 * std::f64::consts::PI / n as f64).cos())
}

struct AxisPlan {
    n: usize,
    dct: Arc<dyn TransformType2And3<f64>>,
    eigenvalues: Vec<f64>,
}

pub(crate) struct SpectralPlan {
    grid: Grid,
    axes: Vec<AxisPlan>,
}

// rows shorter than this are transformed serially
const PAR_MIN_ROWS: usize = 32;

impl SpectralPlan {
    pub(crate) fn new(grid: Grid) -> Self {
        let mut planner = DctPlanner::new();
        let axes = (0..grid.dim())
            .map(|a| {
                let n = grid.cells()[a];
                let h = grid.spacing()[a];
                AxisPlan {
                    n,
                    dct: planner.plan_dct2(n),
                    eigenvalues: (0..n).map(|k| neumann_eigenvalue(n, h, k)).collect(),
                }
            })
            .collect();
        SpectralPlan { grid, axes }
    }

    pub(crate) fn eigenvalues(&self, axis: usize) -> &[f64] {
        &self.axes[axis].eigenvalues
    }

    /// Applies the Fourier multiplier `symbol(λ)` where λ is the `-Δ_h`
    /// eigenvalue of each cosine mode.
    pub(crate) fn apply_symbol(&self, values: &[f64], symbol: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
        let mut data = values.to_vec();
        match self.grid.dim() {
            1 => {
                let ax = &self.axes[0];
                ax.dct.process_dct2(&mut data);
                for (c, &lam) in data.iter_mut().zip(&ax.eigenvalues) {
                    *c *= symbol(lam);
                }
                ax.dct.process_dct3(&mut data);
                let norm = 2.0 / ax.n as f64;
                for c in &mut data {
                    *c *= norm;
                }
            }
            _ => {
                let (a0, a1) = (&self.axes[0], &self.axes[1]);
                let (n0, n1) = (a0.n, a1.n);
                transform_rows(&mut data, n1, |row| a1.dct.process_dct2(row));
                let mut t = transpose(&data, n0, n1);
                transform_rows(&mut t, n0, |col| a0.dct.process_dct2(col));
                // t is laid out [k1][k0]
                for (k1, col) in t.chunks_mut(n0).enumerate() {
                    let l1 = a1.eigenvalues[k1];
                    for (c, &l0) in col.iter_mut().zip(&a0.eigenvalues) {
                        *c *= symbol(l0 + l1);
                    }
                }
                transform_rows(&mut t, n0, |col| a0.dct.process_dct3(col));
                data = transpose(&t, n1, n0);
                transform_rows(&mut data, n1, |row| a1.dct.process_dct3(row));
                let norm = 4.0 / (n0 * n1) as f64;
                for c in &mut data {
                    *c *= norm;
                }
            }
        }
        data
    }
}

fn transform_rows(data: &mut [f64], row_len: usize, f: impl Fn(&mut [f64]) + Sync) {
    if data.len() / row_len >= PAR_MIN_ROWS {
        data.par_chunks_mut(row_len).for_each(&f);
    } else {
        data.chunks_mut(row_len).for_each(f);
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_symbol_round_trips() {
        for grid in [Grid::line(12, 1.0).unwrap(), Grid::rect([6, 10], [1.0, 2.0]).unwrap()] {
            let plan = SpectralPlan::new(grid);
            let x: Vec<f64> = (0..grid.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let y = plan.apply_symbol(&x, |_| 1.0);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_eigenvalue_is_exact() {
        assert_eq!(neumann_eigenvalue(17, 0.3, 0), 0.0);
    }
}
