//! Neumann operators on cell-centered grids.
//!
//! The discrete Laplacian uses the standard second-order stencil with
//! reflected ghost cells, i.e. zero normal difference across boundary faces.
//! This makes `Σ Δ_h f = 0` for every `f` and gives `αI − βΔ_h` (α, β > 0)
//! the M-matrix sign structure, so every solve below preserves non-negativity.
//!
//! Constant-coefficient solves run through one of two interchangeable
//! backends: cosine-transform diagonalization or Jacobi-preconditioned CG.
//! The variable-coefficient solve used by the cell-density step is CG only.

mod cg;
mod spectral;

use serde::{Deserialize, Serialize};

pub use spectral::neumann_eigenvalue;

use crate::error::{Error, Result};
use crate::grid::{pairwise_sum_by, Field, Grid};
use spectral::SpectralPlan;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Spectral,
    ConjugateGradient,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-12;

/// Relative compatibility tolerance on the mean of a Poisson source.
pub const POISSON_COMPATIBILITY: f64 = 1e-10;

/// One interior face between cells `lo` and `hi` along `axis`.
#[derive(Clone, Copy, Debug)]
pub struct Face {
    pub axis: usize,
    pub lo: usize,
    pub hi: usize,
}

/// Every interior face of the grid. Boundary faces carry zero flux and are
/// omitted.
pub fn faces(grid: &Grid) -> impl Iterator<Item = Face> + '_ {
    let dim = grid.dim();
    let cells = [grid.cells()[0], if dim == 2 { grid.cells()[1] } else { 1 }];
    (0..dim).flat_map(move |axis| {
        let stride = grid.stride(axis);
        (0..grid.len()).filter_map(move |k| {
            let idx = grid.unflatten(k);
            (idx[axis] + 1 < cells[axis]).then_some(Face {
                axis,
                lo: k,
                hi: k + stride,
            })
        })
    })
}

/// Neumann cosine eigenmode `Π_a cos(k_a π (i_a + ½) / n_a)`.
pub fn cosine_mode(grid: &Grid, modes: &[usize]) -> Field {
    let g = *grid;
    Field::from_fn(g, |x| {
        (0..g.dim())
            .map(|a| {
                let k = modes.get(a).copied().unwrap_or(0) as f64;
                (k * std::f64::consts::PI * x[a] / g.lengths()[a]).cos()
            })
            .product()
    })
}

fn laplacian_into(grid: &Grid, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let dim = grid.dim();
    for axis in 0..dim {
        let h = grid.spacing()[axis];
        let inv_h2 = 1.0 / (h * h);
        let n = grid.cells()[axis];
        let stride = grid.stride(axis);
        let lines = grid.len() / n;
        for line in 0..lines {
            // first cell of the line along `axis`
            let base = if dim == 2 && axis == 0 { line } else { line * n };
            for i in 0..n - 1 {
                let lo = base + i * stride;
                let hi = lo + stride;
                let flux = (x[hi] - x[lo]) * inv_h2;
                out[lo] += flux;
                out[hi] -= flux;
            }
        }
    }
}

/// Diagonal of `-Δ_h` (boundary cells have one neighbour fewer per axis).
fn neg_laplacian_diagonal(grid: &Grid) -> Vec<f64> {
    let mut d = vec![0.0; grid.len()];
    for f in faces(grid) {
        let h = grid.spacing()[f.axis];
        let c = 1.0 / (h * h);
        d[f.lo] += c;
        d[f.hi] += c;
    }
    d
}

/// Sum over faces of `(f_hi − f_lo)² / h²` times cell volume: the discrete
/// `‖∇f‖₂²` that matches `−⟨f, Δ_h f⟩` exactly.
pub fn gradient_norm_sq(f: &Field) -> f64 {
    let grid = f.grid();
    let x = f.values();
    let faces: Vec<Face> = faces(grid).collect();
    pairwise_sum_by(faces.len(), |i| {
        let fc = faces[i];
        let h = grid.spacing()[fc.axis];
        let d = x[fc.hi] - x[fc.lo];
        d * d / (h * h)
    }) * grid.cell_volume()
}

/// Largest face-difference magnitude `|f_hi − f_lo| / h`.
pub fn gradient_linf(f: &Field) -> f64 {
    let grid = f.grid();
    let x = f.values();
    faces(grid).fold(0.0, |m, fc| {
        m.max((x[fc.hi] - x[fc.lo]).abs() / grid.spacing()[fc.axis])
    })
}

/// Precomputed Neumann operator set for one grid.
pub struct NeumannOperators {
    grid: Grid,
    backend: Backend,
    tolerance: f64,
    max_iter: usize,
    spectral: SpectralPlan,
    lap_diag: Vec<f64>,
    // max diagonal of −Δ_h; ‖Δ_h‖₂ ≤ 2·lap_norm
    lap_norm: f64,
}

impl NeumannOperators {
    pub fn new(grid: Grid) -> Self {
        NeumannOperators::with_backend(grid, Backend::Spectral, DEFAULT_TOLERANCE)
    }

    pub fn with_backend(grid: Grid, backend: Backend, tolerance: f64) -> Self {
        let lap_diag = neg_laplacian_diagonal(&grid);
        let lap_norm = lap_diag.iter().fold(0.0, |m: f64, &d| m.max(d));
        NeumannOperators {
            grid,
            backend,
            tolerance,
            max_iter: 20 * grid.len() + 1000,
            spectral: SpectralPlan::new(grid),
            lap_diag,
            lap_norm,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Eigenvalues of `-Δ_h` along one axis, indexed by mode number.
    pub fn eigenvalues(&self, axis: usize) -> &[f64] {
        self.spectral.eigenvalues(axis)
    }

    fn check(&self, f: &Field) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        let mut out = vec![0.0; self.grid.len()];
        laplacian_into(&self.grid, f.values(), &mut out);
        Ok(Field::from_raw(self.grid, out))
    }

    /// `A f = f − Δ_h f`.
    pub fn helmholtz_apply(&self, f: &Field) -> Result<Field> {
        let lap = self.laplacian(f)?;
        f.sub(&lap)
    }

    /// Solves `(α I − β Δ_h) z = f` for α ≥ 0, β > 0 (α > 0 unless the
    /// caller handles the null space).
    fn solve_constant(&self, f: &Field, alpha: f64, beta: f64) -> Result<Field> {
        self.check(f)?;
        f.check_finite()?;
        let out = match self.backend {
            Backend::Spectral => Field::from_raw(
                self.grid,
                self.spectral.apply_symbol(f.values(), |lam| 1.0 / (alpha + beta * lam)),
            ),
            Backend::ConjugateGradient => {
                let inv: Vec<f64> = self.lap_diag.iter().map(|d| 1.0 / (alpha + beta * d)).collect();
                let grid = self.grid;
                let apply = move |x: &[f64], out: &mut [f64]| {
                    laplacian_into(&grid, x, out);
                    for i in 0..x.len() {
                        out[i] = alpha * x[i] - beta * out[i];
                    }
                };
                let a_norm = alpha + 2.0 * beta * self.lap_norm;
                let mut x: Vec<f64> = f.values().iter().map(|v| v / (alpha + beta)).collect();
                cg::pcg(
                    &apply,
                    &inv,
                    a_norm,
                    f.values(),
                    &mut x,
                    self.tolerance,
                    self.max_iter,
                    false,
                )?;
                Field::from_raw(self.grid, x)
            }
        };
        out.check_finite()?;
        Ok(out)
    }

    /// `A⁻¹ f`, the Neumann Helmholtz solve `−Δz + z = f`.
    pub fn helmholtz_solve(&self, f: &Field) -> Result<Field> {
        self.solve_constant(f, 1.0, 1.0)
    }

    /// `(σ I + A)⁻¹ f`.
    pub fn shifted_solve(&self, f: &Field, sigma: f64) -> Result<Field> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("shift must be non-negative, got {sigma}")));
        }
        self.solve_constant(f, sigma + 1.0, 1.0)
    }

    /// One backward-Euler step of `τ ∂_t z + A z = 0`: `(I + (dt/τ) A)⁻¹ f`.
    pub fn heat_step(&self, f: &Field, dt: f64, tau: f64) -> Result<Field> {
        if !(dt > 0.0 && tau > 0.0) {
            return Err(Error::Domain(format!(
                "heat step needs dt > 0 and tau > 0, got dt = {dt}, tau = {tau}"
            )));
        }
        let r = dt / tau;
        self.solve_constant(f, 1.0 + r, r)
    }

    /// Exact propagator `exp(−t A / τ) f` through the cosine transform,
    /// independent of the configured backend. Cross-check for [`Self::heat_step`].
    pub fn heat_exact(&self, f: &Field, t: f64, tau: f64) -> Result<Field> {
        self.check(f)?;
        Ok(Field::from_raw(
            self.grid,
            self.spectral
                .apply_symbol(f.values(), |lam| (-(1.0 + lam) * t / tau).exp()),
        ))
    }

    /// `K[z]`: the mean-free solution of `−Δ_h K = z`.
    ///
    /// `z` must be mean-free up to `POISSON_COMPATIBILITY · ‖z‖∞`; its mean is
    /// projected out before solving.
    pub fn poisson_meanzero_solve(&self, z: &Field) -> Result<Field> {
        self.check(z)?;
        z.check_finite()?;
        let mean = z.mean();
        let tolerance = POISSON_COMPATIBILITY * z.linf();
        if mean.abs() > tolerance {
            return Err(Error::IncompatibleSource { mean, tolerance });
        }
        self.poisson_projected(&z.offset(-mean))
    }

    fn poisson_projected(&self, src: &Field) -> Result<Field> {
        let mut out = match self.backend {
            Backend::Spectral => self
                .spectral
                .apply_symbol(src.values(), |lam| if lam == 0.0 { 0.0 } else { 1.0 / lam }),
            Backend::ConjugateGradient => {
                let diag = &self.lap_diag;
                let inv: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
                let grid = self.grid;
                let apply = move |x: &[f64], out: &mut [f64]| {
                    laplacian_into(&grid, x, out);
                    out.iter_mut().for_each(|v| *v = -*v);
                };
                let mut x = vec![0.0; grid.len()];
                cg::pcg(
                    &apply,
                    &inv,
                    2.0 * self.lap_norm,
                    src.values(),
                    &mut x,
                    self.tolerance,
                    self.max_iter,
                    true,
                )?;
                x
            }
        };
        let m = pairwise_sum_by(out.len(), |i| out[i]) / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= m);
        Ok(Field::from_raw(self.grid, out))
    }

    /// `‖∇K[z − z̄]‖₂² = ⟨z − z̄, K[z − z̄]⟩`. The mean is removed first, so
    /// `z = u − m` with `u ≈ m` is accepted whatever the rounding in `m`.
    pub fn dirichlet_energy(&self, z: &Field) -> Result<f64> {
        self.check(z)?;
        z.check_finite()?;
        let zc = z.offset(-z.mean());
        let k = self.poisson_projected(&zc)?;
        Ok(zc.dot(&k)?.max(0.0))
    }

    /// Solves `(diag(d) − β Δ_h) x = b` by CG (`d > 0`, `β ≥ 0`), starting
    /// from `x0`. Used for the lagged-motility density step.
    pub fn weighted_solve(&self, d: &[f64], beta: f64, b: &Field, x0: Vec<f64>) -> Result<Field> {
        self.weighted_solve_tol(d, beta, b, x0, self.tolerance)
    }

    /// [`Self::weighted_solve`] with an explicit relative tolerance.
    pub fn weighted_solve_tol(&self, d: &[f64], beta: f64, b: &Field, x0: Vec<f64>, tol: f64) -> Result<Field> {
        self.check(b)?;
        if d.len() != self.grid.len() || x0.len() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        let inv: Vec<f64> = d
            .iter()
            .zip(&self.lap_diag)
            .map(|(di, li)| 1.0 / (di + beta * li))
            .collect();
        let grid = self.grid;
        let apply = |x: &[f64], out: &mut [f64]| {
            laplacian_into(&grid, x, out);
            for i in 0..x.len() {
                out[i] = d[i] * x[i] - beta * out[i];
            }
        };
        let d_max = d.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        let mut x = x0;
        let report = cg::pcg(
            &apply,
            &inv,
            d_max + 2.0 * beta * self.lap_norm,
            b.values(),
            &mut x,
            tol,
            self.max_iter,
            false,
        )?;
        log::trace!(
            "weighted solve: {} iterations, residual {:.2e}",
            report.iterations,
            report.relative_residual
        );
        let out = Field::from_raw(self.grid, x);
        out.check_finite()?;
        Ok(out)
    }
}
