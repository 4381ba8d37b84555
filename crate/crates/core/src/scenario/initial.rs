//! Initial fields from an [`InitialSpec`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::operators::cosine_mode;

use super::config::InitialSpec;

/// Builds `(u_in, v_in)`. The same `seed` always yields the same bits.
pub fn make_initial(spec: &InitialSpec, grid: &Grid, seed: u64) -> Result<(Field, Field)> {
    let (u, v) = match spec {
        InitialSpec::Homogeneous { m, v_mean } => (Field::constant(*grid, *m), Field::constant(*grid, *v_mean)),
        InitialSpec::Perturbed {
            m,
            amplitude,
            modes,
            noise,
            v_mean,
            v_amplitude,
            v_modes,
        } => {
            let u_smooth = perturbation(grid, *m, *amplitude, modes)?;
            let mut u = u_smooth.clone();
            if *noise != 0.0 {
                u = u.add(&noise_field(grid, *noise, seed))?;
            }
            // pin the mean to m against rounding in the mode sums
            let u = u.offset(*m - u.mean());
            let u_floor = closure_min(grid, *m, *amplitude, modes).min(u.min());
            if u_floor < 0.0 {
                return Err(Error::InitialData(format!("u^in has negative minimum {u_floor}")));
            }
            (u, v_perturbed(grid, *v_mean, *v_amplitude, v_modes)?)
        }
        InitialSpec::Bump {
            center,
            width,
            mass,
            v_mean,
            v_amplitude,
            v_modes,
        } => {
            let g = Field::from_fn(*grid, |x| {
                let r2: f64 = (0..grid.dim()).map(|a| (x[a] - center[a]).powi(2)).sum();
                (-0.5 * r2 / (width * width)).exp()
            });
            let total = g.integral();
            if !(total > 0.0) {
                return Err(Error::InitialData("bump width too small to resolve on the grid".into()));
            }
            (
                g.scale(mass / total),
                v_perturbed(grid, *v_mean, *v_amplitude, v_modes)?,
            )
        }
        InitialSpec::FromFile { u_path, v_path } => (read_field(u_path, grid)?, read_field(v_path, grid)?),
    };
    Ok((u, v))
}

fn perturbation(grid: &Grid, base: f64, amp: f64, modes: &[Vec<usize>]) -> Result<Field> {
    let mut f = Field::constant(*grid, base);
    for k in modes {
        check_mode(grid, k)?;
        f = f.axpy(amp, &cosine_mode(grid, k))?;
    }
    Ok(f)
}

fn check_mode(grid: &Grid, k: &[usize]) -> Result<()> {
    for (a, &ka) in k.iter().enumerate().take(grid.dim()) {
        if ka >= grid.cells()[a] {
            return Err(Error::Config(format!(
                "initial mode index {ka} on axis {a} is not resolved by {} cells",
                grid.cells()[a]
            )));
        }
    }
    Ok(())
}

/// Minimum of `base + amp·Σ cos-modes` over cell centers and cell faces,
/// which include the domain corners where every mode is ±1.
fn closure_min(grid: &Grid, base: f64, amp: f64, modes: &[Vec<usize>]) -> f64 {
    let dim = grid.dim();
    let n: Vec<usize> = grid.cells().to_vec();
    // half-cell lattice: index j ↦ x = j·h/2
    let counts: Vec<usize> = n.iter().map(|&c| 2 * c + 1).collect();
    let total: usize = counts.iter().product();
    let pi = std::f64::consts::PI;
    (0..total)
        .map(|flat| {
            let j = if dim == 1 {
                [flat, 0]
            } else {
                [flat / counts[1], flat % counts[1]]
            };
            let mut s = base;
            for k in modes {
                let mut prod = 1.0;
                for a in 0..dim {
                    // cos(kπ·j/(2n)), exact at the extremes
                    let den = 2 * n[a];
                    prod *= match (k.get(a).copied().unwrap_or(0) * j[a]) % (2 * den) {
                        0 => 1.0,
                        r if r == den => -1.0,
                        r => (pi * r as f64 / den as f64).cos(),
                    };
                }
                s += amp * prod;
            }
            s
        })
        .fold(f64::INFINITY, f64::min)
}

fn v_perturbed(grid: &Grid, mean: f64, amp: f64, modes: &[Vec<usize>]) -> Result<Field> {
    let v = perturbation(grid, mean, amp, modes)?;
    let floor = closure_min(grid, mean, amp, modes).min(v.min());
    if floor <= 0.0 {
        return Err(Error::InitialData(format!("v^in has non-positive minimum {floor}")));
    }
    Ok(v)
}

/// Uniform noise in `[−a, a]` with its mean removed.
fn noise_field(grid: &Grid, a: f64, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-a..=a)).collect();
    let f = Field::from_values(*grid, values).expect("length matches grid");
    let mean = f.mean();
    f.offset(-mean)
}

/// Reads whitespace-separated values in row-major order.
pub fn read_field(path: &Path, grid: &Grid) -> Result<Field> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| {
            t.parse::<f64>()
                .map_err(|_| Error::InitialData(format!("{}: entry {i} `{t}` is not a number", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != grid.len() {
        return Err(Error::InitialData(format!(
            "{}: expected {} values, found {}",
            path.display(),
            grid.len(),
            values.len()
        )));
    }
    Field::from_values(*grid, values)
}
