//! Jacobi-preconditioned conjugate gradients with true-residual restarts.

use crate::error::{Error, Result};
use crate::grid::pairwise_sum_by;

#[derive(Clone, Copy, Debug)]
pub(crate) struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum_by(a.len(), |i| a[i] * b[i])
}

fn remove_mean(x: &mut [f64]) {
    let mean = pairwise_sum_by(x.len(), |i| x[i]) / x.len() as f64;
    for v in x {
        *v -= mean;
    }
}

/// Solves `A x = b` for symmetric positive (semi-)definite `A`.
///
/// `x` holds the initial guess on entry. With `mean_zero` the iteration runs on
/// the complement of constants, which is how the singular Neumann Poisson
/// problem is handled; `b` must then already be mean-free.
///
/// Stops when the true residual satisfies `‖b − A x‖₂ ≤ tol ‖b‖₂`. The
/// recursively updated residual drifts from the true one, so convergence is
/// always confirmed against a freshly computed residual and the iteration is
/// restarted from the current iterate when the two disagree.
///
/// The residual `b − A x` cannot be evaluated more accurately than about
/// `ε ‖A‖ ‖x‖`. When restarts stagnate, a residual within a small multiple of
/// that floor is accepted even if it exceeds `tol ‖b‖₂`; `a_norm` is an upper
/// bound on `‖A‖₂`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pcg(
    apply: &dyn Fn(&[f64], &mut [f64]),
    inv_diag: &[f64],
    a_norm: f64,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    mean_zero: bool,
) -> Result<CgReport> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = tol * b_norm;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut best = f64::INFINITY;

    const MAX_RESTARTS: usize = 8;
    for _ in 0..MAX_RESTARTS {
        apply(x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        if mean_zero {
            remove_mean(&mut r);
        }
        let true_norm = dot(&r, &r).sqrt();
        if true_norm <= target {
            if mean_zero {
                remove_mean(x);
            }
            return Ok(CgReport {
                iterations,
                relative_residual: true_norm / b_norm,
            });
        }
        // the rounding floor has been reached: further restarts cannot help
        if true_norm >= 0.5 * best {
            break;
        }
        best = true_norm;

        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        if mean_zero {
            remove_mean(&mut z);
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if mean_zero {
                remove_mean(&mut r);
            }
            // aim below the target so the true residual usually passes
            if dot(&r, &r).sqrt() <= 0.25 * target {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            if mean_zero {
                remove_mean(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations >= max_iter {
            break;
        }
    }

    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    if mean_zero {
        remove_mean(&mut r);
    }
    let rel = dot(&r, &r).sqrt() / b_norm;
    let floor = 16.0 * f64::EPSILON * a_norm * dot(x, x).sqrt() / b_norm;
    if rel <= tol.max(floor) {
        if mean_zero {
            remove_mean(x);
        }
        return Ok(CgReport {
            iterations,
            relative_residual: rel,
        });
    }
    Err(Error::NotConverged {
        iterations,
        residual: rel,
    })
}
