//! Time integration of the coupled cell/signal system together with the
//! auxiliary fields `w`, `Ψ`, `ψ`, `η`.
//!
//! Every field except `u` advances with the backward-Euler propagator
//! `(σI + A)⁻¹`, `σ = τ/dt`. The density step is implicit in `u` with the
//! motility lagged at `vⁿ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::motility::MotilityFunction;
use crate::operators::{Backend, NeumannOperators, DEFAULT_TOLERANCE};

/// Lower clamp applied to `v` before evaluating γ.
pub const V_CLAMP: f64 = 1e-14;

/// Default relative tolerance of the discrete identity checks.
pub const DEFAULT_IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tau: f64,
    pub dt: f64,
    pub t_end: f64,
    pub grid: Grid,
    pub motility: MotilityFunction,
    pub linear_tolerance: f64,
    pub identity_tolerance: f64,
    pub snapshot_stride: usize,
    pub backend: Backend,
}

impl SolverConfig {
    pub fn new(tau: f64, dt: f64, t_end: f64, grid: Grid, motility: MotilityFunction) -> Self {
        SolverConfig {
            tau,
            dt,
            t_end,
            grid,
            motility,
            linear_tolerance: DEFAULT_TOLERANCE,
            identity_tolerance: DEFAULT_IDENTITY_TOLERANCE,
            snapshot_stride: 1,
            backend: Backend::Spectral,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive (fully parabolic case)".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.dt < self.t_end) {
            return Err(Error::Config(format!(
                "t_end must exceed dt, got t_end = {}, dt = {}",
                self.t_end, self.dt
            )));
        }
        if !(self.linear_tolerance > 0.0 && self.linear_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "linear_tolerance must lie in (0, 1), got {}",
                self.linear_tolerance
            )));
        }
        if !(self.identity_tolerance > 0.0) {
            return Err(Error::Config("identity_tolerance must be positive".into()));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be at least 1".into()));
        }
        self.motility.validate()
    }

    /// Number of steps needed to reach `t_end`.
    pub fn total_steps(&self) -> u64 {
        let n = self.t_end / self.dt;
        // tolerate representation error in t_end/dt
        (n - 1e-9 * n.max(1.0)).ceil() as u64
    }

    pub fn sigma(&self) -> f64 {
        self.tau / self.dt
    }
}

/// Scalars of the initial data, fixed at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialSummary {
    pub u_l1: f64,
    pub v_l1: f64,
    pub u_linf: f64,
    pub v_linf: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// Complete simulation state at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub step: u64,
    pub u: Field,
    pub v: Field,
    pub w: Field,
    /// Ψ, the forced heat-equation auxiliary field.
    pub big_psi: Field,
    /// ψ = A⁻¹Ψ.
    pub psi: Field,
    pub eta: Field,
    /// Conserved mean of `u`.
    pub m: f64,
    /// ‖Γ(v^in)‖∞ with Γ based at `min v^in`.
    pub gamma_vin_linf: f64,
    /// max{‖u^in‖∞, ‖v^in‖∞}.
    pub eta_bound: f64,
    pub v_running_min: f64,
    /// Running max over the trajectory of `max(0, max(w − τψ))`.
    pub k0_running: f64,
    /// Number of cells where `v` was clamped before evaluating γ.
    pub clamp_count: u64,
    pub initial: InitialSummary,
}

impl State {
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// `w + τΨ − v − τψ − η`, which vanishes identically.
    pub fn identity_field(&self, tau: f64) -> Result<Field> {
        Field::combine(&[&self.w, &self.big_psi, &self.v, &self.psi, &self.eta], |x| {
            x[0] + tau * x[1] - x[2] - tau * x[3] - x[4]
        })
    }

    /// Normalization `‖w‖∞ + τ‖Ψ‖∞ + ‖v‖∞` of the identity residual.
    pub fn identity_scale(&self, tau: f64) -> f64 {
        self.w.linf() + tau * self.big_psi.linf() + self.v.linf()
    }

    pub fn fields(&self) -> [(&'static str, &Field); 6] {
        [
            ("u", &self.u),
            ("v", &self.v),
            ("w", &self.w),
            ("Psi", &self.big_psi),
            ("psi", &self.psi),
            ("eta", &self.eta),
        ]
    }
}

/// Per-step scalar series entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScalars {
    pub step: u64,
    pub t: f64,
    pub mass_u: f64,
    pub l1_v: f64,
    pub linf_u: f64,
    pub linf_v: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub psi_l1: f64,
    pub psi_linf: f64,
}

impl StepScalars {
    pub fn of(state: &State) -> Self {
        let u = state.u.reduce();
        let v = state.v.reduce();
        let p = state.big_psi.reduce();
        StepScalars {
            step: state.step,
            t: state.t,
            mass_u: u.integral,
            l1_v: v.l1,
            linf_u: u.linf,
            linf_v: v.linf,
            min_u: u.min,
            min_v: v.min,
            psi_l1: p.l1,
            psi_linf: p.linf,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// States at `t = 0`, every `snapshot_stride` steps, and the last step.
    pub snapshots: Vec<State>,
    pub scalars: Vec<StepScalars>,
    /// Set when the run stopped before `t_end`.
    pub abort_reason: Option<String>,
    pub sup_u_linf: f64,
    pub sup_v_linf: f64,
    pub final_state: State,
}

/// Stepper bound to one configuration, holding the operator plans.
pub struct Solver {
    config: SolverConfig,
    ops: NeumannOperators,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let ops = NeumannOperators::with_backend(config.grid, config.backend, config.linear_tolerance);
        Ok(Solver { config, ops })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn operators(&self) -> &NeumannOperators {
        &self.ops
    }

    pub fn init_state(&self, u_in: &Field, v_in: &Field) -> Result<State> {
        let grid = self.config.grid;
        if *u_in.grid() != grid || *v_in.grid() != grid {
            return Err(Error::GridMismatch);
        }
        u_in.check_finite()?;
        v_in.check_finite()?;
        let us = u_in.reduce();
        let vs = v_in.reduce();
        if us.min < 0.0 {
            return Err(Error::InitialData(format!("u^in has negative minimum {}", us.min)));
        }
        if us.max == 0.0 {
            return Err(Error::InitialData("u^in is identically zero".into()));
        }
        if vs.min <= 0.0 {
            return Err(Error::InitialData(format!(
                "v^in must be strictly positive (minimum {})",
                vs.min
            )));
        }
        let mf = &self.config.motility;
        let gamma_vin_linf = v_in
            .values()
            .iter()
            .map(|&s| mf.integral(vs.min, s))
            .fold(0.0, f64::max);
        let w = self.ops.helmholtz_solve(u_in)?;
        let eta = w.sub(v_in)?;
        let zero = Field::zeros(grid);
        let k0 = k0_candidate(&w, &zero, self.config.tau);
        Ok(State {
            t: 0.0,
            step: 0,
            u: u_in.clone(),
            v: v_in.clone(),
            w,
            big_psi: zero.clone(),
            psi: zero,
            eta,
            m: u_in.mean(),
            gamma_vin_linf,
            eta_bound: us.linf.max(vs.linf),
            v_running_min: vs.min,
            k0_running: k0,
            clamp_count: 0,
            initial: InitialSummary {
                u_l1: us.l1,
                v_l1: vs.l1,
                u_linf: us.linf,
                v_linf: vs.linf,
                v_min: vs.min,
                v_max: vs.max,
            },
        })
    }

    /// `γ(vⁿ)` per cell, with `v` clamped below at [`V_CLAMP`]. Returns the
    /// values and the number of clamped cells.
    pub fn motility_field(&self, v: &Field) -> (Vec<f64>, u64) {
        let mf = &self.config.motility;
        let mut clamps = 0;
        let g = v
            .values()
            .iter()
            .map(|&s| {
                if s < V_CLAMP {
                    clamps += 1;
                }
                mf.eval(s.max(V_CLAMP))
            })
            .collect();
        (g, clamps)
    }

    /// Solves `(diag(1/γ) − dtΔ) q = uⁿ` until the source defect `γ·r` is
    /// below `tol·‖q‖∞` pointwise, not only in the relative 2-norm.
    fn density_solve(&self, gamma: &[f64], inv_gamma: &[f64], u: &Field, q0: Vec<f64>) -> Result<Field> {
        let dt = self.config.dt;
        let target = self.ops.tolerance();
        let mut tol = target;
        let mut q = self.ops.weighted_solve_tol(inv_gamma, dt, u, q0, tol)?;
        for _ in 0..4 {
            let lap = self.ops.laplacian(&q)?;
            let defect = (0..q.values().len())
                .map(|i| (gamma[i] * (u.values()[i] - q.values()[i] * inv_gamma[i] + dt * lap.values()[i])).abs())
                .fold(0.0, f64::max);
            let bound = target * q.linf();
            if defect <= bound || tol < 1e3 * f64::EPSILON * target {
                break;
            }
            tol *= 0.5 * bound / defect;
            q = self.ops.weighted_solve_tol(inv_gamma, dt, u, q.into_values(), tol)?;
        }
        Ok(q)
    }

    /// Advances one step of size `dt`.
    pub fn step(&self, s: &State) -> Result<State> {
        let cfg = &self.config;
        let (dt, tau) = (cfg.dt, cfg.tau);
        let sigma = cfg.sigma();
        let step = s.step + 1;
        let t = step as f64 * dt;
        let abort = |reason: String| Error::StepAborted { t, reason };

        let (gamma, clamps) = self.motility_field(&s.v);
        if clamps > 0 {
            log::warn!("step {step}: v clamped below {V_CLAMP:e} in {clamps} cells");
        }
        if let Some(i) = gamma.iter().position(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(abort(format!(
                "motility {} at cell {i} (v = {})",
                gamma[i],
                s.v.values()[i]
            )));
        }

        // density: q = γ(vⁿ)uⁿ⁺¹ solves (diag(1/γ) − dtΔ) q = uⁿ
        let inv_gamma: Vec<f64> = gamma.iter().map(|g| 1.0 / g).collect();
        let q0: Vec<f64> = gamma.iter().zip(s.u.values()).map(|(g, u)| g * u).collect();
        let q = self
            .density_solve(&gamma, &inv_gamma, &s.u, q0)
            .map_err(|e| abort(format!("density solve: {e}")))?;
        // uⁿ⁺¹ = uⁿ + dtΔq keeps mass and the w-identity exact regardless of
        // the solver residual
        let u = s.u.axpy(dt, &self.ops.laplacian(&q)?)?;

        let v = self.ops.shifted_solve(&s.v.scale(sigma).add(&u)?, sigma)?;
        let big_psi = self.ops.shifted_solve(&s.big_psi.scale(sigma).add(&q)?, sigma)?;
        let psi = self.ops.helmholtz_solve(&big_psi)?;
        let eta = self.ops.heat_step(&s.eta, dt, tau)?;
        let w = self.ops.helmholtz_solve(&u)?;

        for (name, f) in [("u", &u), ("v", &v), ("Psi", &big_psi), ("eta", &eta)] {
            if let Err(e) = f.check_finite() {
                return Err(abort(format!("{name}: {e}")));
            }
        }
        let k0 = k0_candidate(&w, &psi, tau);
        Ok(State {
            t,
            step,
            v_running_min: s.v_running_min.min(v.min()),
            k0_running: s.k0_running.max(k0),
            u,
            v,
            w,
            big_psi,
            psi,
            eta,
            m: s.m,
            gamma_vin_linf: s.gamma_vin_linf,
            eta_bound: s.eta_bound,
            clamp_count: s.clamp_count + clamps,
            initial: s.initial,
        })
    }

    pub fn run(&self, u_in: &Field, v_in: &Field) -> Result<Trajectory> {
        self.run_with_observer(u_in, v_in, |_, _| {})
    }

    /// Runs to `t_end`, calling `observe(prev, next)` after every step.
    pub fn run_with_observer(
        &self,
        u_in: &Field,
        v_in: &Field,
        observe: impl FnMut(&State, &State),
    ) -> Result<Trajectory> {
        let s0 = self.init_state(u_in, v_in)?;
        Ok(self.run_from(s0, observe))
    }

    /// Continues from `state` until `t_end`. A failing step ends the run
    /// with `abort_reason` set and the last good state kept.
    pub fn run_from(&self, state: State, mut observe: impl FnMut(&State, &State)) -> Trajectory {
        let total = self.config.total_steps();
        let stride = self.config.snapshot_stride as u64;
        let mut scalars = vec![StepScalars::of(&state)];
        let mut snapshots = vec![state.clone()];
        let outcome = self.advance(state, |prev, next| {
            observe(prev, next);
            scalars.push(StepScalars::of(next));
            if next.step % stride == 0 || next.step == total {
                snapshots.push(next.clone());
            }
            Ok(())
        });
        if snapshots.last().map(|s| s.step) != Some(outcome.final_state.step) {
            snapshots.push(outcome.final_state.clone());
        }
        Trajectory {
            snapshots,
            scalars,
            abort_reason: outcome.abort_reason,
            sup_u_linf: outcome.sup_u_linf,
            sup_v_linf: outcome.sup_v_linf,
            final_state: outcome.final_state,
        }
    }

    /// Steps from `state` to `t_end` without storing intermediate states.
    /// An error from the solver or from `observe` ends the run early.
    pub fn advance(&self, state: State, observe: impl FnMut(&State, &State) -> Result<()>) -> RunOutcome {
        self.advance_to(state, self.config.total_steps(), observe)
    }

    /// As [`Solver::advance`], stopping after step `last` (capped at the
    /// configured end).
    pub fn advance_to(
        &self,
        state: State,
        last: u64,
        mut observe: impl FnMut(&State, &State) -> Result<()>,
    ) -> RunOutcome {
        let total = last.min(self.config.total_steps());
        let mut sup_u = state.u.linf();
        let mut sup_v = state.v.linf();
        let mut current = state;
        let mut abort_reason = None;
        while current.step < total {
            let next = match self.step(&current) {
                Ok(next) => next,
                Err(e) => {
                    log::error!("run aborted: {e}");
                    abort_reason = Some(e.to_string());
                    break;
                }
            };
            if let Err(e) = observe(&current, &next) {
                log::error!("run stopped by observer: {e}");
                abort_reason = Some(e.to_string());
                break;
            }
            sup_u = sup_u.max(next.u.linf());
            sup_v = sup_v.max(next.v.linf());
            current = next;
        }
        RunOutcome {
            final_state: current,
            abort_reason,
            sup_u_linf: sup_u,
            sup_v_linf: sup_v,
        }
    }
}

/// Result of [`Solver::advance`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub final_state: State,
    pub abort_reason: Option<String>,
    pub sup_u_linf: f64,
    pub sup_v_linf: f64,
}

fn k0_candidate(w: &Field, psi: &Field, tau: f64) -> f64 {
    w.values()
        .iter()
        .zip(psi.values())
        .map(|(w, p)| w - tau * p)
        .fold(0.0, f64::max)
}

/// Builds an initial state without keeping the solver.
pub fn init_state(config: &SolverConfig, u_in: &Field, v_in: &Field) -> Result<State> {
    Solver::new(config.clone())?.init_state(u_in, v_in)
}

/// One step without keeping the solver. Prefer [`Solver::step`] in loops.
pub fn step(state: &State, config: &SolverConfig) -> Result<State> {
    Solver::new(config.clone())?.step(state)
}

pub fn run(config: &SolverConfig, u_in: &Field, v_in: &Field) -> Result<Trajectory> {
    Solver::new(config.clone())?.run(u_in, v_in)
}
