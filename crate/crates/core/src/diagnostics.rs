//! Identity residuals, comparison margins, energy functionals and long-time
//! summaries evaluated on simulation states.
//!
//! Margins follow one sign convention: a margin `≥ 0` means the inequality
//! it measures holds.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evolution::{SolverConfig, State, StepScalars, Trajectory, V_CLAMP};
use crate::grid::{pairwise_sum_by, Field};
use crate::motility::{MotilityClassification, MotilityFunction};
use crate::operators::{faces, gradient_linf, NeumannOperators};

/// `‖v^in‖₁ e^{−t/τ} + ‖u^in‖₁ (1 − e^{−t/τ})`.
pub fn l1_law(t: f64, tau: f64, v_in_l1: f64, u_in_l1: f64) -> f64 {
    let decay = (-t / tau).exp();
    v_in_l1 * decay + u_in_l1 * (1.0 - decay)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConservationRow {
    pub t: f64,
    /// `|∫u − m|Ω||`.
    pub mass_drift: f64,
    pub l1_law_deviation: f64,
    /// `max{‖u^in‖₁, ‖v^in‖₁} − ‖v‖₁`.
    pub l1_bound_margin: f64,
}

/// Mass drift and ‖v‖₁-law deviation for every recorded step.
pub fn conservation_checks(traj: &Trajectory, config: &SolverConfig) -> Vec<ConservationRow> {
    let s0 = &traj.snapshots[0];
    let target = s0.m * config.grid.measure();
    let bound = s0.initial.u_l1.max(s0.initial.v_l1);
    traj.scalars
        .iter()
        .map(|sc: &StepScalars| ConservationRow {
            t: sc.t,
            mass_drift: (sc.mass_u - target).abs(),
            l1_law_deviation: (sc.l1_v - l1_law(sc.t, config.tau, s0.initial.v_l1, s0.initial.u_l1)).abs(),
            l1_bound_margin: bound - sc.l1_v,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    /// `‖w + τΨ − v − τψ − η‖∞`.
    pub key_identity_residual: f64,
    pub key_identity_scale: f64,
    /// `‖(wⁿ⁺¹ − wⁿ)/dt + g − A⁻¹g‖∞` with the scheme's source `g = γ(vⁿ)uⁿ⁺¹`.
    pub w_identity_residual: Option<f64>,
    /// `‖g‖∞`, normalization of `w_identity_residual`.
    pub w_identity_scale: Option<f64>,
    /// Same residual with the collocated source `uⁿ⁺¹γ(vⁿ⁺¹)`; first order in dt.
    pub w_identity_collocated: Option<f64>,
    pub eta_linf: f64,
    /// `eta_bound − ‖η‖∞`.
    pub eta_margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `min(w + τΨ + eta_bound − v − τψ)`.
    pub two_sided_upper: f64,
    /// `min(v + τψ + eta_bound − w − τΨ)`.
    pub two_sided_lower: f64,
    pub two_sided_scale: f64,
    /// `min(Ψ + ‖Γ(v^in)‖∞ − Γ(v))`, monotone γ only.
    pub gamma_comparison_margin: Option<f64>,
    pub gamma_comparison_scale: f64,
    /// `∫(γ(v) − γ(m))(v − m) + m|Ω|γ(2m) − m‖γ(v)‖₁`, monotone γ only.
    pub quadratic_margin: Option<f64>,
    pub quadratic_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    /// `‖∇K[u − m]‖₂²`.
    pub dirichlet_term: f64,
    pub lyapunov_i: f64,
    /// `m∫γ′(v)|∇v|²`, with γ′|∇v|² taken as the face secant
    /// `(γ(v_j) − γ(v_i))(v_j − v_i)/h²`.
    pub d_gradient: f64,
    /// `∫γ(v)(u − m)²`.
    pub d_density: f64,
    /// `m∫(v − m)(γ(v) − γ(m))`.
    pub d_signal: f64,
    pub dissipation_d: f64,
    pub d_scale: f64,
    /// `(Iⁿ⁺¹ − Iⁿ)/dt + Dⁿ⁺¹`.
    pub lyapunov_balance_residual: Option<f64>,
    /// `Iⁿ` with the Γ base point of step n+1.
    pub lyapunov_i_prev: Option<f64>,
    pub psi_l1: f64,
    /// `τ(‖Ψⁿ⁺¹‖₁ − ‖Ψⁿ‖₁)/dt + ‖Ψⁿ⁺¹‖₁ − ∫uⁿ⁺¹γ(vⁿ)`.
    pub psi_l1_ode_residual: Option<f64>,
    pub psi_ode_scale: Option<f64>,
    pub functional_f: f64,
    pub floor_k0: f64,
    pub f_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceMetrics {
    pub u_dev_linf: f64,
    pub v_dev_linf: f64,
    pub grad_v_linf: f64,
}

/// One CSV row per snapshot. Empty cells mean "not applicable".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub step: u64,
    pub mass_u: f64,
    pub mass_drift: f64,
    pub l1_v: f64,
    pub l1_law_deviation: f64,
    pub l1_bound_margin: f64,
    pub linf_u: f64,
    pub linf_v: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub v_running_min: f64,
    pub key_identity_residual: f64,
    pub key_identity_scale: f64,
    pub w_identity_residual: Option<f64>,
    pub w_identity_scale: Option<f64>,
    pub w_identity_collocated: Option<f64>,
    pub eta_linf: f64,
    pub eta_margin: f64,
    pub two_sided_upper: f64,
    pub two_sided_lower: f64,
    pub two_sided_scale: f64,
    pub gamma_comparison_margin: Option<f64>,
    pub gamma_comparison_scale: f64,
    pub lyapunov_i: f64,
    pub dissipation_d: f64,
    pub d_gradient: f64,
    pub d_density: f64,
    pub d_signal: f64,
    pub d_scale: f64,
    pub lyapunov_balance_residual: Option<f64>,
    pub lyapunov_i_prev: Option<f64>,
    pub quadratic_margin: Option<f64>,
    pub quadratic_scale: f64,
    pub psi_l1: f64,
    pub psi_linf: f64,
    pub psi_l1_ode_residual: Option<f64>,
    pub psi_ode_scale: Option<f64>,
    pub functional_f: f64,
    pub floor_k0: f64,
    pub f_scale: f64,
    pub u_dev_linf: f64,
    pub v_dev_linf: f64,
    pub grad_v_linf: f64,
    pub clamp_count: u64,
}

impl DiagnosticsRecord {
    /// Column names in CSV order with their meaning.
    pub const COLUMNS: &'static [(&'static str, &'static str)] = &[
        ("t", "time"),
        ("step", "step index"),
        ("mass_u", "∫u"),
        ("mass_drift", "|∫u − m|Ω||"),
        ("l1_v", "‖v‖₁"),
        ("l1_law_deviation", "|‖v‖₁ − (‖v^in‖₁e^{−t/τ} + ‖u^in‖₁(1 − e^{−t/τ}))|"),
        ("l1_bound_margin", "max{‖u^in‖₁, ‖v^in‖₁} − ‖v‖₁"),
        ("linf_u", "‖u‖∞"),
        ("linf_v", "‖v‖∞"),
        ("min_u", "min u"),
        ("min_v", "min v"),
        ("v_running_min", "min of v over the trajectory so far (Γ base point)"),
        ("key_identity_residual", "‖w + τΨ − v − τψ − η‖∞"),
        ("key_identity_scale", "‖w‖∞ + τ‖Ψ‖∞ + ‖v‖∞"),
        ("w_identity_residual", "‖(wⁿ⁺¹ − wⁿ)/dt + g − A⁻¹g‖∞, g = γ(vⁿ)uⁿ⁺¹"),
        ("w_identity_scale", "‖g‖∞"),
        ("w_identity_collocated", "same residual with g = uⁿ⁺¹γ(vⁿ⁺¹)"),
        ("eta_linf", "‖η‖∞"),
        ("eta_margin", "max{‖u^in‖∞, ‖v^in‖∞} − ‖η‖∞"),
        ("two_sided_upper", "min(w + τΨ + eta_bound − v − τψ)"),
        ("two_sided_lower", "min(v + τψ + eta_bound − w − τΨ)"),
        ("two_sided_scale", "‖w‖∞ + τ‖Ψ‖∞ + ‖v‖∞ + eta_bound"),
        ("gamma_comparison_margin", "min(Ψ + ‖Γ(v^in)‖∞ − Γ(v)); monotone γ only"),
        ("gamma_comparison_scale", "‖Ψ‖∞ + ‖Γ(v^in)‖∞ + ‖Γ(v)‖∞"),
        ("lyapunov_i", "½‖∇K[u − m]‖₂² + mτ‖Γ(v)‖₁ − mγ(m)τ‖v‖₁"),
        ("dissipation_d", "d_gradient + d_density + d_signal"),
        ("d_gradient", "m∫γ′(v)|∇v|² (face secant)"),
        ("d_density", "∫γ(v)(u − m)²"),
        ("d_signal", "m∫(v − m)(γ(v) − γ(m))"),
        ("d_scale", "‖γ(v)‖₁(1 + ‖u‖∞ + ‖v‖∞)²"),
        ("lyapunov_balance_residual", "(Iⁿ⁺¹ − Iⁿ)/dt + Dⁿ⁺¹"),
        ("lyapunov_i_prev", "Iⁿ evaluated with the current Γ base point"),
        (
            "quadratic_margin",
            "∫(γ(v) − γ(m))(v − m) + m|Ω|γ(2m) − m‖γ(v)‖₁; monotone γ only",
        ),
        ("quadratic_scale", "m‖γ(v)‖₁ + m|Ω|γ(2m)"),
        ("psi_l1", "‖Ψ‖₁"),
        ("psi_linf", "‖Ψ‖∞"),
        ("psi_l1_ode_residual", "τ(‖Ψⁿ⁺¹‖₁ − ‖Ψⁿ‖₁)/dt + ‖Ψⁿ⁺¹‖₁ − ∫uⁿ⁺¹γ(vⁿ)"),
        ("psi_ode_scale", "(τ/dt)‖Ψⁿ‖₁ + ∫uⁿ⁺¹γ(vⁿ)"),
        ("functional_f", "‖∇K[u − m]‖₂² + ½∫u(τψ − w + K₀) + τ‖Ψ‖₁"),
        ("floor_k0", "K₀, running max of max(0, max(w − τψ))"),
        ("f_scale", "‖∇K[u − m]‖₂² + ½∫u(τ‖ψ‖∞ + ‖w‖∞ + K₀) + τ‖Ψ‖₁"),
        ("u_dev_linf", "‖u − m‖∞"),
        ("v_dev_linf", "‖v − m‖∞"),
        ("grad_v_linf", "max face difference |v_j − v_i|/h"),
        ("clamp_count", "cumulative number of v clamps below 1e−14"),
    ];
}

/// Evaluator bound to one configuration.
pub struct Diagnostics {
    config: SolverConfig,
    ops: NeumannOperators,
    classification: MotilityClassification,
}

impl Diagnostics {
    /// `v_floor` is used for the motility classification only.
    pub fn new(config: &SolverConfig, v_floor: f64) -> Result<Self> {
        let floor = v_floor.max(V_CLAMP);
        let classification = config.motility.classify(config.tau, floor, (10.0 * floor).max(1e3))?;
        Ok(Diagnostics {
            config: config.clone(),
            ops: NeumannOperators::with_backend(config.grid, config.backend, config.linear_tolerance),
            classification,
        })
    }

    pub fn classification(&self) -> &MotilityClassification {
        &self.classification
    }

    fn mf(&self) -> &MotilityFunction {
        &self.config.motility
    }

    fn gamma_field(&self, v: &Field) -> Field {
        let mf = self.mf();
        v.map(|s| mf.eval(s.max(V_CLAMP)))
    }

    fn consecutive<'a>(prev: Option<&'a State>, state: &State) -> Option<&'a State> {
        prev.filter(|p| p.step + 1 == state.step)
    }

    pub fn identity_residuals(&self, state: &State, prev: Option<&State>) -> Result<IdentityReport> {
        let tau = self.config.tau;
        let eta_linf = state.eta.linf();
        let mut report = IdentityReport {
            key_identity_residual: state.identity_field(tau)?.linf(),
            key_identity_scale: state.identity_scale(tau),
            w_identity_residual: None,
            w_identity_scale: None,
            w_identity_collocated: None,
            eta_linf,
            eta_margin: state.eta_bound - eta_linf,
        };
        if let Some(p) = Self::consecutive(prev, state) {
            let dt = self.config.dt;
            let dw = state.w.sub(&p.w)?.scale(1.0 / dt);
            let residual = |g: &Field| -> Result<f64> {
                let ag = self.ops.helmholtz_solve(g)?;
                Ok(Field::combine(&[&dw, g, &ag], |x| x[0] + x[1] - x[2])?.linf())
            };
            let g = state.u.zip_with(&self.gamma_field(&p.v), |u, gm| u * gm)?;
            let big_g = state.u.zip_with(&self.gamma_field(&state.v), |u, gm| u * gm)?;
            report.w_identity_residual = Some(residual(&g)?);
            report.w_identity_scale = Some(g.linf());
            report.w_identity_collocated = Some(residual(&big_g)?);
        }
        Ok(report)
    }

    pub fn comparison_margins(&self, state: &State) -> Result<ComparisonReport> {
        let tau = self.config.tau;
        let eb = state.eta_bound;
        let fields = [&state.w, &state.big_psi, &state.v, &state.psi];
        let d = Field::combine(&fields, |x| x[0] + tau * x[1] - x[2] - tau * x[3])?;
        let two_sided_upper = d.values().iter().fold(f64::INFINITY, |m, &x| m.min(eb + x));
        let two_sided_lower = d.values().iter().fold(f64::INFINITY, |m, &x| m.min(eb - x));
        let two_sided_scale = state.identity_scale(tau) + eb;

        let mf = self.mf();
        let monotone = self.classification.monotone_nondecreasing;
        let base = state.initial.v_min;
        let big_gamma_v = state.v.map(|s| mf.integral(base, s));
        let gamma_comparison_margin = monotone.then(|| {
            state
                .big_psi
                .values()
                .iter()
                .zip(big_gamma_v.values())
                .fold(f64::INFINITY, |m, (p, g)| m.min(p + state.gamma_vin_linf - g))
        });
        let gamma_comparison_scale = state.big_psi.linf() + state.gamma_vin_linf + big_gamma_v.linf();

        let m = state.m;
        let omega = self.config.grid.measure();
        let gm = mf.eval(m);
        let gamma_v = self.gamma_field(&state.v);
        let cross = Field::combine(&[&gamma_v, &state.v], |x| (x[0] - gm) * (x[1] - m))?.integral();
        let gamma_l1 = gamma_v.reduce().l1;
        let g2m = mf.eval(2.0 * m);
        let quadratic_margin = monotone.then_some(cross + m * omega * g2m - m * gamma_l1);
        Ok(ComparisonReport {
            two_sided_upper,
            two_sided_lower,
            two_sided_scale,
            gamma_comparison_margin,
            gamma_comparison_scale,
            quadratic_margin,
            quadratic_scale: m * gamma_l1 + m * omega * g2m,
        })
    }

    /// `I(u, v)` with Γ based at `v_floor ≤ min v`.
    pub fn lyapunov(&self, state: &State, v_floor: f64) -> Result<(f64, f64)> {
        let m = state.m;
        let tau = self.config.tau;
        let mf = self.mf();
        let e = self.ops.dirichlet_energy(&state.u.offset(-m))?;
        let floor = v_floor.min(state.v.min());
        let big_gamma_l1 = state.v.map(|s| mf.integral(floor, s)).integral();
        let i = 0.5 * e + m * tau * big_gamma_l1 - m * mf.eval(m) * tau * state.v.reduce().l1;
        Ok((i, e))
    }

    /// The three dissipation integrals.
    pub fn dissipation(&self, state: &State) -> Result<(f64, f64, f64)> {
        let m = state.m;
        let grid = self.config.grid;
        let gamma_v = self.gamma_field(&state.v);
        let (g, v) = (gamma_v.values(), state.v.values());
        let fc: Vec<_> = faces(&grid).collect();
        let d_gradient =
            m * pairwise_sum_by(fc.len(), |k| {
                let f = fc[k];
                let h = grid.spacing()[f.axis];
                (g[f.hi] - g[f.lo]) * (v[f.hi] - v[f.lo]) / (h * h)
            }) * grid.cell_volume();
        let d_density = Field::combine(&[&gamma_v, &state.u], |x| x[0] * (x[1] - m) * (x[1] - m))?.integral();
        let gm = self.mf().eval(m);
        let d_signal = m * Field::combine(&[&gamma_v, &state.v], |x| (x[1] - m) * (x[0] - gm))?.integral();
        Ok((d_gradient, d_density, d_signal))
    }

    pub fn energy_report(&self, state: &State, prev: Option<&State>) -> Result<EnergyReport> {
        let tau = self.config.tau;
        let dt = self.config.dt;
        let floor = state.v_running_min;
        let (lyapunov_i, e) = self.lyapunov(state, floor)?;
        let (d_gradient, d_density, d_signal) = self.dissipation(state)?;
        let dissipation_d = d_gradient + d_density + d_signal;
        let gamma_l1 = self.gamma_field(&state.v).reduce().l1;
        let d_scale = gamma_l1 * (1.0 + state.u.linf() + state.v.linf()).powi(2);
        let psi_l1 = state.big_psi.reduce().l1;

        let (mut balance, mut i_prev, mut ode, mut ode_scale) = (None, None, None, None);
        if let Some(p) = Self::consecutive(prev, state) {
            let (ip, _) = self.lyapunov(p, floor)?;
            balance = Some((lyapunov_i - ip) / dt + dissipation_d);
            i_prev = Some(ip);
            let source = state.u.zip_with(&self.gamma_field(&p.v), |u, g| u * g)?.integral();
            let prev_l1 = p.big_psi.reduce().l1;
            ode = Some(tau * (psi_l1 - prev_l1) / dt + psi_l1 - source);
            ode_scale = Some(tau / dt * prev_l1 + source.abs());
        }

        let k0 = state.k0_running;
        let coupling =
            Field::combine(&[&state.u, &state.psi, &state.w], |x| x[0] * (tau * x[1] - x[2] + k0))?.integral();
        let functional_f = e + 0.5 * coupling + tau * psi_l1;
        let f_scale = e + 0.5 * state.u.reduce().l1 * (tau * state.psi.linf() + state.w.linf() + k0) + tau * psi_l1;
        Ok(EnergyReport {
            dirichlet_term: e,
            lyapunov_i,
            d_gradient,
            d_density,
            d_signal,
            dissipation_d,
            d_scale,
            lyapunov_balance_residual: balance,
            lyapunov_i_prev: i_prev,
            psi_l1,
            psi_l1_ode_residual: ode,
            psi_ode_scale: ode_scale,
            functional_f,
            floor_k0: k0,
            f_scale,
        })
    }

    pub fn convergence_metrics(&self, state: &State) -> ConvergenceMetrics {
        convergence_metrics(state)
    }

    /// Full record for `state`; time-derivative residuals need `prev` to be
    /// the state one step earlier.
    pub fn evaluate(&self, state: &State, prev: Option<&State>) -> Result<DiagnosticsRecord> {
        let id = self.identity_residuals(state, prev)?;
        let cmp = self.comparison_margins(state)?;
        let en = self.energy_report(state, prev)?;
        let conv = convergence_metrics(state);
        let u = state.u.reduce();
        let v = state.v.reduce();
        let omega = self.config.grid.measure();
        let init = &state.initial;
        Ok(DiagnosticsRecord {
            t: state.t,
            step: state.step,
            mass_u: u.integral,
            mass_drift: (u.integral - state.m * omega).abs(),
            l1_v: v.l1,
            l1_law_deviation: (v.l1 - l1_law(state.t, self.config.tau, init.v_l1, init.u_l1)).abs(),
            l1_bound_margin: init.u_l1.max(init.v_l1) - v.l1,
            linf_u: u.linf,
            linf_v: v.linf,
            min_u: u.min,
            min_v: v.min,
            v_running_min: state.v_running_min,
            key_identity_residual: id.key_identity_residual,
            key_identity_scale: id.key_identity_scale,
            w_identity_residual: id.w_identity_residual,
            w_identity_scale: id.w_identity_scale,
            w_identity_collocated: id.w_identity_collocated,
            eta_linf: id.eta_linf,
            eta_margin: id.eta_margin,
            two_sided_upper: cmp.two_sided_upper,
            two_sided_lower: cmp.two_sided_lower,
            two_sided_scale: cmp.two_sided_scale,
            gamma_comparison_margin: cmp.gamma_comparison_margin,
            gamma_comparison_scale: cmp.gamma_comparison_scale,
            lyapunov_i: en.lyapunov_i,
            dissipation_d: en.dissipation_d,
            d_gradient: en.d_gradient,
            d_density: en.d_density,
            d_signal: en.d_signal,
            d_scale: en.d_scale,
            lyapunov_balance_residual: en.lyapunov_balance_residual,
            lyapunov_i_prev: en.lyapunov_i_prev,
            quadratic_margin: cmp.quadratic_margin,
            quadratic_scale: cmp.quadratic_scale,
            psi_l1: en.psi_l1,
            psi_linf: state.big_psi.linf(),
            psi_l1_ode_residual: en.psi_l1_ode_residual,
            psi_ode_scale: en.psi_ode_scale,
            functional_f: en.functional_f,
            floor_k0: en.floor_k0,
            f_scale: en.f_scale,
            u_dev_linf: conv.u_dev_linf,
            v_dev_linf: conv.v_dev_linf,
            grad_v_linf: conv.grad_v_linf,
            clamp_count: state.clamp_count,
        })
    }
}

pub fn convergence_metrics(state: &State) -> ConvergenceMetrics {
    let m = state.m;
    ConvergenceMetrics {
        u_dev_linf: state.u.values().iter().fold(0.0, |a, &x| a.max((x - m).abs())),
        v_dev_linf: state.v.values().iter().fold(0.0, |a, &x| a.max((x - m).abs())),
        grad_v_linf: gradient_linf(&state.v),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPlateau {
    pub sup: f64,
    pub third_quarter_max: f64,
    pub last_quarter_max: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundednessSummary {
    pub t_end: f64,
    pub linf_u: SeriesPlateau,
    pub linf_v: SeriesPlateau,
    pub psi_l1: SeriesPlateau,
    pub functional_f: SeriesPlateau,
    pub verdict: Verdict,
    /// `sup_t ‖u‖∞ / ‖u(0)‖∞`.
    pub u_growth_factor: f64,
    /// Least-squares fit `‖v‖∞ ≈ slope·‖Ψ‖₁ + intercept`.
    pub v_vs_psi_slope: f64,
    pub v_vs_psi_intercept: f64,
    /// `(‖Ψ‖₁, ‖Ψ‖∞, ‖v‖∞)` per record.
    pub scatter: Vec<[f64; 3]>,
}

/// Relative growth allowed between the third- and last-quarter maxima.
pub const PLATEAU_TOLERANCE: f64 = 0.01;

fn plateau(
    records: &[DiagnosticsRecord],
    t_end: f64,
    short: bool,
    f: impl Fn(&DiagnosticsRecord) -> f64,
) -> SeriesPlateau {
    let mut sup = f64::NEG_INFINITY;
    let mut q3 = f64::NEG_INFINITY;
    let mut q4 = f64::NEG_INFINITY;
    for r in records {
        let x = f(r);
        sup = sup.max(x);
        if r.t > 0.75 * t_end {
            q4 = q4.max(x);
        } else if r.t >= 0.5 * t_end {
            q3 = q3.max(x);
        }
    }
    let verdict = if short || !q3.is_finite() || !q4.is_finite() {
        Verdict::Inconclusive
    } else if q4 - q3 < PLATEAU_TOLERANCE * q3.abs() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    SeriesPlateau {
        sup,
        third_quarter_max: q3,
        last_quarter_max: q4,
        verdict,
    }
}

/// Plateau verdicts for ‖u‖∞, ‖v‖∞, ‖Ψ‖₁ and F. Runs shorter than `50τ`
/// are inconclusive.
pub fn boundedness_summary(records: &[DiagnosticsRecord], tau: f64) -> BoundednessSummary {
    let t_end = records.last().map_or(0.0, |r| r.t);
    let t0 = records.first().map_or(0.0, |r| r.t);
    let short = t_end - t0 < 50.0 * tau;
    let linf_u = plateau(records, t_end, short, |r| r.linf_u);
    let linf_v = plateau(records, t_end, short, |r| r.linf_v);
    let psi_l1 = plateau(records, t_end, short, |r| r.psi_l1);
    let functional_f = plateau(records, t_end, short, |r| r.functional_f);
    let all = [linf_u.verdict, linf_v.verdict, psi_l1.verdict, functional_f.verdict];
    let verdict = if all.contains(&Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else if all.iter().all(|v| *v == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let u0 = records.first().map_or(f64::NAN, |r| r.linf_u);
    let scatter: Vec<[f64; 3]> = records.iter().map(|r| [r.psi_l1, r.psi_linf, r.linf_v]).collect();
    let (slope, intercept) = affine_fit(&scatter.iter().map(|s| (s[0], s[2])).collect::<Vec<_>>());
    BoundednessSummary {
        t_end,
        linf_u,
        linf_v,
        psi_l1,
        functional_f,
        verdict,
        u_growth_factor: linf_u.sup / u0,
        v_vs_psi_slope: slope,
        v_vs_psi_intercept: intercept,
        scatter,
    }
}

/// Ordinary least squares `y ≈ a x + b`; a degenerate spread in `x` gives
/// slope 0 and the mean of `y`.
pub fn affine_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-300 {
        return (0.0, my);
    }
    let a = sxy / sxx;
    (a, my - a * mx)
}

/// Observed orders `log2(e_k / e_{k+1})` for errors at successively halved dt.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Solver;
    use crate::grid::Grid;
    use crate::operators::cosine_mode;

    fn setup(mf: MotilityFunction, tau: f64, n: usize) -> (Solver, Diagnostics) {
        let c = SolverConfig::new(tau, 0.01, 1.0, Grid::line(n, 1.0).unwrap(), mf);
        let d = Diagnostics::new(&c, 0.1).unwrap();
        (Solver::new(c).unwrap(), d)
    }

    #[test]
    fn l1_law_substitution() {
        // τ = 1, ‖v^in‖₁ = |Ω|, ‖u^in‖₁ = 2|Ω|, t = ln 2
        let omega = 3.0;
        let law = l1_law(std::f64::consts::LN_2, 1.0, omega, 2.0 * omega);
        assert!((law - 1.5 * omega).abs() < 1e-14);
    }

    #[test]
    fn constant_scenario_conservation() {
        let (solver, _) = setup(MotilityFunction::linear(), 1.0, 8);
        let g = *solver.operators().grid();
        let traj = solver.run(&Field::constant(g, 1.0), &Field::constant(g, 1.0)).unwrap();
        for row in conservation_checks(&traj, solver.config()) {
            assert_eq!(row.mass_drift, 0.0);
            assert!(row.l1_law_deviation < 1e-14);
            assert!(row.l1_bound_margin >= -1e-15);
        }
        // ‖u^in‖₁ ≠ ‖v^in‖₁: the law deviation is the backward-Euler gap, O(dt)
        let traj = solver.run(&Field::constant(g, 2.0), &Field::constant(g, 1.0)).unwrap();
        let rows = conservation_checks(&traj, solver.config());
        let worst = rows.iter().map(|r| r.l1_law_deviation).fold(0.0, f64::max);
        assert!(worst > 0.0 && worst < 0.01);
    }

    #[test]
    fn identities_at_t0_and_after_steps() {
        let (solver, diag) = setup(MotilityFunction::sine(), 2.0, 32);
        let g = *solver.operators().grid();
        let u0 = cosine_mode(&g, &[1]).scale(0.5).offset(1.0);
        let v0 = cosine_mode(&g, &[2]).scale(0.3).offset(1.2);
        let s0 = solver.init_state(&u0, &v0).unwrap();
        let r = diag.identity_residuals(&s0, None).unwrap();
        assert_eq!(r.key_identity_residual, 0.0);
        assert!(r.w_identity_residual.is_none());
        assert!(r.eta_margin >= 0.0);
        let s1 = solver.step(&s0).unwrap();
        let r = diag.identity_residuals(&s1, Some(&s0)).unwrap();
        assert!(r.key_identity_residual <= 1e-10 * r.key_identity_scale);
        assert!(r.w_identity_residual.unwrap() <= 10.0 * 1e-12 * r.w_identity_scale.unwrap());
        assert!(r.w_identity_collocated.unwrap() > r.w_identity_residual.unwrap());
        // a non-consecutive pair gives no time-derivative residual
        let s2 = solver.step(&s1).unwrap();
        assert!(diag
            .identity_residuals(&s2, Some(&s0))
            .unwrap()
            .w_identity_residual
            .is_none());
    }

    #[test]
    fn eta_margin_for_shifted_signal() {
        let (solver, diag) = setup(MotilityFunction::linear(), 1.0, 8);
        let g = *solver.operators().grid();
        let m = 1.0;
        let mut s = solver
            .init_state(&Field::constant(g, m), &Field::constant(g, m + 1.0))
            .unwrap();
        for n in 1..=10 {
            s = solver.step(&s).unwrap();
            let r = diag.identity_residuals(&s, None).unwrap();
            assert!((r.eta_linf - (1.0f64 + 0.01).powi(-n)).abs() < 1e-14);
            assert!(r.eta_margin >= 0.0);
        }
    }

    #[test]
    fn homogeneous_margins_and_energy() {
        let m = 1.7;
        let (solver, diag) = setup(MotilityFunction::linear(), 1.0, 16);
        let g = *solver.operators().grid();
        let s = solver
            .init_state(&Field::constant(g, m), &Field::constant(g, m))
            .unwrap();
        let c = diag.comparison_margins(&s).unwrap();
        let expected = m * 1.0 * (2.0 * m) - m * 1.0 * m;
        assert!((c.quadratic_margin.unwrap() - expected).abs() < 1e-13);
        assert_eq!(c.gamma_comparison_margin.unwrap(), 0.0);
        let e = diag.energy_report(&s, None).unwrap();
        assert_eq!(e.dissipation_d, 0.0);
        assert_eq!(e.dirichlet_term, 0.0);
        let conv = diag.convergence_metrics(&s);
        assert_eq!((conv.u_dev_linf, conv.v_dev_linf, conv.grad_v_linf), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lyapunov_of_homogeneous_linear_state() {
        let (m, tau) = (2.0, 0.5);
        let (solver, diag) = setup(MotilityFunction::linear(), tau, 16);
        let g = *solver.operators().grid();
        let s = solver
            .init_state(&Field::constant(g, m), &Field::constant(g, m))
            .unwrap();
        let (i, _) = diag.lyapunov(&s, 1.0).unwrap();
        let expected = -m * tau * 1.0 * (m * m + 1.0) / 2.0;
        assert!((i - expected).abs() < 1e-13, "{i} vs {expected}");
    }

    #[test]
    fn gamma_comparison_at_t0() {
        let (solver, diag) = setup(MotilityFunction::Log1p, 1.0, 32);
        let g = *solver.operators().grid();
        let v0 = cosine_mode(&g, &[1]).scale(0.4).offset(1.0);
        let s = solver.init_state(&Field::constant(g, 1.0), &v0).unwrap();
        let c = diag.comparison_margins(&s).unwrap();
        let base = v0.min();
        let max_gamma = v0
            .values()
            .iter()
            .map(|&x| MotilityFunction::Log1p.integral(base, x))
            .fold(0.0, f64::max);
        assert_eq!(c.gamma_comparison_margin.unwrap(), s.gamma_vin_linf - max_gamma);
        assert!(c.gamma_comparison_margin.unwrap() >= 0.0);
    }

    #[test]
    fn monotone_gating() {
        let (solver, diag) = setup(MotilityFunction::sine(), 2.0, 8);
        let g = *solver.operators().grid();
        let s = solver
            .init_state(&Field::constant(g, 1.0), &Field::constant(g, 1.0))
            .unwrap();
        let c = diag.comparison_margins(&s).unwrap();
        assert!(c.gamma_comparison_margin.is_none() && c.quadratic_margin.is_none());
    }

    #[test]
    fn mode_metrics() {
        let n = 128;
        let (solver, diag) = setup(MotilityFunction::linear(), 1.0, n);
        let g = *solver.operators().grid();
        let a = 0.25;
        let m = 1.0;
        let v0 = cosine_mode(&g, &[1]).scale(a).offset(m);
        let s = solver.init_state(&Field::constant(g, m), &v0).unwrap();
        let c = diag.convergence_metrics(&s);
        let max_cos = (std::f64::consts::PI * 0.5 / n as f64).cos();
        assert!((c.v_dev_linf - a * max_cos).abs() < 1e-14);
        let h = 1.0 / n as f64;
        assert!((c.grad_v_linf - a * std::f64::consts::PI).abs() < 2.0 * a * h * h * 10.0);
    }

    #[test]
    fn psi_ode_and_balance() {
        let (solver, diag) = setup(MotilityFunction::linear(), 1.0, 64);
        let g = *solver.operators().grid();
        let u0 = cosine_mode(&g, &[1]).scale(0.5).offset(1.0);
        let v0 = cosine_mode(&g, &[1]).scale(0.2).offset(0.5);
        let mut s = solver.init_state(&u0, &v0).unwrap();
        for _ in 0..20 {
            let next = solver.step(&s).unwrap();
            let e = diag.energy_report(&next, Some(&s)).unwrap();
            assert!(e.psi_l1_ode_residual.unwrap().abs() <= 10.0 * 1e-12 * e.psi_ode_scale.unwrap());
            let bal = e.lyapunov_balance_residual.unwrap();
            // I decreases up to the O(dt) balance residual
            assert!(e.lyapunov_i <= e.lyapunov_i_prev.unwrap() + bal.abs() * 0.01 + 1e-14);
            assert!(e.d_gradient >= 0.0 && e.d_density >= 0.0 && e.d_signal >= 0.0);
            assert!(e.functional_f >= -1e-10 * e.f_scale);
            s = next;
        }
    }

    #[test]
    fn record_columns_match_csv_header() {
        let (solver, diag) = setup(MotilityFunction::linear(), 1.0, 8);
        let g = *solver.operators().grid();
        let s = solver
            .init_state(&Field::constant(g, 1.0), &Field::constant(g, 1.0))
            .unwrap();
        let rec = diag.evaluate(&s, None).unwrap();
        let mut w = csv::Writer::from_writer(vec![]);
        w.serialize(rec).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        let names: Vec<&str> = DiagnosticsRecord::COLUMNS.iter().map(|c| c.0).collect();
        assert_eq!(header, names.join(","));
    }

    fn record(t: f64, x: f64) -> DiagnosticsRecord {
        let (solver, diag) = setup(MotilityFunction::linear(), 1.0, 4);
        let g = *solver.operators().grid();
        let s = solver
            .init_state(&Field::constant(g, 1.0), &Field::constant(g, 1.0))
            .unwrap();
        let mut r = diag.evaluate(&s, None).unwrap();
        r.t = t;
        r.linf_u = x;
        r.linf_v = x;
        r.psi_l1 = x;
        r.functional_f = x;
        r
    }

    #[test]
    fn plateau_verdicts() {
        let constant: Vec<_> = (0..=100).map(|k| record(k as f64, 2.0)).collect();
        let s = boundedness_summary(&constant, 1.0);
        assert_eq!(s.verdict, Verdict::Pass);
        assert_eq!(s.u_growth_factor, 1.0);
        let growing: Vec<_> = (0..=100).map(|k| record(k as f64, 1.0 + k as f64)).collect();
        let s = boundedness_summary(&growing, 1.0);
        assert_eq!(s.verdict, Verdict::Fail);
        assert!((s.u_growth_factor - 101.0).abs() < 1e-12);
        let s = boundedness_summary(&constant, 3.0);
        assert_eq!(s.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn fit_and_orders() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        let (a, b) = affine_fit(&pts);
        assert!((a - 3.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let o = observed_orders(&[4.0, 2.0, 1.0]);
        assert_eq!(o, vec![1.0, 1.0]);
    }
}
