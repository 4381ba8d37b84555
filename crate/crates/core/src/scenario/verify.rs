//! Invariant suites behind the `verify` command.
//!
//! Every check is a [`MarginRow`]: a worst-case normalized value compared
//! against a threshold. Rows with `pass = None` are reported only.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{Diagnostics, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::evolution::{RunOutcome, Solver, SolverConfig, StepScalars};
use crate::grid::{Field, Grid};
use crate::operators::{cosine_mode, Backend, NeumannOperators};

use super::config::Scenario;
use super::initial::make_initial;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Operators,
    Identities,
    Energy,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "operators" => Ok(Suite::Operators),
            "identities" => Ok(Suite::Identities),
            "energy" => Ok(Suite::Energy),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite `{other}` (expected operators, identities, energy or all)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginRow {
    pub suite: &'static str,
    pub check: String,
    /// Worst observed normalized value.
    pub value: f64,
    pub threshold: f64,
    /// `"<="` or `">="`: how `value` must compare to `threshold`.
    pub relation: &'static str,
    pub pass: Option<bool>,
}

impl MarginRow {
    fn at_most(suite: &'static str, check: impl Into<String>, value: f64, threshold: f64) -> Self {
        MarginRow {
            suite,
            check: check.into(),
            value,
            threshold,
            relation: "<=",
            pass: Some(value <= threshold),
        }
    }

    fn at_least(suite: &'static str, check: impl Into<String>, value: f64, threshold: f64) -> Self {
        MarginRow {
            suite,
            check: check.into(),
            value,
            threshold,
            relation: ">=",
            pass: Some(value >= threshold),
        }
    }

    fn info(suite: &'static str, check: impl Into<String>, value: f64) -> Self {
        MarginRow {
            suite,
            check: check.into(),
            value,
            threshold: f64::NAN,
            relation: "",
            pass: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub rows: Vec<MarginRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> Vec<&MarginRow> {
        self.rows.iter().filter(|r| r.pass == Some(false)).collect()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<11} {:<52} {:>12} {:>2} {:>10}  {}\n",
            "suite", "check", "value", "", "threshold", "status"
        );
        for r in &self.rows {
            let status = match r.pass {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "info",
            };
            let threshold = if r.threshold.is_nan() {
                String::new()
            } else {
                format!("{:.3e}", r.threshold)
            };
            s.push_str(&format!(
                "{:<11} {:<52} {:>12.4e} {:>2} {:>10}  {status}\n",
                r.suite, r.check, r.value, r.relation, threshold
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Cap on steps for the trajectory suites.
    pub max_steps: Option<u64>,
    /// Per-axis cell cap for the dense oracle grid.
    pub dense_max_cells: usize,
    pub m_matrix_samples: usize,
    /// Steps at `dt` compared against twice as many at `dt/2`.
    pub dt_window: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            max_steps: None,
            dense_max_cells: 32,
            m_matrix_samples: 1000,
            dt_window: 200,
        }
    }
}

/// Per-step diagnostics of one run, kept in memory.
pub struct Trace {
    pub config: SolverConfig,
    pub records: Vec<DiagnosticsRecord>,
    pub scalars: Vec<StepScalars>,
    pub outcome: RunOutcome,
    pub monotone: bool,
}

/// Runs `config` from the scenario's initial data, evaluating diagnostics
/// after every step.
pub fn trace(scenario: &Scenario, config: &SolverConfig, max_steps: Option<u64>) -> Result<Trace> {
    let solver = Solver::new(config.clone())?;
    let (u, v) = make_initial(&scenario.initial, &config.grid, scenario.seed)?;
    let s0 = solver.init_state(&u, &v)?;
    let diag = Diagnostics::new(config, s0.initial.v_min)?;
    let mut records = vec![diag.evaluate(&s0, None)?];
    let mut scalars = vec![StepScalars::of(&s0)];
    let last = max_steps.unwrap_or(u64::MAX);
    let outcome = solver.advance_to(s0, last, |prev, next| {
        records.push(diag.evaluate(next, Some(prev))?);
        scalars.push(StepScalars::of(next));
        Ok(())
    });
    if let Some(reason) = &outcome.abort_reason {
        return Err(Error::StepAborted {
            t: outcome.final_state.t,
            reason: reason.clone(),
        });
    }
    Ok(Trace {
        config: config.clone(),
        records,
        scalars,
        outcome,
        monotone: diag.classification().monotone_nondecreasing,
    })
}

fn worst(records: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> Option<f64>) -> f64 {
    records.iter().filter_map(f).fold(0.0, f64::max)
}

fn least(records: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> Option<f64>) -> f64 {
    records.iter().filter_map(f).fold(f64::INFINITY, f64::min)
}

fn ratio(a: f64, b: f64) -> f64 {
    a / b.max(f64::MIN_POSITIVE)
}

/// Normalized dt-independent residuals: mass drift, key identity, Ψ-mass ODE.
pub fn exact_residuals(t: &Trace) -> [(&'static str, f64); 3] {
    let mass = t.records[0].mass_u;
    [
        ("mass drift", worst(&t.records, |r| Some(ratio(r.mass_drift, mass)))),
        (
            "key identity",
            worst(&t.records, |r| {
                Some(ratio(r.key_identity_residual, r.key_identity_scale))
            }),
        ),
        (
            "Psi-mass ODE",
            worst(&t.records, |r| {
                Some(ratio(r.psi_l1_ode_residual?.abs(), r.psi_ode_scale?))
            }),
        ),
    ]
}

/// Exact discrete identities and positivity along a trace.
pub fn identity_rows(scenario: &Scenario, t: &Trace) -> Vec<MarginRow> {
    const S: &str = "identities";
    let cfg = &t.config;
    let lin = cfg.linear_tolerance;
    let recs = &t.records;
    let [mass, key, ode] = exact_residuals(t);
    let mut rows = vec![
        MarginRow::at_most(S, "relative mass drift", mass.1, 1e-12),
        MarginRow::at_most(S, "key identity residual / scale", key.1, cfg.identity_tolerance),
        MarginRow::at_most(
            S,
            "staged w-identity residual / ||g||_inf",
            worst(recs, |r| {
                let floor = DIFFERENCE_ROUNDING * r.linf_u / cfg.dt;
                Some(ratio((r.w_identity_residual? - floor).max(0.0), r.w_identity_scale?))
            }),
            10.0 * lin,
        ),
        MarginRow::at_most(S, "Psi-mass ODE residual / scale", ode.1, 10.0 * lin),
    ];
    // discrete ‖v‖₁ recursion τ(ℓⁿ⁺¹ − ℓⁿ)/dt + ℓⁿ⁺¹ = m|Ω|
    let m_omega = recs[0].mass_u;
    let l1_rec = t
        .scalars
        .windows(2)
        .map(|w| {
            let r = cfg.tau * (w[1].l1_v - w[0].l1_v) / cfg.dt + w[1].l1_v - m_omega;
            ratio(r.abs(), cfg.sigma() * w[0].l1_v + m_omega)
        })
        .fold(0.0, f64::max);
    rows.push(MarginRow::at_most(
        S,
        "discrete ||v||_1 recursion / scale",
        l1_rec,
        1e-12,
    ));
    let u_in = t.scalars[0].linf_u;
    let min_u = t.scalars.iter().map(|s| s.min_u).fold(f64::INFINITY, f64::min);
    rows.push(MarginRow::at_least(S, "min u / ||u_in||_inf", min_u / u_in, -1e-12));
    let min_v = t.scalars.iter().map(|s| s.min_v).fold(f64::INFINITY, f64::min);
    rows.push(MarginRow {
        pass: Some(min_v > 0.0),
        ..MarginRow::at_least(S, "min v (strictly positive)", min_v, 0.0)
    });
    let clamps = t.outcome.final_state.clamp_count as f64;
    rows.push(if scenario.diagnostics.strict {
        MarginRow::at_most(S, "v clamp activations (strict)", clamps, 0.0)
    } else {
        MarginRow::info(S, "v clamp activations", clamps)
    });
    rows
}

/// dt-independence of the exact residuals: a window at `dt` against the same
/// time span at `dt/2`.
pub fn dt_independence_rows(scenario: &Scenario, window: u64) -> Result<Vec<MarginRow>> {
    let cfg = &scenario.solver;
    let coarse = trace(scenario, cfg, Some(window))?;
    let mut half = cfg.clone();
    half.dt = cfg.dt / 2.0;
    let fine = trace(scenario, &half, Some(2 * window))?;
    let floor = ROUNDOFF_FLOOR;
    Ok(exact_residuals(&coarse)
        .iter()
        .zip(exact_residuals(&fine))
        .map(|((name, a), (_, b))| {
            let r = a.max(floor) / b.max(floor);
            MarginRow {
                pass: Some((0.1..=10.0).contains(&r)),
                ..MarginRow::at_most(
                    "identities",
                    format!("{name}: dt vs dt/2 ratio (in [0.1, 10])"),
                    r,
                    10.0,
                )
            }
        })
        .collect())
}

/// Relative rounding allowance when comparing `I` at consecutive steps.
pub const LYAPUNOV_ROUNDING: f64 = 1e-12;

/// Energy, comparison and functional margins along a trace.
pub fn energy_rows(t: &Trace) -> Vec<MarginRow> {
    const S: &str = "energy";
    let recs = &t.records;
    let mut rows = vec![
        MarginRow::at_least(
            S,
            "eta margin (||eta||_inf <= max ||u_in||, ||v_in||)",
            least(recs, |r| Some(r.eta_margin)),
            0.0,
        ),
        MarginRow::at_least(
            S,
            "upper two-sided identity bound / scale",
            least(recs, |r| Some(r.two_sided_upper / r.two_sided_scale)),
            -1e-8,
        ),
        MarginRow::at_least(
            S,
            "lower two-sided identity bound / scale",
            least(recs, |r| Some(r.two_sided_lower / r.two_sided_scale)),
            -1e-8,
        ),
        MarginRow::at_least(
            S,
            "F (running K0) / scale",
            least(recs, |r| Some(r.functional_f / r.f_scale)),
            -1e-10,
        ),
        MarginRow::at_least(
            S,
            "D density term / scale",
            least(recs, |r| Some(r.d_density / r.d_scale)),
            -1e-10,
        ),
    ];
    if t.monotone {
        rows.push(MarginRow::at_least(
            S,
            "D gradient term / scale",
            least(recs, |r| Some(r.d_gradient / r.d_scale)),
            -1e-10,
        ));
        rows.push(MarginRow::at_least(
            S,
            "D signal term / scale",
            least(recs, |r| Some(r.d_signal / r.d_scale)),
            -1e-10,
        ));
        // I(tⁿ⁺¹) ≤ I(tⁿ) + |balance residual|·dt
        let dt = t.config.dt;
        rows.push(MarginRow::at_least(
            S,
            "Lyapunov decrease margin / |I|",
            least(recs, |r| {
                let ip = r.lyapunov_i_prev?;
                let slack = ip + r.lyapunov_balance_residual?.abs() * dt - r.lyapunov_i;
                Some(slack / r.lyapunov_i.abs().max(ip.abs()).max(f64::MIN_POSITIVE))
            }),
            -LYAPUNOV_ROUNDING,
        ));
        rows.push(MarginRow::at_least(
            S,
            "monotone quadratic bound margin / scale",
            least(recs, |r| Some(r.quadratic_margin? / r.quadratic_scale)),
            -1e-8,
        ));
        rows.push(MarginRow::info(
            S,
            "comparison margin Psi + ||G(v_in)|| - G(v) / scale",
            least(recs, |r| Some(r.gamma_comparison_margin? / r.gamma_comparison_scale)),
        ));
    } else {
        rows.push(MarginRow::info(
            S,
            "D gradient term / scale (non-monotone)",
            least(recs, |r| Some(r.d_gradient / r.d_scale)),
        ));
    }
    rows
}

// ---- dense oracle ----

/// Entries above `−SIGN_ROUNDING·‖x‖∞` count as non-negative. Exact minima
/// of strongly shifted solves can sit far below round-off.
pub const SIGN_ROUNDING: f64 = 64.0 * f64::EPSILON;

/// Normalized residuals below this are round-off; dt-independence ratios
/// are taken after flooring at it.
pub const ROUNDOFF_FLOOR: f64 = 100.0 * f64::EPSILON;

/// `(wⁿ⁺¹ − wⁿ)/dt` carries an absolute rounding error of order
/// `ε‖u‖∞/dt`; the staged w-identity residual is checked above this much.
pub const DIFFERENCE_ROUNDING: f64 = 4.0 * f64::EPSILON;

/// Dense `−Δ_h` assembled from the two-point flux stencil.
pub fn dense_neg_laplacian(grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let idx = grid.unflatten(k);
        for (axis, &i) in idx.iter().enumerate().take(grid.dim()) {
            let h2 = grid.spacing()[axis].powi(2);
            let s = grid.stride(axis);
            if i > 0 {
                a[(k, k)] += 1.0 / h2;
                a[(k, k - s)] -= 1.0 / h2;
            }
            if i + 1 < grid.cells()[axis] {
                a[(k, k)] += 1.0 / h2;
                a[(k, k + s)] -= 1.0 / h2;
            }
        }
    }
    a
}

/// `λ_k = Σ_axes (4/h²) sin²(kπ/(2n))`.
pub fn eigenvalue_formula(grid: &Grid, k: &[usize]) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let h = grid.spacing()[a];
            let n = grid.cells()[a] as f64;
            4.0 / (h * h) * (k[a] as f64 * std::f64::consts::PI / (2.0 * n)).sin().powi(2)
        })
        .sum()
}

fn rel_err_inf(x: &Field, y: &DVector<f64>) -> f64 {
    let num = x
        .values()
        .iter()
        .zip(y.iter())
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    num / y.amax().max(f64::MIN_POSITIVE)
}

/// Grid with the same lengths and at most `cap` cells per axis.
pub fn oracle_grid(grid: &Grid, cap: usize) -> Result<Grid> {
    let cells: Vec<usize> = grid.cells().iter().map(|&c| c.min(cap)).collect();
    Grid::new(grid.dim(), &cells, grid.lengths())
}

/// Dense-oracle agreement, eigenmode identities and sign preservation.
pub fn operator_rows(grid: &Grid, sigma: f64, samples: usize, seed: u64) -> Result<Vec<MarginRow>> {
    const S: &str = "operators";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let lap = dense_neg_laplacian(grid);
    let eye = DMatrix::<f64>::identity(n, n);
    let helm = &eye + &lap;
    let shifted = &eye * (1.0 + sigma) + &lap;
    let ones = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let poisson = &lap + ones;
    let lu = |m: &DMatrix<f64>| m.clone().lu();
    let (lu_h, lu_s, lu_p) = (lu(&helm), lu(&shifted), lu(&poisson));
    let fine = |f: Option<DVector<f64>>| f.ok_or_else(|| Error::Domain("singular oracle matrix".into()));

    let mut rows = Vec::new();
    let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = Field::from_values(*grid, rhs.clone())?;
    let b = DVector::from_vec(rhs);
    let zero_mean = f.offset(-f.mean());
    let bz = DVector::from_vec(zero_mean.values().to_vec());
    let x_h = fine(lu_h.solve(&b))?;
    let x_s = fine(lu_s.solve(&b))?;
    let x_p = fine(lu_p.solve(&bz))?;
    let label = format!("{:?}", grid.cells());
    for backend in [Backend::Spectral, Backend::ConjugateGradient] {
        let ops = NeumannOperators::with_backend(*grid, backend, 1e-13);
        let name = match backend {
            Backend::Spectral => "spectral",
            Backend::ConjugateGradient => "cg",
        };
        rows.push(MarginRow::at_most(
            S,
            format!("helmholtz_solve vs dense {label} ({name})"),
            rel_err_inf(&ops.helmholtz_solve(&f)?, &x_h),
            1e-10,
        ));
        rows.push(MarginRow::at_most(
            S,
            format!("shifted_solve sigma={sigma} vs dense {label} ({name})"),
            rel_err_inf(&ops.shifted_solve(&f, sigma)?, &x_s),
            1e-10,
        ));
        rows.push(MarginRow::at_most(
            S,
            format!("poisson_meanzero_solve vs dense {label} ({name})"),
            rel_err_inf(&ops.poisson_meanzero_solve(&zero_mean)?, &x_p),
            1e-10,
        ));
    }

    let ops = NeumannOperators::new(*grid);
    let mut eig_err: f64 = 0.0;
    let mut table_err: f64 = 0.0;
    let kmax: Vec<usize> = grid.cells().iter().map(|&c| c.min(6)).collect();
    let ky_max = if grid.dim() == 2 { kmax[1] } else { 1 };
    for kx in 0..kmax[0] {
        for ky in 0..ky_max {
            let k = if grid.dim() == 2 { vec![kx, ky] } else { vec![kx] };
            let mode = cosine_mode(grid, &k);
            let lam = eigenvalue_formula(grid, &k);
            let lm = ops.laplacian(&mode)?;
            let e = mode
                .values()
                .iter()
                .zip(lm.values())
                .fold(0.0, |m: f64, (x, l)| m.max((l + lam * x).abs()));
            eig_err = eig_err.max(e / (lam.max(1.0) * mode.linf()));
            let tab: f64 = (0..grid.dim()).map(|a| ops.eigenvalues(a)[k[a]]).sum();
            table_err = table_err.max((tab - lam).abs() / lam.max(1.0));
        }
    }
    rows.push(MarginRow::at_most(
        S,
        "-Lap cos-mode = lambda_k cos-mode (relative)",
        eig_err,
        1e-12,
    ));
    rows.push(MarginRow::at_most(
        S,
        "eigenvalue table vs closed form (relative)",
        table_err,
        1e-12,
    ));

    // M-matrix structure of A and sign preservation of the solves
    let offdiag_max = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| helm[(i, j)])
        .fold(f64::NEG_INFINITY, f64::max);
    rows.push(MarginRow::at_most(S, "max off-diagonal of A", offdiag_max, 0.0));
    let (mut neg, mut neg_exact) = (0usize, 0usize);
    let mut min_ratio = f64::INFINITY;
    let cg = NeumannOperators::with_backend(*grid, Backend::ConjugateGradient, 1e-12);
    for s in 0..samples {
        let vals: Vec<f64> = if s % 2 == 0 {
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        } else {
            // sparse: a few point sources
            let mut v = vec![0.0; n];
            for _ in 0..1 + s % 4 {
                v[rng.random_range(0..n)] = rng.random_range(0.1..10.0);
            }
            v
        };
        let f = Field::from_values(*grid, vals)?;
        let mut outs = vec![ops.helmholtz_solve(&f)?, ops.shifted_solve(&f, sigma)?];
        if s % 10 == 0 {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
            outs.push(cg.weighted_solve(&d, 0.01, &f, f.values().to_vec())?);
        }
        for o in outs {
            if o.min() < -SIGN_ROUNDING * o.linf() {
                neg += 1;
            }
            if o.min() < 0.0 {
                neg_exact += 1;
            }
            min_ratio = min_ratio.min(o.min() / o.max());
        }
    }
    rows.push(MarginRow::at_most(
        S,
        format!("sign violations from {samples} non-negative inputs"),
        neg as f64,
        0.0,
    ));
    rows.push(MarginRow::info(
        S,
        "solutions with a rounding-level negative entry",
        neg_exact as f64,
    ));
    rows.push(MarginRow::info(
        S,
        "smallest min/max ratio over those solutions",
        min_ratio,
    ));
    Ok(rows)
}

/// Runs the requested suites for `scenario`.
pub fn verify(scenario: &Scenario, suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut rows = Vec::new();
    let cfg = &scenario.solver;
    if matches!(suite, Suite::Operators | Suite::All) {
        let g = oracle_grid(&cfg.grid, opts.dense_max_cells)?;
        rows.extend(operator_rows(&g, cfg.sigma(), opts.m_matrix_samples, scenario.seed)?);
    }
    if matches!(suite, Suite::Identities | Suite::Energy | Suite::All) {
        let t = trace(scenario, cfg, opts.max_steps)?;
        if matches!(suite, Suite::Identities | Suite::All) {
            rows.extend(identity_rows(scenario, &t));
            let window = opts
                .dt_window
                .min(opts.max_steps.unwrap_or(u64::MAX))
                .min(cfg.total_steps());
            rows.extend(dt_independence_rows(scenario, window)?);
        }
        if matches!(suite, Suite::Energy | Suite::All) {
            rows.extend(energy_rows(&t));
        }
    }
    Ok(VerifyReport {
        scenario: scenario.name.clone(),
        rows,
    })
}
