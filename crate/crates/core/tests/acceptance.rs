//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ksls::diagnostics::{boundedness_summary, Verdict};
use ksls::scenario::presets::PRESET_NAMES;
use ksls::scenario::verify::{energy_rows, trace, Trace};
use ksls::scenario::{
    load_checkpoint, make_initial, refine, run_scenario, save_checkpoint, verify, Checkpoint, RefineReport, RunOptions,
    Scenario, Suite, VerifyOptions,
};
use ksls::{Backend, Diagnostics, Field, Grid, NeumannOperators, Solver, State};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

/// Collected sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    items: Vec<(String, bool)>,
}

impl Checks {
    fn add(&mut self, ok: bool, what: impl Into<String>) {
        self.items.push((what.into(), ok));
    }

    fn at_most(&mut self, what: &str, value: f64, limit: f64) {
        self.add(value <= limit, format!("{what}: {value:.3e} <= {limit:.1e}"));
    }

    fn at_least(&mut self, what: &str, value: f64, limit: f64) {
        self.add(value >= limit, format!("{what}: {value:.3e} >= {limit:.1e}"));
    }

    fn passed(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|(_, ok)| *ok)
    }
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text, Path::new(".")).expect("scenario")
}

// ---------------------------------------------------------------------------
// 1. operator oracle

/// `I − Δ_h` from the 5-point (3-point in 1D) Neumann stencil.
fn dense_helmholtz(grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    for k in 0..n {
        let idx = grid.unflatten(k);
        for (axis, &i) in idx.iter().enumerate().take(grid.dim()) {
            let c = 1.0 / grid.spacing()[axis].powi(2);
            let stride = grid.stride(axis);
            if i > 0 {
                a[(k, k)] += c;
                a[(k, k - stride)] -= c;
            }
            if i + 1 < grid.cells()[axis] {
                a[(k, k)] += c;
                a[(k, k + stride)] -= c;
            }
        }
    }
    a
}

fn rel_err(x: &Field, y: &DVector<f64>) -> f64 {
    let scale = y.amax().max(f64::MIN_POSITIVE);
    x.values()
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

fn operator_grid(c: &mut Checks, grid: &Grid, rng: &mut ChaCha8Rng) -> Res<()> {
    let n = grid.len();
    let label = format!("{:?}", grid.cells());
    let a = dense_helmholtz(grid);
    let eye = DMatrix::<f64>::identity(n, n);
    let neg_lap = &a - &eye;
    let poisson = &neg_lap + DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);

    let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = Field::from_values(*grid, rhs.clone())?;
    let z = f.offset(-f.mean());
    let b = DVector::from_vec(rhs);
    let bz = DVector::from_vec(z.values().to_vec());
    let x_h = a.clone().lu().solve(&b).ok_or("singular")?;
    let x_p = poisson.lu().solve(&bz).ok_or("singular")?;
    for backend in [Backend::Spectral, Backend::ConjugateGradient] {
        let ops = NeumannOperators::with_backend(*grid, backend, 1e-13);
        c.at_most(
            &format!("helmholtz {label} {backend:?}"),
            rel_err(&ops.helmholtz_solve(&f)?, &x_h),
            1e-10,
        );
        for sigma in [1.0, 250.0] {
            let x_s = (&a + &eye * sigma).lu().solve(&b).ok_or("singular")?;
            c.at_most(
                &format!("shifted sigma={sigma} {label} {backend:?}"),
                rel_err(&ops.shifted_solve(&f, sigma)?, &x_s),
                1e-10,
            );
        }
        c.at_most(
            &format!("poisson {label} {backend:?}"),
            rel_err(&ops.poisson_meanzero_solve(&z)?, &x_p),
            1e-10,
        );
    }

    // cos(kπx/L) modes against λ_k = Σ (4/h²) sin²(kπ/(2n))
    let ops = NeumannOperators::new(*grid);
    let kmax: Vec<usize> = grid
        .cells()
        .iter()
        .map(|&c| if grid.dim() == 1 { c } else { c.min(8) })
        .collect();
    let ky_max = if grid.dim() == 2 { kmax[1] } else { 1 };
    let mut eig: f64 = 0.0;
    let mut table: f64 = 0.0;
    for kx in 0..kmax[0] {
        for ky in 0..ky_max {
            let k = [kx, ky];
            let lam: f64 = (0..grid.dim())
                .map(|ax| {
                    let nc = grid.cells()[ax] as f64;
                    let h = grid.spacing()[ax];
                    4.0 / (h * h) * (k[ax] as f64 * std::f64::consts::PI / (2.0 * nc)).sin().powi(2)
                })
                .sum();
            let mode = Field::from_fn(*grid, |x| {
                (0..grid.dim())
                    .map(|ax| (k[ax] as f64 * std::f64::consts::PI * x[ax] / grid.lengths()[ax]).cos())
                    .product()
            });
            let lm = ops.laplacian(&mode)?;
            let e = mode
                .values()
                .iter()
                .zip(lm.values())
                .fold(0.0, |m: f64, (x, l)| m.max((l + lam * x).abs()));
            eig = eig.max(e / (lam.max(1.0) * mode.linf()));
            let t: f64 = (0..grid.dim()).map(|ax| ops.eigenvalues(ax)[k[ax]]).sum();
            table = table.max((t - lam).abs() / lam.max(1.0));
        }
    }
    c.at_most(&format!("eigenmodes {label}"), eig, 1e-12);
    c.at_most(&format!("eigenvalue table {label}"), table, 1e-12);

    let offdiag = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)])
        .fold(f64::NEG_INFINITY, f64::max);
    c.at_most(&format!("off-diagonals of A {label}"), offdiag, 0.0);
    if n <= 256 {
        let inv = a.try_inverse().ok_or("singular")?;
        c.at_least(&format!("min entry of A^-1 {label}"), inv.min(), 0.0);
    }

    let cg = NeumannOperators::with_backend(*grid, Backend::ConjugateGradient, 1e-12);
    let mut negative = 0;
    for s in 0..1000 {
        let vals: Vec<f64> = if s % 2 == 0 {
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        } else {
            let mut v = vec![0.0; n];
            v[rng.random_range(0..n)] = rng.random_range(0.1..10.0);
            v
        };
        let f = Field::from_values(*grid, vals)?;
        let mut outs = vec![ops.helmholtz_solve(&f)?, ops.shifted_solve(&f, 250.0)?];
        if s % 10 == 0 {
            outs.push(cg.helmholtz_solve(&f)?);
            outs.push(cg.shifted_solve(&f, 250.0)?);
        }
        negative += outs.iter().filter(|o| o.min() < 0.0).count();
    }
    c.at_most(
        &format!("negative solutions from 1000 non-negative inputs {label}"),
        negative as f64,
        0.0,
    );
    Ok(())
}

fn criterion_operators(c: &mut Checks) -> Res<()> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for grid in [
        Grid::line(16, 1.0)?,
        Grid::line(32, 1.0)?,
        Grid::rect([16, 16], [1.0, 1.0])?,
        Grid::rect([32, 32], [1.0, 1.0])?,
    ] {
        operator_grid(c, &grid, &mut rng)?;
    }
    c.at_most("runtime [s]", start.elapsed().as_secs_f64(), 10.0);
    Ok(())
}

// ---------------------------------------------------------------------------
// 2. exact identities on every preset

fn criterion_identities(c: &mut Checks) -> Res<()> {
    for name in PRESET_NAMES {
        let sc = Scenario::preset(name)?;
        let report = verify(&sc, Suite::Identities, &VerifyOptions::default())?;
        for row in &report.rows {
            let wanted = row.check.starts_with("relative mass drift")
                || row.check.starts_with("key identity")
                || row.check.starts_with("Psi-mass ODE")
                || row.check.contains("dt vs dt/2");
            if wanted {
                c.add(
                    row.pass == Some(true),
                    format!(
                        "{name}: {} {:.3e} {} {:.1e}",
                        row.check, row.value, row.relation, row.threshold
                    ),
                );
            }
        }
        for f in report.failures() {
            c.add(false, format!("{name}: {} = {:.3e}", f.check, f.value));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 3. first-order consistency on th2

fn criterion_first_order(c: &mut Checks) -> Res<RefineReport> {
    let start = Instant::now();
    let sc = Scenario::preset("th2")?;
    c.add(sc.solver.grid.cells() == [128], "th2 grid has 128 cells");
    let report = refine(&sc, 4)?;
    let expected = [4e-3, 2e-3, 1e-3, 5e-4];
    let dts_ok = report.dts.iter().zip(expected).all(|(a, b)| (a - b).abs() <= 1e-15);
    c.add(dts_ok, format!("dt levels {:?}", report.dts));
    for name in ["l1_law_deviation", "lyapunov_balance_residual", "w_identity_collocated"] {
        let s = report.series(name).ok_or("missing series")?;
        let ok = s.orders.len() == 3 && s.orders.iter().all(|p| (0.8..=1.2).contains(p));
        c.add(ok, format!("{name} orders {:?}", s.orders));
    }
    c.at_most("runtime [s]", start.elapsed().as_secs_f64(), 120.0);
    Ok(report)
}

// ---------------------------------------------------------------------------
// 4. Lyapunov monotonicity and stabilization

fn criterion_lyapunov(c: &mut Checks) -> Res<Trace> {
    let start = Instant::now();
    let sc = scenario("preset = \"th2\"\nt_end = 100.0\n");
    c.add(sc.solver.tau == 1.0, "T = 100 tau");
    let t = trace(&sc, &sc.solver, None)?;
    let dt = sc.solver.dt;
    let worst_increase = t
        .records
        .iter()
        .filter_map(|r| {
            let ip = r.lyapunov_i_prev?;
            let allowed = ip + r.lyapunov_balance_residual?.abs() * dt;
            Some((r.lyapunov_i - allowed) / r.lyapunov_i.abs().max(ip.abs()).max(f64::MIN_POSITIVE))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    c.at_most("max (I(n+1) - I(n) - |balance| dt) / |I|", worst_increase, 1e-12);
    let least = |f: &dyn Fn(&ksls::DiagnosticsRecord) -> f64| t.records.iter().map(f).fold(f64::INFINITY, f64::min);
    c.at_least("min d_gradient / scale", least(&|r| r.d_gradient / r.d_scale), -1e-10);
    c.at_least("min d_density / scale", least(&|r| r.d_density / r.d_scale), -1e-10);
    c.at_least("min d_signal / scale", least(&|r| r.d_signal / r.d_scale), -1e-10);
    let (first, last) = (&t.records[0], t.records.last().ok_or("empty trace")?);
    c.at_most(
        "final ||u - m||_inf / initial",
        last.u_dev_linf / first.u_dev_linf,
        1e-4,
    );
    c.at_most(
        "final ||grad v||_inf / initial",
        last.grad_v_linf / first.grad_v_linf,
        1e-4,
    );
    c.at_most("runtime [s]", start.elapsed().as_secs_f64(), 300.0);
    Ok(t)
}

// ---------------------------------------------------------------------------
// 5. boundedness plateau on th1

fn criterion_boundedness(c: &mut Checks) -> Res<()> {
    let sc = scenario("preset = \"th1\"\nt_end = 200.0\n");
    c.add(sc.solver.tau == 2.0, "T = 100 tau");
    let t = trace(&sc, &sc.solver, None)?;
    let diag = Diagnostics::new(&sc.solver, t.outcome.final_state.initial.v_min)?;
    let cls = diag.classification();
    c.add(
        cls.nondegenerate_for_tau,
        format!("nondegenerate_for_tau (gamma_inf ~ {:.4})", cls.gamma_inf_estimate),
    );
    let b = boundedness_summary(&t.records, sc.solver.tau);
    for (name, p) in [
        ("||u||_inf", &b.linf_u),
        ("||v||_inf", &b.linf_v),
        ("||Psi||_1", &b.psi_l1),
        ("F", &b.functional_f),
    ] {
        c.add(
            p.verdict == Verdict::Pass,
            format!(
                "plateau {name}: q3 {:.6e}, q4 {:.6e}",
                p.third_quarter_max, p.last_quarter_max
            ),
        );
    }
    for row in energy_rows(&t) {
        let wanted = row.check.starts_with("eta margin")
            || row.check.contains("two-sided")
            || row.check.starts_with("F (running K0)");
        if wanted {
            c.add(
                row.pass == Some(true),
                format!("{} {:.3e} {} {:.1e}", row.check, row.value, row.relation, row.threshold),
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 6. comparison bound, monotone case

fn criterion_comparison(c: &mut Checks, th2: &RefineReport, long: &Trace) -> Res<()> {
    let log1p = refine(&Scenario::preset("th2-log1p")?, 4)?;
    for (name, report) in [("th2-linear", th2), ("th2-log1p", &log1p)] {
        let s = report
            .series("comparison_violation")
            .ok_or("missing comparison series")?;
        c.add(s.pass, format!("{name}: eps(dt) {:?} ({})", s.errors, s.expected));
    }
    let (name, t) = ("th2 T=100", long);
    let least_cmp = t
        .records
        .iter()
        .filter_map(|r| Some(r.gamma_comparison_margin? / r.gamma_comparison_scale))
        .fold(f64::INFINITY, f64::min);
    c.add(
        least_cmp.is_finite(),
        format!("{name}: min comparison margin / scale {least_cmp:.3e}"),
    );
    let least_quad = t
        .records
        .iter()
        .filter_map(|r| Some(r.quadratic_margin? / r.quadratic_scale))
        .fold(f64::INFINITY, f64::min);
    c.at_least(
        &format!("{name}: min monotone quadratic margin / scale"),
        least_quad,
        -1e-8,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// 7. contrast scenario

fn growth(sc: &Scenario) -> Res<f64> {
    let solver = Solver::new(sc.solver.clone())?;
    let (u, v) = make_initial(&sc.initial, &sc.solver.grid, sc.seed)?;
    let s0 = solver.init_state(&u, &v)?;
    let u0 = s0.u.linf();
    let out = solver.advance(s0, |_, _| Ok(()));
    if let Some(r) = out.abort_reason {
        return Err(r.into());
    }
    Ok(out.sup_u_linf / u0)
}

fn criterion_contrast(c: &mut Checks) -> Res<()> {
    let sc = Scenario::preset("contrast-blowup")?;
    c.at_least("growth of ||u||_inf, gamma = exp(-s)", growth(&sc)?, 10.0);
    let lin = scenario("preset = \"contrast-blowup\"\nmotility = \"linear\"\n");
    c.at_most("growth of ||u||_inf, gamma = s, same data", growth(&lin)?, 2.0);
    Ok(())
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence

fn same_bits(a: &State, b: &State) -> bool {
    let fields = a.fields().iter().zip(b.fields()).all(|((na, fa), (nb, fb))| {
        na == &nb
            && fa
                .values()
                .iter()
                .zip(fb.values())
                .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let scal = |s: &State| {
        [s.t, s.m, s.gamma_vin_linf, s.eta_bound, s.v_running_min, s.k0_running]
            .map(f64::to_bits)
            .to_vec()
    };
    fields && scal(a) == scal(b) && a.step == b.step && a.clamp_count == b.clamp_count && a == b
}

fn criterion_persistence(c: &mut Checks) -> Res<()> {
    let dir = tempfile::tempdir()?;
    for name in ["th1-1d", "th1-2d"] {
        let sc = Scenario::preset(name)?;
        let solver = Solver::new(sc.solver.clone())?;
        let (u, v) = make_initial(&sc.initial, &sc.solver.grid, sc.seed)?;
        let s0 = solver.init_state(&u, &v)?;
        let mid = solver.advance_to(s0, 37, |_, _| Ok(())).final_state;
        let ck = Checkpoint::new(&sc.solver, mid.clone(), 1.0, 2.0);
        let decoded = Checkpoint::decode(&ck.encode())?;
        c.add(
            same_bits(&mid, &decoded.state),
            format!("{name}: encode/decode bit-exact"),
        );
        let path = dir.path().join(format!("{name}.ksls"));
        save_checkpoint(&path, &ck)?;
        let loaded = load_checkpoint(&path)?;
        c.add(
            same_bits(&mid, &loaded.state) && loaded.encode() == ck.encode(),
            format!("{name}: save/load bit-exact"),
        );
        let direct = solver.advance_to(mid, 80, |_, _| Ok(())).final_state;
        let resumed = solver.advance_to(loaded.state, 80, |_, _| Ok(())).final_state;
        c.add(
            same_bits(&direct, &resumed),
            format!("{name}: stepping from a loaded checkpoint matches"),
        );
    }

    let sc = Scenario::preset("th1-1d")?;
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    run_scenario(
        &sc,
        &RunOptions {
            out_dir: Some(full.clone()),
            checkpoint_every: Some(250),
            ..Default::default()
        },
    )?;
    run_scenario(
        &sc,
        &RunOptions {
            out_dir: Some(split.clone()),
            checkpoint_every: Some(250),
            max_steps: Some(430),
            ..Default::default()
        },
    )?;
    run_scenario(
        &sc,
        &RunOptions {
            out_dir: Some(split.clone()),
            checkpoint_every: Some(250),
            resume: Some(split.join("checkpoints").join("ckpt_00000250.ksls")),
            ..Default::default()
        },
    )?;
    for file in [
        "diagnostics.csv",
        "scalars.csv",
        "final.ksls",
        "checkpoints/ckpt_00000750.ksls",
    ] {
        let a = std::fs::read(full.join(file))?;
        let b = std::fs::read(split.join(file))?;
        c.add(
            a == b && !a.is_empty(),
            format!("resumed {file} identical ({} bytes)", a.len()),
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn report(index: usize, title: &str, result: Res<Checks>) -> bool {
    let (ok, lines) = match result {
        Ok(c) => (c.passed(), c.items),
        Err(e) => (false, vec![(format!("error: {e}"), false)]),
    };
    println!("criterion {index} {title}: {}", if ok { "PASS" } else { "FAIL" });
    for (what, pass) in lines {
        if !pass || std::env::var_os("KSLS_ACCEPTANCE_VERBOSE").is_some() {
            println!("    {} {what}", if pass { "ok  " } else { "FAIL" });
        }
    }
    ok
}

fn run<T>(f: impl FnOnce(&mut Checks) -> Res<T>) -> (Res<Checks>, Option<T>) {
    let mut c = Checks::default();
    match f(&mut c) {
        Ok(v) => (Ok(c), Some(v)),
        Err(e) => (Err(e), None),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let (r, _) = run(criterion_operators);
    all &= report(1, "operator oracle", r);
    let (r, _) = run(criterion_identities);
    all &= report(2, "exact discrete identities", r);
    let (r, th2) = run(criterion_first_order);
    all &= report(3, "first-order consistency", r);
    let (r, long) = run(criterion_lyapunov);
    all &= report(4, "Lyapunov monotonicity", r);
    let (r, _) = run(criterion_boundedness);
    all &= report(5, "boundedness plateau", r);
    let r = match (&th2, &long) {
        (Some(a), Some(b)) => run(|c| criterion_comparison(c, a, b)).0,
        _ => Err("needs criteria 3 and 4".into()),
    };
    all &= report(6, "comparison bound", r);
    let (r, _) = run(criterion_contrast);
    all &= report(7, "contrast scenario", r);
    let (r, _) = run(criterion_persistence);
    all &= report(8, "determinism and persistence", r);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
