//! The `run` command: stepping with streamed CSV output, periodic
//! checkpoints and resume.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::{boundedness_summary, BoundednessSummary, Diagnostics, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::evolution::{Solver, State, StepScalars};
use crate::motility::MotilityClassification;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::Scenario;
use super::initial::make_initial;
use super::output::{self, SeriesWriter};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the scenario's output directory.
    pub out_dir: Option<PathBuf>,
    /// Write `checkpoints/ckpt_<step>.ksls` every this many steps.
    pub checkpoint_every: Option<u64>,
    pub resume: Option<PathBuf>,
    /// Stop after at most this many steps in this invocation.
    pub max_steps: Option<u64>,
}

/// Written to `summary.json` and `summary.txt`.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub out_dir: PathBuf,
    pub motility: String,
    pub tau: f64,
    pub dt: f64,
    pub cells: Vec<usize>,
    pub start_step: u64,
    pub final_step: u64,
    pub total_steps: u64,
    pub t_final: f64,
    pub completed: bool,
    pub abort_reason: Option<String>,
    pub sup_u_linf: f64,
    pub sup_v_linf: f64,
    pub initial_u_linf: f64,
    pub initial_v_linf: f64,
    pub v_running_min: f64,
    pub clamp_count: u64,
    pub max_rel_mass_drift: f64,
    pub max_rel_identity_residual: f64,
    pub min_eta_margin: f64,
    pub classification: MotilityClassification,
    pub boundedness: Option<BoundednessSummary>,
}

impl RunSummary {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k:<28} {v}\n"));
        line("scenario", self.name.clone());
        line("motility", self.motility.clone());
        line("tau / dt", format!("{} / {}", self.tau, self.dt));
        line("cells", format!("{:?}", self.cells));
        line(
            "steps",
            format!("{} -> {} of {}", self.start_step, self.final_step, self.total_steps),
        );
        line("t_final", format!("{}", self.t_final));
        line(
            "status",
            match &self.abort_reason {
                Some(r) => format!("aborted: {r}"),
                None if self.completed => "completed".into(),
                None => "stopped early (max steps)".into(),
            },
        );
        line(
            "sup ||u||_inf",
            format!("{:.6e} (initial {:.6e})", self.sup_u_linf, self.initial_u_linf),
        );
        line(
            "sup ||v||_inf",
            format!("{:.6e} (initial {:.6e})", self.sup_v_linf, self.initial_v_linf),
        );
        line("running min v", format!("{:.6e}", self.v_running_min));
        line("v clamps", format!("{}", self.clamp_count));
        line("max rel mass drift", format!("{:.3e}", self.max_rel_mass_drift));
        line(
            "max rel identity residual",
            format!("{:.3e}", self.max_rel_identity_residual),
        );
        line("min eta margin", format!("{:.6e}", self.min_eta_margin));
        let c = &self.classification;
        line(
            "classification",
            format!(
                "monotone={} gamma_inf~{:.4} nondegenerate_for_tau={}",
                c.monotone_nondecreasing, c.gamma_inf_estimate, c.nondegenerate_for_tau
            ),
        );
        if let Some(b) = &self.boundedness {
            line("plateau verdict", format!("{:?}", b.verdict).to_lowercase());
            line("u growth factor", format!("{:.4}", b.u_growth_factor));
            line(
                "||v||_inf vs ||Psi||_1 fit",
                format!("slope {:.4e}, intercept {:.4e}", b.v_vs_psi_slope, b.v_vs_psi_intercept),
            );
        }
        s
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Runs `scenario`, writing everything under the output directory. An
/// aborted run still writes its outputs and `final.ksls`; check
/// [`RunSummary::abort_reason`].
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary> {
    let out = opts.out_dir.clone().unwrap_or_else(|| scenario.output.dir.clone());
    create_dir(&out)?;
    if opts.checkpoint_every.is_some() {
        create_dir(&out.join(output::CHECKPOINT_DIR))?;
    }
    if scenario.output.fields {
        create_dir(&out.join(output::SNAPSHOT_DIR))?;
    }
    output::write_json(&out.join(output::SCHEMA_FILE), &output::schema())?;

    let config = &scenario.solver;
    let solver = Solver::new(config.clone())?;
    let (state, sup_u0, sup_v0) = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            ck.check_compatible(config)?;
            log::info!("resuming from {} at step {}", path.display(), ck.state.step);
            (ck.state, ck.sup_u_linf, ck.sup_v_linf)
        }
        None => {
            let (u, v) = make_initial(&scenario.initial, &config.grid, scenario.seed)?;
            let s = solver.init_state(&u, &v)?;
            let (a, b) = (s.u.linf(), s.v.linf());
            (s, a, b)
        }
    };
    let start = state.step;
    let resumed = opts.resume.is_some();
    let total = config.total_steps();
    let last = opts.max_steps.map_or(total, |k| start.saturating_add(k).min(total));
    let stride = config.snapshot_stride as u64;

    let diag = Diagnostics::new(config, state.initial.v_min)?;
    let (diag_path, scal_path) = (out.join(output::DIAGNOSTICS_FILE), out.join(output::SCALARS_FILE));
    let (mut diag_w, mut scal_w) = if resumed {
        (
            SeriesWriter::resume(&diag_path, start)?,
            SeriesWriter::resume(&scal_path, start)?,
        )
    } else {
        (SeriesWriter::create(&diag_path)?, SeriesWriter::create(&scal_path)?)
    };
    let enabled = scenario.diagnostics.enabled;
    if !resumed {
        scal_w.write(&StepScalars::of(&state))?;
        if enabled {
            diag_w.write(&diag.evaluate(&state, None)?)?;
        }
        if scenario.output.fields {
            output::write_snapshot(&output::snapshot_path(&out, 0), &state)?;
        }
    }

    let mut sup_u = sup_u0;
    let mut sup_v = sup_v0;
    let outcome = solver.advance_to(state, last, |prev, next| {
        sup_u = sup_u.max(next.u.linf());
        sup_v = sup_v.max(next.v.linf());
        scal_w.write(&StepScalars::of(next))?;
        let snap = next.step % stride == 0 || next.step == total;
        if snap && enabled {
            diag_w.write(&diag.evaluate(next, Some(prev))?)?;
        }
        if snap && scenario.output.fields {
            output::write_snapshot(&output::snapshot_path(&out, next.step), next)?;
        }
        if let Some(every) = opts.checkpoint_every.filter(|&e| e > 0) {
            if next.step % every == 0 {
                scal_w.flush()?;
                diag_w.flush()?;
                let ck = Checkpoint::new(config, next.clone(), sup_u, sup_v);
                save_checkpoint(&output::checkpoint_path(&out, next.step), &ck)?;
            }
        }
        Ok(())
    });
    scal_w.flush()?;
    diag_w.flush()?;
    let final_state = outcome.final_state;
    // final.ksls is written on success and on abort alike
    let ck = Checkpoint::new(config, final_state.clone(), sup_u, sup_v);
    save_checkpoint(&out.join(output::FINAL_CHECKPOINT), &ck)?;

    let records: Vec<DiagnosticsRecord> = if enabled {
        output::read_series(&diag_path)?
    } else {
        Vec::new()
    };
    let summary = summarize(
        scenario,
        &out,
        &diag,
        start,
        total,
        &final_state,
        outcome.abort_reason,
        sup_u,
        sup_v,
        &records,
    );
    output::write_json(&out.join(output::SUMMARY_JSON), &summary)?;
    std::fs::write(out.join(output::SUMMARY_TXT), summary.text())
        .map_err(|e| Error::io(out.join(output::SUMMARY_TXT), e))?;
    if scenario.diagnostics.strict && final_state.clamp_count > 0 {
        log::warn!("strict diagnostics: {} clamp activations", final_state.clamp_count);
    }
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    scenario: &Scenario,
    out: &Path,
    diag: &Diagnostics,
    start: u64,
    total: u64,
    last: &State,
    abort_reason: Option<String>,
    sup_u: f64,
    sup_v: f64,
    records: &[DiagnosticsRecord],
) -> RunSummary {
    let c = &scenario.solver;
    let mass = last.m * c.grid.measure();
    let fold = |f: &dyn Fn(&DiagnosticsRecord) -> f64, init: f64, op: fn(f64, f64) -> f64| {
        records.iter().map(f).fold(init, op)
    };
    let boundedness = (!records.is_empty()).then(|| boundedness_summary(records, c.tau));
    RunSummary {
        name: scenario.name.clone(),
        out_dir: out.to_path_buf(),
        motility: c.motility.id(),
        tau: c.tau,
        dt: c.dt,
        cells: c.grid.cells().to_vec(),
        start_step: start,
        final_step: last.step,
        total_steps: total,
        t_final: last.t,
        completed: abort_reason.is_none() && last.step == total,
        abort_reason,
        sup_u_linf: sup_u,
        sup_v_linf: sup_v,
        initial_u_linf: last.initial.u_linf,
        initial_v_linf: last.initial.v_linf,
        v_running_min: last.v_running_min,
        clamp_count: last.clamp_count,
        max_rel_mass_drift: fold(&|r| r.mass_drift / mass, 0.0, f64::max),
        max_rel_identity_residual: fold(
            &|r| r.key_identity_residual / r.key_identity_scale.max(f64::MIN_POSITIVE),
            0.0,
            f64::max,
        ),
        min_eta_margin: fold(&|r| r.eta_margin, f64::INFINITY, f64::min),
        classification: diag.classification().clone(),
        boundedness,
    }
}

/// Reads `summary.json` from a finished run.
pub fn read_summary(out: &Path) -> Result<serde_json::Value> {
    let p = out.join(output::SUMMARY_JSON);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))
}
