//! The `refine` command: successive dt halvings at fixed h.

use serde::Serialize;

use crate::diagnostics::observed_orders;
use crate::error::{Error, Result};
use crate::grid::Field;

use super::config::Scenario;
use super::verify::{exact_residuals, trace, Trace, ROUNDOFF_FLOOR};

/// Window of observed orders accepted for first-order quantities.
pub const FIRST_ORDER_WINDOW: (f64, f64) = (0.8, 1.2);
/// Allowed change of a dt-independent residual per halving.
pub const DT_INDEPENDENCE_FACTOR: f64 = 10.0;
/// Comparison violations at or below this (relative) count as absent.
pub const COMPARISON_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct OrderSeries {
    pub name: String,
    /// Sup over the run, one entry per dt level.
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
    pub expected: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefineReport {
    pub scenario: String,
    pub dts: Vec<f64>,
    pub series: Vec<OrderSeries>,
}

impl RefineReport {
    pub fn passed(&self) -> bool {
        self.series.iter().all(|s| s.pass)
    }

    pub fn series(&self, name: &str) -> Option<&OrderSeries> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn table(&self) -> String {
        let dts: Vec<String> = self.dts.iter().map(|d| format!("{d:.3e}")).collect();
        let mut s = format!("dt levels: {}\n", dts.join(", "));
        s.push_str(&format!(
            "{:<30} {:<44} {:<28} {:<18} {}\n",
            "series", "errors", "orders", "expected", "status"
        ));
        for r in &self.series {
            let e: Vec<String> = r.errors.iter().map(|x| format!("{x:.3e}")).collect();
            let o: Vec<String> = r.orders.iter().map(|x| format!("{x:.3}")).collect();
            s.push_str(&format!(
                "{:<30} {:<44} {:<28} {:<18} {}\n",
                r.name,
                e.join(" "),
                o.join(" "),
                r.expected,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        s
    }
}

fn sup(t: &Trace, f: impl Fn(&crate::diagnostics::DiagnosticsRecord) -> Option<f64>) -> f64 {
    t.records.iter().filter_map(f).fold(0.0, f64::max)
}

fn first_order(name: &str, errors: Vec<f64>) -> OrderSeries {
    let orders = observed_orders(&errors);
    let (lo, hi) = FIRST_ORDER_WINDOW;
    OrderSeries {
        name: name.into(),
        pass: !orders.is_empty() && orders.iter().all(|p| (lo..=hi).contains(p)),
        expected: format!("order in [{lo}, {hi}]"),
        errors,
        orders,
    }
}

fn l2_diff(a: &Field, b: &Field) -> Result<f64> {
    let d = a.sub(b)?;
    Ok(d.dot(&d)?.sqrt())
}

/// Runs `levels` dt values `dt, dt/2, …` to the scenario's `t_end`.
pub fn refine(scenario: &Scenario, levels: usize) -> Result<RefineReport> {
    if levels < 2 {
        return Err(Error::Config("refine needs at least 2 dt levels".into()));
    }
    let mut traces = Vec::with_capacity(levels);
    let mut dts = Vec::with_capacity(levels);
    for j in 0..levels {
        let mut cfg = scenario.solver.clone();
        cfg.dt = scenario.solver.dt / f64::powi(2.0, j as i32);
        log::info!("refine level {j}: dt = {:e}", cfg.dt);
        dts.push(cfg.dt);
        traces.push(trace(scenario, &cfg, None)?);
    }

    let mut series = vec![
        first_order(
            "l1_law_deviation",
            traces.iter().map(|t| sup(t, |r| Some(r.l1_law_deviation))).collect(),
        ),
        first_order(
            "lyapunov_balance_residual",
            traces
                .iter()
                .map(|t| sup(t, |r| r.lyapunov_balance_residual.map(f64::abs)))
                .collect(),
        ),
        first_order(
            "w_identity_collocated",
            traces.iter().map(|t| sup(t, |r| r.w_identity_collocated)).collect(),
        ),
    ];
    if levels >= 3 {
        let finals: Vec<&Field> = traces.iter().map(|t| &t.outcome.final_state.u).collect();
        let diffs = finals
            .windows(2)
            .map(|w| l2_diff(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        series.push(first_order("self_convergence_u", diffs));
    }

    // ε(dt) = worst relative violation of the comparison bound
    if traces[0].monotone {
        let eps: Vec<f64> = traces
            .iter()
            .map(|t| {
                sup(t, |r| {
                    Some((-r.gamma_comparison_margin? / r.gamma_comparison_scale).max(0.0))
                })
            })
            .collect();
        let orders = observed_orders(&eps);
        let pass = eps
            .windows(2)
            .zip(&orders)
            .all(|(w, p)| w[1] <= COMPARISON_FLOOR || *p >= FIRST_ORDER_WINDOW.0);
        series.push(OrderSeries {
            name: "comparison_violation".into(),
            errors: eps,
            orders,
            expected: format!("order >= {} or <= {COMPARISON_FLOOR:e}", FIRST_ORDER_WINDOW.0),
            pass,
        });
    }

    let exact: Vec<[(&str, f64); 3]> = traces.iter().map(exact_residuals).collect();
    for k in 0..3 {
        let errors: Vec<f64> = exact.iter().map(|e| e[k].1).collect();
        let ratios: Vec<f64> = errors
            .windows(2)
            .map(|w| w[0].max(ROUNDOFF_FLOOR) / w[1].max(ROUNDOFF_FLOOR))
            .collect();
        let f = DT_INDEPENDENCE_FACTOR;
        series.push(OrderSeries {
            name: format!("{} (dt-independent)", exact[0][k].0),
            pass: ratios.iter().all(|r| (1.0 / f..=f).contains(r)),
            errors,
            orders: ratios.iter().map(|r| r.log2()).collect(),
            expected: format!("|order| <= {:.2}", f.log2()),
        });
    }
    Ok(RefineReport {
        scenario: scenario.name.clone(),
        dts,
        series,
    })
}
