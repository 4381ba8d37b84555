//! Shipped scenarios.

use crate::error::{Error, Result};

use super::config::RawScenario;

const TH1_1D: &str = r#"
name = "th1-1d"
tau = 2.0
dt = 0.02
t_end = 20.0
snapshot_stride = 10
motility = { name = "sine", params = { base = 2.0, amp = 1.0 } }
[grid]
cells = [128]
lengths = [4.0]
[initial]
preset = "perturbed"
m = 2.0
amplitude = 1.0
modes = [1, 3]
v_mean = 1.5
v_amplitude = 0.5
v_modes = [2]
"#;

const TH1_2D: &str = r#"
name = "th1-2d"
tau = 2.0
dt = 0.02
t_end = 20.0
snapshot_stride = 10
motility = { name = "sine", params = { base = 2.0, amp = 1.0 } }
[grid]
cells = [32, 32]
lengths = [4.0, 4.0]
[initial]
preset = "perturbed"
m = 2.0
amplitude = 0.5
modes = [[1, 0], [1, 2]]
v_mean = 1.5
v_amplitude = 0.5
v_modes = [[0, 1]]
"#;

const TH2_LINEAR: &str = r#"
name = "th2-linear"
tau = 1.0
dt = 4e-3
t_end = 1.0
motility = "linear"
[grid]
cells = [128]
lengths = [4.0]
[initial]
preset = "perturbed"
m = 1.0
amplitude = 0.5
modes = [1]
v_mean = 0.5
v_amplitude = 0.2
v_modes = [2]
"#;

const CONTRAST_BLOWUP: &str = r#"
name = "contrast-blowup"
tau = 1.0
dt = 0.05
t_end = 300.0
snapshot_stride = 20
motility = { name = "exponential", params = { rate = 1.0 } }
[grid]
cells = [48, 48]
lengths = [8.0, 8.0]
[initial]
preset = "bump"
center = [4.0, 4.0]
width = 4.0
mass = 112.0
v_mean = 1.0
v_amplitude = 0.0
"#;

const PURE_DIFFUSION: &str = r#"
name = "pure-diffusion"
tau = 1.0
dt = 1e-2
t_end = 1.0
motility = { name = "constant", params = { c = 1.0 } }
[grid]
cells = [64]
lengths = [1.0]
[initial]
preset = "perturbed"
m = 1.0
amplitude = 0.5
modes = [1, 2]
"#;

/// Canonical preset names; `th1` and `th2` are aliases of the first variant.
pub const PRESET_NAMES: &[&str] = &[
    "th1-1d",
    "th1-2d",
    "th2-linear",
    "th2-log1p",
    "contrast-blowup",
    "pure-diffusion",
];

/// Raw document of a shipped preset.
pub fn preset(name: &str) -> Result<RawScenario> {
    let text = match name {
        "th1" | "th1-1d" => TH1_1D,
        "th1-2d" => TH1_2D,
        "th2" | "th2-linear" => TH2_LINEAR,
        "th2-log1p" => {
            let mut raw = RawScenario::parse(TH2_LINEAR)?;
            raw.name = Some("th2-log1p".into());
            raw.motility = Some(super::config::RawMotility::Name("log1p".into()));
            return Ok(raw);
        }
        "contrast-blowup" => CONTRAST_BLOWUP,
        "pure-diffusion" => PURE_DIFFUSION,
        other => {
            return Err(Error::Config(format!(
                "preset: unknown preset `{other}` (known: th1, th2, {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let mut raw = RawScenario::parse(text)?;
    raw.preset = Some(name.into());
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn all_presets_resolve() {
        for name in PRESET_NAMES.iter().chain(&["th1", "th2"]) {
            let s = Scenario::preset(name).unwrap();
            s.solver.validate().unwrap();
        }
    }

    #[test]
    fn preset_hypotheses() {
        let th1 = Scenario::preset("th1").unwrap();
        let c = th1.solver.motility.classify(th1.solver.tau, 1e-3, 1e4).unwrap();
        assert!(c.nondegenerate_for_tau);
        for name in ["th2-linear", "th2-log1p"] {
            let s = Scenario::preset(name).unwrap();
            assert_eq!(s.solver.tau, 1.0);
            assert!(s.solver.motility.declared_monotone());
        }
        let c = Scenario::preset("contrast-blowup").unwrap();
        assert_eq!(c.solver.grid.dim(), 2);
    }
}
