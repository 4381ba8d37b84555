//! Scenario configuration files.
//!
//! A scenario is a TOML document. Every table rejects unknown keys. A
//! top-level `preset = "<name>"` starts from a shipped scenario and lets the
//! file override any key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{SolverConfig, DEFAULT_IDENTITY_TOLERANCE};
use crate::grid::Grid;
use crate::motility::{CubicTable, MotilityFunction};
use crate::operators::{Backend, DEFAULT_TOLERANCE};

use super::presets;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub tau: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub snapshot_stride: Option<usize>,
    pub linear_tolerance: Option<f64>,
    pub identity_tolerance: Option<f64>,
    pub backend: Option<Backend>,
    pub seed: Option<u64>,
    pub grid: Option<RawGrid>,
    pub motility: Option<RawMotility>,
    pub initial: Option<RawInitial>,
    pub diagnostics: Option<RawDiagnostics>,
    pub output: Option<RawOutput>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub cells: Option<Vec<usize>>,
    pub lengths: Option<Vec<f64>>,
}

/// `motility = "linear"` or `motility = { name = "sine", params = { … } }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawMotility {
    Name(String),
    Full(RawMotilityTable),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMotilityTable {
    pub name: String,
    #[serde(default)]
    pub params: MotilityParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotilityParams {
    pub c: Option<f64>,
    pub scale: Option<f64>,
    pub base: Option<f64>,
    pub amp: Option<f64>,
    pub rate: Option<f64>,
    pub knots: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    pub derivatives: Option<Vec<f64>>,
}

/// A cosine mode index: `k` in 1D, `[k0, k1]` in 2D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeSpec {
    Scalar(usize),
    Multi(Vec<usize>),
}

impl ModeSpec {
    pub fn indices(&self, dim: usize) -> Vec<usize> {
        let mut k = match self {
            ModeSpec::Scalar(k) => vec![*k],
            ModeSpec::Multi(v) => v.clone(),
        };
        k.resize(dim, 0);
        k
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInitial {
    pub preset: Option<String>,
    pub m: Option<f64>,
    pub amplitude: Option<f64>,
    pub modes: Option<Vec<ModeSpec>>,
    pub noise: Option<f64>,
    pub v_mean: Option<f64>,
    pub v_amplitude: Option<f64>,
    pub v_modes: Option<Vec<ModeSpec>>,
    pub center: Option<Vec<f64>>,
    pub width: Option<f64>,
    pub mass: Option<f64>,
    pub u_path: Option<PathBuf>,
    pub v_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDiagnostics {
    pub enabled: Option<bool>,
    pub strict: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
    pub fields: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl RawScenario {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Keys set in `top` replace those in `self`, table by table.
    pub fn overlay(mut self, top: &RawScenario) -> RawScenario {
        overlay!(self, top; preset, name, tau, dt, t_end, snapshot_stride, linear_tolerance,
            identity_tolerance, backend, seed, motility);
        if let Some(g) = &top.grid {
            let base = self.grid.get_or_insert_with(RawGrid::default);
            overlay!(base, g; cells, lengths);
        }
        if let Some(i) = &top.initial {
            let base = self.initial.get_or_insert_with(RawInitial::default);
            if i.preset.is_some() && i.preset != base.preset {
                // a different initial shape starts from a clean table
                *base = RawInitial::default();
            }
            overlay!(base, i; preset, m, amplitude, modes, noise, v_mean, v_amplitude, v_modes,
                center, width, mass, u_path, v_path);
        }
        if let Some(d) = &top.diagnostics {
            let base = self.diagnostics.get_or_insert_with(RawDiagnostics::default);
            overlay!(base, d; enabled, strict);
        }
        if let Some(o) = &top.output {
            let base = self.output.get_or_insert_with(RawOutput::default);
            overlay!(base, o; dir, fields);
        }
        self
    }

    /// Applies the named preset underneath this document.
    pub fn with_preset(self) -> Result<RawScenario> {
        match &self.preset {
            Some(name) => Ok(presets::preset(name)?.overlay(&self)),
            None => Ok(self),
        }
    }
}

/// Initial-data recipe.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum InitialSpec {
    Homogeneous {
        m: f64,
        v_mean: f64,
    },
    /// `u = m + amplitude·Σ modes + noise`, `v = v_mean + v_amplitude·Σ v_modes`.
    Perturbed {
        m: f64,
        amplitude: f64,
        modes: Vec<Vec<usize>>,
        noise: f64,
        v_mean: f64,
        v_amplitude: f64,
        v_modes: Vec<Vec<usize>>,
    },
    /// Gaussian of total `mass` at `center`, plus the mode-perturbed `v`.
    Bump {
        center: Vec<f64>,
        width: f64,
        mass: f64,
        v_mean: f64,
        v_amplitude: f64,
        v_modes: Vec<Vec<usize>>,
    },
    FromFile {
        u_path: PathBuf,
        v_path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsOptions {
    pub enabled: bool,
    /// Clamp activations fail the identity suite.
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputOptions {
    pub dir: PathBuf,
    /// Write per-snapshot field CSVs.
    pub fields: bool,
}

/// Fully validated scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub solver: SolverConfig,
    pub initial: InitialSpec,
    pub diagnostics: DiagnosticsOptions,
    pub output: OutputOptions,
    pub seed: u64,
}

fn required<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

fn motility_from(raw: &RawMotility) -> Result<MotilityFunction> {
    let (name, p) = match raw {
        RawMotility::Name(n) => (n.as_str(), MotilityParams::default()),
        RawMotility::Full(t) => (t.name.as_str(), t.params.clone()),
    };
    let allowed: &[&str] = match name {
        "constant" => &["c"],
        "linear" => &["scale"],
        "log1p" => &[],
        "sine" => &["base", "amp"],
        "exponential" => &["rate"],
        "table" => &["knots", "values", "derivatives"],
        other => return Err(Error::Config(format!(
            "motility.name: unknown motility `{other}` (expected constant, linear, log1p, sine, exponential or table)"
        ))),
    };
    let given = [
        ("c", p.c.is_some()),
        ("scale", p.scale.is_some()),
        ("base", p.base.is_some()),
        ("amp", p.amp.is_some()),
        ("rate", p.rate.is_some()),
        ("knots", p.knots.is_some()),
        ("values", p.values.is_some()),
        ("derivatives", p.derivatives.is_some()),
    ];
    if let Some((k, _)) = given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
        return Err(Error::Config(format!(
            "motility.params.{k}: not a parameter of motility `{name}`"
        )));
    }
    let mf = match name {
        "constant" => MotilityFunction::Constant { c: p.c.unwrap_or(1.0) },
        "linear" => MotilityFunction::Linear {
            scale: p.scale.unwrap_or(1.0),
        },
        "log1p" => MotilityFunction::Log1p,
        "sine" => MotilityFunction::Sine {
            base: p.base.unwrap_or(2.0),
            amp: p.amp.unwrap_or(1.0),
        },
        "exponential" => MotilityFunction::Exponential {
            rate: p.rate.unwrap_or(1.0),
        },
        _ => MotilityFunction::Table(CubicTable::new(
            required(&p.knots, "motility.params.knots")?,
            required(&p.values, "motility.params.values")?,
            p.derivatives.clone(),
        )?),
    };
    mf.validate()?;
    Ok(mf)
}

fn modes(raw: &Option<Vec<ModeSpec>>, dim: usize, default: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    raw.as_ref()
        .map(|m| m.iter().map(|k| k.indices(dim)).collect())
        .unwrap_or(default)
}

fn initial_from(raw: &RawInitial, grid: &Grid, base_dir: &Path) -> Result<InitialSpec> {
    let dim = grid.dim();
    let first_mode = {
        let mut k = vec![0; dim];
        k[0] = 1;
        vec![k]
    };
    let kind = raw.preset.as_deref().unwrap_or("perturbed");
    let allowed: &[&str] = match kind {
        "homogeneous" => &["m", "v_mean"],
        "perturbed" => &["m", "amplitude", "modes", "noise", "v_mean", "v_amplitude", "v_modes"],
        "bump" => &["center", "width", "mass", "v_mean", "v_amplitude", "v_modes"],
        "from_file" => &["u_path", "v_path"],
        other => {
            return Err(Error::Config(format!(
                "initial.preset: unknown initial preset `{other}` (expected homogeneous, perturbed, bump or from_file)"
            )))
        }
    };
    let given = [
        ("m", raw.m.is_some()),
        ("amplitude", raw.amplitude.is_some()),
        ("modes", raw.modes.is_some()),
        ("noise", raw.noise.is_some()),
        ("v_mean", raw.v_mean.is_some()),
        ("v_amplitude", raw.v_amplitude.is_some()),
        ("v_modes", raw.v_modes.is_some()),
        ("center", raw.center.is_some()),
        ("width", raw.width.is_some()),
        ("mass", raw.mass.is_some()),
        ("u_path", raw.u_path.is_some()),
        ("v_path", raw.v_path.is_some()),
    ];
    if let Some((k, _)) = given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
        return Err(Error::Config(format!(
            "initial.{k}: not a parameter of initial preset `{kind}`"
        )));
    }
    let positive = |v: f64, key: &str| -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("initial.{key} must be positive, got {v}")))
        }
    };
    Ok(match kind {
        "homogeneous" => {
            let m = positive(raw.m.unwrap_or(1.0), "m")?;
            InitialSpec::Homogeneous {
                m,
                v_mean: positive(raw.v_mean.unwrap_or(m), "v_mean")?,
            }
        }
        "perturbed" => {
            let m = positive(raw.m.unwrap_or(1.0), "m")?;
            let u_modes = modes(&raw.modes, dim, first_mode.clone());
            InitialSpec::Perturbed {
                m,
                amplitude: raw.amplitude.unwrap_or(0.1),
                noise: raw.noise.unwrap_or(0.0),
                v_mean: positive(raw.v_mean.unwrap_or(m), "v_mean")?,
                v_amplitude: raw.v_amplitude.unwrap_or(0.0),
                v_modes: modes(&raw.v_modes, dim, u_modes.clone()),
                modes: u_modes,
            }
        }
        "bump" => {
            let center = match &raw.center {
                Some(c) if c.len() == dim => c.clone(),
                Some(c) => {
                    return Err(Error::Config(format!(
                        "initial.center needs {dim} coordinates, got {}",
                        c.len()
                    )))
                }
                None => grid.lengths().iter().map(|l| 0.5 * l).collect(),
            };
            let mass = positive(raw.mass.unwrap_or(grid.measure()), "mass")?;
            InitialSpec::Bump {
                center,
                width: positive(raw.width.unwrap_or(0.1 * grid.lengths()[0]), "width")?,
                v_mean: positive(raw.v_mean.unwrap_or(mass / grid.measure()), "v_mean")?,
                v_amplitude: raw.v_amplitude.unwrap_or(0.0),
                v_modes: modes(&raw.v_modes, dim, first_mode),
                mass,
            }
        }
        _ => InitialSpec::FromFile {
            u_path: base_dir.join(required(&raw.u_path, "initial.u_path")?),
            v_path: base_dir.join(required(&raw.v_path, "initial.v_path")?),
        },
    })
}

impl Scenario {
    /// Validates a raw document. Relative paths resolve against `base_dir`.
    pub fn from_raw(raw: &RawScenario, base_dir: &Path) -> Result<Scenario> {
        let raw = raw.clone().with_preset()?;
        let tau = required(&raw.tau, "tau")?;
        if !(tau > 0.0) {
            return Err(Error::Config("tau must be positive (fully parabolic case)".into()));
        }
        let grid_raw = required(&raw.grid, "grid")?;
        let cells = required(&grid_raw.cells, "grid.cells")?;
        let lengths = grid_raw.lengths.clone().unwrap_or_else(|| vec![1.0; cells.len()]);
        let grid = Grid::new(cells.len(), &cells, &lengths).map_err(|e| Error::Config(format!("grid: {e}")))?;
        let motility = motility_from(&required(&raw.motility, "motility")?)?;
        let solver = SolverConfig {
            tau,
            dt: required(&raw.dt, "dt")?,
            t_end: required(&raw.t_end, "t_end")?,
            grid,
            motility,
            linear_tolerance: raw.linear_tolerance.unwrap_or(DEFAULT_TOLERANCE),
            identity_tolerance: raw.identity_tolerance.unwrap_or(DEFAULT_IDENTITY_TOLERANCE),
            snapshot_stride: raw.snapshot_stride.unwrap_or(1),
            backend: raw.backend.unwrap_or_default(),
        };
        solver.validate()?;
        let initial = initial_from(&raw.initial.clone().unwrap_or_default(), &grid, base_dir)?;
        let d = raw.diagnostics.clone().unwrap_or_default();
        let o = raw.output.clone().unwrap_or_default();
        let name = raw
            .name
            .clone()
            .or_else(|| raw.preset.clone())
            .unwrap_or_else(|| "scenario".into());
        Ok(Scenario {
            output: OutputOptions {
                dir: o
                    .dir
                    .map(|d| base_dir.join(d))
                    .unwrap_or_else(|| PathBuf::from("out").join(&name)),
                fields: o.fields.unwrap_or(false),
            },
            name,
            solver,
            initial,
            diagnostics: DiagnosticsOptions {
                enabled: d.enabled.unwrap_or(true),
                strict: d.strict.unwrap_or(false),
            },
            seed: raw.seed.unwrap_or(0),
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Scenario> {
        Scenario::from_raw(&RawScenario::parse(text)?, base_dir)
    }

    /// Shipped preset by name.
    pub fn preset(name: &str) -> Result<Scenario> {
        let raw = RawScenario {
            preset: Some(name.into()),
            ..RawScenario::default()
        };
        Scenario::from_raw(&raw, Path::new("."))
    }
}

/// Reads and validates a scenario file.
pub fn load_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let raw = RawScenario::parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Scenario::from_raw(&raw, base)
}
