//! CSV series, field snapshots and the schema file under an output
//! directory.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::evolution::State;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SCALARS_FILE: &str = "scalars.csv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const FINAL_CHECKPOINT: &str = "final.ksls";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Columns of `scalars.csv`, one row per step.
pub const SCALAR_COLUMNS: &[(&str, &str)] = &[
    ("step", "step index"),
    ("t", "time"),
    ("mass_u", "∫u"),
    ("l1_v", "‖v‖₁"),
    ("linf_u", "‖u‖∞"),
    ("linf_v", "‖v‖∞"),
    ("min_u", "min u"),
    ("min_v", "min v"),
    ("psi_l1", "‖Ψ‖₁"),
    ("psi_linf", "‖Ψ‖∞"),
];

/// Columns of `snapshots/state_<step>.csv`; `y` only in 2D.
pub const SNAPSHOT_COLUMNS: &[(&str, &str)] = &[
    ("cell", "row-major cell index"),
    ("x", "cell-center coordinate along axis 0"),
    ("y", "cell-center coordinate along axis 1"),
    ("u", "cell density"),
    ("v", "signal"),
    ("w", "A⁻¹u"),
    ("Psi", "Ψ"),
    ("psi", "A⁻¹Ψ"),
    ("eta", "free heat flow of w^in − v^in"),
];

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("ckpt_{step:08}.ksls"))
}

pub fn snapshot_path(out: &Path, step: u64) -> PathBuf {
    out.join(SNAPSHOT_DIR).join(format!("state_{step:08}.csv"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Checkpoint(format!("{}: {other:?}", path.display())),
    }
}

/// Append-only CSV writer for one series.
pub struct SeriesWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl SeriesWriter {
    /// Starts a fresh file, replacing any existing one.
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(SeriesWriter {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(BufWriter::new(f)),
        })
    }

    /// Keeps the rows with `step ≤ last_step` of an existing file and appends
    /// after them. A missing file starts fresh.
    pub fn resume(path: &Path, last_step: u64) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let col = header
            .split(',')
            .position(|c| c == "step")
            .ok_or_else(|| Error::Checkpoint(format!("{}: no step column", path.display())))?;
        let mut kept = String::with_capacity(text.len());
        kept.push_str(header);
        kept.push('\n');
        for line in lines {
            let step: Option<u64> = line.split(',').nth(col).and_then(|s| s.parse().ok());
            if step.is_some_and(|s| s <= last_step) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        let f = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(SeriesWriter {
            path: path.to_path_buf(),
            inner: csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(BufWriter::new(f)),
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.inner.serialize(row).map_err(|e| csv_err(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every row of a series file.
pub fn read_series<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Writes all six fields of `state` with cell coordinates.
pub fn write_snapshot(path: &Path, state: &State) -> Result<()> {
    let grid = *state.grid();
    let io = |e| Error::io(path, e);
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    let fields = state.fields();
    let mut header = vec!["cell", "x"];
    if grid.dim() == 2 {
        header.push("y");
    }
    header.extend(fields.iter().map(|(n, _)| *n));
    writeln!(f, "{}", header.join(",")).map_err(io)?;
    for k in 0..grid.len() {
        let x = grid.coords(k);
        let mut row = format!("{k},{}", x[0]);
        if grid.dim() == 2 {
            row.push_str(&format!(",{}", x[1]));
        }
        for (_, field) in &fields {
            row.push_str(&format!(",{}", field.values()[k]));
        }
        writeln!(f, "{row}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Machine-readable description of every CSV written by `run`.
pub fn schema() -> serde_json::Value {
    let cols = |c: &[(&str, &str)]| {
        c.iter()
            .map(|(n, d)| serde_json::json!({ "name": n, "description": d }))
            .collect::<Vec<_>>()
    };
    serde_json::json!({
        DIAGNOSTICS_FILE: {
            "rows": "one per snapshot (every snapshot_stride steps, plus the first and last)",
            "empty_cell": "quantity not applicable (needs the previous step, or monotone motility)",
            "columns": cols(DiagnosticsRecord::COLUMNS),
        },
        SCALARS_FILE: { "rows": "one per step", "columns": cols(SCALAR_COLUMNS) },
        "snapshots/state_<step>.csv": { "rows": "one per cell", "columns": cols(SNAPSHOT_COLUMNS) },
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Human-readable column reference, used by `--help`.
pub fn column_help() -> String {
    let mut s = String::from("diagnostics.csv columns:\n");
    for (n, d) in DiagnosticsRecord::COLUMNS {
        s.push_str(&format!("  {n:<26} {d}\n"));
    }
    s.push_str("scalars.csv columns:\n");
    for (n, d) in SCALAR_COLUMNS {
        s.push_str(&format!("  {n:<26} {d}\n"));
    }
    s
}
