use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ksls::scenario::{self, output, refine, run_scenario, verify, RunOptions, Scenario, Suite, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "ksls",
    version,
    about = "Local-sensing chemotaxis simulator and invariant checker",
    after_long_help = long_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset: th1, th1-1d, th1-2d, th2, th2-linear, th2-log1p,
    /// contrast-blowup, pure-diffusion
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Scenario> {
        match (&self.config, &self.preset) {
            (Some(p), _) => scenario::load_config(p).with_context(|| format!("loading {}", p.display())),
            (None, Some(name)) => Ok(Scenario::preset(name)?),
            (None, None) => bail!("either --config or --preset is required"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario, writing CSV series, checkpoints and a summary
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory (default: from the scenario, else out/<name>)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a checkpoint every N steps
        #[arg(long, value_name = "STEPS")]
        checkpoint_every: Option<u64>,
        /// Continue from a checkpoint file
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
        /// Stop after at most N steps in this invocation
        #[arg(long, value_name = "STEPS")]
        max_steps: Option<u64>,
    },
    /// Run an invariant suite; exit status 0 iff every check passes
    Verify {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_parser = ["operators", "identities", "energy", "all"], default_value = "all")]
        suite: String,
        /// Cap on time steps for the trajectory suites
        #[arg(long, value_name = "STEPS")]
        max_steps: Option<u64>,
        /// Also write the margin table as JSON
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
    /// Successive dt halvings with observed convergence orders
    Refine {
        #[command(flatten)]
        source: Source,
        /// Number of dt levels (dt, dt/2, …)
        #[arg(long, default_value_t = 4)]
        dt_levels: usize,
        /// Also write the report as JSON
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
}

fn long_help() -> String {
    format!(
        "Outputs of `run` (all under --out):\n  {}, {}, {}, {}, {}, {}/, {}/\n\n{}\n\
         Environment:\n  KSLS_THREADS   worker threads for intra-step parallelism\n  RUST_LOG       log filter (default: info)\n",
        output::DIAGNOSTICS_FILE,
        output::SCALARS_FILE,
        output::SCHEMA_FILE,
        output::SUMMARY_JSON,
        output::FINAL_CHECKPOINT,
        output::CHECKPOINT_DIR,
        output::SNAPSHOT_DIR,
        output::column_help()
    )
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("KSLS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("KSLS_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Run {
            source,
            out,
            checkpoint_every,
            resume,
            max_steps,
        } => {
            let sc = source.load()?;
            let opts = RunOptions {
                out_dir: out,
                checkpoint_every,
                resume,
                max_steps,
            };
            let summary = run_scenario(&sc, &opts)?;
            print!("{}", summary.text());
            Ok(summary.abort_reason.is_none())
        }
        Command::Verify {
            source,
            suite,
            max_steps,
            json,
        } => {
            let sc = source.load()?;
            let suite: Suite = suite.parse()?;
            let opts = VerifyOptions {
                max_steps,
                ..VerifyOptions::default()
            };
            let report = verify(&sc, suite, &opts)?;
            print!("{}", report.table());
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
            let ok = report.passed();
            println!("verify {}: {}", sc.name, if ok { "PASS" } else { "FAIL" });
            Ok(ok)
        }
        Command::Refine {
            source,
            dt_levels,
            json,
        } => {
            let sc = source.load()?;
            let report = refine(&sc, dt_levels)?;
            print!("{}", report.table());
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
            let ok = report.passed();
            println!("refine {}: {}", sc.name, if ok { "PASS" } else { "FAIL" });
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(2)
        }
    }
}
