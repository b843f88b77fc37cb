//! `minsurf-lab`: command-line front end for the minimal-surface geometry laboratory.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use minsurf_core::config::RunConfig;
use minsurf_core::pipeline::{run, write_outputs, Command};

const THREADS_ENV: &str = "MINSURF_LAB_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "minsurf-lab",
    version,
    about = "Numerical checks for minimal surfaces in R^{2+2k}"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Identity suite with convergence fits.
    Analyze,
    /// Smallest Dirichlet eigenvalue of the Jacobi form.
    Spectrum,
    /// Search for a parallel normal complex structure.
    Holonomy,
    /// Residual-versus-h tables for the discretization-limited identities.
    Convergence,
    /// List the built-in surfaces.
    Catalog,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Json,
    Csv,
    Both,
}

#[derive(clap::Args, Debug)]
struct Opts {
    /// `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    surface: Option<String>,
    /// Surface parameter, repeatable.
    #[arg(long = "param", value_name = "K=V", global = true)]
    params: Vec<String>,
    /// Number of complex normal directions.
    #[arg(long, global = true)]
    k: Option<u32>,
    /// Catenoid half-height.
    #[arg(long, global = true)]
    tmax: Option<f64>,
    /// Comma-separated grid resolutions.
    #[arg(long, value_name = "LIST", global = true)]
    res: Option<String>,
    /// `analytic` or `fd:H` (`fd:grid` uses the grid spacing).
    #[arg(long, global = true)]
    jet: Option<String>,
    /// Synthetic normal connection for `holonomy` (`so4`).
    #[arg(long, global = true)]
    synthetic: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; without it the JSON report goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
}

impl Cmd {
    fn core(self) -> Command {
        match self {
            Cmd::Analyze => Command::Analyze,
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Holonomy => Command::Holonomy,
            Cmd::Convergence => Command::Convergence,
            Cmd::Catalog => Command::Catalog,
        }
    }
}

fn build_config(o: &Opts) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_text(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v);
    if let Some(s) = &o.surface {
        set("surface", s.clone())?;
    }
    if let Some(s) = &o.synthetic {
        set("synthetic", s.clone())?;
    }
    if let Some(k) = o.k {
        set("k", k.to_string())?;
    }
    if let Some(t) = o.tmax {
        set("tmax", t.to_string())?;
    }
    if let Some(r) = &o.res {
        set("res", r.clone())?;
    }
    if let Some(j) = &o.jet {
        set("jet", j.clone())?;
    }
    if let Some(s) = o.seed {
        set("seed", s.to_string())?;
    }
    if let Some(f) = o.format {
        let name = match f {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Both => "both",
        };
        set("format", name.to_string())?;
    }
    for p in &o.params {
        cfg.set_param(p)?;
    }
    if let Some(d) = &o.out {
        cfg.out_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool> {
    configure_threads()?;
    let cfg = build_config(&cli.opts)?;
    let command = cli.command.core();
    let out = run(command, &cfg).with_context(|| format!("{} failed", command.name()))?;
    // a closed stdout (e.g. piped into `head`) is not an error
    let mut stdout = std::io::stdout().lock();
    match &cfg.out_dir {
        Some(dir) => {
            let written = write_outputs(&out, &cfg, dir)
                .with_context(|| format!("writing to {}", dir.display()))?;
            for c in &out.report.body.checks {
                let _ = writeln!(stdout, "{}", c.summary_line());
            }
            for p in written {
                let _ = writeln!(stdout, "wrote {}", p.display());
            }
        }
        None => {
            for c in &out.report.body.checks {
                eprintln!("{}", c.summary_line());
            }
            let _ = writeln!(stdout, "{}", out.report.to_json());
        }
    }
    let s = &out.report.body.summary;
    eprintln!(
        "{}: {}/{} enforced checks passed",
        command.name(),
        s.passed,
        s.enforced
    );
    Ok(s.all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
