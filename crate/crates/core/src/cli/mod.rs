//! Batch front end: `openfock <solve|sample|reduce|validate> --config PATH`.
//!
//! Every run writes `manifest.toml` (the resolved config plus version and
//! subcommand, itself a valid config) and one comma-separated table into
//! the output directory:
//!
//! - `solve.csv`: `time,p_0..p_Nmax,mass_residual,leakage,min_entry`
//! - `sample.csv`: `time,p_0..p_Nmax,se_0..se_Nmax`, plus `sample_summary.toml`
//! - `reduce.csv`: `time,cme_p_*,ssa_p_*,ssa_se_*,mf_*`
//! - `validate.csv`: `invariant,status,value,threshold`
//!
//! Multi-species columns are labelled by count tuples, e.g. `p_1_0`.
//! `OPENFOCK_THREADS` sets the worker count.

pub mod config;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{parse_config, parse_with_overrides, ExperimentConfig, ManifestSection, Overrides};
pub use validate::{validate, Check, Status};

use crate::error::{Error, Result};
use crate::fockspace::Layout;
use crate::reduction::{cme_generator, cme_solve, mean_field_ode, ssa_checkpoints};
use crate::sampler::ensemble_run;
use crate::solver::integrate;

#[derive(Debug, Parser)]
#[command(name = "openfock", version, about = "Fock-space hierarchy solver, particle sampler and well-mixed reductions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Integrate the truncated hierarchy.
    Solve(RunArgs),
    /// Run the particle sampler ensemble.
    Sample(RunArgs),
    /// Well-mixed master equation, SSA and mean-field reductions.
    Reduce(RunArgs),
    /// Run the invariant suite; exits non-zero on any failure.
    Validate(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Level cap applied to every species.
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Time step of the solver, or of the sampler for `sample`.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-final")]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Sample,
    Reduce,
    Validate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Sample => "sample",
            Mode::Reduce => "reduce",
            Mode::Validate => "validate",
        }
    }
}

impl Command {
    fn split(&self) -> (Mode, &RunArgs) {
        match self {
            Command::Solve(a) => (Mode::Solve, a),
            Command::Sample(a) => (Mode::Sample, a),
            Command::Reduce(a) => (Mode::Reduce, a),
            Command::Validate(a) => (Mode::Validate, a),
        }
    }
}

/// Files written by a run and whether every check passed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Parses the config named by `cmd`, applies its overrides and runs it.
pub fn execute(cmd: &Command) -> Result<RunOutcome> {
    let (mode, args) = cmd.split();
    let text = fs::read_to_string(&args.config)?;
    let overrides = Overrides {
        seed: args.seed,
        nmax: args.nmax,
        dt: args.dt,
        t_final: args.t_final,
        trajectories: args.trajectories,
        out: args.out.as_ref().map(|p| p.to_string_lossy().into_owned()),
        sampler_time: mode == Mode::Sample,
    };
    let cfg = parse_with_overrides(&text, &overrides)?;
    run(mode, &cfg, Path::new(&cfg.output.dir))
}

/// Sizes the global worker pool from `OPENFOCK_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("OPENFOCK_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| config::bad("environment", "OPENFOCK_THREADS", format!("`{v}` is not a thread count")))?;
        // A pool built earlier in the process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Column labels of the copy-number states of `layout`.
pub fn state_labels(layout: &Layout) -> Vec<String> {
    (0..layout.n_levels())
        .map(|idx| {
            let counts: Vec<String> = layout.counts(idx).iter().map(usize::to_string).collect();
            counts.join("_")
        })
        .collect()
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_manifest(dir: &Path, cfg: &ExperimentConfig, mode: Mode) -> Result<PathBuf> {
    let mut resolved = cfg.clone();
    resolved.manifest = Some(ManifestSection { version: env!("CARGO_PKG_VERSION").into(), subcommand: mode.name().into() });
    let path = dir.join("manifest.toml");
    fs::write(&path, resolved.to_toml())?;
    Ok(path)
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    digest: &'a str,
    n_trajectories: usize,
    /// Fired events per channel in coupling order.
    event_counts: &'a [u64],
    /// Fraction of trajectories above the level caps per checkpoint.
    overflow: &'a [f64],
}

/// Runs `mode` for a resolved config, writing into `dir`.
pub fn run(mode: Mode, cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let mut files = vec![write_manifest(dir, cfg, mode)?];
    let layout = cfg.layout()?;
    let labels = state_labels(&layout);
    let cols = |prefix: &str| labels.iter().map(|l| format!("{prefix}{l}")).collect::<Vec<_>>();
    let mut checks = Vec::new();
    match mode {
        Mode::Solve => {
            let (_, rep) = integrate(&cfg.problem()?)?;
            let mut header = vec!["time".to_string()];
            header.extend(cols("p_"));
            header.extend(["mass_residual", "leakage", "min_entry"].map(String::from));
            let rows: Vec<Vec<f64>> = (0..rep.len())
                .map(|k| {
                    let mut row = vec![rep.times[k]];
                    row.extend(&rep.marginals[k]);
                    row.extend([rep.mass_residual[k], rep.leakage[k], rep.min_entry[k]]);
                    row
                })
                .collect();
            let path = dir.join("solve.csv");
            write_table(&path, &header, &rows)?;
            files.push(path);
        }
        Mode::Sample => {
            let rep = ensemble_run(&cfg.sampler_run()?)?;
            let se = rep.standard_errors();
            let mut header = vec!["time".to_string()];
            header.extend(cols("p_"));
            header.extend(cols("se_"));
            let rows: Vec<Vec<f64>> = (0..rep.times.len())
                .map(|k| {
                    let mut row = vec![rep.times[k]];
                    row.extend(&rep.probs[k]);
                    row.extend(&se[k]);
                    row
                })
                .collect();
            let path = dir.join("sample.csv");
            write_table(&path, &header, &rows)?;
            files.push(path);
            let summary = SampleSummary {
                digest: &rep.digest,
                n_trajectories: rep.n_trajectories,
                event_counts: &rep.event_counts,
                overflow: &rep.overflow,
            };
            let path = dir.join("sample_summary.toml");
            fs::write(&path, toml::to_string(&summary).expect("summary serialises"))?;
            files.push(path);
        }
        Mode::Reduce => {
            let prob = cfg.problem()?;
            let volume = prob.grid.domain_volume();
            let model = cme_generator(&prob.couplings, volume, &layout)?;
            let n0 = cfg.solver.initial_counts.clone().unwrap_or_else(|| vec![0; layout.species()]);
            let p0 = model.point_mass(&n0)?;
            let times: Vec<f64> =
                (0..=prob.outputs).map(|k| prob.t_final * k as f64 / prob.outputs as f64).collect();
            let ssa = ssa_checkpoints(&model, &p0, &times, cfg.sampler.seed, cfg.sampler.trajectories)?;
            let se = ssa.standard_errors();
            let n0f: Vec<f64> = n0.iter().map(|&n| n as f64).collect();
            let mf = mean_field_ode(&prob.couplings, volume, &n0f, &times)?;
            let mut header = vec!["time".to_string()];
            header.extend(cols("cme_p_"));
            header.extend(cols("ssa_p_"));
            header.extend(cols("ssa_se_"));
            header.extend((0..layout.species()).map(|s| format!("mf_{s}")));
            let mut rows = Vec::with_capacity(times.len());
            for (k, &t) in times.iter().enumerate() {
                let mut row = vec![t];
                row.extend(cme_solve(&model, &p0, t)?);
                row.extend(&ssa.probs[k]);
                row.extend(&se[k]);
                row.extend(&mf.values[k]);
                rows.push(row);
            }
            let path = dir.join("reduce.csv");
            write_table(&path, &header, &rows)?;
            files.push(path);
        }
        Mode::Validate => {
            checks = validate(cfg)?;
            let path = dir.join("validate.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(["invariant", "status", "value", "threshold"]).map_err(csv_err)?;
            for c in &checks {
                w.write_record([c.name.clone(), c.status.to_string(), c.value.to_string(), c.threshold.to_string()])
                    .map_err(csv_err)?;
            }
            w.flush()?;
            files.push(path);
        }
    }
    let passed = checks.iter().all(|c| c.status != Status::Fail);
    Ok(RunOutcome { files, passed, checks })
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use std::process::ExitCode;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match execute(&cli.command) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{:<4} {:<36} {:.3e} (threshold {:.1e})", c.status, c.name, c.value, c.threshold);
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
