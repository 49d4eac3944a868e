//! `qpinn`: run experiments, reference solves, self-checks, sweeps and reports.
//!
//! Exit codes: 0 success, 1 failed check or run, 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qpinn::config::{aggregate, AggregateRow, ExperimentFile};
use qpinn::reference::{export_snapshots, run_reference};
use qpinn::trainer::{train, write_run_artifacts, RunSummary};
use qpinn::verify::{verify_grad, verify_physics, verify_qsim, Check};
use qpinn::Error;

const OUT_ENV: &str = "QPINN_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Parser)]
#[command(name = "qpinn", version, about = "Hybrid quantum-classical PINNs for 2D TEz Maxwell fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config value by dotted path, e.g. `--set model.ansatz=cross_mesh`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `$QPINN_OUT/<config stem>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Qsim,
    Grad,
    Physics,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run(Common),
    /// Solve the reference problem with FDTD and export snapshots.
    Reference(Common),
    /// Run an oracle suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        /// Smaller problem sizes.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 200)]
        circuits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every cell of the config's sweep matrix.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Join run summaries under a directory into a CSV table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownName { .. } | Error::Cfl { .. } | Error::Json(_) | Error::Construction(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Check(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Reference(c) => cmd_reference(&c),
        Command::Verify { suite, quick, circuits, seed } => cmd_verify(suite, quick, circuits, seed),
        Command::Sweep { common, jobs } => cmd_sweep(&common, jobs),
        Command::Report { runs, out } => cmd_report(&runs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load(c: &Common) -> Result<ExperimentFile, Failure> {
    if !c.config.is_file() {
        return Err(Failure::Usage(format!("config file {} not found", c.config.display())));
    }
    let mut overrides = c.set.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    Ok(ExperimentFile::load(&c.config, &overrides)?)
}

fn out_dir(c: &Common, suffix: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from);
        let stem = c.config.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        root.join(format!("{stem}{suffix}"))
    })
}

/// Create `dir`, refusing to touch a non-empty one unless `force`.
fn prepare_dir(dir: &Path, force: bool) -> CmdResult {
    let occupied = dir.exists() && fs::read_dir(dir).map_err(io_fail)?.next().is_some();
    if occupied {
        if !force {
            return Err(Failure::Usage(format!("output directory {} is not empty (use --force to replace it)", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(io_fail)?;
    }
    fs::create_dir_all(dir).map_err(io_fail)
}

fn io_fail(e: std::io::Error) -> Failure {
    Failure::Check(e.to_string())
}

fn write_json(path: &Path, v: &serde_json::Value) -> CmdResult {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure::Check(e.to_string()))?;
    fs::write(path, s).map_err(io_fail)
}

fn cmd_run(c: &Common) -> CmdResult {
    let exp = load(c)?;
    let dir = out_dir(c, "");
    prepare_dir(&dir, c.force)?;
    write_json(&dir.join("config.json"), &exp.to_value()?)?;
    let log = train(&exp.train, Some(&dir))?;
    let summary = write_run_artifacts(&dir, &log)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_reference(c: &Common) -> CmdResult {
    let exp = load(c)?;
    let fdtd = exp.reference_config();
    let history = run_reference(&fdtd)?;
    let dir = out_dir(c, "-reference");
    prepare_dir(&dir, c.force)?;
    export_snapshots(&dir, &history, &fdtd)?;
    let u = history.energy_history();
    let drift = u.iter().map(|v| (v / u[0] - 1.0).abs()).fold(0.0, f64::max);
    println!(
        "{} snapshots on {}x{} ({} steps, dt {:.3e}); max |U/U0 - 1| = {:.3e}",
        history.n_times(),
        fdtd.nx,
        fdtd.ny,
        history.steps,
        history.dt,
        drift
    );
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn report_checks(checks: &[Check]) -> CmdResult {
    for c in checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn cmd_verify(suite: Suite, quick: bool, circuits: usize, seed: u64) -> CmdResult {
    match suite {
        Suite::Qsim => report_checks(&verify_qsim(if quick { circuits.min(30) } else { circuits }, seed)?),
        Suite::Physics => report_checks(&verify_physics(seed)?),
        Suite::Grad => {
            let (check, report) = verify_grad(quick, &mut |done, total| eprintln!("  {done}/{total} parameters"))?;
            if let Some(w) = report.worst {
                println!("worst: param {} analytic {:.12e} numeric {:.12e}", w.index, w.analytic, w.numeric);
            }
            for f in report.failures.iter().take(10) {
                println!("mismatch: param {} analytic {:.12e} numeric {:.12e}", f.index, f.analytic, f.numeric);
            }
            report_checks(&[check])
        }
    }
}

fn cmd_sweep(c: &Common, jobs: usize) -> CmdResult {
    let exp = load(c)?;
    let spec = exp.sweep.clone().ok_or_else(|| Failure::Usage("config has no `sweep` section".into()))?;
    let cells = spec.cells(&exp.train)?;
    let dir = out_dir(c, "-sweep");
    prepare_dir(&dir, c.force)?;
    eprintln!("{} cells, {} job(s)", cells.len(), jobs.max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary, String>>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let cdir = dir.join(&cell.name);
                let outcome = train(&cell.config, Some(&cdir))
                    .and_then(|log| write_run_artifacts(&cdir, &log))
                    .map_err(|e| e.to_string());
                match &outcome {
                    Ok(_) => eprintln!("done {}", cell.name),
                    Err(e) => eprintln!("failed {}: {e}", cell.name),
                }
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let results: Vec<Result<RunSummary, String>> =
        results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every cell ran")).collect();
    let status: Vec<serde_json::Value> = cells
        .iter()
        .zip(&results)
        .map(|(cell, r)| match r {
            Ok(_) => serde_json::json!({"cell": cell.name, "group": cell.group, "status": "ok"}),
            Err(e) => serde_json::json!({"cell": cell.name, "group": cell.group, "status": "failed", "error": e}),
        })
        .collect();
    write_json(&dir.join("cells.json"), &serde_json::Value::Array(status))?;
    let grouped: Vec<(String, Option<RunSummary>)> = cells.iter().zip(results).map(|(c, r)| (c.group.clone(), r.ok())).collect();
    let rows = aggregate(&grouped);
    write_csv(&mut csv::Writer::from_path(dir.join("aggregate.csv")).map_err(csv_fail)?, &rows)?;
    let failed = grouped.iter().filter(|(_, s)| s.is_none()).count();
    eprintln!("wrote {}", dir.display());
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} cells failed", grouped.len())));
    }
    Ok(())
}

fn csv_fail(e: csv::Error) -> Failure {
    Failure::Check(e.to_string())
}

fn write_csv<W: std::io::Write>(w: &mut csv::Writer<W>, rows: &[AggregateRow]) -> CmdResult {
    for r in rows {
        w.serialize(r).map_err(csv_fail)?;
    }
    w.flush().map_err(io_fail)
}

fn cmd_report(runs: &Path, out: Option<&Path>) -> CmdResult {
    if !runs.is_dir() {
        return Err(Failure::Usage(format!("{} is not a directory", runs.display())));
    }
    let mut found: Vec<(PathBuf, RunSummary)> = Vec::new();
    for entry in walkdir::WalkDir::new(runs).sort_by_file_name() {
        let entry = entry.map_err(|e| Failure::Check(e.to_string()))?;
        if entry.file_name() == "summary.json" {
            let text = fs::read_to_string(entry.path()).map_err(io_fail)?;
            let s: RunSummary = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", entry.path().display())))?;
            found.push((entry.path().to_path_buf(), s));
        }
    }
    if found.is_empty() {
        return Err(Failure::Usage(format!("no summary.json files under {}", runs.display())));
    }
    let grouped: Vec<(String, Option<RunSummary>)> = found
        .into_iter()
        .map(|(_, s)| {
            let label = format!(
                "{}-{}-{}-{}-energy_{}",
                s.case.as_str(),
                s.variant,
                s.ansatz.as_deref().unwrap_or("none"),
                s.scale.as_deref().unwrap_or("none"),
                if s.energy_loss_enabled { "on" } else { "off" }
            );
            (label, Some(s))
        })
        .collect();
    let rows = aggregate(&grouped);
    match out {
        Some(p) => write_csv(&mut csv::Writer::from_path(p).map_err(csv_fail)?, &rows)?,
        None => write_csv(&mut csv::Writer::from_writer(std::io::stdout()), &rows)?,
    }
    Ok(())
}
