//! `nightfield` batch front end. Machine-readable results go to stdout or `-o`,
//! diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 optimizer did not converge, 4 invalid input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nightfield::fieldmap::{self, Scenario};
use nightfield::footprint::{footprint_report, IlluminanceKernel, DEFAULT_FOOTPRINT_CELL_M, DEFAULT_MOUNT_HEIGHT_M};
use nightfield::interpolation::{leave_one_out, read_samples_csv, sample_frame, InterpMethod, IDW_POWER};
use nightfield::optimizer::{self, OptimizationSpec, OptimizeError};
use nightfield::scenario_io::read_scenario;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "nightfield", version, about = "Street-light field maps, lamp optimization and light footprints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scenario's brightness map to PNG.
    Render {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Grid cell size in meters, overriding the scenario's.
        #[arg(long)]
        cell_size: Option<f64>,
        /// Also report hotspots at or below this SQM reading.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Optimize lamp placement or attenuation.
    Optimize {
        scenario: PathBuf,
        /// OptimizationSpec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Result JSON; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Per-source light footprint of a protected area, as CSV.
    Footprint {
        scenario: PathBuf,
        #[arg(long)]
        area: String,
        #[arg(long, value_enum, default_value_t = Kernel::Attenuation)]
        kernel: Kernel,
        /// Mount height for the inverse-square kernel.
        #[arg(long)]
        mount_height: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_FOOTPRINT_CELL_M)]
        cell_size: f64,
        /// CSV ledger; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Leave-one-out evaluation of an interpolation method on `lat,lon,sqm` samples.
    InterpEval {
        samples: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: InterpMethod,
        /// Power for `idw-vp`.
        #[arg(long)]
        power: Option<f64>,
        /// Reference SQM reading for per-fold error variance.
        #[arg(long)]
        baseline: Option<f64>,
    },
    /// Run the HTTP service.
    Serve(nightfield_service::ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kernel {
    Attenuation,
    #[value(name = "inverse_square", alias = "inverse-square")]
    InverseSquare,
}

fn parse_method(s: &str) -> Result<InterpMethod, String> {
    s.parse().map_err(|_| format!("expected one of {}", InterpMethod::ALL_TAGS.join(", ")))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::NotConverged(_) => 3,
            CliError::Invalid(_) => 4,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    read_scenario(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Fails before any work is done if `path` exists and `--force` was not given.
fn check_output(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("output types serialize");
    out.push(b'\n');
    out
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Render { scenario, output, cell_size, threshold, force } => {
            check_output(&output, force)?;
            let mut s = load_scenario(&scenario)?;
            if let Some(c) = cell_size {
                s = s.with_cell_size(c).map_err(invalid)?;
            }
            let grid = fieldmap::render_grid(&s).map_err(invalid)?;
            let png = fieldmap::encode_png_rgb(&fieldmap::colorize(&grid, grid.i0_max));
            write_output(Some(&output), &png)?;
            let (best, max) = grid.values.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
            let cols = grid.spec.cols();
            let center = grid.spec.index_center(best);
            let mut summary = json!({
                "output": output,
                "width": cols,
                "height": grid.spec.rows(),
                "cell_size_m": s.cell_size_m(),
                "max_intensity": max,
                "brightest": { "row": best / cols, "col": best % cols, "lat": center.lat(), "lon": center.lon() },
            });
            if let Some(t) = threshold {
                let regions: Vec<_> = fieldmap::hotspots(&grid, t)
                    .into_iter()
                    .map(|h| json!({ "cell_count": h.cell_count, "centroid": h.centroid }))
                    .collect();
                summary["hotspots"] = json!(regions);
            }
            write_output(None, &pretty(&summary))
        }
        Command::Optimize { scenario, spec, output, force } => {
            if let Some(o) = &output {
                check_output(o, force)?;
            }
            let s = load_scenario(&scenario)?;
            let spec: OptimizationSpec = serde_json::from_slice(&read(&spec)?).map_err(|e| CliError::Invalid(format!("{}: {e}", spec.display())))?;
            let result = optimizer::solve(&s, &spec).map_err(|e| match e {
                e @ OptimizeError::Solver(_) => CliError::NotConverged(e.to_string()),
                e => invalid(e),
            })?;
            write_output(output.as_deref(), &pretty(&result))?;
            eprintln!(
                "objective {:.6e} -> {:.6e} in {} iterations{}",
                result.objective_before,
                result.objective_after,
                result.iterations,
                if result.converged { "" } else { " (not converged)" }
            );
            if result.converged {
                Ok(())
            } else {
                Err(CliError::NotConverged(format!("optimizer stopped after {} iterations without converging", result.iterations)))
            }
        }
        Command::Footprint { scenario, area, kernel, mount_height, cell_size, output, force } => {
            if let Some(o) = &output {
                check_output(o, force)?;
            }
            let kernel = match (kernel, mount_height) {
                (Kernel::Attenuation, None) => IlluminanceKernel::Attenuation,
                (Kernel::Attenuation, Some(_)) => return Err(CliError::Usage("--mount-height only applies to --kernel inverse_square".into())),
                (Kernel::InverseSquare, h) => IlluminanceKernel::InverseSquare { mount_height_m: h.unwrap_or(DEFAULT_MOUNT_HEIGHT_M) },
            };
            let s = load_scenario(&scenario)?;
            let polygon = s.area(&area).ok_or_else(|| CliError::Invalid(format!("scenario has no protected area {area:?}")))?;
            let report = footprint_report(&s, polygon, &kernel, cell_size).map_err(invalid)?;
            write_output(output.as_deref(), report.to_csv().as_bytes())?;
            eprintln!("area total {:.6e} over {} cells", report.area_total, report.cells);
            Ok(())
        }
        Command::InterpEval { samples, method, power, baseline } => {
            let method = match (method, power) {
                (InterpMethod::IdwVp { .. }, p) => InterpMethod::IdwVp { power: p.unwrap_or(IDW_POWER) },
                (m, None) => m,
                (_, Some(_)) => return Err(CliError::Usage("--power only applies to --method idw-vp".into())),
            };
            let pts = read_samples_csv(&read(&samples)?).map_err(|e| CliError::Invalid(format!("{}: {e}", samples.display())))?;
            let frame = sample_frame(&pts).map_err(invalid)?;
            let mut report = leave_one_out(method, &pts, &frame).map_err(invalid)?;
            if let Some(b) = baseline {
                if !(b > 0.0 && b.is_finite()) {
                    return Err(CliError::Usage("--baseline must be a positive SQM reading".into()));
                }
                report = report.with_baseline(b);
            }
            write_output(None, &pretty(&report))
        }
        Command::Serve(args) => {
            nightfield_service::init_tracing(&args.log_level);
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "<runtime>".into(), source })?;
            let root = args.root.clone();
            rt.block_on(nightfield_service::serve(args)).map_err(|source| CliError::Io { path: root, source })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if !matches!(cli.command, Command::Serve(_)) {
        nightfield_service::init_tracing("warn");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nightfield: {e}");
            ExitCode::from(e.code())
        }
    }
}
