//! Command-line experiment driver: synthetic low-rank completion sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use matrix_irls::problem::DecayProfile;
use matrix_irls_cli::{emit_report, run_sweep, ExperimentSpec, ReportFormat, SolverOverrides};

/// Runs seeded synthetic matrix completion trials over a grid of
/// oversampling factors and writes a median-error report.
///
/// Trials execute in parallel; bound the worker count with the
/// RAYON_NUM_THREADS environment variable. Exit codes: 0 on full success,
/// 2 when any trial failed, 1 on usage errors.
#[derive(Parser, Debug)]
#[command(name = "matrix-irls", version, about)]
struct Args {
    /// Number of rows of the ground truth.
    #[arg(long, default_value_t = 1000)]
    d1: usize,

    /// Number of columns of the ground truth.
    #[arg(long, default_value_t = 1000)]
    d2: usize,

    /// Ground-truth rank, also used as the solver's rank estimate.
    #[arg(long)]
    rank: usize,

    /// Condition number of the ground truth spectrum.
    #[arg(long, default_value_t = 10.0)]
    kappa: f64,

    /// Singular value profile between kappa and 1.
    #[arg(long, value_parser = parse_decay, default_value = "exp")]
    decay: DecayProfile,

    /// Comma-separated oversampling factors, each >= 1.
    #[arg(long, value_delimiter = ',', required = true)]
    rho: Vec<f64>,

    /// Seeded trials per oversampling factor.
    #[arg(long, default_value_t = 10)]
    trials: usize,

    /// Base seed; trial seeds derive deterministically from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Report destination.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,

    /// Report format.
    #[arg(long, value_parser = parse_format, default_value = "csv")]
    format: ReportFormat,

    /// Optional per-trial record dump (JSON lines).
    #[arg(long)]
    trials_out: Option<PathBuf>,

    /// Outer iteration budget.
    #[arg(long)]
    max_outer: Option<usize>,

    /// Inner conjugate-gradient iteration budget.
    #[arg(long)]
    cg_max: Option<usize>,

    /// Scale of the inner tolerance rule.
    #[arg(long)]
    cg_tol_scale: Option<f64>,

    /// Block Krylov expansion steps per spectral probe.
    #[arg(long)]
    krylov_iters: Option<usize>,

    /// Condition-number hint for the inner tolerance rule.
    #[arg(long)]
    kappa_hint: Option<f64>,
}

fn parse_decay(s: &str) -> Result<DecayProfile, String> {
    match s {
        "exp" | "exponential" => Ok(DecayProfile::Exponential),
        "lin" | "linear" => Ok(DecayProfile::Linear),
        other => Err(format!("unknown decay profile '{other}', expected exp|lin")),
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(format!("unknown format '{other}', expected csv|json")),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let spec = ExperimentSpec {
        d1: args.d1,
        d2: args.d2,
        rank: args.rank,
        kappa: args.kappa,
        decay: args.decay,
        rho_list: args.rho,
        trials: args.trials,
        seed_base: args.seed,
        overrides: SolverOverrides {
            max_outer: args.max_outer,
            cg_max_inner: args.cg_max,
            cg_tol_scale: args.cg_tol_scale,
            krylov_iters: args.krylov_iters,
            kappa_hint: args.kappa_hint,
        },
    };

    let output = match run_sweep(&spec) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };

    if let Err(e) = emit_report(&output.rows, args.format, &args.out) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    eprintln!(
        "wrote {} sweep row(s) to {}",
        output.rows.len(),
        args.out.display()
    );

    if let Some(path) = args.trials_out {
        let lines: Vec<String> = output
            .trials
            .iter()
            .map(|t| serde_json::to_string(t).expect("trial record serializes"))
            .collect();
        if let Err(e) = std::fs::write(&path, lines.join("\n") + "\n") {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(1);
        }
        eprintln!("wrote {} trial record(s) to {}", lines.len(), path.display());
    }

    for t in output.trials.iter().filter(|t| t.failure.is_some()) {
        eprintln!(
            "trial failed: rho={} trial={} reason={}",
            t.rho,
            t.trial,
            t.failure.as_deref().unwrap_or("unknown")
        );
    }
    if output.any_failed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
