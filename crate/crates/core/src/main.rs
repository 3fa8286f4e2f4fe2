use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfequil::experiments::{
    empty_lines, load_or_generate, run_ccp_experiment, run_equilibration_on, run_lsqr_experiment, write_output,
    ExperimentConfig, ExperimentKind,
};
use mfequil::linops::mm;
use mfequil::metrics::{condition_number, kappa_bounds, rms_error, DENSE_LIMIT};
use mfequil::{sgd_equilibrate, ExplicitMatrix, Result};

/// Matrix-free equilibration experiments.
#[derive(Debug, Parser)]
#[command(name = "mfequil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random badly scaled sparse matrix in Matrix Market format.
    Gen {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Equilibrate a matrix and write per-iteration diagnostics as CSV.
    Equilibrate {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        equil: EquilArgs,
        /// Record every this many iterations.
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print norms and conditioning of a matrix, before and after `--iters`
    /// equilibration steps.
    Metrics {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        equil: EquilArgs,
    },
    /// LSQR with and without equilibration on `A x = b`, `b = A x_true`.
    BenchLsqr {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        equil: EquilArgs,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Chambolle-Pock on a Lasso problem with and without equilibration.
    BenchCcp {
        #[command(flatten)]
        matrix: MatrixArgs,
        #[command(flatten)]
        equil: EquilArgs,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct MatrixArgs {
    /// `key = value` file applied before the command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Fraction of nonzero entries.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Read the matrix from a Matrix Market file instead of generating it.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EquilArgs {
    /// Target row norm, or "auto" for (n/m)^(1/4).
    #[arg(long)]
    alpha: Option<String>,
    /// Target column norm, or "auto" for (m/n)^(1/4).
    #[arg(long)]
    beta: Option<String>,
    /// Regularization weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Bound on the log-scalings ("inf" for none).
    #[arg(long = "max-scale-log")]
    max_scale_log: Option<f64>,
    /// Equilibration iterations (solver iterations for the benchmarks).
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Comma-separated equilibration budgets; 0 is the plain solver.
    #[arg(long = "equil-budgets")]
    equil_budgets: Option<String>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG plot of the results.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn s<T: ToString>(x: &Option<T>) -> Option<String> {
    x.as_ref().map(ToString::to_string)
}

/// Builds the configuration: defaults, then the config file, then flags.
fn configure(
    mut config: ExperimentConfig,
    matrix: &MatrixArgs,
    equil: Option<&EquilArgs>,
    extra: &[(&str, Option<String>)],
) -> Result<ExperimentConfig> {
    if let Some(path) = &matrix.config {
        config.apply_file(path)?;
    }
    let mut flags = vec![
        ("rows", s(&matrix.rows)),
        ("cols", s(&matrix.cols)),
        ("density", s(&matrix.density)),
        ("seed", s(&matrix.seed)),
        ("matrix", matrix.matrix.as_ref().map(|p| p.display().to_string())),
    ];
    if let Some(e) = equil {
        flags.extend([
            ("alpha", e.alpha.clone()),
            ("beta", e.beta.clone()),
            ("gamma", s(&e.gamma)),
            ("max-scale-log", s(&e.max_scale_log)),
            ("iters", s(&e.iters)),
        ]);
    }
    flags.extend(extra.iter().cloned());
    for (key, value) in flags {
        if let Some(value) = value {
            config.set(key, &value)?;
        }
    }
    Ok(config)
}

fn with_output(config: &mut ExperimentConfig, output: &OutputArgs) {
    if output.out.is_some() {
        config.out = output.out.clone();
    }
    if output.plot.is_some() {
        config.plot = output.plot.clone();
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_output(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|source| mfequil::Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}

fn warn_empty_lines(a: &ExplicitMatrix) {
    let (rows, cols) = empty_lines(a);
    if rows + cols > 0 {
        eprintln!(
            "warning: {rows} empty rows and {cols} empty columns; only the regularized problem has a solution"
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { matrix, output } => {
            let mut config = configure(ExperimentConfig::new(ExperimentKind::Equilibration), &matrix, None, &[])?;
            with_output(&mut config, &output);
            let a = load_or_generate(&config)?;
            warn_empty_lines(&a);
            emit(config.out.as_deref(), &mm::to_matrix_market_string(&a))
        }
        Command::Equilibrate {
            matrix,
            equil,
            stride,
            output,
        } => {
            let extra = [("stride", stride.map(|s| s.to_string()))];
            let mut config = configure(ExperimentConfig::new(ExperimentKind::Equilibration), &matrix, Some(&equil), &extra)?;
            with_output(&mut config, &output);
            let a = load_or_generate(&config)?;
            warn_empty_lines(&a);
            let report = run_equilibration_on(&a, &config)?;
            if let Some(slope) = report.gap_slope {
                eprintln!("log-log slope of the relative gap over [10, 1000]: {slope:.3}");
            }
            if let Some(path) = &config.plot {
                write_output(path, &report.plot())?;
            }
            emit(config.out.as_deref(), &report.to_csv(&config))
        }
        Command::Metrics { matrix, equil } => {
            // no equilibration unless asked for
            let base = ExperimentConfig {
                iterations: 0,
                ..ExperimentConfig::new(ExperimentKind::Equilibration)
            };
            let config = configure(base, &matrix, Some(&equil), &[])?;
            let a = load_or_generate(&config)?;
            print_metrics(&a, &config)
        }
        Command::BenchLsqr {
            matrix,
            equil,
            budgets,
            output,
        } => {
            let extra = [("equil-budgets", budgets.equil_budgets.clone())];
            let mut config = configure(ExperimentConfig::new(ExperimentKind::Lsqr), &matrix, Some(&equil), &extra)?;
            with_output(&mut config, &output);
            let report = run_lsqr_experiment(&config)?;
            for (budget, run) in &report.variants {
                eprintln!("budget {budget}: {} LSQR iterations, final residual {:.3e}", run.iterations, run.residual_history.last().unwrap_or(&1.0));
            }
            if let Some(path) = &config.plot {
                write_output(path, &report.plot())?;
            }
            emit(config.out.as_deref(), &report.to_csv(&config))
        }
        Command::BenchCcp {
            matrix,
            equil,
            budgets,
            output,
        } => {
            let extra = [("equil-budgets", budgets.equil_budgets.clone())];
            let mut config = configure(ExperimentConfig::new(ExperimentKind::Ccp), &matrix, Some(&equil), &extra)?;
            with_output(&mut config, &output);
            let report = run_ccp_experiment(&config)?;
            eprintln!("optimal value {}", report.p_star);
            if let Some(path) = &config.plot {
                write_output(path, &report.plot())?;
            }
            emit(config.out.as_deref(), &report.to_csv(&config))
        }
    }
}

fn print_metrics(a: &ExplicitMatrix, config: &ExperimentConfig) -> Result<()> {
    let params = config.equilibration(config.iterations);
    let resolved = params.resolve(a.rows(), a.cols())?;
    let mut lines = vec![
        format!("rows = {}", a.rows()),
        format!("cols = {}", a.cols()),
        format!("nnz = {}", a.nnz()),
    ];
    let (empty_rows, empty_cols) = empty_lines(a);
    lines.push(format!("empty_rows = {empty_rows}"));
    lines.push(format!("empty_cols = {empty_cols}"));
    let mut describe = |tag: &str, b: &ExplicitMatrix, u: &[f64], v: &[f64]| -> Result<()> {
        lines.push(format!("{tag}rms_error = {}", rms_error(a, u, v, resolved.alpha, resolved.beta)?));
        if b.is_square() && b.rows() <= DENSE_LIMIT {
            lines.push(format!("{tag}cond_number = {}", condition_number(b)?));
            if let Ok(bounds) = kappa_bounds(b) {
                lines.push(format!("{tag}kappa_lower = {}", bounds.lower));
                lines.push(format!("{tag}kappa_upper = {}", bounds.upper));
            }
        }
        Ok(())
    };
    describe("", a, &vec![0.0; a.rows()], &vec![0.0; a.cols()])?;
    if config.iterations > 0 {
        let s = sgd_equilibrate(a, &params)?;
        let b = a.scaled(&s.d, &s.e)?;
        describe("equilibrated_", &b, &s.u_bar, &s.v_bar)?;
        lines.push(format!("equilibration_iters = {}", config.iterations));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    emit(None, &text)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
