//! Desk-scale reproductions of the equilibration, LSQR and Chambolle-Pock
//! experiments: matrix generation, runs, CSV and SVG output.

mod config;
mod generate;
pub mod svg;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

pub use config::{parse_budgets, ExperimentConfig, ExperimentKind, DEFAULT_BUDGETS};
pub use generate::{consistent_rhs, empty_lines, gen_matrix, sparse_signal_rhs};

use crate::equilibrate::{objective, sgd_equilibrate_observed, ScalingResult};
use crate::error::{Error, Result};
use crate::exact::{newton_oracle, NEWTON_LIMIT};
use crate::linops::{mm, ExplicitMatrix};
use crate::metrics::{condition_number, rms_error, DENSE_LIMIT};
use crate::solvers::{
    ccp_lasso, ccp_lasso_preconditioned, lasso_oracle, lsqr, lsqr_preconditioned, step_norm, CcpRun, FistaOptions,
    LassoProblem, LsqrRun,
};
use svg::Series;

/// Newton tolerance on the gradient norm when computing `p_star`.
pub const NEWTON_TOL: f64 = 1e-9;
/// LSQR stops once the relative residual reaches this level.
pub const LSQR_ATOL: f64 = 1e-12;

/// The matrix named by `config.matrix`, or a generated one.
pub fn load_or_generate(config: &ExperimentConfig) -> Result<ExplicitMatrix> {
    match &config.matrix {
        Some(path) => mm::read_matrix_market(path),
        None => gen_matrix(config.rows, config.cols, config.density, config.seed),
    }
}

pub fn variant_label(budget: usize) -> String {
    if budget == 0 {
        "plain".into()
    } else {
        format!("equil_{budget}")
    }
}

fn field(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// Least-squares slope of `log y` against `log x` over points with `x` in
/// `[lo, hi]` and positive `y`.
pub fn loglog_slope(points: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x >= lo && *x <= hi && *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let k = logs.len() as f64;
    let (mx, my) = logs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / k, b + y / k));
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Iterations at which the dense condition number is evaluated: zero, the
/// last one and `{1, 2, 3, 5} x 10^j`.
pub fn is_condition_checkpoint(t: usize, last: usize) -> bool {
    if t == 0 || t == last {
        return true;
    }
    let mut k = t;
    while k.is_multiple_of(10) {
        k /= 10;
    }
    matches!(k, 1 | 2 | 3 | 5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibrationRow {
    pub iter: usize,
    pub rel_gap: Option<f64>,
    pub rms_error: f64,
    pub cond_number: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EquilibrationReport {
    pub rows: Vec<EquilibrationRow>,
    /// Optimal value from the Newton oracle, when the size allows it.
    pub p_star: Option<f64>,
    /// Objective at `u = v = 0`.
    pub f0: f64,
    /// Log-log slope of the relative gap over `t` in `[10, 1000]`.
    pub gap_slope: Option<f64>,
    pub scaling: ScalingResult,
}

/// Equilibrates the configured matrix, recording the relative gap, the RMS
/// error and (for square matrices) the condition number of the running
/// average every `stride` iterations.
pub fn run_equilibration_experiment(config: &ExperimentConfig) -> Result<EquilibrationReport> {
    let a = load_or_generate(config)?;
    run_equilibration_on(&a, config)
}

pub fn run_equilibration_on(a: &ExplicitMatrix, config: &ExperimentConfig) -> Result<EquilibrationReport> {
    let (m, n) = (a.rows(), a.cols());
    let params = config.equilibration(config.iterations);
    let resolved = params.resolve(m, n)?;
    if config.stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let p_star = if m + n <= NEWTON_LIMIT {
        Some(newton_oracle(a, &params, NEWTON_TOL)?.p_star)
    } else {
        None
    };
    let f0 = objective(a, &vec![0.0; m], &vec![0.0; n], &params)?;
    let track_cond = m == n && m <= DENSE_LIMIT;
    let last = config.iterations;

    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let scaling = sgd_equilibrate_observed(a, &params, |t: usize, _: &[f64], _: &[f64], ub: &[f64], vb: &[f64]| {
        if !t.is_multiple_of(config.stride) && t != last {
            return;
        }
        let rel_gap = p_star.map(|p| (objective(a, ub, vb, &params).expect("dimensions match") - p) / f0);
        rows.push(EquilibrationRow {
            iter: t,
            rel_gap,
            rms_error: rms_error(a, ub, vb, resolved.alpha, resolved.beta).expect("dimensions match"),
            cond_number: None,
        });
        if track_cond && is_condition_checkpoint(t, last) {
            snapshots.push((rows.len() - 1, ub.to_vec(), vb.to_vec()));
        }
    })?;

    let conds: Vec<(usize, f64)> = snapshots
        .into_par_iter()
        .map(|(row, u, v)| {
            let d: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            Ok((row, condition_number(&a.scaled(&d, &e)?)?))
        })
        .collect::<Result<_>>()?;
    for (row, kappa) in conds {
        rows[row].cond_number = Some(kappa);
    }

    let gaps: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.iter as f64, r.rel_gap?)))
        .collect();
    Ok(EquilibrationReport {
        gap_slope: loglog_slope(&gaps, 10.0, 1000.0),
        rows,
        p_star,
        f0,
        scaling,
    })
}

impl EquilibrationReport {
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.provenance("equilibrate");
        if let Some(p) = self.p_star {
            writeln!(s, "# p_star = {p}").unwrap();
        }
        if let Some(slope) = self.gap_slope {
            writeln!(s, "# gap_slope = {slope}").unwrap();
        }
        s.push_str("iter,rel_gap,rms_error,cond_number\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.iter, field(r.rel_gap), r.rms_error, field(r.cond_number)).unwrap();
        }
        s
    }

    pub fn plot(&self) -> String {
        let shifted = |f: &dyn Fn(&EquilibrationRow) -> Option<f64>| -> Vec<(f64, f64)> {
            self.rows.iter().filter_map(|r| Some(((r.iter + 1) as f64, f(r)?))).collect()
        };
        let mut series = vec![Series {
            label: "RMS error".into(),
            points: shifted(&|r| Some(r.rms_error)),
        }];
        if self.p_star.is_some() {
            series.insert(
                0,
                Series {
                    label: "relative gap".into(),
                    points: shifted(&|r| r.rel_gap),
                },
            );
        }
        if self.rows.iter().any(|r| r.cond_number.is_some()) {
            series.push(Series {
                label: "condition number".into(),
                points: shifted(&|r| r.cond_number),
            });
        }
        svg::line_plot("Equilibration", "iteration + 1", "value", &series, true)
    }
}

#[derive(Debug, Clone)]
pub struct LsqrReport {
    /// `(equilibration budget, run)` in the configured budget order.
    pub variants: Vec<(usize, LsqrRun)>,
}

/// LSQR on `A x = b` with `b = A x_true` for each equilibration budget; a
/// zero budget is the plain solver.
pub fn run_lsqr_experiment(config: &ExperimentConfig) -> Result<LsqrReport> {
    let a = load_or_generate(config)?;
    let b = consistent_rhs(&a, config.seed);
    run_lsqr_on(&a, &b, config)
}

pub fn run_lsqr_on(a: &ExplicitMatrix, b: &[f64], config: &ExperimentConfig) -> Result<LsqrReport> {
    let variants = config
        .equil_budgets
        .par_iter()
        .map(|&budget| {
            let run = if budget == 0 {
                lsqr(a, b, config.iterations, LSQR_ATOL)?
            } else {
                lsqr_preconditioned(a, b, &config.equilibration(budget), config.iterations, LSQR_ATOL)?
            };
            Ok((budget, run))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LsqrReport { variants })
}

impl LsqrReport {
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.provenance("bench-lsqr");
        s.push_str("variant,total_iter,rel_residual\n");
        for (budget, run) in &self.variants {
            let label = variant_label(*budget);
            for (t, r) in run.total_history().iter().enumerate() {
                writeln!(s, "{label},{t},{r}").unwrap();
            }
        }
        s
    }

    pub fn plot(&self) -> String {
        let series: Vec<Series> = self
            .variants
            .iter()
            .map(|(budget, run)| Series {
                label: variant_label(*budget),
                points: run.total_history().iter().enumerate().map(|(t, r)| (t as f64, *r)).collect(),
            })
            .collect();
        svg::line_plot("LSQR", "total iterations", "relative residual", &series, false)
    }
}

#[derive(Debug, Clone)]
pub struct CcpReport {
    pub p_star: f64,
    pub variants: Vec<(usize, CcpRun)>,
}

/// Chambolle-Pock on the Lasso problem for each equilibration budget, with
/// `lambda = 1e-3 |A^T b|_inf` and the optimal value from the reference
/// solver.
pub fn run_ccp_experiment(config: &ExperimentConfig) -> Result<CcpReport> {
    let a = load_or_generate(config)?;
    let b = sparse_signal_rhs(&a, config.seed);
    run_ccp_on(LassoProblem::with_default_lambda(a, b)?, config)
}

pub fn run_ccp_on(prob: LassoProblem<ExplicitMatrix>, config: &ExperimentConfig) -> Result<CcpReport> {
    let p_star = lasso_oracle(&prob.op, &prob.b, prob.lambda, &FistaOptions::default())?.p_star;
    let variants = config
        .equil_budgets
        .par_iter()
        .map(|&budget| {
            let run = if budget == 0 {
                let step = 0.9 / step_norm(&prob.op);
                ccp_lasso(&prob, config.iterations, step, step, 1.0)?
            } else {
                ccp_lasso_preconditioned(&prob, &config.equilibration(budget), config.iterations)?
            };
            Ok((budget, run))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CcpReport { p_star, variants })
}

impl CcpReport {
    pub fn to_csv(&self, config: &ExperimentConfig) -> String {
        let mut s = config.provenance("bench-ccp");
        writeln!(s, "# p_star = {}", self.p_star).unwrap();
        s.push_str("variant,total_iter,rel_gap\n");
        for (budget, run) in &self.variants {
            let label = variant_label(*budget);
            for (t, g) in run.total_gap_history(self.p_star).iter().enumerate() {
                writeln!(s, "{label},{t},{g}").unwrap();
            }
        }
        s
    }

    pub fn plot(&self) -> String {
        let series: Vec<Series> = self
            .variants
            .iter()
            .map(|(budget, run)| Series {
                label: variant_label(*budget),
                points: run
                    .total_gap_history(self.p_star)
                    .iter()
                    .enumerate()
                    .map(|(t, g)| (t as f64, *g))
                    .collect(),
            })
            .collect();
        svg::line_plot("Chambolle-Pock on Lasso", "total iterations", "relative gap", &series, false)
    }
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_output(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}
