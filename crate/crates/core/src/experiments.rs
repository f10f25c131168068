//! Monte Carlo harness: repeated simulate-then-estimate runs per `(n, eps)`
//! case, normality and moment diagnostics, the contrast-bias check behind
//! QGAIC, the rate-condition table and the CSV/JSON emitters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Case, ExperimentConfig};
use crate::diagnostics::{self, ComponentDiagnostics, MomentCheck};
use crate::error::{Error, Result};
use crate::estimation::{DiscreteProblem, LimitContrast};
use crate::kernels::{discretization_error_sup, CovarianceKernel};
use crate::mean_models::SigmaMatrix;
use crate::sampling::{ObservationSampler, SeedSpec};
use crate::timegrid::TimeGrid;

/// Threshold on `eps^{-1} ||K^n - K||` (or `eps^{-2}` for the bias check)
/// above which a case is flagged.
pub const RATE_THRESHOLD: f64 = 0.1;
/// Points per cell used when the harness estimates `||K^n - K||`.
pub const HARNESS_SUP_REFINEMENT: usize = 4;

/// Per-case seed base, so that cases draw from unrelated streams.
fn case_seed(master: u64, case_index: usize) -> u64 {
    master ^ (case_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub h_true: Vec<f64>,
    pub h_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: Case,
    /// Raw estimates, one row per replication.
    pub theta_hat: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample standard deviation with the `N - 1` divisor.
    pub sd: Vec<f64>,
    pub mean_abs_error: f64,
    pub boundary_hits: usize,
    /// Replications where `Phi_{n,eps}(theta_hat) < Phi_{n,eps}(theta0)`.
    pub dominance_violations: usize,
    /// `eps^{-1} (theta_hat - theta0)`, absent when `eps = 0`.
    pub standardized: Option<Vec<Vec<f64>>>,
    pub moment: Option<MomentCheck>,
    pub diagnostics: Vec<ComponentDiagnostics>,
    /// `eps^{-1} ||K^n - K||_inf` (absent when `eps = 0`).
    pub rate_statistic: Option<f64>,
    pub path: SamplePath,
}

impl CaseReport {
    pub fn standardized_matrix(&self) -> Option<DMatrix<f64>> {
        self.standardized.as_ref().map(|rows| to_matrix(rows))
    }

    pub fn ks(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.ks).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: ExperimentConfig,
    pub sigma: SigmaMatrix,
    pub asymptotic_sd: Vec<f64>,
    pub cases: Vec<CaseReport>,
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

struct ReplicationOutcome {
    theta_hat: Vec<f64>,
    boundary: bool,
    phi_hat: f64,
    phi_true: f64,
    limit_gap: Option<f64>,
    /// `m0^T (x - h0)`, zero-mean noise pairing used as a control variate.
    noise_pairing: Option<f64>,
}

struct CaseRun {
    problem: DiscreteProblem,
    sampler: ObservationSampler,
    outcomes: Vec<ReplicationOutcome>,
}

/// Simulates and estimates every replication of one case, in replication
/// order regardless of the worker count.
fn run_case(
    config: &ExperimentConfig,
    case_index: usize,
    with_limit: bool,
) -> Result<CaseRun> {
    let case = config.cases[case_index];
    let kernel = config.kernel()?;
    let model = config.mean_model()?;
    let q = config.quadrature()?;
    let grid = config.grid(&case)?;
    let sampler = ObservationSampler::new(
        &model,
        &config.theta0,
        &kernel,
        &grid,
        &q,
        config.refinement,
        config.jitter_rel,
    )?;
    let problem = DiscreteProblem::new(model, kernel, grid, q, config.refinement)?;
    let (limit, m0) = if with_limit {
        (
            Some(LimitContrast::new(&problem, &config.theta0)?),
            Some(problem.model().cell_masses(&config.theta0, problem.grid(), problem.quadrature())?),
        )
    } else {
        (None, None)
    };
    let seed_base = case_seed(config.master_seed, case_index);
    let outcomes = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let obs = sampler.sample(case.epsilon, SeedSpec::new(seed_base, r as u64))?;
            let ctx = problem.context(&obs)?;
            let est = ctx.estimate()?;
            let phi_true = ctx.contrast(&config.theta0)?;
            let limit_gap = match &limit {
                Some(l) => Some(est.phi - l.eval(&problem, &est.theta_hat)?),
                None => None,
            };
            let noise_pairing = m0
                .as_ref()
                .map(|m0| m0.dot(&(obs.values_vector() - sampler.mean())));
            Ok(ReplicationOutcome {
                noise_pairing,
                boundary: est.boundary_flag,
                phi_hat: est.phi,
                phi_true,
                theta_hat: est.theta_hat,
                limit_gap,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| {
            log::error!("case (n={}, eps={}) aborted: {e}", case.n, case.epsilon);
            e
        })?;
    Ok(CaseRun {
        problem,
        sampler,
        outcomes,
    })
}

fn mean_and_sd(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let sd = (0..p)
        .map(|j| {
            if n < 2 {
                return 0.0;
            }
            let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        })
        .collect();
    (mean, sd)
}

fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every case of `config` and aggregates the replications.
pub fn run_mc(config: &ExperimentConfig) -> Result<McReport> {
    config.validate()?;
    let kernel = config.kernel()?;
    let model = config.mean_model()?;
    let q = config.quadrature()?;
    let sigma = model.sigma_matrix(&config.theta0, &kernel, &q, config.refinement)?;
    let asymptotic_sd = sigma.asymptotic_sd()?;
    let mut cases = Vec::with_capacity(config.cases.len());
    for (idx, case) in config.cases.iter().enumerate() {
        log::info!("case n={} eps={}: {} replications", case.n, case.epsilon, config.replications);
        let run = run_case(config, idx, false)?;
        cases.push(summarize_case(config, idx, &run, &sigma)?);
    }
    Ok(McReport {
        config: config.clone(),
        sigma,
        asymptotic_sd,
        cases,
    })
}

fn summarize_case(
    config: &ExperimentConfig,
    case_index: usize,
    run: &CaseRun,
    sigma: &SigmaMatrix,
) -> Result<CaseReport> {
    let case = config.cases[case_index];
    let theta0 = &config.theta0;
    let theta_hat: Vec<Vec<f64>> = run.outcomes.iter().map(|o| o.theta_hat.clone()).collect();
    let (mean, sd) = mean_and_sd(&theta_hat);
    let mean_abs_error = theta_hat
        .iter()
        .map(|t| t.iter().zip(theta0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / theta_hat.len() as f64;
    let boundary_hits = run.outcomes.iter().filter(|o| o.boundary).count();
    let dominance_violations = run
        .outcomes
        .iter()
        .filter(|o| o.phi_hat < o.phi_true)
        .count();

    let (standardized, moment, diagnostics, rate_statistic) = if case.epsilon > 0.0 {
        let z = standardize(&theta_hat, theta0, case.epsilon);
        let zm = to_matrix(&z);
        let moment = diagnostics::moment_check(&zm, sigma)?;
        let diag = if z.len() >= diagnostics::MIN_DIAGNOSTIC_SAMPLE {
            diagnostics::normality_diagnostics(&zm, sigma)?
        } else {
            Vec::new()
        };
        let sup = discretization_error_sup(
            run.problem.kernel(),
            run.problem.grid(),
            HARNESS_SUP_REFINEMENT,
        )?;
        (Some(z), Some(moment), diag, Some(sup / case.epsilon))
    } else {
        (None, None, Vec::new(), None)
    };

    let first = &theta_hat[0];
    let obs = run.sampler.sample(
        case.epsilon,
        SeedSpec::new(case_seed(config.master_seed, case_index), 0),
    )?;
    let model = run.problem.model();
    let h_hat = model.mean_vector(
        first,
        run.problem.kernel(),
        run.problem.grid(),
        run.problem.quadrature(),
        config.refinement,
    )?;
    let path = SamplePath {
        t: run.problem.grid().nodes().to_vec(),
        x: obs.values,
        h_true: run.sampler.mean().as_slice().to_vec(),
        h_hat: h_hat.as_slice().to_vec(),
    };

    Ok(CaseReport {
        case,
        theta_hat,
        mean,
        sd,
        mean_abs_error,
        boundary_hits,
        dominance_violations,
        standardized,
        moment,
        diagnostics,
        rate_statistic,
        path,
    })
}

/// `eps^{-1} (theta_hat - theta0)` row by row.
pub fn standardize(theta_hat: &[Vec<f64>], theta0: &[f64], epsilon: f64) -> Vec<Vec<f64>> {
    theta_hat
        .iter()
        .map(|t| t.iter().zip(theta0).map(|(a, b)| (a - b) / epsilon).collect())
        .collect()
}

/// Empirical second moment of the standardized errors of one case and its
/// relative deviation from `trace(Sigma^{-1})`.
pub fn moment_check(report: &CaseReport, sigma: &SigmaMatrix) -> Result<MomentCheck> {
    let z = report.standardized_matrix().ok_or_else(|| {
        Error::InvalidArgument("moment check needs a case with positive noise".into())
    })?;
    diagnostics::moment_check(&z, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCase {
    pub case: Case,
    /// Mean of `(Phi_{n,eps}(theta_hat) - Phi(theta_hat)) / eps^2`.
    pub mean: f64,
    pub std_error: f64,
    /// Same expectation with the zero-mean term `m0^T (x - h0) / eps^2`
    /// subtracted from every replication.
    pub control_variate_mean: f64,
    pub control_variate_std_error: f64,
    pub target: usize,
    /// `eps^{-2} ||K^n - K||_inf`.
    pub rate_statistic: f64,
    pub rate_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub config: ExperimentConfig,
    pub cases: Vec<BiasCase>,
}

/// Monte Carlo estimate of `E[Phi_{n,eps}(theta_hat) - Phi(theta_hat)] / eps^2`,
/// whose small-noise limit is the parameter dimension.
pub fn qgaic_bias(config: &ExperimentConfig) -> Result<BiasReport> {
    config.validate()?;
    if let Some(c) = config.cases.iter().find(|c| !(c.epsilon > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "bias check needs eps > 0 (case n={}, eps={})",
            c.n, c.epsilon
        )));
    }
    let p = config.model.dim();
    let mut cases = Vec::with_capacity(config.cases.len());
    for (idx, case) in config.cases.iter().enumerate() {
        let run = run_case(config, idx, true)?;
        let eps2 = case.epsilon * case.epsilon;
        let values: Vec<f64> = run
            .outcomes
            .iter()
            .map(|o| o.limit_gap.expect("limit requested") / eps2)
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "contrast gap in replication {i} of case n={}, eps={}",
                case.n, case.epsilon
            )));
        }
        let adjusted: Vec<f64> = run
            .outcomes
            .iter()
            .zip(&values)
            .map(|(o, v)| v - o.noise_pairing.expect("limit requested") / eps2)
            .collect();
        let (mean, std_error) = mean_and_std_error(&values);
        let (control_variate_mean, control_variate_std_error) = mean_and_std_error(&adjusted);
        let sup = discretization_error_sup(
            run.problem.kernel(),
            run.problem.grid(),
            HARNESS_SUP_REFINEMENT,
        )?;
        let rate_statistic = sup / eps2;
        let rate_ok = rate_statistic < RATE_THRESHOLD;
        if !rate_ok {
            log::warn!(
                "case n={} eps={}: eps^-2 ||K^n - K|| = {rate_statistic:.3} >= {RATE_THRESHOLD}; bias limit may not apply",
                case.n,
                case.epsilon
            );
        }
        cases.push(BiasCase {
            case: *case,
            mean,
            std_error,
            control_variate_mean,
            control_variate_std_error,
            target: p,
            rate_statistic,
            rate_ok,
        });
    }
    Ok(BiasReport {
        config: config.clone(),
        cases,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub epsilon: f64,
    pub sup_error: f64,
    /// `eps^{-1} ||K^n - K||_inf`.
    pub statistic: f64,
    pub flagged: bool,
}

/// `eps^{-1} ||K^n - K||_inf` on uniform grids for every `(n, eps)` pair.
pub fn rate_condition_table(
    kernel: &CovarianceKernel,
    interval: (f64, f64),
    grid_sizes: &[usize],
    epsilons: &[f64],
    refinement: usize,
) -> Result<Vec<RateRow>> {
    let mut rows = Vec::with_capacity(grid_sizes.len() * epsilons.len());
    for &n in grid_sizes {
        let grid = TimeGrid::uniform(n, interval.0, interval.1)?;
        let sup = discretization_error_sup(kernel, &grid, refinement)?;
        for &eps in epsilons {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "rate table needs eps > 0, got {eps}"
                )));
            }
            let statistic = sup / eps;
            rows.push(RateRow {
                n,
                epsilon: eps,
                sup_error: sup,
                statistic,
                flagged: !(statistic < RATE_THRESHOLD),
            });
        }
    }
    Ok(rows)
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_string<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize)]
struct CaseSummary<'a> {
    n: usize,
    epsilon: f64,
    replications: usize,
    mean: &'a [f64],
    sd: &'a [f64],
    /// `eps * sqrt((Sigma^{-1})_jj)`.
    asymptotic_sd_scaled: Vec<f64>,
    mean_abs_error: f64,
    boundary_hits: usize,
    dominance_violations: usize,
    second_moment: Option<f64>,
    moment_target: Option<f64>,
    moment_relative_deviation: Option<f64>,
    ks: Vec<f64>,
    rate_statistic: Option<f64>,
    rate_flag: Option<bool>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    sigma: Vec<Vec<f64>>,
    sigma_condition: f64,
    /// `sqrt((Sigma^{-1})_jj)`, the standard deviation of the limit law.
    asymptotic_sd: &'a [f64],
    cases: Vec<CaseSummary<'a>>,
}

/// Writes `summary.json`, `table1.csv`, `standardized.csv`, `histogram.csv`,
/// `qq.csv` and `paths.csv` into `dir`. Returns the written paths.
pub fn emit(report: &McReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = report.config.model.dim();
    let mut written = Vec::new();

    let summary_path = dir.join("summary.json");
    let sigma = report.sigma.matrix();
    let summary = Summary {
        config: &report.config,
        sigma: (0..sigma.nrows())
            .map(|i| (0..sigma.ncols()).map(|j| sigma[(i, j)]).collect())
            .collect(),
        sigma_condition: report.sigma.condition(),
        asymptotic_sd: &report.asymptotic_sd,
        cases: report
            .cases
            .iter()
            .map(|c| CaseSummary {
                n: c.case.n,
                epsilon: c.case.epsilon,
                replications: c.theta_hat.len(),
                mean: &c.mean,
                sd: &c.sd,
                asymptotic_sd_scaled: report
                    .asymptotic_sd
                    .iter()
                    .map(|s| s * c.case.epsilon)
                    .collect(),
                mean_abs_error: c.mean_abs_error,
                boundary_hits: c.boundary_hits,
                dominance_violations: c.dominance_violations,
                second_moment: c.moment.map(|m| m.second_moment),
                moment_target: c.moment.map(|m| m.target),
                moment_relative_deviation: c.moment.map(|m| m.relative_deviation),
                ks: c.ks(),
                rate_statistic: c.rate_statistic,
                rate_flag: c.rate_statistic.map(|r| !(r < RATE_THRESHOLD)),
            })
            .collect(),
    };
    write_file(&summary_path, &json_string(&summary, &summary_path)?)?;
    written.push(summary_path);

    let mut table = String::from("n,epsilon");
    for j in 1..=p {
        let _ = write!(table, ",mean_{j},sd_{j}");
    }
    table.push('\n');
    for c in &report.cases {
        let _ = write!(table, "{},{}", c.case.n, fmt_f(c.case.epsilon));
        for j in 0..p {
            let _ = write!(table, ",{},{}", fmt_f(c.mean[j]), fmt_f(c.sd[j]));
        }
        table.push('\n');
    }
    let path = dir.join("table1.csv");
    write_file(&path, &table)?;
    written.push(path);

    let mut std_csv = String::from("n,epsilon,replication");
    for j in 1..=p {
        let _ = write!(std_csv, ",z_{j}");
    }
    std_csv.push('\n');
    for c in &report.cases {
        if let Some(z) = &c.standardized {
            for (r, row) in z.iter().enumerate() {
                let _ = write!(std_csv, "{},{},{r}", c.case.n, fmt_f(c.case.epsilon));
                for v in row {
                    let _ = write!(std_csv, ",{}", fmt_f(*v));
                }
                std_csv.push('\n');
            }
        }
    }
    let path = dir.join("standardized.csv");
    write_file(&path, &std_csv)?;
    written.push(path);

    let mut hist = String::from("n,epsilon,component,bin_left,bin_right,count,density,reference_sd\n");
    let mut qq = String::from("n,epsilon,component,theoretical,sample\n");
    for c in &report.cases {
        for d in &c.diagnostics {
            let h = &d.histogram;
            for k in 0..h.counts.len() {
                let _ = writeln!(
                    hist,
                    "{},{},{},{},{},{},{},{}",
                    c.case.n,
                    fmt_f(c.case.epsilon),
                    d.component + 1,
                    fmt_f(h.edges[k]),
                    fmt_f(h.edges[k + 1]),
                    h.counts[k],
                    fmt_f(h.density[k]),
                    fmt_f(d.reference_sd)
                );
            }
            for (th, s) in &d.qq {
                let _ = writeln!(
                    qq,
                    "{},{},{},{},{}",
                    c.case.n,
                    fmt_f(c.case.epsilon),
                    d.component + 1,
                    fmt_f(*th),
                    fmt_f(*s)
                );
            }
        }
    }
    let path = dir.join("histogram.csv");
    write_file(&path, &hist)?;
    written.push(path);
    let path = dir.join("qq.csv");
    write_file(&path, &qq)?;
    written.push(path);

    let mut paths = String::from("n,epsilon,t,x,h_true,h_hat\n");
    for c in &report.cases {
        let pth = &c.path;
        for i in 0..pth.t.len() {
            let _ = writeln!(
                paths,
                "{},{},{},{},{},{}",
                c.case.n,
                fmt_f(c.case.epsilon),
                fmt_f(pth.t[i]),
                fmt_f(pth.x[i]),
                fmt_f(pth.h_true[i]),
                fmt_f(pth.h_hat[i])
            );
        }
    }
    let path = dir.join("paths.csv");
    write_file(&path, &paths)?;
    written.push(path);

    Ok(written)
}

/// Writes `bias.json` and `bias.csv` into `dir`.
pub fn emit_bias(report: &BiasReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("bias.json");
    write_file(&json_path, &json_string(report, &json_path)?)?;
    let mut csv = String::from(
        "n,epsilon,mean,std_error,control_variate_mean,control_variate_std_error,target,rate_statistic,rate_ok\n",
    );
    for c in &report.cases {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            c.case.n,
            fmt_f(c.case.epsilon),
            fmt_f(c.mean),
            fmt_f(c.std_error),
            fmt_f(c.control_variate_mean),
            fmt_f(c.control_variate_std_error),
            c.target,
            fmt_f(c.rate_statistic),
            c.rate_ok
        );
    }
    let csv_path = dir.join("bias.csv");
    write_file(&csv_path, &csv)?;
    Ok(vec![json_path, csv_path])
}

/// Writes `rate_table.csv` into `dir`.
pub fn emit_rate_table(rows: &[RateRow], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("n,epsilon,sup_error,statistic,flagged\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.n,
            fmt_f(r.epsilon),
            fmt_f(r.sup_error),
            fmt_f(r.statistic),
            r.flagged
        );
    }
    let path = dir.join("rate_table.csv");
    write_file(&path, &csv)?;
    Ok(path)
}
