//! Monte Carlo estimation of weak errors and the convergence-order fit.
//!
//! The primary statistic is the coupled estimator: for each path index the
//! scheme and the oracle consume the same increment stream, and the mean of
//! `f(oracle) - f(scheme)` is taken over paths. Common random numbers
//! collapse the variance of the difference far below the marginal variance,
//! which is the only way a first-order weak error is measurable at
//! desk-scale path counts.
//!
//! Path results are always reduced in fixed path-index order (workers fill
//! a preallocated slot each), so a report is bit-identical across runs and
//! worker counts.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::coefficients::CoefficientModel;
use crate::generators::{SmoothFunction, TestFunction};
use crate::integrators::{
    self, exact_linear_terminal, simulate_reference_terminal, simulate_wz_terminal,
    IntegratorError,
};
use crate::levy::{IncrementStream, LevyModel};

#[derive(Error, Debug)]
pub enum MonteCarloError {
    #[error("the exact-linear oracle requires the linear model, got '{0}'")]
    OracleMismatch(String),
    #[error("unbounded test function '{0}' is allowed only on the linear model")]
    UnboundedFunction(String),
    #[error("need at least {want} paths, got {got}")]
    TooFewPaths { want: u64, got: u64 },
    #[error("{failed} of {total} paths failed (budget 0.01%); first failure: {first}")]
    PathFailures {
        failed: u64,
        total: u64,
        first: String,
    },
    #[error("order fit needs at least 3 rows above the noise floor, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
}

/// Which process plays the role of the true solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Oracle {
    /// Closed-form linear solution; zero discretization error.
    ExactLinear,
    /// Jump-adapted strong integrator at `h_fine`.
    Reference { h_fine: f64 },
}

/// One step size of a weak-error experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorRow {
    pub h: f64,
    pub n_paths: u64,
    pub est_scheme: f64,
    pub est_oracle: f64,
    /// `|est_oracle - est_scheme|`, estimated by the coupled mean.
    pub weak_error: f64,
    pub stderr_scheme: f64,
    /// Standard error of the coupled difference estimator.
    pub stderr_coupled: f64,
    pub seed: u64,
}

/// A full ladder of rows plus the fitted order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorReport {
    pub rows: Vec<WeakErrorRow>,
    pub fitted_order: f64,
    pub fit_intercept: f64,
    pub fit_r2: f64,
    pub ci_level: f64,
}

impl WeakErrorReport {
    /// CSV with the fixed header
    /// `h,n_paths,est_scheme,est_oracle,weak_error,stderr_scheme,stderr_coupled,seed`.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(
            out,
            "h,n_paths,est_scheme,est_oracle,weak_error,stderr_scheme,stderr_coupled,seed"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.h,
                r.n_paths,
                r.est_scheme,
                r.est_oracle,
                r.weak_error,
                r.stderr_scheme,
                r.stderr_coupled,
                r.seed
            )?;
        }
        Ok(())
    }

    /// Two-column plot data `log2_h,log2_weak_error` for external plotting.
    pub fn write_plot_data(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "log2_h,log2_weak_error")?;
        for r in &self.rows {
            writeln!(out, "{},{}", r.h.log2(), r.weak_error.log2())?;
        }
        Ok(())
    }
}

/// Deterministic sum: sequential Kahan compensation in slice order.
fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = kahan_sum(values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = kahan_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct PairSample {
    f_oracle: f64,
    f_scheme: f64,
}

/// Runs the coupled pairs and returns per-path observable values in path
/// order, aborting if more than 0.01% of paths fail.
#[allow(clippy::too_many_arguments)]
fn run_pairs(
    model: &CoefficientModel,
    levy: &LevyModel,
    f: &TestFunction,
    x0: f64,
    total_time: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
    oracle: Oracle,
    ode_tol: f64,
) -> Result<Vec<PairSample>, MonteCarloError> {
    let results: Vec<Result<PairSample, IntegratorError>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = IncrementStream::new(seed, i);
            let x_oracle = match oracle {
                Oracle::ExactLinear => {
                    exact_linear_terminal(model, levy, x0, total_time, h, &stream)?
                }
                Oracle::Reference { h_fine } => simulate_reference_terminal(
                    model, levy, x0, total_time, h, h_fine, &stream, ode_tol,
                )?,
            };
            let x_scheme =
                simulate_wz_terminal(model, levy, x0, total_time, h, &stream, ode_tol)?;
            Ok(PairSample {
                f_oracle: f.value(x_oracle),
                f_scheme: f.value(x_scheme),
            })
        })
        .collect();
    let total = results.len() as u64;
    let mut samples = Vec::with_capacity(results.len());
    let mut failed = 0u64;
    let mut first_failure = String::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => {
                if failed == 0 {
                    first_failure = e.to_string();
                }
                failed += 1;
            }
        }
    }
    if failed > 0 && (failed as f64) > 1e-4 * total as f64 {
        return Err(MonteCarloError::PathFailures {
            failed,
            total,
            first: first_failure,
        });
    }
    Ok(samples)
}

fn check_setup(
    model: &CoefficientModel,
    f: &TestFunction,
    oracle: Oracle,
) -> Result<(), MonteCarloError> {
    let is_linear = model.as_linear().is_some();
    if matches!(oracle, Oracle::ExactLinear) && !is_linear {
        return Err(MonteCarloError::OracleMismatch(model.name().to_string()));
    }
    if !f.is_bounded() && !is_linear {
        return Err(MonteCarloError::UnboundedFunction(f.name().to_string()));
    }
    Ok(())
}

/// Coupled weak-error estimate at one step size.
#[allow(clippy::too_many_arguments)]
pub fn estimate_weak_error(
    model: &CoefficientModel,
    levy: &LevyModel,
    f: &TestFunction,
    x0: f64,
    total_time: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
    oracle: Oracle,
    ode_tol: f64,
) -> Result<WeakErrorRow, MonteCarloError> {
    if n_paths < 1000 {
        return Err(MonteCarloError::TooFewPaths {
            want: 1000,
            got: n_paths,
        });
    }
    check_setup(model, f, oracle)?;
    let samples = run_pairs(
        model, levy, f, x0, total_time, h, n_paths, seed, oracle, ode_tol,
    )?;
    let oracle_vals: Vec<f64> = samples.iter().map(|s| s.f_oracle).collect();
    let scheme_vals: Vec<f64> = samples.iter().map(|s| s.f_scheme).collect();
    let diffs: Vec<f64> = samples.iter().map(|s| s.f_oracle - s.f_scheme).collect();
    let (est_oracle, _) = mean_and_se(&oracle_vals);
    let (est_scheme, stderr_scheme) = mean_and_se(&scheme_vals);
    let (diff_mean, stderr_coupled) = mean_and_se(&diffs);
    Ok(WeakErrorRow {
        h,
        n_paths,
        est_scheme,
        est_oracle,
        weak_error: diff_mean.abs(),
        stderr_scheme,
        stderr_coupled,
        seed,
    })
}

/// Least-squares fit of `log |weak_error|` against `log h` over the rows
/// whose signal clears the noise floor (`weak_error > 3 stderr_coupled`).
pub fn fit_convergence_order(
    rows: &[WeakErrorRow],
) -> Result<(f64, f64, f64), MonteCarloError> {
    let usable: Vec<&WeakErrorRow> = rows
        .iter()
        .filter(|r| r.weak_error > 3.0 * r.stderr_coupled && r.weak_error > 0.0)
        .collect();
    if usable.len() < 3 {
        return Err(MonteCarloError::TooFewRows(usable.len()));
    }
    let n = usable.len() as f64;
    let xs: Vec<f64> = usable.iter().map(|r| r.h.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|r| r.weak_error.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let syy: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let order = sxy / sxx;
    let intercept = y_mean - order * x_mean;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok((order, intercept, r2))
}

/// Builds the full ladder report: one row per `h`, then the order fit.
#[allow(clippy::too_many_arguments)]
pub fn weak_error_ladder(
    model: &CoefficientModel,
    levy: &LevyModel,
    f: &TestFunction,
    x0: f64,
    total_time: f64,
    h_list: &[f64],
    n_paths: u64,
    seed: u64,
    oracle: Oracle,
    ode_tol: f64,
) -> Result<WeakErrorReport, MonteCarloError> {
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        rows.push(estimate_weak_error(
            model, levy, f, x0, total_time, h, n_paths, seed, oracle, ode_tol,
        )?);
    }
    rows.sort_by(|a, b| b.h.partial_cmp(&a.h).unwrap());
    let (fitted_order, fit_intercept, fit_r2) =
        fit_convergence_order(&rows).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    Ok(WeakErrorReport {
        rows,
        fitted_order,
        fit_intercept,
        fit_r2,
        ci_level: 0.99,
    })
}

/// `|mean f(X at h_fine) - mean f(X at h_fine/2)|` over coupled reference
/// runs: an upper proxy for the oracle's own bias. An experiment is valid
/// when this is well below the smallest weak error used in the fit.
#[allow(clippy::too_many_arguments)]
pub fn self_convergence_check(
    model: &CoefficientModel,
    levy: &LevyModel,
    f: &TestFunction,
    x0: f64,
    total_time: f64,
    h: f64,
    h_fine: f64,
    n_paths: u64,
    seed: u64,
    ode_tol: f64,
) -> Result<f64, MonteCarloError> {
    let diffs: Vec<Result<f64, IntegratorError>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = IncrementStream::new(seed, i);
            let coarse = simulate_reference_terminal(
                model, levy, x0, total_time, h, h_fine, &stream, ode_tol,
            )?;
            let fine = simulate_reference_terminal(
                model,
                levy,
                x0,
                total_time,
                h,
                h_fine / 2.0,
                &stream,
                ode_tol,
            )?;
            Ok(f.value(coarse) - f.value(fine))
        })
        .collect();
    let values: Result<Vec<f64>, IntegratorError> = diffs.into_iter().collect();
    let values = values?;
    Ok((kahan_sum(&values) / values.len() as f64).abs())
}

/// Scheme-only estimate of `E f(X_T)` with its standard error; used for
/// diagnostics where no oracle is wanted.
#[allow(clippy::too_many_arguments)]
pub fn estimate_scheme_mean(
    model: &CoefficientModel,
    levy: &LevyModel,
    f: &TestFunction,
    x0: f64,
    total_time: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
    ode_tol: f64,
) -> Result<(f64, f64), MonteCarloError> {
    let vals: Vec<Result<f64, IntegratorError>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = IncrementStream::new(seed, i);
            let x = simulate_wz_terminal(model, levy, x0, total_time, h, &stream, ode_tol)?;
            Ok(f.value(x))
        })
        .collect();
    let values: Result<Vec<f64>, IntegratorError> = vals.into_iter().collect();
    let values = values?;
    Ok(mean_and_se(&values))
}

/// Empirical fourth-moment diagnostic, re-exported for the CLI.
pub fn fourth_moment_sup(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
    ode_tol: f64,
) -> Result<f64, MonteCarloError> {
    Ok(integrators::fourth_moment_sup(
        model, levy, x0, total_time, h, n_paths, seed, ode_tol,
    )?)
}
