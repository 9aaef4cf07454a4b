//! Command line driver for weak-convergence experiments.
//!
//! Every run starts from a TOML config (see `config`). Subcommands:
//!
//! * `converge`: run the step-size ladder, fit the weak order, write
//!   `weak_error.csv` and `weak_error_plot.csv`;
//! * `verify`: check the standing hypotheses (generator identity, flow
//!   derivative growth, coefficient bounds, driver tail moment);
//! * `paths`: dump a few coupled scheme/oracle trajectories to CSV.
//!
//! Exit codes: 0 success, 1 a numerical criterion failed, 2 bad
//! configuration, 3 a simulation broke down, 4 I/O failure.

// Validation guards are written `!(x > 0.0)` so that NaN falls into the
// error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Experiment;
use marcus::coefficients::check_habc;
use marcus::flow::check_flow_derivative_bounds;
use marcus::generators::verify_L_equals_Q;
use marcus::integrators::{exact_linear_path, simulate_reference_path, simulate_wz_path};
use marcus::levy::{check_hnu, TailMoment};
use marcus::montecarlo::{self, Oracle};
use marcus::{EffectiveDrift, IncrementStream};

const EXIT_OK: u8 = 0;
const EXIT_CRITERIA: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "marcus", version, about = "Weak-order experiments for jump-driven canonical equations")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (default: the config's out_dir, else ".").
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Number of worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    paths_parallel: Option<usize>,

    /// Ask for bit-identical output across runs and thread counts.
    /// Reductions always run in fixed path order, so this is a guarantee
    /// the binary honours anyway; the flag exists for experiment scripts.
    #[arg(long)]
    reproducible: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the step ladder and fit the weak convergence order.
    Converge,
    /// Check hypotheses and the generator identity for this config.
    Verify,
    /// Write n coupled scheme/oracle trajectories to CSV.
    Paths {
        /// How many trajectories (at most 1000).
        #[arg(long, default_value_t = 10)]
        n: u64,
    },
}

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}

fn fail(code: u8, msg: impl Display) -> u8 {
    eprintln!("{msg}");
    code
}

fn run(cli: Cli) -> u8 {
    // Determinism does not depend on the flag; see its help text.
    let _ = cli.reproducible;
    if let Some(n) = cli.paths_parallel {
        if n == 0 {
            return fail(EXIT_CONFIG, "config error: --paths-parallel must be at least 1");
        }
        // Err here means a pool already exists (only possible in tests);
        // the run stays correct either way.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let mut cfg = match config::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, format!("config error: {e}")),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    let exp = match cfg.resolve() {
        Ok(exp) => exp,
        Err(e) => return fail(EXIT_CONFIG, format!("config error: {e}")),
    };
    let out_dir = cli
        .out
        .or_else(|| exp.config.run.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    match cli.command {
        Command::Converge => cmd_converge(&exp, &out_dir),
        Command::Verify => cmd_verify(&exp),
        Command::Paths { n } => cmd_paths(&exp, &out_dir, n),
    }
}

fn cmd_converge(exp: &Experiment, out_dir: &Path) -> u8 {
    let run = &exp.config.run;
    let report = match montecarlo::weak_error_ladder(
        &exp.model,
        &exp.levy,
        &exp.f,
        run.x0,
        run.total_time,
        &run.h_list,
        run.n_paths,
        run.seed,
        exp.oracle,
        run.ode_tol,
    ) {
        Ok(report) => report,
        Err(e) => return fail(EXIT_NUMERICAL, format!("simulation failed: {e}")),
    };

    if let Err(e) = fs::create_dir_all(out_dir) {
        return fail(EXIT_IO, format!("cannot create {}: {e}", out_dir.display()));
    }
    for (name, write) in [
        ("weak_error.csv", true),
        ("weak_error_plot.csv", false),
    ] {
        let path = out_dir.join(name);
        let mut buf = Vec::new();
        let res = if write {
            report.write_csv(&mut buf)
        } else {
            report.write_plot_data(&mut buf)
        };
        if let Err(e) = res.and_then(|()| fs::write(&path, &buf)) {
            return fail(EXIT_IO, format!("cannot write {}: {e}", path.display()));
        }
        println!("wrote {}", path.display());
    }

    println!(
        "model {} / driver {} / f {} / {} coupled pairs per row / seed {}",
        exp.model.name(),
        exp.levy.family_name(),
        exp.f.name(),
        run.n_paths,
        run.seed
    );
    println!("{:>12}  {:>13}  {:>13}", "h", "weak_error", "stderr");
    let mut smallest_usable = f64::INFINITY;
    for r in &report.rows {
        let usable = r.weak_error > 3.0 * r.stderr_coupled && r.weak_error > 0.0;
        if usable {
            smallest_usable = smallest_usable.min(r.weak_error);
        }
        println!(
            "{:>12.6}  {:>13.6e}  {:>13.6e}{}",
            r.h,
            r.weak_error,
            r.stderr_coupled,
            if usable { "" } else { "  (below noise floor)" }
        );
    }

    if exp.model.as_linear().is_some() {
        println!("degenerate: scheme exact (the one-step map solves the linear equation); no order to fit");
        return EXIT_OK;
    }

    if !report.fitted_order.is_finite() {
        eprintln!("order fit failed: fewer than 3 rows clear the noise floor");
        return EXIT_CRITERIA;
    }
    println!(
        "fitted order {:.4}, r^2 {:.4}, error constant {:.4e}",
        report.fitted_order,
        report.fit_r2,
        report.fit_intercept.exp()
    );

    let h_small = *run.h_list.last().expect("validated nonempty");
    let self_conv = match montecarlo::self_convergence_check(
        &exp.model,
        &exp.levy,
        &exp.f,
        run.x0,
        run.total_time,
        h_small,
        exp.h_fine,
        run.n_paths,
        run.seed,
        run.ode_tol,
    ) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_NUMERICAL, format!("self-convergence run failed: {e}")),
    };
    let budget = 0.2 * smallest_usable;
    println!(
        "oracle self-convergence {:.3e}, budget {:.3e} (20% of smallest usable weak error)",
        self_conv, budget
    );

    let order_ok = (0.8..=1.2).contains(&report.fitted_order);
    let oracle_ok = self_conv < budget;
    if order_ok && oracle_ok {
        println!("converge: PASS");
        EXIT_OK
    } else {
        if !order_ok {
            eprintln!(
                "converge: FAIL, fitted order {:.4} outside [0.8, 1.2]",
                report.fitted_order
            );
        }
        if !oracle_ok {
            eprintln!(
                "converge: FAIL, oracle bias {:.3e} not below budget {:.3e}",
                self_conv, budget
            );
        }
        EXIT_CRITERIA
    }
}

fn status_line(name: &str, pass: bool, detail: impl Display) {
    println!("{:<26} {}  {}", name, if pass { "PASS" } else { "FAIL" }, detail);
}

/// `n` points spread evenly over `[lo, hi]`, endpoints included.
fn probe_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Deterministic `(x, z)` samples with `|z|` in `(1, 5]`, spread by two
/// irrational rotations so no RNG dependency is needed here.
fn growth_samples(n: usize) -> Vec<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    const SQRT2_FRAC: f64 = 0.414_213_562_373_095_1;
    (0..n)
        .map(|i| {
            let u = ((i as f64 + 0.5) * INV_PHI).fract();
            let v = ((i as f64 + 0.5) * SQRT2_FRAC).fract();
            let x = -5.0 + 10.0 * u;
            let magnitude = 1.0 + 4.0 * v;
            let z = if i % 2 == 0 { magnitude } else { -magnitude };
            (x, z)
        })
        .collect()
}

fn cmd_verify(exp: &Experiment) -> u8 {
    let run = &exp.config.run;
    let mut all_pass = true;

    let ed = EffectiveDrift::new(&exp.model, &exp.levy);
    let probes = probe_grid(100, -3.0, 3.0);
    match verify_L_equals_Q(&exp.model, &ed, &exp.f, &probes, 1e-4, run.identity_tol) {
        Ok(rep) => {
            all_pass &= rep.pass;
            status_line(
                "generator identity",
                rep.pass,
                format!(
                    "max discrepancy {:.3e} at x = {:.3} over {} probes (tol {:.1e})",
                    rep.max_abs_discrepancy, rep.worst_x, rep.probes, rep.tol
                ),
            );
        }
        Err(e) => return fail(EXIT_NUMERICAL, format!("generator identity check broke down: {e}")),
    }

    match exp.model.bounds.c_prime() {
        Some(kappa) => {
            let samples = growth_samples(1000);
            match check_flow_derivative_bounds(&exp.model, &samples) {
                Ok(rep) => {
                    let ok = rep.all_within_bounds();
                    all_pass &= ok;
                    status_line(
                        "flow derivative growth",
                        ok,
                        format!(
                            "{} samples, {} violations, max ratio to bound {:.3}",
                            rep.samples_checked,
                            rep.violations.len(),
                            rep.max_ratios.iter().cloned().fold(0.0, f64::max)
                        ),
                    );
                }
                Err(e) => return fail(EXIT_NUMERICAL, format!("flow bound check broke down: {e}")),
            }

            match check_hnu(&exp.levy, kappa) {
                TailMoment::Finite(value) => status_line(
                    "driver tail moment",
                    true,
                    format!("cubed-tail integral {value:.6e} with kappa = {kappa}"),
                ),
                TailMoment::Infinite => {
                    all_pass = false;
                    status_line(
                        "driver tail moment",
                        false,
                        "infinite: large jumps are too heavy for bounded fourth moments",
                    );
                }
            }
        }
        None => println!("{:<26} SKIP  model records no derivative bound for c", "flow derivative growth"),
    }

    let habc = check_habc(&exp.model, &probe_grid(201, -10.0, 10.0));
    all_pass &= habc.all_pass();
    status_line(
        "coefficient bounds",
        habc.all_pass(),
        format!("{} clauses on 201 grid points in [-10, 10]", habc.clauses.len()),
    );
    for line in habc.to_string().lines() {
        println!("    {line}");
    }

    if all_pass {
        println!("verify: PASS");
        EXIT_OK
    } else {
        println!("verify: FAIL");
        EXIT_CRITERIA
    }
}

fn cmd_paths(exp: &Experiment, out_dir: &Path, n: u64) -> u8 {
    if n == 0 || n > 1000 {
        return fail(EXIT_CONFIG, format!("config error: paths --n must be in 1..=1000, got {n}"));
    }
    let run = &exp.config.run;
    let h = *run.h_list.last().expect("validated nonempty");

    let header = b"path_index,k,t,state\n".to_vec();
    let mut scheme_csv = header.clone();
    let mut oracle_csv = header;
    for i in 0..n {
        let stream = IncrementStream::new(run.seed, i);
        let scheme = match simulate_wz_path(
            &exp.model, &exp.levy, run.x0, run.total_time, h, &stream, run.ode_tol,
        ) {
            Ok(grid) => grid,
            Err(e) => return fail(EXIT_NUMERICAL, format!("scheme path {i} failed: {e}")),
        };
        let oracle = match exp.oracle {
            Oracle::ExactLinear => {
                exact_linear_path(&exp.model, &exp.levy, run.x0, run.total_time, h, &stream)
            }
            Oracle::Reference { h_fine } => simulate_reference_path(
                &exp.model, &exp.levy, run.x0, run.total_time, h, h_fine, &stream, run.ode_tol,
            ),
        };
        let oracle = match oracle {
            Ok(grid) => grid,
            Err(e) => return fail(EXIT_NUMERICAL, format!("oracle path {i} failed: {e}")),
        };
        scheme
            .write_csv_rows(i, &mut scheme_csv)
            .expect("writing into memory cannot fail");
        oracle
            .write_csv_rows(i, &mut oracle_csv)
            .expect("writing into memory cannot fail");
    }

    if let Err(e) = fs::create_dir_all(out_dir) {
        return fail(EXIT_IO, format!("cannot create {}: {e}", out_dir.display()));
    }
    for (name, bytes) in [("scheme_paths.csv", &scheme_csv), ("oracle_paths.csv", &oracle_csv)] {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            return fail(EXIT_IO, format!("cannot write {}: {e}", path.display()));
        }
        println!("wrote {}", path.display());
    }
    println!(
        "{n} coupled trajectories on h = {h} (seed {}), oracle {}",
        run.seed,
        match exp.oracle {
            Oracle::ExactLinear => "exact_linear".to_string(),
            Oracle::Reference { h_fine } => format!("reference at h_fine = {h_fine}"),
        }
    );
    EXIT_OK
}
