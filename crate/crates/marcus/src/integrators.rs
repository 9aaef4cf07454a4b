//! Path integrators: the one-step scheme, a jump-adapted reference
//! integrator, and the exact oracle for the linear model.
//!
//! All integrators for a given `(seed, path_index)` consume the same
//! [`IncrementStream`] records, so a scheme path and its reference path see
//! identical noise (common random numbers). The reference integrator
//! refines each coarse step's Brownian increment by dyadic bridge
//! bisection; the bisection draws are keyed per step and consumed
//! level-major, so a run at `h_fine` and a run at `h_fine / 2` share every
//! Brownian value on the coarser grid. That nesting is what makes
//! self-convergence differences genuinely coupled.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::coefficients::CoefficientModel;
use crate::flow::{self, FlowError};
use crate::levy::{self, IncrementStream, Jump, LevyModel};
use crate::rng::{CounterRng, Substream};

#[derive(Error, Debug)]
pub enum IntegratorError {
    #[error(transparent)]
    Ode(#[from] FlowError),
    #[error("operation requires the linear model, got '{0}'")]
    NonlinearModel(String),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("state became non-finite near t = {t}")]
    PathDiverged { t: f64 },
}

/// Which process a [`PathGrid`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTag {
    WongZakai,
    ItoReference,
    ExactLinear,
    SmallJumpOnly,
}

impl SchemeTag {
    #[must_use]
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeTag::WongZakai => "wong_zakai",
            SchemeTag::ItoReference => "ito_reference",
            SchemeTag::ExactLinear => "exact_linear",
            SchemeTag::SmallJumpOnly => "small_jump_only",
        }
    }
}

/// A simulated path sampled on the uniform grid `0, h, 2h, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// `(seed, path_index)` of the stream that produced the path.
    pub stream_ref: (u64, u64),
    pub scheme_tag: SchemeTag,
}

impl PathGrid {
    #[must_use]
    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("grids hold at least the initial state")
    }

    /// Appends the path as CSV rows `path_index,k,t,state`.
    pub fn write_csv_rows(&self, path_index: u64, out: &mut impl Write) -> io::Result<()> {
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            writeln!(out, "{path_index},{k},{t},{x}")?;
        }
        Ok(())
    }
}

fn step_count(total_time: f64, h: f64) -> Result<usize, IntegratorError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(IntegratorError::BadGrid(format!("step h = {h} must be positive")));
    }
    if !(total_time > 0.0) || !total_time.is_finite() {
        return Err(IntegratorError::BadGrid(format!(
            "horizon T = {total_time} must be positive"
        )));
    }
    let ratio = total_time / h + 1e-9;
    if ratio > 1e8 {
        return Err(IntegratorError::BadGrid(format!(
            "T/h = {:.3e} exceeds the 1e8 step budget",
            total_time / h
        )));
    }
    Ok(ratio.floor() as usize)
}

fn ensure_finite(x: f64, t: f64) -> Result<f64, IntegratorError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(IntegratorError::PathDiverged { t })
    }
}

/// One step of the scheme: the exact one-step map fed with the step's
/// increments.
pub fn wz_step(
    model: &CoefficientModel,
    x: f64,
    h: f64,
    dw: f64,
    dz: f64,
    tol: f64,
) -> Result<f64, IntegratorError> {
    if !(h > 0.0) {
        return Err(IntegratorError::BadGrid(format!("step h = {h} must be positive")));
    }
    Ok(flow::solve_psi(model, x, h, dw, dz, tol)?.value)
}

fn wz_scan(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    stream: &IncrementStream,
    tol: f64,
    mut visit: impl FnMut(usize, f64),
) -> Result<f64, IntegratorError> {
    let n = step_count(total_time, h)?;
    let mut x = x0;
    visit(0, x);
    for k in 0..n {
        let r = stream.record_at(levy, k as u64, h);
        x = ensure_finite(wz_step(model, x, h, r.dw, r.dz, tol)?, k as f64 * h)?;
        visit(k + 1, x);
    }
    Ok(x)
}

/// Runs the scheme from `x0` to `total_time` on the uniform grid of step `h`.
pub fn simulate_wz_path(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    stream: &IncrementStream,
    tol: f64,
) -> Result<PathGrid, IntegratorError> {
    let n = step_count(total_time, h)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    wz_scan(model, levy, x0, total_time, h, stream, tol, |k, x| {
        times.push(k as f64 * h);
        states.push(x);
    })?;
    Ok(PathGrid {
        h,
        times,
        states,
        stream_ref: (stream.seed(), stream.path_index()),
        scheme_tag: SchemeTag::WongZakai,
    })
}

/// Terminal value of the scheme path, without storing the grid.
pub fn simulate_wz_terminal(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    stream: &IncrementStream,
    tol: f64,
) -> Result<f64, IntegratorError> {
    wz_scan(model, levy, x0, total_time, h, stream, tol, |_, _| {})
}

/// Ito drift of the small-jump process between its jump arrivals: the
/// Stratonovich-corrected drift minus the compensator of the sampled small
/// jumps. The flow applications at arrival times carry the rest of the
/// effective drift, so no quadrature appears here.
fn inter_jump_drift(model: &CoefficientModel, levy: &LevyModel, x: f64) -> f64 {
    stratonovich_drift(model, x) - model.c(x) * levy.small_mean()
}

/// `a(x) + b'(x) b(x) / 2`, the Ito drift of the Stratonovich diffusion part.
#[must_use]
pub fn stratonovich_drift(model: &CoefficientModel, x: f64) -> f64 {
    model.a(x) + 0.5 * model.deriv_b(x, 1) * model.b(x)
}

/// Number of bisection levels taking a coarse step of width `h` down to
/// `h_fine`; errors unless `h` is a power-of-two multiple of `h_fine`.
fn bridge_levels(h: f64, h_fine: f64) -> Result<u32, IntegratorError> {
    if !(h_fine > 0.0) {
        return Err(IntegratorError::BadGrid(format!(
            "h_fine = {h_fine} must be positive"
        )));
    }
    let ratio = h / h_fine;
    if ratio < 1.0 - 1e-9 {
        return Err(IntegratorError::BadGrid(format!(
            "h_fine = {h_fine} must not exceed the coarse step h = {h}"
        )));
    }
    let levels = ratio.log2().round();
    let implied = (2.0f64).powf(levels) * h_fine;
    if (implied - h).abs() > 1e-9 * h {
        return Err(IntegratorError::BadGrid(format!(
            "h / h_fine = {ratio} must be a power of two for bridge refinement"
        )));
    }
    Ok(levels as u32)
}

/// Brownian values at the `2^levels + 1` dyadic knots of one coarse step,
/// relative to the step start, conditioned on the step increment `dw`.
/// Draws come from the step's bridge substream in level-major order, so
/// deeper refinements of the same step extend shallower ones bit-for-bit.
fn refine_brownian(
    seed: u64,
    path_index: u64,
    step: u64,
    h: f64,
    dw: f64,
    levels: u32,
) -> Vec<f64> {
    let n = 1usize << levels;
    let mut w = vec![0.0; n + 1];
    w[n] = dw;
    let mut rng = CounterRng::at(seed, path_index, step, Substream::BrownianBridge);
    for level in 1..=levels {
        let segments = 1usize << (level - 1);
        let stride = n >> (level - 1);
        let sd = 0.5 * (h / segments as f64).sqrt();
        for j in 0..segments {
            let lo = j * stride;
            let hi = lo + stride;
            let mid = lo + stride / 2;
            let noise: f64 = rng.sample(StandardNormal);
            w[mid] = 0.5 * (w[lo] + w[hi]) + sd * noise;
        }
    }
    w
}

/// Brownian value at an interior time, conditioned on the bracketing
/// anchors (a plain bridge draw).
fn bridge_point(
    rng: &mut CounterRng,
    t_lo: f64,
    w_lo: f64,
    t_hi: f64,
    w_hi: f64,
    t: f64,
) -> f64 {
    let len = t_hi - t_lo;
    if len <= 0.0 {
        return w_lo;
    }
    let frac = (t - t_lo) / len;
    let var = (t - t_lo) * (t_hi - t) / len;
    let noise: f64 = rng.sample(StandardNormal);
    w_lo + frac * (w_hi - w_lo) + var.max(0.0).sqrt() * noise
}

struct ReferenceStepper<'a> {
    model: &'a CoefficientModel,
    levy: &'a LevyModel,
    tol: f64,
}

impl ReferenceStepper<'_> {
    fn euler(&self, x: f64, dt: f64, dw: f64) -> f64 {
        x + inter_jump_drift(self.model, self.levy, x) * dt + self.model.b(x) * dw
    }

    /// Advances the reference solution across one coarse step, applying
    /// every sampled jump via its exact flow at its arrival time.
    fn coarse_step(
        &self,
        mut x: f64,
        step: u64,
        h: f64,
        levels: u32,
        stream: &IncrementStream,
        jumps: &[Jump],
        fine_w: &[f64],
    ) -> Result<f64, IntegratorError> {
        let n_fine = 1usize << levels;
        let h_fine = h / n_fine as f64;
        let mut jump_rng = CounterRng::at(
            stream.seed(),
            stream.path_index(),
            step,
            Substream::JumpBridge,
        );
        let t0 = step as f64 * h;
        let mut next_jump = 0usize;
        for cell in 0..n_fine {
            let cell_lo = cell as f64 * h_fine;
            let cell_hi = (cell + 1) as f64 * h_fine;
            let mut t_a = cell_lo;
            let mut w_a = fine_w[cell];
            while next_jump < jumps.len() {
                let j = jumps[next_jump];
                let t_j = j.time * h;
                // The last cell takes every remaining jump so that a time
                // rounding up to the step end cannot be dropped.
                if cell + 1 != n_fine && t_j >= cell_hi {
                    break;
                }
                let w_j = bridge_point(&mut jump_rng, t_a, w_a, cell_hi, fine_w[cell + 1], t_j);
                x = self.euler(x, t_j - t_a, w_j - w_a);
                x = ensure_finite(x, t0 + t_j)?;
                x = flow::solve_flow(self.model, x, j.size, 0, self.tol)?.value;
                t_a = t_j;
                w_a = w_j;
                next_jump += 1;
            }
            x = self.euler(x, cell_hi - t_a, fine_w[cell + 1] - w_a);
            x = ensure_finite(x, t0 + cell_hi)?;
        }
        Ok(x)
    }
}

fn reference_scan(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    h_fine: f64,
    stream: &IncrementStream,
    tol: f64,
    mut visit: impl FnMut(usize, f64),
) -> Result<f64, IntegratorError> {
    let n = step_count(total_time, h)?;
    let levels = bridge_levels(h, h_fine)?;
    if total_time / h_fine > 1e8 {
        return Err(IntegratorError::BadGrid(format!(
            "T/h_fine = {:.3e} exceeds the 1e8 step budget",
            total_time / h_fine
        )));
    }
    let stepper = ReferenceStepper { model, levy, tol };
    let mut x = x0;
    visit(0, x);
    for k in 0..n {
        let record = stream.record_at(levy, k as u64, h);
        let fine_w = refine_brownian(
            stream.seed(),
            stream.path_index(),
            k as u64,
            h,
            record.dw,
            levels,
        );
        x = stepper.coarse_step(x, k as u64, h, levels, stream, &record.jumps, &fine_w)?;
        visit(k + 1, x);
    }
    Ok(x)
}

/// Jump-adapted strong integrator for the true solution, reported on the
/// coarse grid. Between jumps it advances by Euler-Maruyama at `h_fine` on
/// the bridged Brownian path; at every sampled jump time it applies the
/// exact jump flow. Consumes the same records as [`simulate_wz_path`] for
/// the same stream, which is what couples the pair.
pub fn simulate_reference_path(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    h_fine: f64,
    stream: &IncrementStream,
    tol: f64,
) -> Result<PathGrid, IntegratorError> {
    let n = step_count(total_time, h)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    reference_scan(
        model,
        levy,
        x0,
        total_time,
        h,
        h_fine,
        stream,
        tol,
        |k, x| {
            times.push(k as f64 * h);
            states.push(x);
        },
    )?;
    Ok(PathGrid {
        h,
        times,
        states,
        stream_ref: (stream.seed(), stream.path_index()),
        scheme_tag: SchemeTag::ItoReference,
    })
}

/// Terminal value of the reference path, without storing the grid.
pub fn simulate_reference_terminal(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    h_fine: f64,
    stream: &IncrementStream,
    tol: f64,
) -> Result<f64, IntegratorError> {
    reference_scan(model, levy, x0, total_time, h, h_fine, stream, tol, |_, _| {})
}

/// Exact solution of the linear model `x exp(alpha t + beta W_t + m Z_t)`
/// on the grid, driven by the shared stream (zero discretization error).
pub fn exact_linear_path(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    stream: &IncrementStream,
) -> Result<PathGrid, IntegratorError> {
    let lin = model
        .as_linear()
        .ok_or_else(|| IntegratorError::NonlinearModel(model.name().to_string()))?;
    let n = step_count(total_time, h)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut w = 0.0;
    let mut z = 0.0;
    times.push(0.0);
    states.push(x0);
    for k in 0..n {
        let r = stream.record_at(levy, k as u64, h);
        w += r.dw;
        z += r.dz;
        let t = (k + 1) as f64 * h;
        times.push(t);
        states.push(x0 * (lin.alpha * t + lin.beta * w + lin.m * z).exp());
    }
    Ok(PathGrid {
        h,
        times,
        states,
        stream_ref: (stream.seed(), stream.path_index()),
        scheme_tag: SchemeTag::ExactLinear,
    })
}

/// Terminal value of [`exact_linear_path`] without storing the grid.
pub fn exact_linear_terminal(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    stream: &IncrementStream,
) -> Result<f64, IntegratorError> {
    let lin = model
        .as_linear()
        .ok_or_else(|| IntegratorError::NonlinearModel(model.name().to_string()))?;
    let n = step_count(total_time, h)?;
    let mut w = 0.0;
    let mut z = 0.0;
    for k in 0..n {
        let r = stream.record_at(levy, k as u64, h);
        w += r.dw;
        z += r.dz;
    }
    Ok(x0 * (lin.alpha * n as f64 * h + lin.beta * w + lin.m * z).exp())
}

/// Runs the scheme on a diagonal system: `d` independent scalar equations,
/// one model, driver and stream per component. This is the only
/// multidimensional entry point; every component evolves exactly as a
/// scalar [`simulate_wz_path`] run with its own stream.
pub fn simulate_wz_diagonal(
    models: &[CoefficientModel],
    levies: &[LevyModel],
    x0: &[f64],
    total_time: f64,
    h: f64,
    streams: &[IncrementStream],
    tol: f64,
) -> Result<Vec<PathGrid>, IntegratorError> {
    let d = models.len();
    if levies.len() != d || x0.len() != d || streams.len() != d {
        return Err(IntegratorError::BadGrid(format!(
            "diagonal system needs equal component counts, got models {d}, drivers {}, states {}, streams {}",
            levies.len(),
            x0.len(),
            streams.len()
        )));
    }
    (0..d)
        .map(|i| simulate_wz_path(&models[i], &levies[i], x0[i], total_time, h, &streams[i], tol))
        .collect()
}

/// Terminal value of the small-jump process (large jumps discarded) over a
/// short horizon, for semigroup-style estimates. Noise comes from the
/// caller's rng rather than a keyed stream.
pub fn small_jump_terminal(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    n_substeps: usize,
    rng: &mut CounterRng,
    tol: f64,
) -> Result<f64, IntegratorError> {
    if !(total_time > 0.0) || n_substeps == 0 {
        return Err(IntegratorError::BadGrid(
            "small-jump horizon and substep count must be positive".to_string(),
        ));
    }
    let mut jumps: Vec<Jump> = levy::sample_jumps(levy, rng, total_time)
        .into_iter()
        .filter(|j| !j.is_large())
        .collect();
    jumps.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let dt = total_time / n_substeps as f64;
    let mut x = x0;
    let mut t = 0.0;
    let mut next_jump = 0usize;
    for k in 0..n_substeps {
        let cell_hi = (k + 1) as f64 * dt;
        while next_jump < jumps.len()
            && (k + 1 == n_substeps || jumps[next_jump].time * total_time <= cell_hi)
        {
            let j = jumps[next_jump];
            let t_j = j.time * total_time;
            let span = (t_j - t).max(0.0);
            let dw = span.sqrt() * rng.sample::<f64, _>(StandardNormal);
            x = x + inter_jump_drift(model, levy, x) * span + model.b(x) * dw;
            x = flow::solve_flow(model, x, j.size, 0, tol)?.value;
            t = t_j;
            next_jump += 1;
        }
        let span = (cell_hi - t).max(0.0);
        let dw = span.sqrt() * rng.sample::<f64, _>(StandardNormal);
        x = x + inter_jump_drift(model, levy, x) * span + model.b(x) * dw;
        t = cell_hi;
        x = ensure_finite(x, t)?;
    }
    Ok(x)
}

/// The effective drift of the small-jump process: Stratonovich-corrected
/// drift plus the small-jump flow correction
///
/// ```text
///     a(x) + b'(x)b(x)/2 + integral of (phi_z(x) - x - c(x) z) nu(dz)
///     over delta <= |z| <= 1,
/// ```
///
/// with the integral evaluated on cached nodes shared with the generator
/// code, so identity checks see one discretization on both sides.
#[derive(Debug, Clone)]
pub struct EffectiveDrift {
    model: CoefficientModel,
    nodes: Vec<(f64, f64)>,
    flow_tol: f64,
}

impl EffectiveDrift {
    const POINTS_PER_SIDE: usize = 64;

    #[must_use]
    pub fn new(model: &CoefficientModel, levy: &LevyModel) -> Self {
        EffectiveDrift {
            model: model.clone(),
            nodes: levy.small_jump_nodes(Self::POINTS_PER_SIDE),
            flow_tol: 1e-10,
        }
    }

    /// The shared quadrature nodes `(z, weight)` for the small-jump measure.
    #[must_use]
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn eval(&self, x: f64) -> Result<f64, IntegratorError> {
        let mut correction = 0.0;
        let cx = self.model.c(x);
        for &(z, weight) in &self.nodes {
            let phi = flow::solve_flow(&self.model, x, z, 0, self.flow_tol)?.value;
            correction += weight * (phi - x - cx * z);
        }
        Ok(stratonovich_drift(&self.model, x) + correction)
    }
}

/// Convenience free function matching the library's operation naming.
pub fn effective_drift_eval(ed: &EffectiveDrift, x: f64) -> Result<f64, IntegratorError> {
    ed.eval(x)
}

/// Largest per-knot mean of `|X|^4` along scheme paths; finiteness that is
/// stable in `h` is the empirical fourth-moment bound.
pub fn fourth_moment_sup(
    model: &CoefficientModel,
    levy: &LevyModel,
    x0: f64,
    total_time: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
    tol: f64,
) -> Result<f64, IntegratorError> {
    use rayon::prelude::*;
    let n = step_count(total_time, h)?;
    let sums = (0..n_paths)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>, IntegratorError> {
            let stream = IncrementStream::new(seed, i);
            let mut acc = vec![0.0f64; n + 1];
            wz_scan(model, levy, x0, total_time, h, &stream, tol, |k, x| {
                acc[k] = x.powi(4).abs();
            })?;
            Ok(acc)
        })
        .try_reduce(
            || vec![0.0f64; n + 1],
            |mut a, b| {
                for (ai, bi) in a.iter_mut().zip(&b) {
                    *ai += bi;
                }
                Ok(a)
            },
        )?;
    Ok(sums
        .iter()
        .map(|s| s / n_paths as f64)
        .fold(f64::NEG_INFINITY, f64::max))
}
