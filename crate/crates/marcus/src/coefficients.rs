//! Coefficient triples `(a, b, c)` of the equation
//!
//! ```text
//!     dX = a(X) dt + b(X) o dW + c(X) <> dZ
//! ```
//!
//! together with their derivatives up to fourth order. Everything downstream
//! (flow solves, generator checks, the scheme itself) pulls coefficient
//! values and derivatives from here, so derivatives are analytic per model
//! rather than approximated; finite differences appear only in tests as a
//! cross-check.
//!
//! The weak-error analysis needs bounded derivatives of orders 1..4 plus
//! bounded products `b * d^k b` and `c * d^k c` for orders 2..4 (the
//! coefficients themselves may grow linearly). [`check_habc`] evaluates
//! those clauses on a probe grid and reports an empirical verdict per
//! clause.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::CounterRng;

#[derive(Error, Debug)]
pub enum CoefficientError {
    #[error("unknown builtin model '{0}' (expected linear, constant or bounded_trig)")]
    UnknownModel(String),
    #[error("model '{name}' expects {expected} parameters, got {got}")]
    ParameterCount {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("derivative order {0} out of range (supported: 0..=4)")]
    OrderOutOfRange(u32),
}

/// Which coefficient of the equation a clause refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffField {
    /// `a`, the drift.
    Drift,
    /// `b`, the Brownian coefficient.
    Diffusion,
    /// `c`, the jump coefficient.
    Jump,
}

impl fmt::Display for CoeffField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CoeffField::Drift => "a",
            CoeffField::Diffusion => "b",
            CoeffField::Jump => "c",
        };
        write!(f, "{s}")
    }
}

/// Known sup-norms of coefficient derivatives, filled in where finite.
///
/// Index `k - 1` holds `sup_x |d^k f(x)|` for `k = 1..=4`. `None` means the
/// bound is unknown or infinite. Builtin models populate every entry.
#[derive(Debug, Clone, Default)]
pub struct BoundCatalog {
    pub a_derivs: [Option<f64>; 4],
    pub b_derivs: [Option<f64>; 4],
    pub c_derivs: [Option<f64>; 4],
}

impl BoundCatalog {
    /// `sup |a'|` when recorded.
    #[must_use]
    pub fn a_prime(&self) -> Option<f64> {
        self.a_derivs[0]
    }

    /// `sup |b'|` when recorded.
    #[must_use]
    pub fn b_prime(&self) -> Option<f64> {
        self.b_derivs[0]
    }

    /// `sup |c'|` when recorded. This is the constant that controls jump
    /// flow growth and the tail-moment hypothesis on the Levy measure.
    #[must_use]
    pub fn c_prime(&self) -> Option<f64> {
        self.c_derivs[0]
    }
}

type DerivFn = dyn Fn(f64, u32) -> f64 + Send + Sync;

enum Kind {
    /// `a = alpha x`, `b = beta x`, `c = m x`. The one model with a closed
    /// form for everything, used as the exactness anchor.
    Linear { alpha: f64, beta: f64, m: f64 },
    /// State-independent coefficients.
    Constant { a0: f64, b0: f64, c0: f64 },
    /// `a = alpha sin x`, `b = beta cos x`, `c = m sin x`. Smooth, bounded,
    /// with bounded derivatives of every order; the workhorse for
    /// convergence experiments.
    BoundedTrig { alpha: f64, beta: f64, m: f64 },
    /// Arbitrary user-supplied coefficients, `f(x, order)` with order 0..=4.
    Custom {
        a: Arc<DerivFn>,
        b: Arc<DerivFn>,
        c: Arc<DerivFn>,
    },
}

impl Clone for Kind {
    fn clone(&self) -> Self {
        match self {
            Kind::Linear { alpha, beta, m } => Kind::Linear {
                alpha: *alpha,
                beta: *beta,
                m: *m,
            },
            Kind::Constant { a0, b0, c0 } => Kind::Constant {
                a0: *a0,
                b0: *b0,
                c0: *c0,
            },
            Kind::BoundedTrig { alpha, beta, m } => Kind::BoundedTrig {
                alpha: *alpha,
                beta: *beta,
                m: *m,
            },
            Kind::Custom { a, b, c } => Kind::Custom {
                a: Arc::clone(a),
                b: Arc::clone(b),
                c: Arc::clone(c),
            },
        }
    }
}

/// A scalar coefficient triple with analytic derivatives and recorded
/// derivative bounds.
#[derive(Clone)]
pub struct CoefficientModel {
    kind: Kind,
    name: String,
    pub bounds: BoundCatalog,
    pub dim_state: u32,
    pub dim_noise: u32,
}

impl fmt::Debug for CoefficientModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientModel")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// Parameters of the linear model, exposed so exact-solution code paths can
/// recognize it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub m: f64,
}

// Derivative cycles for sin/cos based coefficients: entry k is d^k of the
// base function, expressed as (use_cos, sign).
fn sin_deriv(x: f64, scale: f64, k: u32) -> f64 {
    match k % 4 {
        0 => scale * x.sin(),
        1 => scale * x.cos(),
        2 => -scale * x.sin(),
        _ => -scale * x.cos(),
    }
}

fn cos_deriv(x: f64, scale: f64, k: u32) -> f64 {
    match k % 4 {
        0 => scale * x.cos(),
        1 => -scale * x.sin(),
        2 => -scale * x.cos(),
        _ => scale * x.sin(),
    }
}

impl CoefficientModel {
    /// Builds one of the builtin models by name.
    ///
    /// * `"linear"`, params `[alpha, beta, m]`
    /// * `"constant"`, params `[a0, b0, c0]`
    /// * `"bounded_trig"`, params `[alpha, beta, m]`
    pub fn builtin(name: &str, params: &[f64]) -> Result<Self, CoefficientError> {
        let need = |n: usize| -> Result<(), CoefficientError> {
            if params.len() == n {
                Ok(())
            } else {
                Err(CoefficientError::ParameterCount {
                    name: name.to_string(),
                    expected: n,
                    got: params.len(),
                })
            }
        };
        match name {
            "linear" => {
                need(3)?;
                let (alpha, beta, m) = (params[0], params[1], params[2]);
                let first = |v: f64| [Some(v.abs()), Some(0.0), Some(0.0), Some(0.0)];
                Ok(CoefficientModel {
                    kind: Kind::Linear { alpha, beta, m },
                    name: name.to_string(),
                    bounds: BoundCatalog {
                        a_derivs: first(alpha),
                        b_derivs: first(beta),
                        c_derivs: first(m),
                    },
                    dim_state: 1,
                    dim_noise: 1,
                })
            }
            "constant" => {
                need(3)?;
                let zero = [Some(0.0); 4];
                Ok(CoefficientModel {
                    kind: Kind::Constant {
                        a0: params[0],
                        b0: params[1],
                        c0: params[2],
                    },
                    name: name.to_string(),
                    bounds: BoundCatalog {
                        a_derivs: zero,
                        b_derivs: zero,
                        c_derivs: zero,
                    },
                    dim_state: 1,
                    dim_noise: 1,
                })
            }
            "bounded_trig" => {
                need(3)?;
                let (alpha, beta, m) = (params[0], params[1], params[2]);
                let all = |v: f64| [Some(v.abs()); 4];
                Ok(CoefficientModel {
                    kind: Kind::BoundedTrig { alpha, beta, m },
                    name: name.to_string(),
                    bounds: BoundCatalog {
                        a_derivs: all(alpha),
                        b_derivs: all(beta),
                        c_derivs: all(m),
                    },
                    dim_state: 1,
                    dim_noise: 1,
                })
            }
            other => Err(CoefficientError::UnknownModel(other.to_string())),
        }
    }

    /// Wraps user-supplied coefficient functions. Each closure receives
    /// `(x, order)` with order 0 meaning the value itself, and must provide
    /// analytic derivatives through order 4.
    pub fn custom(
        name: impl Into<String>,
        a: impl Fn(f64, u32) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, u32) -> f64 + Send + Sync + 'static,
        c: impl Fn(f64, u32) -> f64 + Send + Sync + 'static,
        bounds: BoundCatalog,
    ) -> Self {
        CoefficientModel {
            kind: Kind::Custom {
                a: Arc::new(a),
                b: Arc::new(b),
                c: Arc::new(c),
            },
            name: name.into(),
            bounds,
            dim_state: 1,
            dim_noise: 1,
        }
    }

    #[must_use]
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Returns the linear-model parameters when this is the linear model.
    #[must_use]
    pub fn as_linear(&self) -> Option<LinearCoeffs> {
        match self.kind {
            Kind::Linear { alpha, beta, m } => Some(LinearCoeffs { alpha, beta, m }),
            _ => None,
        }
    }

    #[must_use]
    pub fn a(&self, x: f64) -> f64 {
        self.deriv_a(x, 0)
    }

    #[must_use]
    pub fn b(&self, x: f64) -> f64 {
        self.deriv_b(x, 0)
    }

    #[must_use]
    pub fn c(&self, x: f64) -> f64 {
        self.deriv_c(x, 0)
    }

    /// `d^order a(x)`; order 0 is `a(x)` itself, orders up to 4 are analytic.
    #[must_use]
    pub fn deriv_a(&self, x: f64, order: u32) -> f64 {
        debug_assert!(order <= 4);
        match &self.kind {
            Kind::Linear { alpha, .. } => linear_deriv(x, *alpha, order),
            Kind::Constant { a0, .. } => constant_deriv(*a0, order),
            Kind::BoundedTrig { alpha, .. } => sin_deriv(x, *alpha, order),
            Kind::Custom { a, .. } => a(x, order),
        }
    }

    /// `d^order b(x)`; see [`Self::deriv_a`].
    #[must_use]
    pub fn deriv_b(&self, x: f64, order: u32) -> f64 {
        debug_assert!(order <= 4);
        match &self.kind {
            Kind::Linear { beta, .. } => linear_deriv(x, *beta, order),
            Kind::Constant { b0, .. } => constant_deriv(*b0, order),
            Kind::BoundedTrig { beta, .. } => cos_deriv(x, *beta, order),
            Kind::Custom { b, .. } => b(x, order),
        }
    }

    /// `d^order c(x)`; see [`Self::deriv_a`].
    #[must_use]
    pub fn deriv_c(&self, x: f64, order: u32) -> f64 {
        debug_assert!(order <= 4);
        match &self.kind {
            Kind::Linear { m, .. } => linear_deriv(x, *m, order),
            Kind::Constant { c0, .. } => constant_deriv(*c0, order),
            Kind::BoundedTrig { m, .. } => sin_deriv(x, *m, order),
            Kind::Custom { c, .. } => c(x, order),
        }
    }

    /// Best available bound on `|a'| tau + |b'| |w| + |c'| |z|` style field
    /// scales, falling back to the local derivative magnitude at `x` when no
    /// global bound is recorded.
    pub(crate) fn field_scale(&self, x: f64, tau: f64, w: f64, z: f64) -> f64 {
        let pick = |bound: Option<f64>, local: f64| bound.unwrap_or(2.0 * local.abs());
        pick(self.bounds.a_prime(), self.deriv_a(x, 1)) * tau.abs()
            + pick(self.bounds.b_prime(), self.deriv_b(x, 1)) * w.abs()
            + pick(self.bounds.c_prime(), self.deriv_c(x, 1)) * z.abs()
    }
}

fn linear_deriv(x: f64, scale: f64, order: u32) -> f64 {
    match order {
        0 => scale * x,
        1 => scale,
        _ => 0.0,
    }
}

fn constant_deriv(v: f64, order: u32) -> f64 {
    if order == 0 {
        v
    } else {
        0.0
    }
}

/// One clause of the boundedness hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clause {
    /// `sup |d^order f| < inf` for orders 1..=4.
    DerivBound { field: CoeffField, order: u32 },
    /// `sup |f * d^order f| < inf` for orders 2..=4 (only `b` and `c`).
    ProductBound { field: CoeffField, order: u32 },
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::DerivBound { field, order } => write!(f, "sup |d^{order} {field}|"),
            Clause::ProductBound { field, order } => {
                write!(f, "sup |{field} * d^{order} {field}|")
            }
        }
    }
}

/// Empirical verdict for a clause over the probe grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Sup stabilized over expanding windows.
    Pass,
    /// Sup kept growing as the window expanded.
    NumericallyUnbounded,
    /// Growth pattern was ambiguous on this grid.
    Unknown,
}

#[derive(Debug, Clone)]
pub struct ClauseCheck {
    pub clause: Clause,
    pub empirical_sup: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub clauses: Vec<ClauseCheck>,
}

impl HypothesisReport {
    #[must_use]
    pub fn all_pass(&self) -> bool {
        self.clauses.iter().all(|c| c.verdict == Verdict::Pass)
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.clauses {
            writeln!(
                f,
                "{:<24} {:>14.6e}  {}",
                check.clause.to_string(),
                check.empirical_sup,
                match check.verdict {
                    Verdict::Pass => "pass",
                    Verdict::NumericallyUnbounded => "numerically-unbounded",
                    Verdict::Unknown => "unknown",
                }
            )?;
        }
        Ok(())
    }
}

/// The default probe grid: 10^4 uniformly spaced points on `[-50, 50]` plus
/// 10^3 standard normal draws, deterministic in `seed`.
#[must_use]
pub fn default_probe_grid(seed: u64) -> Vec<f64> {
    let mut grid = Vec::with_capacity(11_000);
    let n = 10_000;
    for i in 0..n {
        grid.push(-50.0 + 100.0 * i as f64 / (n - 1) as f64);
    }
    let mut rng = CounterRng::for_path(seed, 0);
    for _ in 0..1000 {
        grid.push(rng.sample::<f64, _>(StandardNormal));
    }
    grid
}

/// Evaluates every clause of the boundedness hypothesis on `grid`.
///
/// The verdict compares the running sup over nested windows `|x| <= L/4`,
/// `|x| <= L/2`, `|x| <= L` (with `L` the largest probe magnitude): a sup
/// that stays flat passes, a sup that grows by 20% or more per doubling is
/// reported as numerically unbounded, anything in between is unknown. The
/// verdicts describe behavior over the probed range only.
#[must_use]
pub fn check_habc(model: &CoefficientModel, grid: &[f64]) -> HypothesisReport {
    let mut clauses = Vec::new();
    for order in 1..=4 {
        for field in [CoeffField::Drift, CoeffField::Diffusion, CoeffField::Jump] {
            clauses.push(run_clause(
                model,
                grid,
                Clause::DerivBound { field, order },
            ));
        }
    }
    for order in 2..=4 {
        for field in [CoeffField::Diffusion, CoeffField::Jump] {
            clauses.push(run_clause(
                model,
                grid,
                Clause::ProductBound { field, order },
            ));
        }
    }
    HypothesisReport { clauses }
}

fn run_clause(model: &CoefficientModel, grid: &[f64], clause: Clause) -> ClauseCheck {
    let eval = |x: f64| -> f64 {
        match clause {
            Clause::DerivBound { field, order } => match field {
                CoeffField::Drift => model.deriv_a(x, order).abs(),
                CoeffField::Diffusion => model.deriv_b(x, order).abs(),
                CoeffField::Jump => model.deriv_c(x, order).abs(),
            },
            Clause::ProductBound { field, order } => match field {
                CoeffField::Diffusion => (model.b(x) * model.deriv_b(x, order)).abs(),
                CoeffField::Jump => (model.c(x) * model.deriv_c(x, order)).abs(),
                CoeffField::Drift => unreachable!("no product clause for the drift"),
            },
        }
    };

    let l_max = grid.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if grid.is_empty() || l_max == 0.0 {
        return ClauseCheck {
            clause,
            empirical_sup: 0.0,
            verdict: Verdict::Unknown,
        };
    }
    let mut sups = [0.0f64; 3];
    let windows = [l_max / 4.0, l_max / 2.0, l_max];
    for &x in grid {
        let v = eval(x);
        for (i, &w) in windows.iter().enumerate() {
            if x.abs() <= w {
                sups[i] = sups[i].max(v);
            }
        }
    }
    let empirical_sup = sups[2];
    let verdict = if empirical_sup <= 1e-12 {
        Verdict::Pass
    } else {
        let floor = 1e-12 * empirical_sup.max(1.0);
        let r1 = sups[1] / sups[0].max(floor);
        let r2 = sups[2] / sups[1].max(floor);
        if r1 <= 1.05 && r2 <= 1.05 {
            Verdict::Pass
        } else if r2 >= 1.2 || r1 >= 1.2 {
            Verdict::NumericallyUnbounded
        } else {
            Verdict::Unknown
        }
    };
    ClauseCheck {
        clause,
        empirical_sup,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numdiff;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn models() -> Vec<CoefficientModel> {
        vec![
            CoefficientModel::builtin("linear", &[0.5, -0.3, 0.8]).unwrap(),
            CoefficientModel::builtin("constant", &[0.2, 1.1, -0.4]).unwrap(),
            CoefficientModel::builtin("bounded_trig", &[0.3, 0.4, 0.5]).unwrap(),
        ]
    }

    #[test]
    fn builtin_rejects_bad_input() {
        assert!(matches!(
            CoefficientModel::builtin("cubic", &[1.0]),
            Err(CoefficientError::UnknownModel(_))
        ));
        assert!(matches!(
            CoefficientModel::builtin("linear", &[1.0, 2.0]),
            Err(CoefficientError::ParameterCount { .. })
        ));
    }

    #[test]
    fn linear_model_values() {
        let m = CoefficientModel::builtin("linear", &[0.05, 0.2, 0.3]).unwrap();
        assert_relative_eq!(m.a(2.0), 0.1);
        assert_relative_eq!(m.b(2.0), 0.4);
        assert_relative_eq!(m.c(-1.0), -0.3);
        assert_relative_eq!(m.deriv_c(7.0, 1), 0.3);
        assert_relative_eq!(m.deriv_c(7.0, 2), 0.0);
        assert_eq!(
            m.as_linear(),
            Some(LinearCoeffs {
                alpha: 0.05,
                beta: 0.2,
                m: 0.3
            })
        );
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        // Each analytic derivative of order k is checked against a central
        // difference of the order k-1 derivative at 100 random probes.
        let mut rng = CounterRng::for_path(2024, 1);
        for model in models() {
            for _ in 0..100 {
                let x: f64 = rng.gen_range(-3.0..3.0);
                for k in 1..=4u32 {
                    for (analytic, f) in [
                        (
                            model.deriv_a(x, k),
                            Box::new(|y: f64| model.deriv_a(y, k - 1))
                                as Box<dyn FnMut(f64) -> f64>,
                        ),
                        (model.deriv_b(x, k), Box::new(|y: f64| model.deriv_b(y, k - 1))),
                        (model.deriv_c(x, k), Box::new(|y: f64| model.deriv_c(y, k - 1))),
                    ] {
                        let fd = numdiff::richardson(f, x, 1, 1e-3);
                        let scale = analytic.abs().max(1.0);
                        assert!(
                            (analytic - fd).abs() <= 1e-5 * scale,
                            "model {} order {k} at x={x}: analytic {analytic}, fd {fd}",
                            model.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bounded_trig_passes_every_clause() {
        let model = CoefficientModel::builtin("bounded_trig", &[0.3, 0.4, 0.5]).unwrap();
        let report = check_habc(&model, &default_probe_grid(7));
        assert!(report.all_pass(), "\n{report}");
    }

    #[test]
    fn linear_passes_derivative_and_product_clauses() {
        // Derivatives of order >= 1 are constants, products like b * b'' are
        // identically zero; the unbounded coefficients themselves are not
        // part of the hypothesis.
        let model = CoefficientModel::builtin("linear", &[0.05, 0.2, 0.3]).unwrap();
        let report = check_habc(&model, &default_probe_grid(7));
        assert!(report.all_pass(), "\n{report}");
    }

    #[test]
    fn quadratic_drift_is_flagged_unbounded() {
        let model = CoefficientModel::custom(
            "quadratic_drift",
            |x, k| match k {
                0 => x * x,
                1 => 2.0 * x,
                2 => 2.0,
                _ => 0.0,
            },
            |_, k| if k == 0 { 1.0 } else { 0.0 },
            |x, k| sin_deriv(x, 1.0, k),
            BoundCatalog::default(),
        );
        let report = check_habc(&model, &default_probe_grid(7));
        let first_drift = report
            .clauses
            .iter()
            .find(|c| {
                c.clause
                    == Clause::DerivBound {
                        field: CoeffField::Drift,
                        order: 1,
                    }
            })
            .unwrap();
        assert_eq!(first_drift.verdict, Verdict::NumericallyUnbounded);
        // sup |a'| = sup |2x| = 100 on [-50, 50]
        assert_relative_eq!(first_drift.empirical_sup, 100.0, max_relative = 1e-6);
    }

    #[test]
    fn probe_grid_is_deterministic_and_sized() {
        let g1 = default_probe_grid(11);
        let g2 = default_probe_grid(11);
        assert_eq!(g1.len(), 11_000);
        assert_eq!(g1, g2);
        assert!(default_probe_grid(12) != g1);
    }
}
