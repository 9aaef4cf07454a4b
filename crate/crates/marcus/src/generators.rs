//! The generator of the small-jump process and its lift.
//!
//! `apply_L_tilde` evaluates
//!
//! ```text
//!     Lf(x) = (a + b'b/2) f'(x) + b^2 f''(x) / 2
//!             + integral of ( f(phi_z(x)) - f(x) - f'(x) c(x) z ) nu(dz)
//!               over delta <= |z| <= 1,
//! ```
//!
//! the generator of the process whose jumps all come from the truncated
//! small-jump measure. `apply_Q` evaluates the generator of the lifted
//! process in the increment variables `(tau, w, z)` applied to
//! `g = f(psi(x; tau, w, z))`. At the origin of the lift the two agree,
//! and [`verify_L_equals_Q`] measures that discrepancy on a probe grid;
//! both sides share one quadrature rule for the jump integral so the check
//! is not polluted by differing discretizations of `nu`.

use thiserror::Error;

use crate::coefficients::CoefficientModel;
use crate::flow::{self, FlowError};
use crate::integrators::{stratonovich_drift, EffectiveDrift};
use crate::numdiff;

/// Tolerance for the adaptive flow solves inside generator evaluations.
const FLOW_TOL: f64 = 1e-10;

#[derive(Error, Debug)]
pub enum GeneratorError {
    #[error(transparent)]
    Ode(#[from] FlowError),
    #[error("unknown test function '{0}' (expected poly_truncated, gaussian_bump, cosine or identity)")]
    UnknownFunction(String),
    #[error("test function '{name}' expects {expected} parameters, got {got}")]
    ParameterCount {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("test function '{name}': {reason}")]
    BadParameters { name: &'static str, reason: String },
    #[error("finite-difference step {0} must be positive and finite")]
    BadStep(f64),
    #[error("lifted-generator evaluation produced a non-finite value")]
    NonFinite,
}

/// A scalar function with analytic derivatives up to fourth order.
pub trait SmoothFunction {
    /// `d^order f(x)`; order 0 is the value itself. Orders 0..=4.
    fn deriv(&self, x: f64, order: u32) -> f64;

    fn value(&self, x: f64) -> f64 {
        self.deriv(x, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FnKind {
    /// `(1 - (x/s)^2)^5` inside `|x| < s`, zero outside; four continuous
    /// derivatives, compact support.
    PolyTruncated { scale: f64 },
    /// `exp(-u^2 / 2)` with `u = (x - center)/width`.
    GaussianBump { center: f64, width: f64 },
    /// `cos(omega x)`.
    Cosine { omega: f64 },
    /// `f(x) = x`. Not bounded; meaningful only where an exact oracle
    /// absorbs the growth (the linear model).
    Identity,
}

/// Observables for weak-error experiments and generator checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    kind: FnKind,
}

impl TestFunction {
    pub fn poly_truncated(scale: f64) -> Result<Self, GeneratorError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeneratorError::BadParameters {
                name: "poly_truncated",
                reason: format!("scale {scale} must be positive"),
            });
        }
        Ok(TestFunction {
            kind: FnKind::PolyTruncated { scale },
        })
    }

    pub fn gaussian_bump(center: f64, width: f64) -> Result<Self, GeneratorError> {
        if !(width > 0.0) || !width.is_finite() || !center.is_finite() {
            return Err(GeneratorError::BadParameters {
                name: "gaussian_bump",
                reason: format!("center {center}, width {width}: width must be positive"),
            });
        }
        Ok(TestFunction {
            kind: FnKind::GaussianBump { center, width },
        })
    }

    pub fn cosine(omega: f64) -> Result<Self, GeneratorError> {
        if !omega.is_finite() {
            return Err(GeneratorError::BadParameters {
                name: "cosine",
                reason: format!("omega {omega} must be finite"),
            });
        }
        Ok(TestFunction {
            kind: FnKind::Cosine { omega },
        })
    }

    #[must_use]
    pub fn identity() -> Self {
        TestFunction {
            kind: FnKind::Identity,
        }
    }

    /// Builds a function from its config name and parameter list:
    /// `"poly_truncated"` `[scale]`, `"gaussian_bump"` `[center, width]`,
    /// `"cosine"` `[omega]`, `"identity"` `[]`.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self, GeneratorError> {
        let need = |family: &'static str, n: usize| -> Result<(), GeneratorError> {
            if params.len() == n {
                Ok(())
            } else {
                Err(GeneratorError::ParameterCount {
                    name: family,
                    expected: n,
                    got: params.len(),
                })
            }
        };
        match name {
            "poly_truncated" => {
                need("poly_truncated", 1)?;
                Self::poly_truncated(params[0])
            }
            "gaussian_bump" => {
                need("gaussian_bump", 2)?;
                Self::gaussian_bump(params[0], params[1])
            }
            "cosine" => {
                need("cosine", 1)?;
                Self::cosine(params[0])
            }
            "identity" => {
                need("identity", 0)?;
                Ok(Self::identity())
            }
            other => Err(GeneratorError::UnknownFunction(other.to_string())),
        }
    }

    #[must_use]
    pub fn name(&self) -> &'static str {
        match self.kind {
            FnKind::PolyTruncated { .. } => "poly_truncated",
            FnKind::GaussianBump { .. } => "gaussian_bump",
            FnKind::Cosine { .. } => "cosine",
            FnKind::Identity => "identity",
        }
    }

    /// Whether the function and its first four derivatives are bounded.
    #[must_use]
    pub fn is_bounded(&self) -> bool {
        !matches!(self.kind, FnKind::Identity)
    }
}

impl SmoothFunction for TestFunction {
    fn deriv(&self, x: f64, order: u32) -> f64 {
        debug_assert!(order <= 4);
        match &self.kind {
            FnKind::PolyTruncated { scale } => {
                let u = x / scale;
                if u.abs() >= 1.0 {
                    return 0.0;
                }
                let v = 1.0 - u * u;
                let p = match order {
                    0 => v.powi(5),
                    1 => -10.0 * u * v.powi(4),
                    2 => -10.0 * v.powi(4) + 80.0 * u * u * v.powi(3),
                    3 => 240.0 * u * v.powi(3) - 480.0 * u.powi(3) * v * v,
                    4 => {
                        240.0 * v.powi(3) - 2880.0 * u * u * v * v
                            + 1920.0 * u.powi(4) * v
                    }
                    _ => unreachable!(),
                };
                p / scale.powi(order as i32)
            }
            FnKind::GaussianBump { center, width } => {
                let u = (x - center) / width;
                let gauss = (-0.5 * u * u).exp();
                // Probabilists' Hermite polynomials: the k-th derivative of
                // exp(-u^2/2) is (-1)^k He_k(u) exp(-u^2/2).
                let hermite = match order {
                    0 => 1.0,
                    1 => u,
                    2 => u * u - 1.0,
                    3 => u.powi(3) - 3.0 * u,
                    4 => u.powi(4) - 6.0 * u * u + 3.0,
                    _ => unreachable!(),
                };
                let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * hermite * gauss / width.powi(order as i32)
            }
            FnKind::Cosine { omega } => {
                let phase = omega * x;
                let cycle = match order % 4 {
                    0 => phase.cos(),
                    1 => -phase.sin(),
                    2 => -phase.cos(),
                    3 => phase.sin(),
                    _ => unreachable!(),
                };
                omega.powi(order as i32) * cycle
            }
            FnKind::Identity => match order {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
        }
    }
}

/// Generator of the small-jump process applied to `f` at `x`.
#[allow(non_snake_case)]
pub fn apply_L_tilde(
    model: &CoefficientModel,
    ed: &EffectiveDrift,
    f: &dyn SmoothFunction,
    x: f64,
) -> Result<f64, GeneratorError> {
    let f0 = f.value(x);
    let f1 = f.deriv(x, 1);
    let f2 = f.deriv(x, 2);
    let b = model.b(x);
    let cx = model.c(x);
    let mut jump_part = 0.0;
    for &(z, weight) in ed.nodes() {
        let phi = flow::solve_flow(model, x, z, 0, FLOW_TOL)?.value;
        jump_part += weight * (f.value(phi) - f0 - f1 * cx * z);
    }
    Ok(stratonovich_drift(model, x) * f1 + 0.5 * b * b * f2 + jump_part)
}

/// Generator of the lifted process in the increment variables, applied to
/// `g = f(psi(x; tau, w, z))` at the point `(tau, w, z)`:
///
/// ```text
///     Qg = g_tau + g_ww / 2
///          + integral of ( g(.., z + xi) - g(.., z) - g_z(.., z) xi )
///            nu(dxi) over delta <= |xi| <= 1.
/// ```
///
/// Derivatives of `g` come from Richardson-refined central differences of
/// the one-step map, solved with a substep count pinned across the whole
/// stencil so the solver error cancels in the differences.
#[allow(clippy::too_many_arguments, non_snake_case)]
pub fn apply_Q(
    model: &CoefficientModel,
    ed: &EffectiveDrift,
    f: &dyn SmoothFunction,
    x: f64,
    tau: f64,
    w: f64,
    z: f64,
    fd_step: f64,
) -> Result<f64, GeneratorError> {
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(GeneratorError::BadStep(fd_step));
    }
    let mut substeps = 64u32;
    for probe_z in [z - 1.0, z, z + 1.0] {
        let solved = flow::solve_psi(model, x, tau, w, probe_z, FLOW_TOL)?;
        substeps = substeps.max(solved.substeps_used);
    }
    let g = |t: f64, v: f64, zz: f64| -> f64 {
        flow::solve_psi_pinned(model, x, t, v, zz, substeps)
            .map(|y| f.value(y))
            .unwrap_or(f64::NAN)
    };
    let g0 = g(tau, w, z);
    let g_tau = numdiff::richardson(|t| g(t, w, z), tau, 1, fd_step);
    let g_ww = numdiff::richardson(|v| g(tau, v, z), w, 2, fd_step);
    let g_z = numdiff::richardson(|v| g(tau, w, v), z, 1, fd_step);
    let mut jump_part = 0.0;
    for &(xi, weight) in ed.nodes() {
        jump_part += weight * (g(tau, w, z + xi) - g0 - g_z * xi);
    }
    let total = g_tau + 0.5 * g_ww + jump_part;
    if total.is_finite() {
        Ok(total)
    } else {
        Err(GeneratorError::NonFinite)
    }
}

/// Outcome of [`verify_L_equals_Q`] over a probe grid.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub max_abs_discrepancy: f64,
    pub worst_x: f64,
    pub probes: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `Lf(x) = Qg` at the origin of the lift over every probe point.
#[allow(non_snake_case)]
pub fn verify_L_equals_Q(
    model: &CoefficientModel,
    ed: &EffectiveDrift,
    f: &dyn SmoothFunction,
    probes: &[f64],
    fd_step: f64,
    tol: f64,
) -> Result<IdentityReport, GeneratorError> {
    let mut max_abs = 0.0;
    let mut worst_x = f64::NAN;
    for &x in probes {
        let lhs = apply_L_tilde(model, ed, f, x)?;
        let rhs = apply_Q(model, ed, f, x, 0.0, 0.0, 0.0, fd_step)?;
        let gap = (lhs - rhs).abs();
        if gap > max_abs {
            max_abs = gap;
            worst_x = x;
        }
    }
    Ok(IdentityReport {
        max_abs_discrepancy: max_abs,
        worst_x,
        probes: probes.len(),
        tol,
        pass: max_abs <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{small_jump_terminal, stratonovich_drift};
    use crate::levy::{LevyFamily, LevyModel};
    use crate::rng::CounterRng;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rayon::prelude::*;

    fn trig(alpha: f64, beta: f64, m: f64) -> CoefficientModel {
        CoefficientModel::builtin("bounded_trig", &[alpha, beta, m]).unwrap()
    }

    fn atoms(list: Vec<(f64, f64)>) -> LevyModel {
        LevyModel::new(LevyFamily::CompoundPoissonAtoms { atoms: list }).unwrap()
    }

    fn cpn(lambda: f64, mu: f64, sigma: f64) -> LevyModel {
        LevyModel::new(LevyFamily::CompoundPoissonNormal { lambda, mu, sigma }).unwrap()
    }

    fn all_functions() -> Vec<TestFunction> {
        vec![
            TestFunction::poly_truncated(2.0).unwrap(),
            TestFunction::gaussian_bump(0.2, 0.7).unwrap(),
            TestFunction::cosine(1.3).unwrap(),
        ]
    }

    #[test]
    fn from_name_parses_and_validates() {
        let f = TestFunction::from_name("gaussian_bump", &[0.0, 1.0]).unwrap();
        assert_eq!(f.name(), "gaussian_bump");
        assert!(f.is_bounded());
        assert_eq!(TestFunction::from_name("identity", &[]).unwrap().name(), "identity");
        assert!(!TestFunction::identity().is_bounded());
        assert!(matches!(
            TestFunction::from_name("sigmoid", &[]),
            Err(GeneratorError::UnknownFunction(_))
        ));
        assert!(matches!(
            TestFunction::from_name("cosine", &[1.0, 2.0]),
            Err(GeneratorError::ParameterCount { .. })
        ));
        assert!(matches!(
            TestFunction::from_name("poly_truncated", &[-1.0]),
            Err(GeneratorError::BadParameters { .. })
        ));
        assert!(matches!(
            TestFunction::from_name("gaussian_bump", &[0.0, 0.0]),
            Err(GeneratorError::BadParameters { .. })
        ));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        // Step sizes tuned per order so truncation and roundoff both stay
        // below the comparison tolerance.
        let steps = [1e-3, 1e-3, 5e-3, 1e-2];
        for f in all_functions() {
            for &x in &[-1.4, -0.6, 0.0, 0.3, 1.1] {
                for order in 1..=4u32 {
                    let fd = numdiff::richardson(
                        |y| f.value(y),
                        x,
                        order,
                        steps[(order - 1) as usize],
                    );
                    let exact = f.deriv(x, order);
                    assert_relative_eq!(exact, fd, max_relative = 1e-5, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn truncated_polynomial_is_smooth_at_the_boundary() {
        let f = TestFunction::poly_truncated(1.0).unwrap();
        for order in 0..=4u32 {
            assert_eq!(f.deriv(1.3, order), 0.0);
            assert_eq!(f.deriv(-1.0, order), 0.0);
            // Approaching the edge from inside, the order-k derivative
            // vanishes like (1 - u^2)^(5-k); that is the C^4 gluing.
            for v in [1e-2f64, 1e-4, 1e-6] {
                let u = (1.0 - v).sqrt();
                assert!(
                    f.deriv(u, order).abs() <= 2000.0 * v.powi(5 - order as i32),
                    "order {order}, v {v}"
                );
            }
        }
        assert!(f.value(0.0) == 1.0);
    }

    #[test]
    fn generators_kill_constants() {
        let f = TestFunction::cosine(0.0).unwrap();
        for order in 1..=4u32 {
            assert_eq!(f.deriv(0.7, order), 0.0);
        }
        let model = trig(0.3, 0.4, 0.5);
        let levy = atoms(vec![(1.0, 0.5), (0.5, -0.3)]);
        let ed = EffectiveDrift::new(&model, &levy);
        assert_abs_diff_eq!(apply_L_tilde(&model, &ed, &f, 0.3).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            apply_Q(&model, &ed, &f, 0.3, 0.05, 0.1, 0.2, 1e-4).unwrap(),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn identity_function_recovers_the_stratonovich_drift() {
        let model = trig(0.3, 0.4, 0.5);
        let levy = atoms(vec![]);
        let ed = EffectiveDrift::new(&model, &levy);
        let f = TestFunction::identity();
        for &x in &[-2.0, -0.3, 0.0, 0.8, 2.5] {
            assert_abs_diff_eq!(
                apply_L_tilde(&model, &ed, &f, x).unwrap(),
                stratonovich_drift(&model, x),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn q_at_origin_matches_the_generator_table_without_jumps() {
        // With nu = 0 the lift reduces to g_tau + g_ww/2, whose value at
        // the origin is a f' + (b^2 f'' + b b' f') / 2.
        let model = trig(0.3, 0.4, 0.5);
        let levy = atoms(vec![]);
        let ed = EffectiveDrift::new(&model, &levy);
        let f = TestFunction::gaussian_bump(0.2, 0.7).unwrap();
        for &x in &[-1.1, 0.0, 0.3, 0.9] {
            let got = apply_Q(&model, &ed, &f, x, 0.0, 0.0, 0.0, 1e-4).unwrap();
            let a = model.a(x);
            let b = model.b(x);
            let b1 = model.deriv_b(x, 1);
            let expect =
                a * f.deriv(x, 1) + 0.5 * (b * b * f.deriv(x, 2) + b * b1 * f.deriv(x, 1));
            assert_abs_diff_eq!(got, expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn q_vanishes_for_frozen_coefficients() {
        let model = CoefficientModel::builtin("constant", &[0.0, 0.0, 0.0]).unwrap();
        let levy = atoms(vec![(1.0, 0.5)]);
        let ed = EffectiveDrift::new(&model, &levy);
        let f = TestFunction::cosine(1.3).unwrap();
        let got = apply_Q(&model, &ed, &f, 0.4, 0.3, -0.2, 0.1, 1e-4).unwrap();
        assert_abs_diff_eq!(got, 0.0, epsilon = 1e-9);
        assert!(matches!(
            apply_Q(&model, &ed, &f, 0.4, 0.0, 0.0, 0.0, 0.0),
            Err(GeneratorError::BadStep(_))
        ));
    }

    struct Combo {
        alpha: f64,
        f: TestFunction,
        beta: f64,
        g: TestFunction,
    }

    impl SmoothFunction for Combo {
        fn deriv(&self, x: f64, order: u32) -> f64 {
            self.alpha * self.f.deriv(x, order) + self.beta * self.g.deriv(x, order)
        }
    }

    #[test]
    fn l_tilde_is_linear() {
        let model = trig(0.3, 0.4, 0.5);
        let levy = cpn(2.0, 0.1, 0.4);
        let ed = EffectiveDrift::new(&model, &levy);
        let combo = Combo {
            alpha: 1.7,
            f: TestFunction::gaussian_bump(0.2, 0.7).unwrap(),
            beta: -0.4,
            g: TestFunction::cosine(1.3).unwrap(),
        };
        for &x in &[-0.8, 0.1, 1.2] {
            let lhs = apply_L_tilde(&model, &ed, &combo, x).unwrap();
            let rhs = 1.7 * apply_L_tilde(&model, &ed, &combo.f, x).unwrap()
                - 0.4 * apply_L_tilde(&model, &ed, &combo.g, x).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_model_generator_has_a_closed_form() {
        // Constant coefficients make the jump flow affine, so the whole
        // generator collapses to an explicit finite sum.
        let model = CoefficientModel::builtin("constant", &[0.3, 0.7, 0.4]).unwrap();
        let levy = atoms(vec![(1.0, 0.5), (0.5, -0.3)]);
        let ed = EffectiveDrift::new(&model, &levy);
        let f = TestFunction::cosine(1.3).unwrap();
        for &x in &[-0.5, 0.0, 0.9] {
            let mut expect = 0.3 * f.deriv(x, 1) + 0.5 * 0.7 * 0.7 * f.deriv(x, 2);
            for (intensity, z) in [(1.0, 0.5), (0.5, -0.3)] {
                expect +=
                    intensity * (f.value(x + 0.4 * z) - f.value(x) - f.deriv(x, 1) * 0.4 * z);
            }
            let lhs = apply_L_tilde(&model, &ed, &f, x).unwrap();
            assert_abs_diff_eq!(lhs, expect, epsilon = 1e-8);
            let rhs = apply_Q(&model, &ed, &f, x, 0.0, 0.0, 0.0, 1e-4).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-6);
        }
    }

    #[test]
    fn identity_holds_for_all_builtin_models_and_functions() {
        let models = [
            CoefficientModel::builtin("linear", &[0.05, 0.2, 0.3]).unwrap(),
            CoefficientModel::builtin("constant", &[0.3, 0.7, 0.4]).unwrap(),
            trig(0.3, 0.4, 0.5),
        ];
        let drivers = [atoms(vec![(1.0, 0.5), (0.5, -0.3)]), cpn(2.0, 0.1, 0.4)];
        let probes: Vec<f64> = (0..20).map(|i| -3.0 + 6.0 * i as f64 / 19.0).collect();
        for model in &models {
            for levy in &drivers {
                let ed = EffectiveDrift::new(model, levy);
                for f in all_functions() {
                    let report =
                        verify_L_equals_Q(model, &ed, &f, &probes, 1e-4, 1e-5).unwrap();
                    assert!(
                        report.pass,
                        "model {} driver {} f {}: max gap {:.3e} at x = {}",
                        model.name(),
                        levy.family_name(),
                        f.name(),
                        report.max_abs_discrepancy,
                        report.worst_x
                    );
                }
            }
        }
    }

    #[test]
    fn generator_growth_is_quadratically_dominated() {
        let model = trig(0.3, 0.4, 0.5);
        let levy = cpn(2.0, 0.1, 0.4);
        let ed = EffectiveDrift::new(&model, &levy);
        let f = TestFunction::cosine(1.3).unwrap();
        let mut max_ratio = 0.0f64;
        for i in 0..=80 {
            let x = -20.0 + 40.0 * i as f64 / 80.0;
            let value = apply_L_tilde(&model, &ed, &f, x).unwrap();
            max_ratio = max_ratio.max(value.abs() / (1.0 + x * x));
        }
        // Bounded coefficients and a C^4_b function keep the generator
        // itself bounded, so the quadratic-growth ratio stays modest.
        assert!(max_ratio.is_finite() && max_ratio < 20.0, "ratio {max_ratio}");
    }

    // Semigroup oracle: (E f(X_t) - f(x)) / t -> Lf(x) as t -> 0, with the
    // linear-in-t bias removed by evaluating at two horizons. The process
    // is simulated directly from its dynamics (Euler-Maruyama plus exact
    // jump flows), independent of the quadrature used by apply_L_tilde.
    #[test]
    fn semigroup_derivative_matches_the_generator() {
        let model = trig(0.3, 0.4, 0.5);
        let levy = atoms(vec![(1.0, 0.5), (0.5, -0.3)]);
        let ed = EffectiveDrift::new(&model, &levy);
        let f = TestFunction::cosine(1.0).unwrap();
        let x0 = 0.3;
        let expect = apply_L_tilde(&model, &ed, &f, x0).unwrap();

        let horizons = [1e-2f64, 1e-3];
        let n_paths = 10_000_000u64;
        let mut v = [0.0f64; 2];
        let mut se_v = [0.0f64; 2];
        for (which, &t) in horizons.iter().enumerate() {
            let n_sub = ((t / 5e-4).round() as usize).max(2);
            let (sum, sum_sq) = (0..n_paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = CounterRng::for_path(9000 + which as u64, i);
                    let x = small_jump_terminal(&model, &levy, x0, t, n_sub, &mut rng, 1e-8)
                        .unwrap();
                    let y = f.value(x);
                    (y, y * y)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let mean = sum / n_paths as f64;
            let var = (sum_sq / n_paths as f64 - mean * mean).max(0.0);
            v[which] = (mean - f.value(x0)) / t;
            se_v[which] = (var / n_paths as f64).sqrt() / t;
        }
        let (t1, t2) = (horizons[0], horizons[1]);
        let extrapolated = (t1 * v[1] - t2 * v[0]) / (t1 - t2);
        let se = ((t1 * se_v[1]).powi(2) + (t2 * se_v[0]).powi(2)).sqrt() / (t1 - t2);
        // Allowance beyond MC noise: Euler-Maruyama bias at dt = 5e-4 and
        // the residual quadratic term of the extrapolation.
        let tol = 4.0 * se + 5e-3;
        assert!(
            (extrapolated - expect).abs() < tol,
            "semigroup {extrapolated} vs generator {expect} (se {se}, tol {tol})"
        );
    }
}
