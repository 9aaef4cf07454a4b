//! Numerical tools for scalar Marcus-type stochastic differential equations
//! driven by a Brownian motion and a pure-jump Levy process,
//!
//! ```text
//!     dX_t = a(X_t) dt + b(X_t) o dW_t + c(X_t) <> dZ_t ,      X_0 = x,
//! ```
//!
//! where `o` is Stratonovich integration and `<>` is the Marcus (canonical)
//! integral: a jump of size z moves the state along the time-1 flow of the
//! vector field `z c`. The crate provides
//!
//! * coefficient models with analytic derivatives up to fourth order and
//!   empirical checks of the boundedness hypotheses ([`coefficients`]),
//! * Levy drivers with an exact small/large jump decomposition and
//!   reproducible, counter-based increment streams ([`levy`]),
//! * the Marcus flow map and its variational derivatives, plus the combined
//!   one-step map used by the weak scheme ([`flow`]),
//! * the weak Euler-type (Wong-Zakai) scheme, a jump-adapted strong
//!   reference integrator coupled to it by common random numbers, and an
//!   exact path formula for the linear model ([`integrators`]),
//! * the Marcus generator and a finite-difference cross-check of the
//!   generator identity that underlies the weak error analysis
//!   ([`generators`]),
//! * a Monte Carlo harness that measures weak errors on a step-size ladder
//!   and fits the convergence order ([`montecarlo`]).
//!
//! All state is scalar (`f64`); the scheme additionally accepts diagonal
//! systems of independent scalar equations, see
//! [`integrators::simulate_wz_diagonal`].

// Validation guards are written `!(x > 0.0)` so that NaN falls into the
// error branch; simulation entry points take the full experiment tuple.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod coefficients;
pub mod flow;
pub mod generators;
pub mod integrators;
pub mod levy;
pub mod montecarlo;
pub mod numdiff;
pub mod quad;
pub mod rng;

pub use coefficients::CoefficientModel;
pub use flow::{solve_flow, solve_psi, FlowResult, PsiResult};
pub use generators::{SmoothFunction, TestFunction};
pub use integrators::{EffectiveDrift, PathGrid, SchemeTag};
pub use levy::{IncrementStream, LevyModel, StepRecord};
pub use montecarlo::{Oracle, WeakErrorReport, WeakErrorRow};
