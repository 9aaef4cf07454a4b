//! Levy drivers and reproducible increment streams.
//!
//! The driver `Z` is a pure-jump Levy process with characteristic triplet
//! `(0, 0, nu)`: small jumps (`|z| <= 1`) are compensated, large jumps are
//! not. Each simulation step of width `h` is summarized by a [`StepRecord`]
//! holding the Brownian increment, every sampled jump with its arrival time
//! inside the step, and the split
//!
//! ```text
//!     dZ = dZ_small + sum of large jumps,
//!     dZ_small = (sum of small jumps) - h * m1,
//!     m1 = integral of z over { delta <= |z| <= 1 } against nu,
//! ```
//!
//! which holds exactly (bitwise) by construction. For infinite-activity
//! families, jumps below the truncation level `delta` are dropped and their
//! compensator is carried by the same `m1` correction; everything downstream
//! (exponent, compensators, generator integrals) consistently uses the
//! truncated measure, so the simulated process and the analytics describe
//! the same object. Finite-activity families sample every jump and `delta`
//! plays no role.
//!
//! Randomness is keyed, not streamed: the record of step `k` of path `i` is
//! a pure function of `(seed, i, k)`, so records can be regenerated
//! bit-identically in any order and from any thread.

use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use thiserror::Error;

use crate::quad;
use crate::rng::{CounterRng, Substream};

#[derive(Error, Debug)]
pub enum LevyError {
    #[error("unknown Levy family '{0}'")]
    UnknownFamily(String),
    #[error("family '{family}': {reason}")]
    BadParameters { family: &'static str, reason: String },
    #[error("truncation level delta must lie in (0, 1], got {0}")]
    BadTruncation(f64),
    #[error("Levy exponent undefined at theta = {theta}: {reason}")]
    ExponentDomain { theta: f64, reason: String },
}

/// Which half-lines a stable driver charges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StableSide {
    /// Jumps upward only (spectrally positive).
    Positive,
    /// Jumps downward only (spectrally negative).
    Negative,
    /// Symmetric two-sided jumps.
    Symmetric,
}

/// The supported driver families, parameterized by their Levy measure.
#[derive(Debug, Clone, PartialEq)]
pub enum LevyFamily {
    /// Compound Poisson with normal jump sizes: `nu = lambda * N(mu, sigma^2)`.
    CompoundPoissonNormal { lambda: f64, mu: f64, sigma: f64 },
    /// Compound Poisson with fixed jump sizes: `nu = sum_i lambda_i * delta_{z_i}`.
    /// An empty atom list is the driverless case `nu = 0`.
    CompoundPoissonAtoms { atoms: Vec<(f64, f64)> },
    /// Variance gamma: density `c e^{-g|z|}/|z|` for `z < 0`,
    /// `c e^{-m z}/z` for `z > 0`.
    VarianceGamma { c: f64, g: f64, m: f64 },
    /// Stable: density `scale * |z|^{-1-alpha}` on the charged side(s).
    Stable {
        alpha: f64,
        scale: f64,
        side: StableSide,
    },
    /// Exponentially tempered stable with jumps truncated at `z_max`:
    /// density `c e^{-theta |z|} |z|^{-1-alpha}` on `0 < |z| <= z_max`,
    /// symmetric.
    TemperedStableTruncated {
        c: f64,
        alpha: f64,
        theta: f64,
        z_max: f64,
    },
}

impl LevyFamily {
    fn name(&self) -> &'static str {
        match self {
            LevyFamily::CompoundPoissonNormal { .. } => "compound_poisson_normal",
            LevyFamily::CompoundPoissonAtoms { .. } => "compound_poisson_fixed",
            LevyFamily::VarianceGamma { .. } => "variance_gamma",
            LevyFamily::Stable { .. } => "one_sided_stable",
            LevyFamily::TemperedStableTruncated { .. } => "tempered_stable_truncated",
        }
    }

    fn is_finite_activity(&self) -> bool {
        matches!(
            self,
            LevyFamily::CompoundPoissonNormal { .. } | LevyFamily::CompoundPoissonAtoms { .. }
        )
    }
}

/// One jump inside a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    /// Arrival time as a fraction of the step, in `[0, 1)`.
    pub time: f64,
    pub size: f64,
}

impl Jump {
    /// Large jumps are the ones the scheme's analysis treats separately.
    #[must_use]
    pub fn is_large(&self) -> bool {
        self.size.abs() > 1.0
    }
}

/// Everything a step consumes from the driving noise.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Brownian increment over the step, `N(0, h)`.
    pub dw: f64,
    /// Full driver increment; equals `dz_small + sum of large jump sizes`
    /// bitwise.
    pub dz: f64,
    /// Compensated small-jump part.
    pub dz_small: f64,
    /// All sampled jumps, sorted by arrival time.
    pub jumps: Vec<Jump>,
}

impl StepRecord {
    pub fn large_jumps(&self) -> impl Iterator<Item = &Jump> {
        self.jumps.iter().filter(|j| j.is_large())
    }
}

// Cached per-side activity of the truncated measure.
#[derive(Debug, Clone, Copy, Default)]
struct Activity {
    small_pos: f64,
    small_neg: f64,
    large_pos: f64,
    large_neg: f64,
}

/// A Levy driver: family, truncation level, and cached functionals of the
/// (truncated) measure.
#[derive(Debug, Clone)]
pub struct LevyModel {
    family: LevyFamily,
    delta: f64,
    activity: Activity,
    /// `nu(|z| > 1)`.
    big_jump_intensity: f64,
    /// `integral of z over delta <= |z| <= 1`.
    small_mean: f64,
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl LevyModel {
    /// Builds a driver with the default truncation level `1e-3` (ignored by
    /// finite-activity families).
    pub fn new(family: LevyFamily) -> Result<Self, LevyError> {
        Self::with_truncation(family, 1e-3)
    }

    /// Builds a driver with an explicit truncation level `delta in (0, 1]`
    /// for infinite-activity families.
    pub fn with_truncation(family: LevyFamily, delta: f64) -> Result<Self, LevyError> {
        validate(&family)?;
        let delta = if family.is_finite_activity() {
            0.0
        } else {
            if !(delta > 0.0 && delta <= 1.0) {
                return Err(LevyError::BadTruncation(delta));
            }
            delta
        };
        let mut model = LevyModel {
            family,
            delta,
            activity: Activity::default(),
            big_jump_intensity: 0.0,
            small_mean: 0.0,
        };
        model.fill_caches();
        Ok(model)
    }

    /// Builds a driver by family name, for configuration files.
    ///
    /// * `"compound_poisson_normal"`, params `[lambda, mu, sigma]`
    /// * `"compound_poisson_fixed"`, params `[lambda_1, z_1, lambda_2, z_2, ...]`
    ///   (possibly empty: no jumps at all)
    /// * `"variance_gamma"`, params `[c, g, m]`
    /// * `"one_sided_stable"`, params `[alpha, scale]` or
    ///   `[alpha, scale, side]` with side `+1` (up), `-1` (down), `0` (symmetric)
    /// * `"tempered_stable_truncated"`, params `[c, alpha, theta, z_max]`
    pub fn from_name(name: &str, params: &[f64], delta: f64) -> Result<Self, LevyError> {
        let wrong_count = |family: &'static str, expected: &'static str| LevyError::BadParameters {
            family,
            reason: format!("expected {expected} parameters, got {}", params.len()),
        };
        let family = match name {
            "compound_poisson_normal" => {
                if params.len() != 3 {
                    return Err(wrong_count("compound_poisson_normal", "3"));
                }
                LevyFamily::CompoundPoissonNormal {
                    lambda: params[0],
                    mu: params[1],
                    sigma: params[2],
                }
            }
            "compound_poisson_fixed" => {
                if !params.len().is_multiple_of(2) {
                    return Err(wrong_count("compound_poisson_fixed", "an even number of"));
                }
                LevyFamily::CompoundPoissonAtoms {
                    atoms: params.chunks(2).map(|p| (p[0], p[1])).collect(),
                }
            }
            "variance_gamma" => {
                if params.len() != 3 {
                    return Err(wrong_count("variance_gamma", "3"));
                }
                LevyFamily::VarianceGamma {
                    c: params[0],
                    g: params[1],
                    m: params[2],
                }
            }
            "one_sided_stable" => {
                let side = match params.len() {
                    2 => StableSide::Positive,
                    3 => match params[2] {
                        s if s > 0.0 => StableSide::Positive,
                        s if s < 0.0 => StableSide::Negative,
                        _ => StableSide::Symmetric,
                    },
                    _ => return Err(wrong_count("one_sided_stable", "2 or 3")),
                };
                LevyFamily::Stable {
                    alpha: params[0],
                    scale: params[1],
                    side,
                }
            }
            "tempered_stable_truncated" => {
                if params.len() != 4 {
                    return Err(wrong_count("tempered_stable_truncated", "4"));
                }
                LevyFamily::TemperedStableTruncated {
                    c: params[0],
                    alpha: params[1],
                    theta: params[2],
                    z_max: params[3],
                }
            }
            other => return Err(LevyError::UnknownFamily(other.to_string())),
        };
        Self::with_truncation(family, delta)
    }

    #[must_use]
    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    #[must_use]
    pub fn family_name(&self) -> &'static str {
        self.family.name()
    }

    /// Truncation level actually in effect (0 for finite-activity families).
    #[must_use]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `nu(|z| > 1)`, the rate of large jumps.
    #[must_use]
    pub fn big_jump_intensity(&self) -> f64 {
        self.big_jump_intensity
    }

    /// Rate of sampled small jumps, `nu(delta <= |z| <= 1)`.
    #[must_use]
    pub fn small_jump_intensity(&self) -> f64 {
        self.activity.small_pos + self.activity.small_neg
    }

    /// `m1`, the mean correction of the compensated small-jump part.
    #[must_use]
    pub fn small_mean(&self) -> f64 {
        self.small_mean
    }

    /// Density of `nu` at `z`, for the families that have one.
    #[must_use]
    pub fn density(&self, z: f64) -> Option<f64> {
        let az = z.abs();
        if az == 0.0 {
            return None;
        }
        match &self.family {
            LevyFamily::CompoundPoissonNormal { lambda, mu, sigma } => {
                Some(lambda * normal_pdf((z - mu) / sigma) / sigma)
            }
            LevyFamily::CompoundPoissonAtoms { .. } => None,
            LevyFamily::VarianceGamma { c, g, m } => Some(if z > 0.0 {
                c * (-m * az).exp() / az
            } else {
                c * (-g * az).exp() / az
            }),
            LevyFamily::Stable { alpha, scale, side } => {
                let active = match side {
                    StableSide::Positive => z > 0.0,
                    StableSide::Negative => z < 0.0,
                    StableSide::Symmetric => true,
                };
                Some(if active {
                    scale * az.powf(-1.0 - alpha)
                } else {
                    0.0
                })
            }
            LevyFamily::TemperedStableTruncated {
                c,
                alpha,
                theta,
                z_max,
            } => Some(if az <= *z_max {
                c * (-theta * az).exp() * az.powf(-1.0 - alpha)
            } else {
                0.0
            }),
        }
    }

    /// `ln` of the density, for tail integrands that would otherwise
    /// multiply an overflowing weight by an underflowing density. Returns
    /// negative infinity where the density vanishes on a charged
    /// half-line, `None` for atom families.
    #[must_use]
    pub fn log_density(&self, z: f64) -> Option<f64> {
        let az = z.abs();
        if az == 0.0 {
            return None;
        }
        match &self.family {
            LevyFamily::CompoundPoissonNormal { lambda, mu, sigma } => {
                if *lambda == 0.0 {
                    return Some(f64::NEG_INFINITY);
                }
                let t = (z - mu) / sigma;
                Some(lambda.ln() - sigma.ln() - 0.5 * t * t - 0.5 * (2.0 * std::f64::consts::PI).ln())
            }
            LevyFamily::CompoundPoissonAtoms { .. } => None,
            LevyFamily::VarianceGamma { c, g, m } => {
                let rate = if z > 0.0 { *m } else { *g };
                Some(c.ln() - rate * az - az.ln())
            }
            LevyFamily::Stable { alpha, scale, side } => {
                let active = match side {
                    StableSide::Positive => z > 0.0,
                    StableSide::Negative => z < 0.0,
                    StableSide::Symmetric => true,
                };
                Some(if active {
                    scale.ln() - (1.0 + alpha) * az.ln()
                } else {
                    f64::NEG_INFINITY
                })
            }
            LevyFamily::TemperedStableTruncated {
                c,
                alpha,
                theta,
                z_max,
            } => Some(if az <= *z_max {
                c.ln() - theta * az - (1.0 + alpha) * az.ln()
            } else {
                f64::NEG_INFINITY
            }),
        }
    }

    /// Atoms of `nu` for the fixed-size family.
    #[must_use]
    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match &self.family {
            LevyFamily::CompoundPoissonAtoms { atoms } => Some(atoms),
            _ => None,
        }
    }

    fn fill_caches(&mut self) {
        match &self.family {
            LevyFamily::CompoundPoissonNormal { lambda, mu, sigma } => {
                // Closed forms via the normal cdf/pdf; these double as the
                // independent reference for the quadrature-based paths.
                let a = (-1.0 - mu) / sigma;
                let b = (1.0 - mu) / sigma;
                let p_small = normal_cdf(b) - normal_cdf(a);
                self.activity.small_pos = lambda * p_small;
                self.activity.small_neg = 0.0;
                self.big_jump_intensity = lambda * (1.0 - p_small);
                self.small_mean =
                    lambda * (mu * p_small - sigma * (normal_pdf(b) - normal_pdf(a)));
            }
            LevyFamily::CompoundPoissonAtoms { atoms } => {
                for &(lam, z) in atoms {
                    if z.abs() > 1.0 {
                        self.big_jump_intensity += lam;
                    } else {
                        self.activity.small_pos += lam;
                        self.small_mean += lam * z;
                    }
                }
            }
            LevyFamily::VarianceGamma { .. }
            | LevyFamily::Stable { .. }
            | LevyFamily::TemperedStableTruncated { .. } => {
                let d = self.delta;
                let small_pos = quad::integrate(|z| self.density(z).unwrap_or(0.0), d, 1.0, 1e-12);
                let small_neg = quad::integrate(|z| self.density(-z).unwrap_or(0.0), d, 1.0, 1e-12);
                let mean_pos =
                    quad::integrate(|z| z * self.density(z).unwrap_or(0.0), d, 1.0, 1e-12);
                let mean_neg =
                    quad::integrate(|z| z * self.density(-z).unwrap_or(0.0), d, 1.0, 1e-12);
                self.activity.small_pos = small_pos;
                self.activity.small_neg = small_neg;
                self.activity.large_pos = self.tail_mass(false);
                self.activity.large_neg = self.tail_mass(true);
                self.big_jump_intensity = self.activity.large_pos + self.activity.large_neg;
                self.small_mean = mean_pos - mean_neg;
            }
        }
    }

    /// `nu` mass of one large-jump side, exploiting bounded support or
    /// closed forms where available.
    fn tail_mass(&self, negative: bool) -> f64 {
        let sgn = if negative { -1.0 } else { 1.0 };
        match &self.family {
            LevyFamily::Stable { alpha, scale, side } => {
                let active = match side {
                    StableSide::Positive => !negative,
                    StableSide::Negative => negative,
                    StableSide::Symmetric => true,
                };
                if active {
                    scale / alpha
                } else {
                    0.0
                }
            }
            LevyFamily::TemperedStableTruncated { z_max, .. } => {
                if *z_max <= 1.0 {
                    0.0
                } else {
                    quad::integrate(|z| self.density(sgn * z).unwrap_or(0.0), 1.0, *z_max, 1e-12)
                }
            }
            _ => match quad::tail_integral(|z| self.density(sgn * z).unwrap_or(0.0), 1.0, 1e-12) {
                quad::Tail::Finite(v) => v,
                quad::Tail::Divergent => f64::INFINITY,
            },
        }
    }

    /// Integrates `f` against the (truncated) small-jump measure
    /// `nu` restricted to `{ delta <= |z| <= 1 }`, adaptively.
    pub fn small_jump_integral(&self, mut f: impl FnMut(f64) -> f64, rel_tol: f64) -> f64 {
        match &self.family {
            LevyFamily::CompoundPoissonAtoms { atoms } => atoms
                .iter()
                .filter(|(_, z)| z.abs() <= 1.0)
                .map(|&(lam, z)| lam * f(z))
                .sum(),
            _ => {
                let lo = if self.family.is_finite_activity() {
                    // Finite activity: the measure has no singularity at 0,
                    // integrate across the whole ball.
                    0.0
                } else {
                    self.delta
                };
                let pos = quad::integrate(
                    |z| f(z) * self.density(z).unwrap_or(0.0),
                    lo.max(1e-300),
                    1.0,
                    rel_tol,
                );
                let neg = quad::integrate(
                    |z| f(-z) * self.density(-z).unwrap_or(0.0),
                    lo.max(1e-300),
                    1.0,
                    rel_tol,
                );
                pos + neg
            }
        }
    }

    /// Fixed quadrature nodes `(z_i, w_i)` for the small-jump measure, so
    /// that `sum_i w_i f(z_i)` approximates [`Self::small_jump_integral`].
    /// Atom families return their atoms exactly. Shared by the generator
    /// and effective-drift code so that both sides of identity checks see
    /// the same discretization.
    #[must_use]
    pub fn small_jump_nodes(&self, points_per_side: usize) -> Vec<(f64, f64)> {
        match &self.family {
            LevyFamily::CompoundPoissonAtoms { atoms } => atoms
                .iter()
                .filter(|(_, z)| z.abs() <= 1.0 && *z != 0.0)
                .map(|&(lam, z)| (z, lam))
                .collect(),
            _ => {
                let lo = if self.family.is_finite_activity() {
                    1e-12
                } else {
                    self.delta
                };
                // Nodes in s = ln z, where every supported density times the
                // Jacobian z is a smooth exponential; a plain rule on [lo, 1]
                // stalls on the z^{-alpha} families.
                let rule = quad::gauss_legendre(points_per_side);
                let s_lo = lo.ln();
                let half = -0.5 * s_lo;
                let mid = 0.5 * s_lo;
                let mut nodes = Vec::with_capacity(2 * points_per_side);
                for sign in [-1.0, 1.0] {
                    for &(t, w) in &rule {
                        let z_abs = (mid + half * t).exp();
                        let z = sign * z_abs;
                        let weight = w * half * z_abs * self.density(z).unwrap_or(0.0);
                        if weight != 0.0 {
                            nodes.push((z, weight));
                        }
                    }
                }
                nodes
            }
        }
    }

    /// The Levy exponent `kappa(theta)` of the simulated (truncated)
    /// driver, satisfying `E exp(theta Z_t) = exp(t kappa(theta))`:
    ///
    /// ```text
    ///     kappa(theta) = integral of (e^{theta z} - 1) over |z| >= delta
    ///                    - theta * m1.
    /// ```
    ///
    /// Errors when the integral diverges for this `theta`.
    pub fn exponent(&self, theta: f64) -> Result<f64, LevyError> {
        if theta == 0.0 {
            return Ok(0.0);
        }
        let domain_err = |reason: String| LevyError::ExponentDomain { theta, reason };
        match &self.family {
            LevyFamily::CompoundPoissonNormal { lambda, mu, sigma } => {
                let mgf = (theta * mu + 0.5 * theta * theta * sigma * sigma).exp();
                Ok(lambda * (mgf - 1.0) - theta * self.small_mean)
            }
            LevyFamily::CompoundPoissonAtoms { atoms } => {
                let sum: f64 = atoms
                    .iter()
                    .map(|&(lam, z)| lam * ((theta * z).exp() - 1.0))
                    .sum();
                Ok(sum - theta * self.small_mean)
            }
            LevyFamily::VarianceGamma { g, m, .. } => {
                if theta >= *m || theta <= -*g {
                    return Err(domain_err(format!(
                        "variance_gamma requires -g < theta < m, i.e. ({}, {})",
                        -g, m
                    )));
                }
                self.exponent_by_quadrature(theta).ok_or_else(|| {
                    domain_err("tail integral did not converge".to_string())
                })
            }
            LevyFamily::Stable { side, .. } => {
                let ok = match side {
                    StableSide::Positive => theta < 0.0,
                    StableSide::Negative => theta > 0.0,
                    StableSide::Symmetric => false,
                };
                if !ok {
                    return Err(domain_err(
                        "polynomial tails admit exponential moments only away from the charged side"
                            .to_string(),
                    ));
                }
                self.exponent_by_quadrature(theta)
                    .ok_or_else(|| domain_err("tail integral did not converge".to_string()))
            }
            LevyFamily::TemperedStableTruncated { .. } => Ok(self
                .exponent_by_quadrature(theta)
                .expect("bounded jump support: exponent defined for every theta")),
        }
    }

    fn exponent_by_quadrature(&self, theta: f64) -> Option<f64> {
        let small = self.small_jump_integral(|z| (theta * z).exp() - 1.0, 1e-12);
        let mut large = 0.0;
        for sign in [1.0, -1.0] {
            // (e^{theta z} - 1) nu(z) as a difference of single exponents;
            // the naive product turns into inf * 0 = NaN on long tails.
            let integrand = |z: f64| {
                let log_nu = self
                    .log_density(sign * z)
                    .unwrap_or(f64::NEG_INFINITY);
                (theta * sign * z + log_nu).exp() - log_nu.exp()
            };
            let piece = match &self.family {
                LevyFamily::TemperedStableTruncated { z_max, .. } => {
                    if *z_max > 1.0 {
                        quad::integrate(integrand, 1.0, *z_max, 1e-12)
                    } else {
                        0.0
                    }
                }
                _ => match quad::tail_integral(integrand, 1.0, 1e-12) {
                    quad::Tail::Finite(v) => v,
                    quad::Tail::Divergent => return None,
                },
            };
            large += piece;
        }
        Some(small + large - theta * self.small_mean)
    }
}

/// Result of the tail-moment hypothesis check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailMoment {
    Finite(f64),
    Infinite,
}

impl TailMoment {
    #[must_use]
    pub fn is_finite(&self) -> bool {
        matches!(self, TailMoment::Finite(_))
    }
}

/// Evaluates `integral of |z|^3 exp(8 * c_prime_bound * |z|) over |z| > 1`
/// against `nu`, the moment condition that makes fourth moments of the
/// scheme finite.
///
/// The integral is scanned over doubling windows until the tail is below
/// `1e-10` relative or the window contributions keep growing (divergence).
#[must_use]
pub fn check_hnu(model: &LevyModel, c_prime_bound: f64) -> TailMoment {
    let weight = move |z: f64| z * z * z * (8.0 * c_prime_bound * z).exp();
    // Weight times density in one exponent: the two factors separately
    // overflow and underflow long before the product stops being finite.
    let weighted = |signed_z: f64| {
        let az = signed_z.abs();
        let log_nu = model.log_density(signed_z).unwrap_or(f64::NEG_INFINITY);
        (3.0 * az.ln() + 8.0 * c_prime_bound * az + log_nu).exp()
    };
    match model.family() {
        LevyFamily::CompoundPoissonAtoms { atoms } => TailMoment::Finite(
            atoms
                .iter()
                .filter(|(_, z)| z.abs() > 1.0)
                .map(|&(lam, z)| lam * weight(z.abs()))
                .sum(),
        ),
        LevyFamily::TemperedStableTruncated { z_max, .. } => {
            if *z_max <= 1.0 {
                return TailMoment::Finite(0.0);
            }
            let mut total = 0.0;
            for sign in [1.0, -1.0] {
                total += quad::integrate(|z| weighted(sign * z), 1.0, *z_max, 1e-10);
            }
            TailMoment::Finite(total)
        }
        _ => {
            let mut total = 0.0;
            for sign in [1.0, -1.0] {
                match quad::tail_integral(|z| weighted(sign * z), 1.0, 1e-10) {
                    quad::Tail::Finite(v) => total += v,
                    quad::Tail::Divergent => return TailMoment::Infinite,
                }
            }
            TailMoment::Finite(total)
        }
    }
}

fn validate(family: &LevyFamily) -> Result<(), LevyError> {
    let bad = |family: &'static str, reason: String| Err(LevyError::BadParameters { family, reason });
    match family {
        LevyFamily::CompoundPoissonNormal { lambda, mu, sigma } => {
            if !(*lambda >= 0.0) || !lambda.is_finite() {
                return bad("compound_poisson_normal", format!("lambda = {lambda} must be >= 0"));
            }
            if !mu.is_finite() {
                return bad("compound_poisson_normal", format!("mu = {mu} must be finite"));
            }
            if !(*sigma > 0.0) || !sigma.is_finite() {
                return bad("compound_poisson_normal", format!("sigma = {sigma} must be > 0"));
            }
        }
        LevyFamily::CompoundPoissonAtoms { atoms } => {
            for &(lam, z) in atoms {
                if !(lam >= 0.0) || !lam.is_finite() || !z.is_finite() {
                    return bad(
                        "compound_poisson_fixed",
                        format!("atom ({lam}, {z}) must have finite size and intensity >= 0"),
                    );
                }
            }
        }
        LevyFamily::VarianceGamma { c, g, m } => {
            if !(*c > 0.0 && *g > 0.0 && *m > 0.0) {
                return bad("variance_gamma", format!("c={c}, g={g}, m={m} must all be > 0"));
            }
        }
        LevyFamily::Stable { alpha, scale, .. } => {
            if !(*alpha > 0.0 && *alpha < 2.0) {
                return bad("one_sided_stable", format!("alpha = {alpha} must lie in (0, 2)"));
            }
            if !(*scale > 0.0) {
                return bad("one_sided_stable", format!("scale = {scale} must be > 0"));
            }
        }
        LevyFamily::TemperedStableTruncated {
            c,
            alpha,
            theta,
            z_max,
        } => {
            if !(*c > 0.0 && *alpha > 0.0 && *alpha < 2.0 && *theta >= 0.0 && *z_max > 0.0) {
                return bad(
                    "tempered_stable_truncated",
                    format!("need c>0, alpha in (0,2), theta>=0, z_max>0; got c={c}, alpha={alpha}, theta={theta}, z_max={z_max}"),
                );
            }
        }
    }
    Ok(())
}

/// A per-path source of step records, keyed by `(seed, path_index)`.
///
/// Sequential use walks the steps in order; [`IncrementStream::record_at`]
/// regenerates any step's record directly. Both views produce bit-identical
/// results for the same key.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    seed: u64,
    path_index: u64,
    step: u64,
}

impl IncrementStream {
    #[must_use]
    pub fn new(seed: u64, path_index: u64) -> Self {
        IncrementStream {
            seed,
            path_index,
            step: 0,
        }
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[must_use]
    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// The record of the next step, advancing the stream.
    pub fn next_record(&mut self, model: &LevyModel, h: f64) -> StepRecord {
        let r = self.record_at(model, self.step, h);
        self.step += 1;
        r
    }

    /// The Brownian increment of the next step (no jump data), advancing
    /// the stream.
    pub fn next_brownian(&mut self, h: f64) -> f64 {
        let dw = self.brownian_at(self.step, h);
        self.step += 1;
        dw
    }

    /// Regenerates the Brownian increment of step `step`.
    #[must_use]
    pub fn brownian_at(&self, step: u64, h: f64) -> f64 {
        let mut rng = CounterRng::at(self.seed, self.path_index, step, Substream::Brownian);
        h.sqrt() * rng.sample::<f64, _>(StandardNormal)
    }

    /// Regenerates the full record of step `step`.
    #[must_use]
    pub fn record_at(&self, model: &LevyModel, step: u64, h: f64) -> StepRecord {
        let dw = self.brownian_at(step, h);
        let mut rng = CounterRng::at(self.seed, self.path_index, step, Substream::Jumps);
        let mut jumps = sample_jumps(model, &mut rng, h);
        jumps.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        let mut small_sum = 0.0;
        let mut large_sum = 0.0;
        for j in &jumps {
            if j.is_large() {
                large_sum += j.size;
            } else {
                small_sum += j.size;
            }
        }
        let dz_small = small_sum - h * model.small_mean();
        StepRecord {
            step,
            dw,
            dz: dz_small + large_sum,
            dz_small,
            jumps,
        }
    }
}

fn poisson_count(rng: &mut CounterRng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("positive finite Poisson mean");
    let v: f64 = rng.sample(p);
    v as usize
}

pub(crate) fn sample_jumps(model: &LevyModel, rng: &mut CounterRng, h: f64) -> Vec<Jump> {
    let mut jumps = Vec::new();
    match model.family() {
        LevyFamily::CompoundPoissonNormal { lambda, mu, sigma } => {
            let n = poisson_count(rng, lambda * h);
            for _ in 0..n {
                let size = mu + sigma * rng.sample::<f64, _>(StandardNormal);
                let time = rng.gen::<f64>();
                jumps.push(Jump { time, size });
            }
        }
        LevyFamily::CompoundPoissonAtoms { atoms } => {
            for &(lam, z) in atoms {
                let n = poisson_count(rng, lam * h);
                for _ in 0..n {
                    jumps.push(Jump {
                        time: rng.gen::<f64>(),
                        size: z,
                    });
                }
            }
        }
        LevyFamily::VarianceGamma { g, m, .. } => {
            let d = model.delta();
            let act = model.activity;
            sample_side_group(rng, h, act.large_pos, &mut jumps, 1.0, |r| {
                vg_large_size(r, *m)
            });
            sample_side_group(rng, h, act.large_neg, &mut jumps, -1.0, |r| {
                vg_large_size(r, *g)
            });
            sample_side_group(rng, h, act.small_pos, &mut jumps, 1.0, |r| {
                vg_small_size(r, *m, d)
            });
            sample_side_group(rng, h, act.small_neg, &mut jumps, -1.0, |r| {
                vg_small_size(r, *g, d)
            });
        }
        LevyFamily::Stable { alpha, .. } => {
            let d = model.delta();
            let act = model.activity;
            sample_side_group(rng, h, act.large_pos, &mut jumps, 1.0, |r| {
                power_law_tail(r, *alpha)
            });
            sample_side_group(rng, h, act.large_neg, &mut jumps, -1.0, |r| {
                power_law_tail(r, *alpha)
            });
            sample_side_group(rng, h, act.small_pos, &mut jumps, 1.0, |r| {
                power_law_range(r, *alpha, d, 1.0)
            });
            sample_side_group(rng, h, act.small_neg, &mut jumps, -1.0, |r| {
                power_law_range(r, *alpha, d, 1.0)
            });
        }
        LevyFamily::TemperedStableTruncated {
            alpha,
            theta,
            z_max,
            ..
        } => {
            let d = model.delta();
            let act = model.activity;
            let small_hi = z_max.min(1.0);
            for sign in [1.0, -1.0] {
                let lam_large = if sign > 0.0 {
                    act.large_pos
                } else {
                    act.large_neg
                };
                sample_side_group(rng, h, lam_large, &mut jumps, sign, |r| {
                    tempered_range(r, *alpha, *theta, 1.0, *z_max)
                });
            }
            for sign in [1.0, -1.0] {
                let lam_small = if sign > 0.0 {
                    act.small_pos
                } else {
                    act.small_neg
                };
                sample_side_group(rng, h, lam_small, &mut jumps, sign, |r| {
                    tempered_range(r, *alpha, *theta, d, small_hi)
                });
            }
        }
    }
    jumps
}

fn sample_side_group(
    rng: &mut CounterRng,
    h: f64,
    intensity: f64,
    jumps: &mut Vec<Jump>,
    sign: f64,
    mut size: impl FnMut(&mut CounterRng) -> f64,
) {
    let n = poisson_count(rng, intensity * h);
    for _ in 0..n {
        let s = sign * size(rng);
        let time = rng.gen::<f64>();
        jumps.push(Jump { time, size: s });
    }
}

/// Size from density `~ e^{-rate z}/z` on `(1, inf)`: exponential proposal
/// shifted to 1, accepted with probability `1/z`.
fn vg_large_size(rng: &mut CounterRng, rate: f64) -> f64 {
    loop {
        let z = 1.0 - rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / rate;
        if rng.gen::<f64>() * z <= 1.0 {
            return z;
        }
    }
}

/// Size from density `~ e^{-rate z}/z` on `[delta, 1]`: log-uniform
/// proposal (density `~ 1/z`), accepted with probability
/// `e^{-rate (z - delta)}`.
fn vg_small_size(rng: &mut CounterRng, rate: f64, delta: f64) -> f64 {
    loop {
        let z = delta.powf(1.0 - rng.gen::<f64>());
        if rng.gen::<f64>() <= (-rate * (z - delta)).exp() {
            return z;
        }
    }
}

/// Exact Pareto sample from density `~ z^{-1-alpha}` on `(1, inf)`.
fn power_law_tail(rng: &mut CounterRng, alpha: f64) -> f64 {
    let u = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    u.powf(-1.0 / alpha)
}

/// Exact inverse-cdf sample from density `~ z^{-1-alpha}` on `[lo, hi]`.
fn power_law_range(rng: &mut CounterRng, alpha: f64, lo: f64, hi: f64) -> f64 {
    let u = rng.gen::<f64>();
    let a = lo.powf(-alpha);
    let b = hi.powf(-alpha);
    (a - u * (a - b)).powf(-1.0 / alpha)
}

/// Tempered power law on `[lo, hi]`: power-law proposal, accepted with
/// probability `e^{-theta (z - lo)}`.
fn tempered_range(rng: &mut CounterRng, alpha: f64, theta: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let z = power_law_range(rng, alpha, lo, hi);
        if rng.gen::<f64>() <= (-theta * (z - lo)).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rayon::prelude::*;

    fn cpn(lambda: f64, mu: f64, sigma: f64) -> LevyModel {
        LevyModel::new(LevyFamily::CompoundPoissonNormal { lambda, mu, sigma }).unwrap()
    }

    fn vg(c: f64, g: f64, m: f64) -> LevyModel {
        LevyModel::new(LevyFamily::VarianceGamma { c, g, m }).unwrap()
    }

    fn every_family() -> Vec<LevyModel> {
        vec![
            cpn(1.0, 0.0, 0.5),
            LevyModel::new(LevyFamily::CompoundPoissonAtoms {
                atoms: vec![(0.7, 3.0), (0.5, -0.4)],
            })
            .unwrap(),
            vg(1.5, 6.0, 4.0),
            LevyModel::new(LevyFamily::Stable {
                alpha: 1.5,
                scale: 0.25,
                side: StableSide::Symmetric,
            })
            .unwrap(),
            LevyModel::new(LevyFamily::TemperedStableTruncated {
                c: 0.8,
                alpha: 0.7,
                theta: 1.2,
                z_max: 4.0,
            })
            .unwrap(),
        ]
    }

    #[test]
    fn rejects_unknown_family_and_bad_parameters() {
        assert!(matches!(
            LevyModel::from_name("gamma_ou", &[1.0], 1e-3),
            Err(LevyError::UnknownFamily(_))
        ));
        assert!(LevyModel::from_name("compound_poisson_normal", &[1.0, 0.0], 1e-3).is_err());
        assert!(LevyModel::from_name("compound_poisson_normal", &[1.0, 0.0, -0.5], 1e-3).is_err());
        assert!(LevyModel::from_name("compound_poisson_fixed", &[1.0, 3.0, 0.5], 1e-3).is_err());
        assert!(LevyModel::from_name("variance_gamma", &[1.0, -2.0, 3.0], 1e-3).is_err());
        assert!(LevyModel::from_name("one_sided_stable", &[2.5, 1.0], 1e-3).is_err());
        assert!(LevyModel::from_name("tempered_stable_truncated", &[1.0, 0.5, -1.0, 2.0], 1e-3).is_err());
    }

    #[test]
    fn truncation_level_is_validated_for_infinite_activity() {
        let fam = LevyFamily::VarianceGamma {
            c: 1.0,
            g: 5.0,
            m: 5.0,
        };
        assert!(matches!(
            LevyModel::with_truncation(fam.clone(), 0.0),
            Err(LevyError::BadTruncation(_))
        ));
        assert!(matches!(
            LevyModel::with_truncation(fam.clone(), 1.5),
            Err(LevyError::BadTruncation(_))
        ));
        assert!(LevyModel::with_truncation(fam, 1e-3).is_ok());
        // Finite activity ignores the level entirely.
        let m = LevyModel::with_truncation(
            LevyFamily::CompoundPoissonNormal {
                lambda: 1.0,
                mu: 0.0,
                sigma: 1.0,
            },
            0.7,
        )
        .unwrap();
        assert_eq!(m.delta(), 0.0);
    }

    // The compound Poisson caches are closed forms in the normal cdf; the
    // generic quadrature path must reproduce them.
    #[test]
    fn cpn_cached_constants_match_direct_quadrature() {
        let model = cpn(2.0, 0.3, 0.9);
        let tail_pos = match quad::tail_integral(|z| model.density(z).unwrap(), 1.0, 1e-12) {
            quad::Tail::Finite(v) => v,
            quad::Tail::Divergent => panic!("gaussian tail must converge"),
        };
        let tail_neg = match quad::tail_integral(|z| model.density(-z).unwrap(), 1.0, 1e-12) {
            quad::Tail::Finite(v) => v,
            quad::Tail::Divergent => panic!("gaussian tail must converge"),
        };
        assert_relative_eq!(
            model.big_jump_intensity(),
            tail_pos + tail_neg,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            model.small_mean(),
            model.small_jump_integral(|z| z, 1e-12),
            epsilon = 1e-12,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            model.small_jump_intensity(),
            model.small_jump_integral(|_| 1.0, 1e-12),
            max_relative = 1e-9
        );
    }

    #[test]
    fn records_regenerate_bit_identically() {
        for model in every_family() {
            let mut sequential = IncrementStream::new(42, 7);
            let keyed = IncrementStream::new(42, 7);
            for step in 0..40 {
                let a = sequential.next_record(&model, 0.25);
                let b = keyed.record_at(&model, step, 0.25);
                assert_eq!(a, b, "family {}", model.family_name());
            }
        }
    }

    #[test]
    fn different_paths_and_seeds_decorrelate() {
        let model = cpn(3.0, 0.0, 1.0);
        let a = IncrementStream::new(1, 0).record_at(&model, 5, 0.5);
        let b = IncrementStream::new(1, 1).record_at(&model, 5, 0.5);
        let c = IncrementStream::new(2, 0).record_at(&model, 5, 0.5);
        assert_ne!(a.dw, b.dw);
        assert_ne!(a.dw, c.dw);
    }

    #[test]
    fn decomposition_identity_is_bitwise_exact() {
        for model in every_family() {
            let stream = IncrementStream::new(9, 3);
            for step in 0..200 {
                let r = stream.record_at(&model, step, 0.5);
                let mut small = 0.0;
                let mut large = 0.0;
                for j in &r.jumps {
                    if j.is_large() {
                        large += j.size;
                    } else {
                        small += j.size;
                    }
                }
                assert_eq!(r.dz_small, small - 0.5 * model.small_mean());
                assert_eq!(r.dz, r.dz_small + large);
                for pair in r.jumps.windows(2) {
                    assert!(pair[0].time <= pair[1].time);
                }
            }
        }
    }

    #[test]
    fn fixed_atoms_give_multiples_of_the_atom_size() {
        let model = LevyModel::new(LevyFamily::CompoundPoissonAtoms {
            atoms: vec![(1.0, 3.0)],
        })
        .unwrap();
        let stream = IncrementStream::new(11, 0);
        let mut saw_jump = false;
        for step in 0..500 {
            let r = stream.record_at(&model, step, 1.0);
            let k = r.jumps.len() as f64;
            assert_eq!(r.dz, 3.0 * k);
            assert_eq!(r.dz_small, 0.0);
            saw_jump |= !r.jumps.is_empty();
        }
        assert!(saw_jump);
    }

    #[test]
    fn empty_atom_list_is_a_driverless_model() {
        let model = LevyModel::from_name("compound_poisson_fixed", &[], 1e-3).unwrap();
        assert_eq!(model.big_jump_intensity(), 0.0);
        assert_eq!(model.small_mean(), 0.0);
        let r = IncrementStream::new(5, 0).record_at(&model, 0, 1.0);
        assert_eq!(r.dz, 0.0);
        assert!(r.jumps.is_empty());
        assert!(r.dw != 0.0);
    }

    #[test]
    fn jump_counts_have_the_poisson_mean() {
        let model = cpn(2.0, 0.0, 1.0);
        let stream = IncrementStream::new(123, 0);
        let steps = 100_000u64;
        let h = 0.5;
        let total: usize = (0..steps)
            .map(|k| stream.record_at(&model, k, h).jumps.len())
            .sum();
        let mean = total as f64 / steps as f64;
        // Poisson(1): sd of the sample mean is 1/sqrt(steps).
        let se = (1.0f64 / steps as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 5.0 * se,
            "mean jump count {mean} vs expected 1.0"
        );
    }

    #[test]
    fn compensated_small_part_is_centered() {
        // Asymmetric variance gamma, so the m1 correction really matters.
        let model = vg(1.5, 6.0, 4.0);
        let stream = IncrementStream::new(77, 0);
        let steps = 200_000u64;
        let h = 0.25;
        let sum: f64 = (0..steps)
            .map(|k| stream.record_at(&model, k, h).dz_small)
            .sum();
        let mean = sum / steps as f64;
        let var_per_step = h * model.small_jump_integral(|z| z * z, 1e-10);
        let se = (var_per_step / steps as f64).sqrt();
        assert!(
            mean.abs() < 5.0 * se,
            "mean dz_small {mean} should vanish (se {se})"
        );
    }

    #[test]
    fn sampled_sizes_respect_truncation_and_support() {
        let models = [
            vg(1.5, 6.0, 4.0),
            LevyModel::new(LevyFamily::Stable {
                alpha: 0.8,
                scale: 0.5,
                side: StableSide::Symmetric,
            })
            .unwrap(),
            LevyModel::new(LevyFamily::TemperedStableTruncated {
                c: 0.8,
                alpha: 0.7,
                theta: 1.2,
                z_max: 2.5,
            })
            .unwrap(),
        ];
        for model in &models {
            let stream = IncrementStream::new(31, 0);
            for step in 0..5_000 {
                let r = stream.record_at(model, step, 0.5);
                for j in &r.jumps {
                    assert!(
                        j.size.abs() >= model.delta(),
                        "{}: sampled |{}| below delta",
                        model.family_name(),
                        j.size
                    );
                    if let LevyFamily::TemperedStableTruncated { z_max, .. } = model.family() {
                        assert!(j.size.abs() <= *z_max);
                    }
                    assert!(j.time >= 0.0 && j.time < 1.0);
                }
            }
        }
    }

    // The large-jump stable sampler is an exact inverse cdf: if J has
    // density alpha z^{-1-alpha} on (1, inf) then J^{-alpha} is uniform.
    #[test]
    fn stable_tail_sampler_is_exact_pareto() {
        let alpha = 1.5;
        let mut rng = CounterRng::for_path(404, 0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| power_law_tail(&mut rng, alpha).powf(-alpha))
            .sum::<f64>()
            / n as f64;
        let se = (1.0 / (12.0 * n as f64)).sqrt();
        assert!((mean - 0.5).abs() < 5.0 * se, "mean {mean}");
    }

    #[test]
    fn exponent_vanishes_at_zero_for_every_family() {
        for model in every_family() {
            assert_eq!(model.exponent(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn cpn_exponent_closed_form_matches_quadrature() {
        let model = cpn(1.3, 0.2, 0.8);
        for theta in [-0.7, -0.1, 0.4, 1.1] {
            let closed = model.exponent(theta).unwrap();
            let quadrature = model.exponent_by_quadrature(theta).unwrap();
            assert_relative_eq!(closed, quadrature, max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn exponent_domain_errors() {
        let model = vg(1.0, 5.0, 3.0);
        assert!(model.exponent(2.9).is_ok());
        assert!(matches!(
            model.exponent(3.0),
            Err(LevyError::ExponentDomain { .. })
        ));
        assert!(model.exponent(-4.9).is_ok());
        assert!(model.exponent(-5.0).is_err());

        let up = LevyModel::new(LevyFamily::Stable {
            alpha: 1.2,
            scale: 0.4,
            side: StableSide::Positive,
        })
        .unwrap();
        assert!(up.exponent(-0.5).is_ok());
        assert!(up.exponent(0.5).is_err());

        let sym = LevyModel::new(LevyFamily::Stable {
            alpha: 1.2,
            scale: 0.4,
            side: StableSide::Symmetric,
        })
        .unwrap();
        assert!(sym.exponent(0.25).is_err());

        let bounded = LevyModel::new(LevyFamily::TemperedStableTruncated {
            c: 0.8,
            alpha: 0.7,
            theta: 1.2,
            z_max: 4.0,
        })
        .unwrap();
        assert!(bounded.exponent(5.0).unwrap().is_finite());
    }

    // End-to-end check of sampler against exponent: for a single atom of
    // size 3 at rate 1, E exp(theta Z_1) = exp(e^{3 theta} - 1).
    #[test]
    fn exponent_matches_monte_carlo_over_one_step() {
        let model = LevyModel::new(LevyFamily::CompoundPoissonAtoms {
            atoms: vec![(1.0, 3.0)],
        })
        .unwrap();
        let theta = 0.1;
        let kappa = model.exponent(theta).unwrap();
        assert_relative_eq!(kappa, (0.3f64).exp() - 1.0, max_relative = 1e-12);

        let n: u64 = 10_000_000;
        let (sum, sum_sq) = (0..n)
            .into_par_iter()
            .map(|i| {
                let stream = IncrementStream::new(2024, i);
                let r = stream.record_at(&model, 0, 1.0);
                let v = (theta * r.dz).exp();
                (v, v * v)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        let expected = kappa.exp();
        assert!(
            (mean - expected).abs() < 4.0 * se,
            "MC mean {mean} vs exp(kappa) {expected}, se {se}"
        );
    }

    // Independent construction of variance gamma: Brownian motion with
    // drift run on a gamma clock. Matching first and second moments of the
    // one-step increment pins down both the sampler and the compensator
    // bookkeeping.
    #[test]
    fn vg_moments_match_subordinated_oracle() {
        let (c, g, m) = (1.5, 6.0, 4.0);
        let model = vg(c, g, m);
        let h = 0.5;
        let n = 300_000u64;

        // Full-measure compensator of small jumps, in closed form.
        let m1_full = c * ((1.0 - (-m).exp()) / m - (1.0 - (-g).exp()) / g);
        let theta_vg = c * (1.0 / m - 1.0 / g);
        let sigma2_vg = 2.0 * c / (g * m);
        let nu_vg = 1.0 / c;

        let stream = IncrementStream::new(555, 12);
        let mut ours = Vec::with_capacity(n as usize);
        for k in 0..n {
            ours.push(stream.record_at(&model, k, h).dz + h * m1_full);
        }

        use rand_distr::{Distribution, Gamma};
        let gamma = Gamma::new(h * c, nu_vg).unwrap();
        let mut rng = CounterRng::for_path(556, 0);
        let mut sub = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let clock = gamma.sample(&mut rng);
            let normal: f64 = rng.sample(StandardNormal);
            sub.push(theta_vg * clock + (sigma2_vg * clock).sqrt() * normal);
        }

        let stats = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64;
            (mean, var)
        };
        let (mean_ours, var_ours) = stats(&ours);
        let (mean_sub, var_sub) = stats(&sub);

        let se_mean = (2.0 * var_sub / n as f64).sqrt();
        assert!(
            (mean_ours - mean_sub).abs() < 5.0 * se_mean,
            "means {mean_ours} vs {mean_sub}, se {se_mean}"
        );
        assert_relative_eq!(mean_sub, theta_vg * h, max_relative = 0.1);
        // Jump samples are leptokurtic, so give the variance comparison a
        // generous band; the truncation below delta removes only O(delta^2).
        assert_relative_eq!(var_ours, var_sub, max_relative = 0.05);
        assert_relative_eq!(
            var_ours,
            h * (sigma2_vg + theta_vg * theta_vg * nu_vg),
            max_relative = 0.05
        );
    }

    #[test]
    fn hnu_finite_and_infinite_cases() {
        assert!(check_hnu(&cpn(1.0, 0.0, 0.5), 0.5).is_finite());

        let sym_stable = LevyModel::new(LevyFamily::Stable {
            alpha: 1.5,
            scale: 0.25,
            side: StableSide::Symmetric,
        })
        .unwrap();
        assert!(!check_hnu(&sym_stable, 0.25).is_finite());
        // Even without the exponential factor, the third moment of an
        // alpha-stable tail diverges.
        assert!(!check_hnu(&sym_stable, 0.0).is_finite());

        // Exponential tails survive exactly up to the matching rate.
        let edge = vg(1.0, 9.0, 9.0);
        assert!(check_hnu(&edge, 1.0).is_finite());
        assert!(!check_hnu(&edge, 1.2).is_finite());

        let bounded = LevyModel::new(LevyFamily::TemperedStableTruncated {
            c: 0.8,
            alpha: 0.7,
            theta: 1.2,
            z_max: 4.0,
        })
        .unwrap();
        assert!(check_hnu(&bounded, 2.0).is_finite());

        let atoms = LevyModel::new(LevyFamily::CompoundPoissonAtoms {
            atoms: vec![(0.7, 2.0)],
        })
        .unwrap();
        match check_hnu(&atoms, 0.3) {
            TailMoment::Finite(v) => {
                assert_relative_eq!(v, 0.7 * 8.0 * (16.0 * 0.3f64).exp(), max_relative = 1e-12)
            }
            TailMoment::Infinite => panic!("atom tail moment is a finite sum"),
        }
    }

    // With a zero derivative bound the weight collapses to |z|^3, and for a
    // standard normal jump law the truncated third moment has a Monte Carlo
    // oracle that needs no importance sampling.
    #[test]
    fn hnu_zero_bound_is_the_truncated_third_moment() {
        let model = cpn(2.0, 0.0, 1.0);
        let value = match check_hnu(&model, 0.0) {
            TailMoment::Finite(v) => v,
            TailMoment::Infinite => panic!("gaussian tails have all moments"),
        };
        let n = 2_000_000u64;
        let mut rng = CounterRng::for_path(8080, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let w = if x.abs() > 1.0 { x.abs().powi(3) } else { 0.0 };
            sum += w;
            sum_sq += w * w;
        }
        let mean = 2.0 * sum / n as f64;
        let var = (sum_sq / n as f64 - (sum / n as f64).powi(2)).max(0.0);
        let se = 2.0 * (var / n as f64).sqrt();
        assert!(
            (value - mean).abs() < 4.0 * se,
            "quadrature {value} vs MC {mean}, se {se}"
        );
    }

    #[test]
    fn hnu_is_monotone_in_the_derivative_bound() {
        let model = cpn(1.0, 0.0, 0.5);
        let mut last = 0.0;
        for bound in [0.0, 0.25, 0.5, 0.75] {
            match check_hnu(&model, bound) {
                TailMoment::Finite(v) => {
                    assert!(v >= last);
                    last = v;
                }
                TailMoment::Infinite => panic!("gaussian case stays finite"),
            }
        }
    }

    #[test]
    fn small_jump_nodes_match_the_adaptive_integral() {
        for model in every_family() {
            let nodes = model.small_jump_nodes(64);
            let f = |z: f64| z * z;
            let by_nodes: f64 = nodes.iter().map(|&(z, w)| w * f(z)).sum();
            let adaptive = model.small_jump_integral(f, 1e-12);
            assert_relative_eq!(by_nodes, adaptive, max_relative = 1e-8, epsilon = 1e-14);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(proptest::test_runner::Config::with_cases(32))]

            #[test]
            fn any_step_record_is_reproducible(seed in 0u64..1000, path in 0u64..64, step in 0u64..256) {
                let model = vg(1.5, 6.0, 4.0);
                let s1 = IncrementStream::new(seed, path);
                let s2 = IncrementStream::new(seed, path);
                let a = s1.record_at(&model, step, 0.125);
                let b = s2.record_at(&model, step, 0.125);
                prop_assert_eq!(a, b);
            }
        }
    }
}
