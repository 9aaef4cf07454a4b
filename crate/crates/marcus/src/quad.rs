//! Deterministic quadrature helpers.
//!
//! Levy measures enter the code in two ways: integrals of smooth functions
//! against a density on a bounded interval (small-jump compensators,
//! generator correction terms) and tail integrals over `|z| > 1` whose
//! finiteness is itself the question (moment hypothesis checks). Both are
//! served here: adaptive Gauss-Legendre on intervals, and a doubling-window
//! scan for tails that either converges or reports divergence.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre polynomial; exact for
/// polynomials of degree `2n - 1`.
#[must_use]
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 2);
    let mut rule = Vec::with_capacity(n);
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((-x, w));
        if 2 * (i + 1) <= n {
            rule.push((x, w));
        }
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn fixed_gl(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, rule: &[(f64, f64)]) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for &(x, w) in rule {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Integrates `f` over `[a, b]` by adaptive bisection, comparing 16- and
/// 32-point Gauss-Legendre estimates on each piece.
///
/// The tolerance is relative to the accumulated integral with an absolute
/// floor, so integrals that are genuinely zero terminate.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let lo = gauss_legendre(16);
    let hi = gauss_legendre(32);
    let mut stack = vec![(a, b, 40usize)];
    let mut total = 0.0f64;
    let mut err = 0.0f64;
    while let Some((x0, x1, depth)) = stack.pop() {
        let coarse = fixed_gl(&mut f, x0, x1, &lo);
        let fine = fixed_gl(&mut f, x0, x1, &hi);
        let delta = (fine - coarse).abs();
        let scale = total.abs().max(fine.abs()).max(1e-300);
        if delta <= rel_tol * scale || depth == 0 {
            total += fine;
            err += delta;
        } else {
            let xm = 0.5 * (x0 + x1);
            stack.push((x0, xm, depth - 1));
            stack.push((xm, x1, depth - 1));
        }
    }
    let _ = err;
    total
}

/// Outcome of a tail integral over `[from, infinity)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// The doubling windows converged; the value is the integral.
    Finite(f64),
    /// Window contributions kept growing (or overflowed): the integral is
    /// treated as infinite.
    Divergent,
}

impl Tail {
    #[must_use]
    pub fn is_finite(&self) -> bool {
        matches!(self, Tail::Finite(_))
    }
}

/// Integrates `f >= 0` over `[from, infinity)` by scanning windows
/// `[L, 2L], [2L, 4L], ...` until their contributions become negligible
/// relative to the running total, or declares divergence when they grow
/// over several consecutive doublings.
pub fn tail_integral(mut f: impl FnMut(f64) -> f64, from: f64, rel_tol: f64) -> Tail {
    assert!(from > 0.0);
    let rule = gauss_legendre(48);
    let mut lo = from;
    let mut total = 0.0;
    let mut prev = f64::INFINITY;
    let mut growth_streak = 0u32;
    let mut negligible_streak = 0u32;
    for _ in 0..2000 {
        let hi = lo * 2.0;
        let w = fixed_gl(&mut f, lo, hi, &rule);
        total += w;
        if !total.is_finite() {
            return Tail::Divergent;
        }
        if w > prev && w > 0.0 {
            growth_streak += 1;
            if growth_streak >= 4 {
                return Tail::Divergent;
            }
        } else {
            growth_streak = 0;
        }
        if w.abs() <= rel_tol * total.abs().max(1e-300) {
            negligible_streak += 1;
            if negligible_streak >= 2 {
                return Tail::Finite(total);
            }
        } else {
            negligible_streak = 0;
        }
        prev = w;
        lo = hi;
    }
    // Neither converged nor clearly divergent within the window budget.
    // Windows that fail to shrink after ~2000 doublings cover [from, 2^2000],
    // which no integrable tail in this crate survives.
    Tail::Divergent
}
