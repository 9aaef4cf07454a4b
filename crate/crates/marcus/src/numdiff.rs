//! Central finite differences with Richardson extrapolation.
//!
//! Used wherever a derivative of a numerically computed map is needed:
//! lifting the one-step map into generator space, and cross-checking the
//! analytic variational derivatives of the flows. All stencils are the
//! classical symmetric ones with leading error `O(e^2)`; one Richardson
//! level upgrades that to `O(e^4)`.

/// Symmetric stencil estimate of the `order`-th derivative (order 1..=4).
pub fn central(mut f: impl FnMut(f64) -> f64, x: f64, order: u32, e: f64) -> f64 {
    match order {
        1 => (f(x + e) - f(x - e)) / (2.0 * e),
        2 => (f(x + e) - 2.0 * f(x) + f(x - e)) / (e * e),
        3 => (f(x + 2.0 * e) - 2.0 * f(x + e) + 2.0 * f(x - e) - f(x - 2.0 * e)) / (2.0 * e * e * e),
        4 => {
            (f(x + 2.0 * e) - 4.0 * f(x + e) + 6.0 * f(x) - 4.0 * f(x - e) + f(x - 2.0 * e))
                / (e * e * e * e)
        }
        _ => panic!("stencil order {order} not supported"),
    }
}

/// One Richardson level over [`central`]: combines step sizes `e` and `e/2`
/// to cancel the `O(e^2)` truncation term.
pub fn richardson(mut f: impl FnMut(f64) -> f64, x: f64, order: u32, e: f64) -> f64 {
    let coarse = central(&mut f, x, order, e);
    let fine = central(&mut f, x, order, e / 2.0);
    (4.0 * fine - coarse) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stencils_recover_exp_derivatives() {
        for order in 1..=4 {
            let d = central(|x: f64| x.exp(), 0.3, order, 1e-2);
            assert_relative_eq!(d, (0.3f64).exp(), max_relative = 1e-3);
        }
    }

    #[test]
    fn richardson_is_sharper_than_plain_central() {
        let exact = (0.7f64).cos();
        let plain = central(|x: f64| x.sin(), 0.7, 1, 1e-3);
        let extr = richardson(|x: f64| x.sin(), 0.7, 1, 1e-3);
        assert!((extr - exact).abs() < (plain - exact).abs());
        assert_relative_eq!(extr, exact, max_relative = 1e-11);
    }

    #[test]
    fn fourth_derivative_of_quartic_is_exact() {
        // x^4 has constant fourth derivative 24; the stencil is exact on
        // polynomials of degree <= 5 up to rounding.
        let d = central(|x: f64| x.powi(4), 1.3, 4, 0.1);
        assert_relative_eq!(d, 24.0, max_relative = 1e-9);
    }
}
