//! Scalar special functions backing the Beta-policy densities: stable
//! softplus, log-beta, digamma and trigamma.

use statrs::function::gamma::{digamma as statrs_digamma, ln_gamma};

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of softplus, the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn digamma(x: f64) -> f64 {
    statrs_digamma(x)
}

/// Trigamma via the recurrence `psi'(x) = psi'(x+1) + 1/x^2` and the
/// asymptotic series for large arguments.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9)
    acc + inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 - inv2 / 30.0)))))
}

/// Log-density of `Beta(a, b)` at `u` in (0, 1).
pub fn beta_log_pdf(u: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * u.ln() + (b - 1.0) * (1.0 - u).ln() - ln_beta(a, b)
}

/// Differential entropy of `Beta(a, b)`.
pub fn beta_entropy(a: f64, b: f64) -> f64 {
    ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b)
        + (a + b - 2.0) * digamma(a + b)
}

/// Partial derivatives of [`beta_log_pdf`] with respect to `(a, b)`.
pub fn beta_log_pdf_grad(u: f64, a: f64, b: f64) -> (f64, f64) {
    let dab = digamma(a + b);
    (u.ln() - digamma(a) + dab, (1.0 - u).ln() - digamma(b) + dab)
}

/// Partial derivatives of [`beta_entropy`] with respect to `(a, b)`.
pub fn beta_entropy_grad(a: f64, b: f64) -> (f64, f64) {
    let tg_ab = trigamma(a + b);
    let common = (a + b - 2.0) * tg_ab;
    (-(a - 1.0) * trigamma(a) + common, -(b - 1.0) * trigamma(b) + common)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softplus_and_sigmoid_stable() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(50.0), 50.0, epsilon = 1e-12);
        assert!(softplus(-50.0) > 0.0 && softplus(-50.0) < 1e-20);
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
        // sigmoid is the derivative of softplus
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(sigmoid(x), fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn trigamma_known_values() {
        // psi'(1) = pi^2/6
        assert_abs_diff_eq!(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-10);
        // psi'(0.5) = pi^2/2
        assert_abs_diff_eq!(trigamma(0.5), std::f64::consts::PI.powi(2) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for x in [0.7, 1.3, 2.0, 4.5, 9.0, 20.0] {
            let h = 1e-6;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(trigamma(x), fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn beta_uniform_case() {
        // Beta(1,1) is uniform: density 1, entropy 0
        assert_abs_diff_eq!(beta_log_pdf(0.3, 1.0, 1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(beta_entropy(1.0, 1.0), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn beta_grads_match_finite_differences() {
        let h = 1e-6;
        for (u, a, b) in [(0.3, 1.7, 1.7), (0.6, 2.5, 1.2), (0.12, 4.0, 3.0)] {
            let (da, db) = beta_log_pdf_grad(u, a, b);
            let fa = (beta_log_pdf(u, a + h, b) - beta_log_pdf(u, a - h, b)) / (2.0 * h);
            let fb = (beta_log_pdf(u, a, b + h) - beta_log_pdf(u, a, b - h)) / (2.0 * h);
            assert_abs_diff_eq!(da, fa, epsilon = 1e-6);
            assert_abs_diff_eq!(db, fb, epsilon = 1e-6);

            let (ea, eb) = beta_entropy_grad(a, b);
            let ga = (beta_entropy(a + h, b) - beta_entropy(a - h, b)) / (2.0 * h);
            let gb = (beta_entropy(a, b + h) - beta_entropy(a, b - h)) / (2.0 * h);
            assert_abs_diff_eq!(ea, ga, epsilon = 1e-6);
            assert_abs_diff_eq!(eb, gb, epsilon = 1e-6);
        }
    }

    #[test]
    fn beta_entropy_matches_monte_carlo() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let (a, b) = (1.6931471805599454, 1.6931471805599454);
        let dist = rand_distr::Beta::new(a, b).unwrap();
        let n = 200_000;
        let mc: f64 =
            (0..n).map(|_| -beta_log_pdf(dist.sample(&mut rng), a, b)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(beta_entropy(a, b), mc, epsilon = 1e-2);
    }
}
