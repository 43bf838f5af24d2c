//! Scalar special functions and small dense vector helpers.
//!
//! The Gaussian tail is always evaluated through `erfc`, never as `1 - Phi`.

use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal tail probability Q(x) = P(G > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal CDF, computed as Q(-x).
pub fn norm_cdf(x: f64) -> f64 {
    q_function(-x)
}

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// m(c) = E[(G + c)_-^2] for G ~ N(0,1), where (t)_- = min(t, 0).
///
/// Closed form (1 + c^2) Q(c) - c phi(c).
pub fn neg_part_sq_moment(c: f64) -> f64 {
    let v = (1.0 + c * c) * q_function(c) - c * norm_pdf(c);
    // The two terms cancel for large positive c; the true value is positive.
    v.max(0.0)
}

/// m'(c) = 2 (c Q(c) - phi(c)), always <= 0.
pub fn neg_part_sq_moment_d1(c: f64) -> f64 {
    (2.0 * (c * q_function(c) - norm_pdf(c))).min(0.0)
}

/// m''(c) = 2 Q(c).
pub fn neg_part_sq_moment_d2(c: f64) -> f64 {
    2.0 * q_function(c)
}

/// E[(G + c)_-] = c Q(c) - phi(c) = m'(c) / 2.
pub fn neg_part_moment(c: f64) -> f64 {
    0.5 * neg_part_sq_moment_d1(c)
}

/// log(1 + e^t) without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp()
    } else if t < -30.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Cosine of the angle between two nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Evenly spaced points on a log scale, both endpoints included.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > 0.0 && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_function_reference_values() {
        // Reference tail values (high-precision tables).
        let cases = [
            (0.0, 0.5),
            (1.0, 0.158_655_253_931_457_05),
            (2.0, 0.022_750_131_948_179_21),
            (3.0, 1.349_898_031_630_094_6e-3),
            (5.0, 2.866_515_718_791_939e-7),
            (8.0, 6.220_960_574_271_785e-16),
        ];
        for (x, q) in cases {
            assert_relative_eq!(q_function(x), q, max_relative = 1e-12);
            assert_relative_eq!(q_function(-x), 1.0 - q, max_relative = 1e-12);
        }
        assert!((q_function(1.6449) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn partial_moment_limits() {
        assert_relative_eq!(neg_part_sq_moment(0.0), 0.5, max_relative = 1e-15);
        // Deep in the negative region (G + c)_- is almost surely G + c.
        let c = -12.0;
        assert_relative_eq!(neg_part_sq_moment(c), 1.0 + c * c, max_relative = 1e-14);
        assert!(neg_part_sq_moment(40.0) >= 0.0);
    }

    #[test]
    fn partial_moment_matches_quadrature() {
        // Independent check: trapezoid rule on the defining integral.
        for &c in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let n = 200_000;
            let (lo, hi) = (-14.0, -c);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let g = lo + k as f64 * h;
                let wgt = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += wgt * (g + c).powi(2) * norm_pdf(g);
            }
            assert_relative_eq!(neg_part_sq_moment(c), acc * h, max_relative = 1e-8);
        }
    }

    #[test]
    fn partial_moment_derivatives_match_differences() {
        let h = 1e-5;
        for &c in &[-2.0, -0.3, 0.0, 0.8, 3.0] {
            let d1 = (neg_part_sq_moment(c + h) - neg_part_sq_moment(c - h)) / (2.0 * h);
            assert_relative_eq!(neg_part_sq_moment_d1(c), d1, max_relative = 1e-7, epsilon = 1e-10);
            let d2 = (neg_part_sq_moment_d1(c + h) - neg_part_sq_moment_d1(c - h)) / (2.0 * h);
            assert_relative_eq!(neg_part_sq_moment_d2(c), d2, max_relative = 1e-7, epsilon = 1e-10);
        }
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_relative_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert_relative_eq!(softplus(31.0), (31.0f64.exp()).ln_1p(), max_relative = 1e-15);
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }
}
