//! Standard normal density, CDF and a log-CDF that stays finite deep in the
//! lower tail.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`.
///
/// Below `x = -5` the Mills ratio is evaluated by its continued fraction so
/// the result never underflows, e.g. `ln Φ(-38) ≈ -726.7`.
pub fn log_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 6.0 {
        return (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p();
    }
    if x > -5.0 {
        return cdf(x).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let t = -x;
    -0.5 * t * t - LN_SQRT_2PI + mills_ratio(t).ln()
}

/// `(1 - Φ(t)) / φ(t)` for `t >= 5`, by backward evaluation of
/// `1 / (t + 1 / (t + 2 / (t + 3 / (t + ...))))`.
fn mills_ratio(t: f64) -> f64 {
    let mut r = t;
    for k in (1..=120).rev() {
        r = t + f64::from(k) / r;
    }
    1.0 / r
}

/// Probability of improvement `P(f > f*)` for `f ~ N(mean, var)`.
pub fn prob_improvement(mean: f64, var: f64, f_star: f64) -> f64 {
    if var <= 0.0 {
        return if mean > f_star { 1.0 } else { 0.0 };
    }
    cdf((mean - f_star) / var.sqrt())
}

pub fn log_prob_improvement(mean: f64, var: f64, f_star: f64) -> f64 {
    if var <= 0.0 {
        return if mean > f_star { 0.0 } else { f64::NEG_INFINITY };
    }
    log_cdf((mean - f_star) / var.sqrt())
}

/// Analytic expected improvement `E[max(0, f - f*)]`.
pub fn expected_improvement(mean: f64, var: f64, f_star: f64) -> f64 {
    if var <= 0.0 {
        return (mean - f_star).max(0.0);
    }
    let sd = var.sqrt();
    let u = (mean - f_star) / sd;
    sd * pdf(u) + (mean - f_star) * cdf(u)
}
