//! Tail probabilities for the F, Student t and studentized range
//! distributions.

use crate::quadrature::integrate;
use crate::special::{beta_reg, ln_gamma, normal_cdf, normal_pdf};

/// Survival function `P(F > f)` of the F distribution with `(d1, d2)`
/// degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Two-sided p value `P(|T| > |t|)` of Student's t with `df` degrees of
/// freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

const TUKEY_INNER_TOL: f64 = 1e-10;
const TUKEY_OUTER_TOL: f64 = 1e-10;
// Beyond this many denominator degrees of freedom the scaled chi density is
// a spike at 1 and the infinite-df range distribution is used directly.
const TUKEY_DF_INFINITE: f64 = 50_000.0;

/// CDF of the range of `k` independent standard normals:
/// `P(R <= w) = k ∫ φ(z) [Φ(z + w) − Φ(z)]^(k−1) dz`.
pub fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    if w.is_infinite() {
        return 1.0;
    }
    let kf = k as f64;
    let integrand = |z: f64| {
        let inner = normal_cdf(z + w) - normal_cdf(z);
        if inner <= 0.0 {
            0.0
        } else {
            normal_pdf(z) * inner.powi(k as i32 - 1)
        }
    };
    // φ(z) is below 1e-17 outside |z| > 8.5; the window is shifted left
    // by w/2 because the bracket vanishes once z + w is far in the left tail.
    let lo = -8.5 - w.min(8.5);
    let hi = 8.5;
    let v = kf * integrate(integrand, lo, hi, TUKEY_INNER_TOL);
    v.clamp(0.0, 1.0)
}

fn ln_scaled_chi_pdf(s: f64, df: f64) -> f64 {
    // s = sqrt(X / df), X ~ chi^2(df)
    (df / 2.0) * df.ln() - ln_gamma(df / 2.0) - (df / 2.0 - 1.0) * std::f64::consts::LN_2
        + (df - 1.0) * s.ln()
        - df * s * s / 2.0
}

/// CDF of the studentized range distribution, `P(Q <= q)` for `k` means and
/// `df` error degrees of freedom, by integrating the normal range CDF
/// against the density of the pooled standard deviation.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2, "studentized range needs at least two groups");
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if df >= TUKEY_DF_INFINITE {
        return normal_range_cdf(q, k);
    }
    let mode = if df > 1.0 { ((df - 1.0) / df).sqrt() } else { 0.0 };
    let ln_peak = ln_scaled_chi_pdf(mode.max(1e-12), df);
    // walk right until the density is negligible relative to its peak
    let spread = 1.0 / (2.0 * df).sqrt();
    let mut upper = mode + spread;
    while ln_scaled_chi_pdf(upper, df) > ln_peak - 36.0 {
        upper += spread;
    }
    let mut lower = mode;
    while lower > 0.0 && ln_scaled_chi_pdf(lower, df) > ln_peak - 36.0 {
        lower = (lower - spread).max(0.0);
    }
    let integrand = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        ln_scaled_chi_pdf(s, df).exp() * normal_range_cdf(q * s, k)
    };
    let v = integrate(integrand, lower, mode, TUKEY_OUTER_TOL / 2.0)
        + integrate(integrand, mode, upper, TUKEY_OUTER_TOL / 2.0);
    v.clamp(0.0, 1.0)
}

/// Upper tail `P(Q > q)` of the studentized range distribution.
pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - studentized_range_cdf(q, k, df)).clamp(0.0, 1.0)
}
