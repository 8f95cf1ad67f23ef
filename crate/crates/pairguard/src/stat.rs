//! Deterministic numerical primitives: descriptive statistics, normal
//! cdf/quantile, Student-t tail probabilities, and Welch's t-test.
//!
//! Everything here is pure f64 arithmetic with no RNG and no platform
//! dependence. The normal cdf is Cody's rational approximation for erfc
//! (absolute error well under 1e-12), the quantile is a rational minimax
//! approximation polished by one Halley step against that cdf, and the
//! t tail goes through the regularized incomplete beta evaluated by a
//! Lentz continued fraction.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite value in sample")]
    NonFiniteValue,
    #[error("domain error: {0}")]
    DomainError(&'static str),
    #[error("too few runs: need at least {needed}, got {got}")]
    TooFewRuns { needed: usize, got: usize },
}

/// Count, mean, and unbiased sample variance of one group of runs.
///
/// `degenerate` is set when n == 1, where the variance is reported as 0
/// but carries no information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub degenerate: bool,
}

/// Welch's unequal-variance t-test between two independent groups.
///
/// When both groups have zero variance the test statistic is undefined;
/// the result is flagged `degenerate` with p = 1 if the means are equal
/// and p = 0 if they differ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_two_sided: f64,
    pub group_a: SampleStats,
    pub group_b: SampleStats,
    pub degenerate: bool,
}

/// Computes count, mean, and sample variance (n-1 denominator).
///
/// A constant sample reports variance exactly 0, so identical runs can
/// never fabricate spread through rounding.
pub fn sample_stats(values: &[f64]) -> Result<SampleStats, StatError> {
    if values.is_empty() {
        return Err(StatError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatError::NonFiniteValue);
    }
    let n = values.len();
    if values.iter().all(|v| *v == values[0]) {
        return Ok(SampleStats {
            n,
            mean: values[0],
            variance: 0.0,
            degenerate: n == 1,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(SampleStats {
        n,
        mean,
        variance,
        degenerate: false,
    })
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc_cody(-z / SQRT_2)
}

/// Standard normal density.
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Cody's rational Chebyshev approximation for erfc (netlib SPECFUN
// coefficient sets; three regions split at 0.46875 and 4.0).
fn erfc_cody(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];

    let y = x.abs();
    let result = if y <= 0.46875 {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut xnum = A[4] * ysq;
        let mut xden = ysq;
        for i in 0..3 {
            xnum = (xnum + A[i]) * ysq;
            xden = (xden + B[i]) * ysq;
        }
        return 1.0 - x * (xnum + A[3]) / (xden + B[3]);
    } else if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        let r = (xnum + C[7]) / (xden + D[7]);
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < 26.543 {
        let ysq = 1.0 / (y * y);
        let mut xnum = P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * ysq;
            xden = (xden + Q[i]) * ysq;
        }
        let mut r = ysq * (xnum + P[4]) / (xden + Q[4]);
        r = (1.0 / std::f64::consts::PI.sqrt() - r) / y;
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard normal quantile (inverse cdf) on the open interval (0, 1).
///
/// Rational minimax approximation with one Halley refinement against
/// [`normal_cdf`]; absolute error is far inside the 1e-9 contract.
pub fn normal_quantile(p: f64) -> Result<f64, StatError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatError::DomainError("quantile needs 0 < p < 1"));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    };
    // One Halley step; skipped in the extreme tails where exp(x^2/2)
    // would overflow and the raw approximation already dominates error.
    if x.abs() < 37.0 {
        let e = normal_cdf(x) - p;
        let u = e / normal_pdf(x);
        x -= u / (1.0 + x * u / 2.0);
    }
    Ok(x)
}

// Lanczos (g = 7, 9 terms) log-gamma for positive arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection keeps small arguments accurate.
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEF.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-30;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

// Regularized incomplete beta I_x(a, b).
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t survival function P(T >= t) with df degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64, StatError> {
    if !(df > 0.0) || df.is_nan() {
        return Err(StatError::DomainError("degrees of freedom must be positive"));
    }
    if t.is_nan() {
        return Err(StatError::DomainError("t statistic is NaN"));
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    if t == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok(0.5);
    }
    let x = df / (df + t * t);
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, x);
    Ok(if t > 0.0 { tail } else { 1.0 - tail })
}

/// Welch's two-sided unequal-variance t-test.
///
/// Group order matters only for the sign of t; the p-value is symmetric.
/// Needs at least two runs per group.
pub fn welch_t_test(group_a: &[f64], group_b: &[f64]) -> Result<WelchResult, StatError> {
    for g in [group_a, group_b] {
        if g.len() < 2 {
            return Err(StatError::TooFewRuns {
                needed: 2,
                got: g.len(),
            });
        }
    }
    let sa = sample_stats(group_a)?;
    let sb = sample_stats(group_b)?;
    let va_n = sa.variance / sa.n as f64;
    let vb_n = sb.variance / sb.n as f64;
    let se2 = va_n + vb_n;
    if se2 == 0.0 {
        // Both groups are constant: the statistic is undefined, so report
        // the limiting decision rather than failing.
        let equal = sa.mean == sb.mean;
        let t = if equal {
            0.0
        } else if sa.mean > sb.mean {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        return Ok(WelchResult {
            t_statistic: t,
            degrees_of_freedom: (sa.n + sb.n - 2) as f64,
            p_two_sided: if equal { 1.0 } else { 0.0 },
            group_a: sa,
            group_b: sb,
            degenerate: true,
        });
    }
    let t = (sa.mean - sb.mean) / se2.sqrt();
    let df = se2 * se2
        / (va_n * va_n / (sa.n as f64 - 1.0) + vb_n * vb_n / (sb.n as f64 - 1.0));
    let p = (2.0 * student_t_sf(t.abs(), df)?).min(1.0);
    Ok(WelchResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_two_sided: p,
        group_a: sa,
        group_b: sb,
        degenerate: false,
    })
}
