//! Error function.

use std::f64::consts::PI;

/// `erf(x) = 2/sqrt(pi) * integral_0^x exp(-t^2) dt`, absolute error below 1e-15.
///
/// For `|x| < 3` the everywhere-positive series
/// `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (2n+1)!!` is summed,
/// which has no cancellation. Beyond that the Laplace continued fraction for
/// `erfc` is evaluated with the modified Lentz method.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax < 3.0 {
        series(ax)
    } else if ax < 6.5 {
        1.0 - erfc_continued_fraction(ax)
    } else {
        1.0
    };
    v.copysign(x)
}

/// Complementary error function, accurate in relative terms for large positive `x`.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        f64::NAN
    } else if x >= 3.0 {
        erfc_continued_fraction(x)
    } else if x <= -3.0 {
        2.0 - erfc_continued_fraction(-x)
    } else {
        1.0 - erf(x)
    }
}

/// `erf(a) - erf(b)` without cancellation when `a` and `b` share a sign.
pub fn erf_diff(a: f64, b: f64) -> f64 {
    if a >= 0.0 && b >= 0.0 {
        erfc(b) - erfc(a)
    } else if a <= 0.0 && b <= 0.0 {
        erfc(-a) - erfc(-b)
    } else {
        erf(a) - erf(b)
    }
}

fn series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / f64::from(2 * n + 1);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    2.0 / PI.sqrt() * (-x2).exp() * sum
}

/// `erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`, for `x > 0`.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..500 {
        let a = f64::from(n) * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}
