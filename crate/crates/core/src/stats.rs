//! Scalar statistical functions: expit, normal density/quantile, Student-t
//! quantile, and empirical quantiles (type-7 convention).

/// Numerically stable inverse logit.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Log-density of N(mean, var).
pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_6;
    let z2 = (x - mean) * (x - mean) / var;
    -0.5 * (LN_2PI + var.ln() + z2)
}

/// erf via Taylor series (small |x|) or a continued fraction for erfc
/// (large |x|), both evaluated to f64 precision.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let two_over_sqrt_pi = 1.128_379_167_095_512_6;
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 1.0_f64;
        loop {
            term *= -x2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            n += 1.0;
            if n > 300.0 {
                break;
            }
        }
        two_over_sqrt_pi * sum
    } else {
        1.0 - erfc_large(x)
    }
}

/// erfc for x >= 2.5 via the standard continued fraction
/// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
/// evaluated with the modified Lentz algorithm.
fn erfc_large(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x.max(tiny);
    let mut c = f64::INFINITY;
    let mut d = 0.0_f64;
    let mut k = 0.5_f64;
    for _ in 0..200 {
        // a_k = k/2 alternating structure: CF is x + 1/2/(x + 1/(x + 3/2/(x + 2/(x + ...))))
        d = x + k * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + k / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
        k += 0.5;
    }
    let inv_sqrt_pi = 0.564_189_583_547_756_3;
    inv_sqrt_pi * (-x * x).exp() / f
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal quantile by safeguarded Newton on the CDF.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile requires p in (0,1)");
    // rough start from the logistic approximation
    let mut x = (p / (1.0 - p)).ln() * 0.607;
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..100 {
        let f = normal_cdf(x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = normal_pdf(x);
        let step = if dens > 1e-300 { f / dens } else { 0.0 };
        let mut x_new = x - step;
        if !(x_new > lo && x_new < hi) {
            x_new = 0.5 * (lo + hi);
        }
        if (x_new - x).abs() < 1e-14 * (1.0 + x.abs()) {
            return x_new;
        }
        x = x_new;
    }
    x
}

/// ln Gamma(x) for x > 0 via the Stirling series with upward recursion for
/// small arguments.
pub fn ln_gamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0");
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= x.ln();
        x += 1.0;
    }
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number correction terms
    let series = inv
        * (1.0 / 12.0 + inv2 * (-1.0 / 360.0 + inv2 * (1.0 / 1260.0 + inv2 * (-1.0 / 1680.0))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series + shift
}

/// Regularized incomplete beta function I_x(a, b) via the Lentz continued
/// fraction, with the symmetry transform for fast convergence.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0_f64;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// CDF of the Student-t distribution with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    assert!(df > 0.0);
    if !t.is_finite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student-t quantile; falls back to the normal quantile for infinite df.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "t_quantile requires p in (0,1)");
    if !df.is_finite() {
        return normal_quantile(p);
    }
    assert!(df > 0.0);
    // bisection + Newton on the CDF
    let mut x = normal_quantile(p);
    if df < 3.0 {
        x *= 2.0; // heavier tails, widen the start
    }
    let (mut lo, mut hi) = (-1e10_f64, 1e10_f64);
    for _ in 0..200 {
        let f = t_cdf(x, df) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dens = t_pdf(x, df);
        let mut x_new = if dens > 1e-300 { x - f / dens } else { 0.5 * (lo + hi) };
        if !(x_new > lo && x_new < hi) {
            x_new = 0.5 * (lo + hi);
        }
        if (x_new - x).abs() < 1e-12 * (1.0 + x.abs()) {
            return x_new;
        }
        x = x_new;
    }
    x
}

fn t_pdf(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - 0.5 * (df + 1.0) * (x * x / df).ln_1p()).exp()
}

/// Empirical quantile with linear interpolation (type-7 convention).
/// `xs` need not be sorted.
pub fn quantile_type7(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7_sorted(&s, p)
}

/// Same as [`quantile_type7`] but assumes `xs` is already sorted ascending.
pub fn quantile_type7_sorted(xs: &[f64], p: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return xs[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        xs[n - 1]
    } else {
        xs[lo] + frac * (xs[lo + 1] - xs[lo])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n-1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    assert!(n >= 2);
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}
