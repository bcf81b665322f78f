//! Special functions: Hermite functions and polynomials, Dawson's integral and
//! the derivatives of `Y = 2 daw'`, associated Laguerre polynomials, and the
//! matrix elements of `Y^(j)(Q)` in the number basis.

pub mod mp;

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

// ---------------------------------------------------------------------------
// factorials and binomials

fn factorial_table() -> &'static [f64; 171] {
    static TABLE: OnceLock<[f64; 171]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [1.0; 171];
        for n in 1..171 {
            t[n] = t[n - 1] * n as f64;
        }
        t
    })
}

/// `ln n!`
pub fn log_factorial(n: u64) -> f64 {
    if n <= 170 {
        factorial_table()[n as usize].ln()
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// `n!` as a float; `inf` beyond 170.
pub fn factorial(n: u64) -> f64 {
    if n <= 170 {
        factorial_table()[n as usize]
    } else {
        f64::INFINITY
    }
}

/// Binomial coefficient `C(n, k)`; zero outside `0 <= k <= n`.
/// Exact integer arithmetic for `n <= 60`, log-scaled beyond.
pub fn binomial(n: i64, k: i64) -> f64 {
    if k < 0 || n < 0 || k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 120 {
        let mut c: u128 = 1;
        for i in 0..k {
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        c as f64
    } else {
        log_binomial(n as u64, k as u64).exp().round()
    }
}

/// `ln C(n, k)` for `0 <= k <= n`.
pub fn log_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

fn sign(odd: bool) -> f64 {
    if odd {
        -1.0
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Hermite

/// Normalized Hermite functions `h_0(x), ..., h_nmax(x)`.
///
/// The recurrence runs on `h_n e^{x^2/2}` with periodic rescaling, and the
/// Gaussian factor is applied per order in log form, so nothing overflows and
/// values underflow only when they are genuinely below the float range.
pub fn hermite_functions(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if !x.is_finite() || x.abs() > 1e6 {
        return out;
    }
    const RESCALE: f64 = 1e150;
    let ln_rescale = RESCALE.ln();
    let mut log_scale = -0.5 * x * x;
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    for n in 0..=nmax {
        out[n] = if cur == 0.0 {
            0.0
        } else {
            cur.signum() * (cur.abs().ln() + log_scale).exp()
        };
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += ln_rescale;
        }
    }
    out
}

/// Normalized Hermite function `h_n(x) = (2^n n! sqrt(pi))^{-1/2} H_n(x) e^{-x^2/2}`.
pub fn hermite_function(n: usize, x: f64) -> f64 {
    hermite_functions(n, x)[n]
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite_poly(n: usize, x: f64) -> Result<f64> {
    let mut prev = 1.0;
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = 2.0 * x;
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
        if !cur.is_finite() {
            return Err(Error::Overflow(format!("H_{n}({x}) exceeds the float range")));
        }
    }
    if !cur.is_finite() {
        return Err(Error::Overflow(format!("H_{n}({x}) exceeds the float range")));
    }
    Ok(cur)
}

/// Closed form of `int H_m H_n H_l e^{-x^2} dx`.
pub fn triple_product(m: u64, n: u64, l: u64) -> f64 {
    let s2 = m + n + l;
    if s2 % 2 == 1 {
        return 0.0;
    }
    let s = s2 / 2;
    if s < m || s < n || s < l {
        return 0.0;
    }
    let ln = 0.5 * (PI.ln() + s2 as f64 * std::f64::consts::LN_2)
        + log_factorial(m)
        + log_factorial(n)
        + log_factorial(l)
        - log_factorial(s - m)
        - log_factorial(s - n)
        - log_factorial(s - l);
    ln.exp()
}

// ---------------------------------------------------------------------------
// Dawson

/// Dawson's integral `daw(x) = e^{-x^2} int_0^x e^{t^2} dt`.
///
/// Maclaurin series near the origin, Rybicki's exponentially convergent
/// sampling sum at moderate arguments and the asymptotic series far out.
pub fn dawson(x: f64) -> f64 {
    let ax = x.abs();
    if ax == 0.0 {
        return x;
    }
    if ax < 0.2 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            term *= -2.0 * x2 / (2.0 * n + 3.0);
            sum += term;
            n += 1.0;
            if term.abs() <= 1e-18 * sum.abs() || n > 40.0 {
                break;
            }
        }
        return sum;
    }
    if ax > 50.0 {
        let inv = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..12 {
            term *= (2 * m - 1) as f64 * inv;
            sum += term;
        }
        return sum / (2.0 * x);
    }
    const H: f64 = 0.25;
    const NMAX: usize = 14;
    static COEF: OnceLock<[f64; NMAX]> = OnceLock::new();
    let c = COEF.get_or_init(|| {
        let mut c = [0.0; NMAX];
        for (i, ci) in c.iter_mut().enumerate() {
            let t = (2 * i + 1) as f64 * H;
            *ci = (-t * t).exp();
        }
        c
    });
    let n0 = 2.0 * (0.5 * ax / H).round();
    let xp = ax - n0 * H;
    let mut e1 = (2.0 * xp * H).exp();
    let e2 = e1 * e1;
    let mut d1 = n0 + 1.0;
    let mut d2 = d1 - 2.0;
    let mut sum = 0.0;
    for ci in c.iter() {
        sum += ci * (e1 / d1 + 1.0 / (d2 * e1));
        d1 += 2.0;
        d2 -= 2.0;
        e1 *= e2;
    }
    FRAC_1_SQRT_PI * (-xp * xp).exp() * sum * x.signum()
}

/// `daw^(0..=nmax)(x)` by the forward recurrence
/// `F' = 1 - 2xF`, `F^(n+1) = -2x F^(n) - 2n F^(n-1)`.
/// Loses roughly `n log2(2x^2 e / n)` bits once `x^2` is large compared to `n`.
pub fn dawson_derivatives(nmax: usize, x: f64) -> Vec<f64> {
    let mut f = Vec::with_capacity(nmax + 1);
    f.push(dawson(x));
    if nmax >= 1 {
        f.push(1.0 - 2.0 * x * f[0]);
    }
    for n in 1..nmax {
        let next = -2.0 * x * f[n] - 2.0 * n as f64 * f[n - 1];
        f.push(next);
    }
    f
}

fn recurrence_loss_bits(p: usize, x: f64) -> f64 {
    mp::recurrence_loss_bits(p, x) as f64
}

/// `Y^(p)(x)` with `Y = 2 daw'`.
///
/// Double-precision recurrence where its cancellation is mild, otherwise
/// evaluated in extended precision and rounded.
pub fn y_derivative(p: usize, x: f64) -> f64 {
    if recurrence_loss_bits(p, x) <= 14.0 {
        2.0 * dawson_derivatives(p + 1, x)[p + 1]
    } else {
        mp::y_derivatives_f64(p, x)[p]
    }
}

/// `Y^(0..=pmax)(x)`.
pub fn y_derivatives(pmax: usize, x: f64) -> Vec<f64> {
    if recurrence_loss_bits(pmax, x) <= 14.0 {
        dawson_derivatives(pmax + 1, x)[1..].iter().map(|v| 2.0 * v).collect()
    } else {
        mp::y_derivatives_f64(pmax, x)
    }
}

/// `Y^(p)(x)` from its Hermite series, summed through normalized Hermite
/// functions. Stops once 50 consecutive terms are each below `1e-15` of the
/// running sum. Accurate for moderate `|x|` (the partial sums carry a factor
/// `e^{x^2/2}` of cancellation).
pub fn y_derivative_series(p: usize, x: f64) -> Result<f64> {
    const CAP: usize = 4000;
    let q = p / 2;
    let odd = p % 2 == 1;
    let h = hermite_functions(2 * CAP + 1, x);
    let ln_pre = 0.25 * PI.ln() + 0.5 * x * x;
    let mut sum = 0.0;
    let mut small_run = 0;
    for k in 0..CAP {
        let (ln_c, hk) = if odd {
            (
                log_factorial((k + q + 1) as u64)
                    - 0.5 * log_factorial((2 * k + 1) as u64)
                    + 0.5 * std::f64::consts::LN_2,
                h[2 * k + 1],
            )
        } else {
            (
                log_factorial((k + q) as u64) - 0.5 * log_factorial((2 * k) as u64),
                h[2 * k],
            )
        };
        let term = sign(k % 2 == 1) * (ln_c + ln_pre).exp() * hk;
        sum += term;
        if term.abs() < 1e-15 * sum.abs() || term == 0.0 {
            small_run += 1;
            if small_run >= 50 {
                let outer = if odd {
                    sign((q + 1) % 2 == 1) * 2f64.powi(q as i32)
                } else {
                    sign(q % 2 == 1) * 2f64.powi(q as i32)
                };
                return Ok(outer * sum);
            }
        } else {
            small_run = 0;
        }
    }
    Err(Error::Convergence(format!(
        "Hermite series for Y^({p})({x}) did not settle within {CAP} terms"
    )))
}

// ---------------------------------------------------------------------------
// Laguerre

/// Associated Laguerre polynomial `L^alpha_n(z)` for integer `alpha >= -n`.
pub fn laguerre(n: i64, alpha: i64, z: C64) -> Result<C64> {
    if n < 0 {
        return Err(Error::Domain(format!("Laguerre degree n = {n} must be non-negative")));
    }
    if alpha < -n {
        return Err(Error::Domain(format!(
            "Laguerre index alpha = {alpha} must satisfy alpha >= -n = {}",
            -n
        )));
    }
    // three-term recurrence; the explicit sum cancels badly for large |z|
    let a = alpha as f64;
    let mut prev = C64::new(0.0, 0.0);
    let mut cur = C64::new(1.0, 0.0);
    for k in 0..n {
        let kf = k as f64;
        let next = (cur * (2.0 * kf + 1.0 + a) - z * cur - prev * (kf + a)) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// matrix elements of Y^(j)(Q)

/// `<m| Y^(j)(Q) |m + g>` with gap `g = 2u` for even `j` and `g = 2u + 1` for odd `j`.
pub fn y_matrix_element(m: u64, u: u64, j: u64) -> f64 {
    let p = j / 2;
    let gap = if j % 2 == 0 { 2 * u } else { 2 * u + 1 };
    let (bin, bin_sign) = if p >= u {
        if m > p - u {
            return 0.0;
        }
        (binomial((p - u) as i64, m as i64), sign(m % 2 == 1))
    } else {
        (binomial((m + u - p - 1) as i64, m as i64), 1.0)
    };
    let (fact, base_sign, pow2) = if j % 2 == 0 {
        (log_factorial(p + u), sign((p + u) % 2 == 1), p as f64)
    } else {
        (log_factorial(p + u + 1), sign((p + u + 1) % 2 == 1), p as f64 + 0.5)
    };
    let ln = pow2 * std::f64::consts::LN_2 + fact
        + 0.5 * (log_factorial(m) - log_factorial(m + gap));
    base_sign * bin_sign * bin * ln.exp()
}

/// `<m| Y^(j)(Q) |n>` for arbitrary indices; zero when `m + n` and `j` differ in parity.
pub fn y_operator_element(j: u64, m: u64, n: u64) -> f64 {
    let (lo, hi) = if m <= n { (m, n) } else { (n, m) };
    let gap = hi - lo;
    if gap % 2 != j % 2 {
        return 0.0;
    }
    y_matrix_element(lo, gap / 2, j)
}
