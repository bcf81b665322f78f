//! Arbitrary-precision versions of the special functions, used where the
//! reconstruction formulas cancel many digits.

use rug::float::Constant;
use rug::ops::Pow;
use rug::Float;

const LOG2_E: f64 = std::f64::consts::LOG2_E;

pub fn fl(prec: u32, x: f64) -> Float {
    Float::with_val(prec, x)
}

pub fn factorial(prec: u32, n: u32) -> Float {
    Float::with_val(prec, Float::factorial(n))
}

pub fn pi(prec: u32) -> Float {
    Float::with_val(prec, Constant::Pi)
}

/// Binomial coefficient as an exact integer rounded to `prec`; zero outside `0 <= k <= n`.
pub fn binomial(prec: u32, n: i64, k: i64) -> Float {
    if k < 0 || n < 0 || k > n {
        return Float::new(prec);
    }
    let b = rug::Integer::from(rug::Integer::binomial_u(n as u32, k as u32));
    Float::with_val(prec, b)
}

/// Normalized Hermite functions `h_0..=h_nmax` at the precision of `x`.
pub fn hermite_functions(nmax: usize, x: &Float) -> Vec<Float> {
    let prec = x.prec();
    let mut out = Vec::with_capacity(nmax + 1);
    let x2 = Float::with_val(prec, x.square_ref());
    let g = Float::with_val(prec, -x2 / 2u32).exp();
    let h0 = Float::with_val(prec, pi(prec).pow(-0.25f64)) * g;
    out.push(h0);
    if nmax == 0 {
        return out;
    }
    let sqrt2 = Float::with_val(prec, 2u32).sqrt();
    let h1 = Float::with_val(prec, &out[0] * x) * &sqrt2;
    out.push(h1);
    for n in 1..nmax {
        let a = Float::with_val(prec, Float::with_val(prec, 2u32) / (n as u32 + 1)).sqrt();
        let b = Float::with_val(prec, Float::with_val(prec, n as u32) / (n as u32 + 1)).sqrt();
        let next = Float::with_val(prec, &out[n] * x) * a - Float::with_val(prec, &out[n - 1] * b);
        out.push(next);
    }
    out
}

/// Dawson's integral at the precision of `x`.
pub fn dawson(x: &Float) -> Float {
    let prec = x.prec();
    if x.is_zero() {
        return Float::new(prec);
    }
    let xf = x.to_f64();
    let x2f = xf * xf;
    if x2f * LOG2_E > prec as f64 + 16.0 + 2.0 * xf.abs().log2().max(0.0) {
        // asymptotic series; smallest term is about e^{-x^2} relative
        let wp = prec + 32;
        let xw = Float::with_val(wp, x);
        let inv = Float::with_val(wp, Float::with_val(wp, xw.square_ref()) * 2u32).recip();
        let mut term = Float::with_val(wp, 1u32);
        let mut sum = Float::with_val(wp, 1u32);
        let eps = Float::with_val(wp, Float::i_exp(1, -(prec as i32 + 8)));
        let mut m = 1u32;
        loop {
            term *= &inv;
            term *= 2 * m - 1;
            sum += &term;
            if Float::with_val(wp, term.abs_ref()) < Float::with_val(wp, &sum * &eps)
                || m as f64 > x2f
            {
                break;
            }
            m += 1;
        }
        let r = sum / (xw * 2u32);
        return Float::with_val(prec, r);
    }
    // Maclaurin: alternating terms peak near e^{x^2}/(x sqrt(pi)) against a result ~1/(2x)
    let extra = (x2f * LOG2_E).ceil() as u32 + 32 + xf.abs().log2().max(0.0).ceil() as u32;
    let wp = prec + extra;
    let xw = Float::with_val(wp, x);
    let mx2 = Float::with_val(wp, xw.square_ref()) * -2i32;
    let mut term = xw.clone();
    let mut sum = xw.clone();
    let eps = Float::with_val(wp, Float::i_exp(1, -(wp as i32)));
    let mut n = 0u32;
    loop {
        term *= &mx2;
        term /= 2 * n + 3;
        sum += &term;
        n += 1;
        if (n as f64) > x2f
            && Float::with_val(wp, term.abs_ref()) < Float::with_val(wp, sum.abs_ref()) * &eps
        {
            break;
        }
    }
    Float::with_val(prec, sum)
}

/// Bits of relative accuracy the forward Dawson-derivative recurrence can lose up to order `n`.
/// Each step can cancel up to a factor `1 + 2x^2/n`.
pub fn recurrence_loss_bits(n: usize, x: f64) -> u32 {
    let t = 2.0 * x * x;
    (1..=n + 1).map(|i| (1.0 + t / i as f64).log2()).sum::<f64>().ceil() as u32
}

/// `daw^(0..=nmax)(x)` accurate to about `out_prec` bits, returned at `out_prec`.
pub fn dawson_derivatives(nmax: usize, x: &Float, out_prec: u32) -> Vec<Float> {
    let xf = x.to_f64();
    let wp = out_prec + recurrence_loss_bits(nmax, xf) + 32;
    let xw = Float::with_val(wp.max(x.prec()), x);
    let xw = Float::with_val(wp, &xw);
    let mut f: Vec<Float> = Vec::with_capacity(nmax + 1);
    f.push(dawson(&xw));
    if nmax >= 1 {
        let f1 = Float::with_val(wp, 1u32) - Float::with_val(wp, &xw * &f[0]) * 2u32;
        f.push(f1);
    }
    let m2x = Float::with_val(wp, &xw * -2i32);
    for n in 1..nmax {
        let next = Float::with_val(wp, &m2x * &f[n]) - Float::with_val(wp, &f[n - 1] * (2 * n as u32));
        f.push(next);
    }
    f.into_iter().map(|v| Float::with_val(out_prec, v)).collect()
}

/// `Y^(0..=jmax)(x)` accurate to about `out_prec` bits.
pub fn y_derivatives(jmax: usize, x: &Float, out_prec: u32) -> Vec<Float> {
    let f = dawson_derivatives(jmax + 1, x, out_prec);
    f.into_iter().skip(1).map(|v| v * 2u32).collect()
}

/// Extended-precision `Y^(0..=jmax)` for an `f64` argument, rounded back to `f64`.
pub fn y_derivatives_f64(jmax: usize, x: f64) -> Vec<f64> {
    let xm = Float::with_val(64, x);
    y_derivatives(jmax, &xm, 96).iter().map(|v| v.to_f64()).collect()
}
