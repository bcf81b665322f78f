//! Forward models: quadrature densities, Cahill–Glauber λ-distributions and
//! their angular Fourier components for a finite density matrix.

pub mod dataset;
pub mod grid;
pub mod profile;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rug::ops::Pow;
use rug::Float;

use crate::error::{Error, Result};
use crate::specfun::{self, log_binomial, log_factorial};
use crate::states::DensityMatrix;

pub use dataset::{QuadratureDataset, QuadratureManifest};
pub use grid::{sample_grid, AxisSpec, Coords, DistributionGrid, DistributionSpec, GridSpec};
pub use profile::{RadialProfile, SampledProfile};

/// Imaginary parts of quantities that are real in exact arithmetic must stay below this.
pub const IMAG_TOL: f64 = 1e-10;

/// Rejects `|λ| > 1` and `λ = 1`.
pub fn check_lambda(lambda: C64) -> Result<()> {
    if !(lambda.re.is_finite() && lambda.im.is_finite()) {
        return Err(Error::Domain(format!("lambda = {lambda} is not finite")));
    }
    if lambda == C64::new(1.0, 0.0) {
        return Err(Error::Domain("lambda = 1 is excluded: the kernel (1 - lambda) lambda^N vanishes".into()));
    }
    if lambda.norm() > 1.0 + 1e-15 {
        return Err(Error::Domain(format!("|lambda| = {} exceeds 1", lambda.norm())));
    }
    Ok(())
}

/// `h_n(x) h_m(x)` products from one Hermite sweep.
fn hermite_table(dim: usize, x: f64) -> Vec<f64> {
    specfun::hermite_functions(dim.saturating_sub(1), x)
}

/// `W^qd(x, θ) = sum_{m,n} ρ_mn e^{i(n-m)θ} h_n(x) h_m(x)`.
pub fn quad_density(rho: &DensityMatrix, x: f64, theta: f64) -> Result<f64> {
    let d = rho.dim();
    let h = hermite_table(d, x);
    let mut s = C64::new(0.0, 0.0);
    let mut scale = 0.0;
    for m in 0..d {
        for n in 0..d {
            let t = rho.get(m, n) * C64::from_polar(h[n] * h[m], (n as f64 - m as f64) * theta);
            scale += t.norm();
            s += t;
        }
    }
    if s.im.abs() > IMAG_TOL * scale.max(1.0) {
        return Err(Error::Consistency(format!(
            "quadrature density at x = {x}, theta = {theta} has imaginary part {:e}",
            s.im
        )));
    }
    Ok(s.re)
}

/// `W^qd_k(x) = sum_n ρ_{n+k,n} h_n(x) h_{n+k}(x)`.
pub fn quad_fourier_component(rho: &DensityMatrix, k: usize, x: f64) -> C64 {
    let d = rho.dim();
    if k >= d {
        return C64::new(0.0, 0.0);
    }
    let h = hermite_table(d, x);
    (0..d - k).map(|n| rho.get(n + k, n) * (h[n] * h[n + k])).sum()
}

/// Coherent-state quadrature density `π^{-1/2} e^{-(x - ũ)^2}` with `ũ = √2 Re(α e^{-iθ})`.
pub fn coherent_quad_density(alpha: C64, x: f64, theta: f64) -> f64 {
    let u = std::f64::consts::SQRT_2 * (alpha * C64::from_polar(1.0, -theta)).re;
    (-(x - u) * (x - u)).exp() / std::f64::consts::PI.sqrt()
}

/// Coherent-state λ-distribution `(1 - λ) e^{-(1 - λ)|α - z|^2}`.
pub fn coherent_lambda_distribution(alpha: C64, lambda: C64, z: C64) -> C64 {
    let one = C64::new(1.0, 0.0);
    (one - lambda) * (-(one - lambda) * (alpha - z).norm_sqr()).exp()
}

/// Phase-space point `z = (q + ip)/√2` of the Cartesian coordinates `(q, p)`.
pub fn z_of_qp(q: f64, p: f64) -> C64 {
    C64::new(q, p) / std::f64::consts::SQRT_2
}

/// `K^λ_nm(r)` for `m >= n` through the polynomial form
/// `√(n!/m!) (1-λ)^{m-n+1} e^{-(1-λ)r^2} r^{m-n} sum_u λ^{n-u}/u! C(m, n-u) (1-λ)^{2u} r^{2u}`,
/// in which only non-negative powers of λ occur. No restriction on `|λ|`.
fn kernel_upper(n: usize, m: usize, lambda: C64, r: f64) -> C64 {
    debug_assert!(m >= n);
    let d = m - n;
    let one = C64::new(1.0, 0.0);
    let oml = one - lambda;
    let gauss = -oml * (r * r);
    let ln_r = r.ln();
    let half = 0.5 * (log_factorial(n as u64) - log_factorial(m as u64));
    let mut s = C64::new(0.0, 0.0);
    for u in 0..=n {
        let pw = 2 * u + d;
        if r == 0.0 && pw > 0 {
            continue;
        }
        let lr = if pw == 0 { 0.0 } else { pw as f64 * ln_r };
        let ln_c = half + log_binomial(m as u64, (n - u) as u64) - log_factorial(u as u64) + lr;
        let lam = if n - u == 0 { one } else { lambda.powi((n - u) as i32) };
        if lam == C64::new(0.0, 0.0) {
            continue;
        }
        s += (gauss + ln_c).exp() * lam * oml.powi((pw + 1) as i32);
    }
    s
}

/// Cahill–Glauber kernel `K^λ_nm(r)` for any `λ ≠ 1`; the `m < n` orientation
/// uses `K^λ_nm = conj(K^{conj λ}_mn)`.
pub fn klambda_kernel_any(n: usize, m: usize, lambda: C64, r: f64) -> Result<C64> {
    if lambda == C64::new(1.0, 0.0) {
        return Err(Error::Domain("lambda = 1 is excluded".into()));
    }
    if r < 0.0 || !r.is_finite() {
        return Err(Error::Domain(format!("radius r = {r} must be finite and non-negative")));
    }
    Ok(if m >= n {
        kernel_upper(n, m, lambda, r)
    } else {
        kernel_upper(m, n, lambda.conj(), r).conj()
    })
}

/// Cahill–Glauber kernel `K^λ_nm(r)` for `|λ| <= 1`, `λ ≠ 1`.
pub fn klambda_kernel(n: usize, m: usize, lambda: C64, r: f64) -> Result<C64> {
    check_lambda(lambda)?;
    klambda_kernel_any(n, m, lambda, r)
}

/// All kernels `K^λ_nm(r)` for `n, m < dim`.
pub fn klambda_kernels(dim: usize, lambda: C64, r: f64) -> Result<DMatrix<C64>> {
    check_lambda(lambda)?;
    let mut k = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        for m in n..dim {
            k[(n, m)] = kernel_upper(n, m, lambda, r);
            if m > n {
                k[(m, n)] = if lambda.im == 0.0 {
                    k[(n, m)].conj()
                } else {
                    kernel_upper(n, m, lambda.conj(), r).conj()
                };
            }
        }
    }
    Ok(k)
}

/// `W^λ(r, θ) = sum_{m,n} ρ_mn e^{i(n-m)θ} K^λ_nm(r)`, the distribution at `z = r e^{iθ}`.
pub fn lambda_distribution(rho: &DensityMatrix, lambda: C64, r: f64, theta: f64) -> Result<C64> {
    let d = rho.dim();
    let k = klambda_kernels(d, lambda, r)?;
    let mut s = C64::new(0.0, 0.0);
    let mut scale = 0.0;
    for m in 0..d {
        for n in 0..d {
            let t = rho.get(m, n) * k[(n, m)] * C64::from_polar(1.0, (n as f64 - m as f64) * theta);
            scale += t.norm();
            s += t;
        }
    }
    if lambda.im == 0.0 && s.im.abs() > IMAG_TOL * scale.max(1.0) {
        return Err(Error::Consistency(format!(
            "λ-distribution at r = {r}, theta = {theta} has imaginary part {:e}",
            s.im
        )));
    }
    Ok(s)
}

/// `W^λ` at Cartesian phase-space coordinates, `z = (q + ip)/√2`.
pub fn lambda_distribution_qp(rho: &DensityMatrix, lambda: C64, q: f64, p: f64) -> Result<C64> {
    let z = z_of_qp(q, p);
    lambda_distribution(rho, lambda, z.norm(), z.arg())
}

/// `W^λ_k(r) = sum_n ρ_{n+k,n} K^λ_{n,n+k}(r)`.
pub fn lambda_fourier_component(rho: &DensityMatrix, lambda: C64, k: usize, r: f64) -> Result<C64> {
    check_lambda(lambda)?;
    if r < 0.0 || !r.is_finite() {
        return Err(Error::Domain(format!("radius r = {r} must be finite and non-negative")));
    }
    let d = rho.dim();
    if k >= d {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok((0..d - k).map(|n| rho.get(n + k, n) * kernel_upper(n, n + k, lambda, r)).sum())
}

// ---------------------------------------------------------------------------
// extended precision (real λ)

/// `sum_u λ^{n-u}/u! C(n+k, n-u) (1-λ)^{2u} s^u` with `s = r^2`, the polynomial
/// part of `K^λ_{n,n+k}`.
pub fn kernel_poly_mp(n: usize, k: usize, lambda: &Float, s: &Float) -> Float {
    let prec = s.prec();
    let oml2 = Float::with_val(prec, Float::with_val(prec, 1u32 - lambda).square_ref());
    let x = Float::with_val(prec, &oml2 * s);
    let mut sum = Float::new(prec);
    let mut xu = Float::with_val(prec, 1u32);
    for u in 0..=n {
        let nu = (n - u) as i32;
        let lam = if nu == 0 {
            Float::with_val(prec, 1u32)
        } else {
            Float::with_val(prec, lambda.pow(nu))
        };
        let c = crate::specfun::mp::binomial(prec, (n + k) as i64, nu as i64)
            / crate::specfun::mp::factorial(prec, u as u32);
        sum += lam * c * &xu;
        xu *= &x;
    }
    sum
}

/// `e^{(1-λ) r^2} K^λ_{n,n+k}(r) / r^k` in extended precision.
pub fn kernel_stripped_mp(n: usize, k: usize, lambda: &Float, r2: &Float) -> Float {
    let prec = r2.prec();
    let pre = Float::with_val(
        prec,
        crate::specfun::mp::factorial(prec, n as u32) / crate::specfun::mp::factorial(prec, (n + k) as u32),
    )
    .sqrt();
    let oml = Float::with_val(prec, 1u32 - lambda);
    let p = Float::with_val(prec, oml.pow(k as i32 + 1));
    pre * p * kernel_poly_mp(n, k, lambda, r2)
}

/// `W^λ_k(r)` in extended precision for real λ; entries of `rho` are taken as exact.
pub fn lambda_fourier_component_mp(rho: &DensityMatrix, lambda: &Float, k: usize, r: &Float) -> (Float, Float) {
    let prec = r.prec();
    let d = rho.dim();
    let mut re = Float::new(prec);
    let mut im = Float::new(prec);
    if k >= d {
        return (re, im);
    }
    let r2 = Float::with_val(prec, r.square_ref());
    for n in 0..d - k {
        let v = rho.get(n + k, n);
        if v == C64::new(0.0, 0.0) {
            continue;
        }
        let kern = kernel_stripped_mp(n, k, lambda, &r2);
        re += Float::with_val(prec, &kern * v.re);
        im += kern * v.im;
    }
    let oml = Float::with_val(prec, 1u32 - lambda);
    let g = Float::with_val(prec, -(oml * &r2)).exp() * Float::with_val(prec, r.pow(k as i32));
    (re * &g, im * g)
}

/// `W^qd_k(x)` in extended precision; entries of `rho` are taken as exact.
pub fn quad_fourier_component_mp(rho: &DensityMatrix, k: usize, x: &Float) -> (Float, Float) {
    let prec = x.prec();
    let d = rho.dim();
    let mut re = Float::new(prec);
    let mut im = Float::new(prec);
    if k >= d {
        return (re, im);
    }
    let h = specfun::mp::hermite_functions(d - 1, x);
    for n in 0..d - k {
        let v = rho.get(n + k, n);
        if v == C64::new(0.0, 0.0) {
            continue;
        }
        let hh = Float::with_val(prec, &h[n] * &h[n + k]);
        re += Float::with_val(prec, &hh * v.re);
        im += hh * v.im;
    }
    (re, im)
}

/// `W^qd(x, θ)` in extended precision.
pub fn quad_density_mp(rho: &DensityMatrix, x: &Float, theta: &Float) -> Float {
    let prec = x.prec();
    let d = rho.dim();
    let h = specfun::mp::hermite_functions(d - 1, x);
    // cos dθ, sin dθ for d = 0..dim
    let trig: Vec<(Float, Float)> = (0..d)
        .map(|j| {
            let (sn, cs) = Float::with_val(prec, theta * j as u32).sin_cos(Float::new(prec));
            (cs, sn)
        })
        .collect();
    let mut s = Float::new(prec);
    for m in 0..d {
        for n in 0..d {
            let v = rho.get(m, n);
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            // Re[ρ_mn e^{i(n-m)θ}] h_n h_m
            let (cs, sn) = &trig[n.abs_diff(m)];
            let sn_signed = if n >= m { v.im } else { -v.im };
            let re = Float::with_val(prec, cs * v.re) - Float::with_val(prec, sn * sn_signed);
            s += re * &h[n] * &h[m];
        }
    }
    s
}
