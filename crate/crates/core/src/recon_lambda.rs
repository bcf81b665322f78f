//! Reconstruction from Cahill–Glauber λ-distributions: the integration method
//! for `-1 < λ < 0`, the differentiation method for `|λ| < 1/2` (wider with an
//! explicit override), and the Q-function case `λ = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rug::ops::Pow;
use rug::Float;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{kernel_stripped_mp, RadialProfile, SampledProfile};
use crate::quadrature::{GaussLaguerre, GaussLaguerreMp};
use crate::report::ReconstructionReport;
use crate::specfun::{log_binomial, log_factorial, mp};
use crate::states::DensityMatrix;

/// Gauss–Laguerre nodes used by the integration method.
pub const INTEGRATION_NODES: usize = 128;
/// Node count of the second rule that estimates the integration error.
pub const INTEGRATION_CHECK_NODES: usize = 96;
/// Largest truncation order the differentiation method will use.
pub const ORDER_CAP: usize = 200;
/// Largest design-matrix condition number accepted by [`taylor_from_samples`].
pub const MAX_CONDITION: f64 = 1e12;
/// Largest radius used by [`taylor_from_samples`].
pub const MAX_FIT_RADIUS: f64 = 0.5;
/// Absolute level below which a transformed sequence counts as decayed.
pub const DECAY_TOL: f64 = 1e-10;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

const LOG2_E: f64 = std::f64::consts::LOG2_E;

fn c0() -> C64 {
    C64::new(0.0, 0.0)
}

fn to_c64(v: &(Float, Float)) -> C64 {
    C64::new(v.0.to_f64(), v.1.to_f64())
}

fn check_real(lambda: f64) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda = {lambda} is not finite")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// integration method

/// `(1 - λ)(1 - 1/λ)`, the Gaussian rate of the vacuum integrand.
pub fn vacuum_rate(lambda: f64) -> f64 {
    (1.0 - lambda) * (1.0 - 1.0 / lambda)
}

/// Rejects every λ outside `(-1, 0)` with the reason the integral fails there.
pub fn check_integration_lambda(lambda: f64) -> Result<()> {
    check_real(lambda)?;
    if lambda > -1.0 && lambda < 0.0 {
        return Ok(());
    }
    let why = if lambda == 0.0 {
        "lambda = 0 has no inverse kernel K^(1/lambda)".to_string()
    } else if lambda > 0.0 && lambda < 1.0 {
        format!(
            "for the vacuum, rho_00 = 2(1-λ)(1-1/λ) ∫_0^∞ exp(-(1-λ)(1-1/λ) r²) r dr, and (1-λ)(1-1/λ) = {:.6} <= 0 \
             for lambda in (0,1), so the integral diverges",
            vacuum_rate(lambda)
        )
    } else {
        "the kernel K^(1/lambda) is only used with |lambda| < 1".to_string()
    };
    Err(Error::Validity(format!(
        "the integration formula requires -1 < lambda < 0 for all states; got lambda = {lambda}: {why}"
    )))
}

/// `log2 sum_u |term_u|` of `e^{(1-μ)s} K^μ_{n,n+k} / r^k` at `s = r^2`.
fn kernel_log2_bound(n: usize, k: usize, mu: f64, s: f64) -> f64 {
    let lm = mu.abs().ln();
    let l1 = (1.0 - mu).abs().ln();
    let ls = s.ln();
    let mut best = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(n + 1);
    for u in 0..=n {
        let nu = n - u;
        if mu == 0.0 && nu > 0 {
            continue;
        }
        let t = if nu == 0 { 0.0 } else { nu as f64 * lm } - log_factorial(u as u64)
            + log_binomial((n + k) as u64, nu as u64)
            + 2.0 * u as f64 * l1
            + if u == 0 { 0.0 } else { u as f64 * ls };
        best = best.max(t);
        terms.push(t);
    }
    let sum: f64 = terms.iter().map(|t| (t - best).exp()).sum();
    let pre = 0.5 * (log_factorial(n as u64) - log_factorial((n + k) as u64)) + (k + 1) as f64 * l1;
    (best + sum.ln() + pre) * LOG2_E
}

/// Working precision for component `k` and the elements `n` in `ns`.
fn integration_prec(profile: &RadialProfile, lambda: f64, k: usize, ns: &[usize], nodes: usize) -> u32 {
    let rule = GaussLaguerre::new(nodes, k as u32);
    let mu = 1.0 / lambda;
    let c = 2.0 - lambda - mu;
    let state_dim = match profile {
        RadialProfile::Lambda { rho, .. } => Some(rho.dim()),
        _ => None,
    };
    let mut bits: f64 = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        if w <= 0.0 {
            continue;
        }
        let s = x / c;
        let lw = match state_dim {
            Some(d) if d > k => (0..d - k).map(|m| kernel_log2_bound(m, k, lambda, s)).fold(f64::MIN, f64::max),
            Some(_) => 0.0,
            None => (1.0 - lambda) * s * LOG2_E - 0.5 * k as f64 * s.log2() + ((1.0 - lambda) / (1.0 + lambda)).log2(),
        };
        for &n in ns {
            let lk = kernel_log2_bound(n, k, mu, s);
            bits = bits.max(w.log2() + lk + lw - (k + 1) as f64 * c.log2());
        }
    }
    let extra = bits.max(0.0).ceil() as u32;
    (128 + extra).div_ceil(32) * 32
}

/// `e^{(1-λ) r^2} W^λ_k(r) / r^k` at `s = r^2`.
fn stripped_value(profile: &RadialProfile, lambda: &Float, k: usize, s: &Float) -> Result<(Float, Float)> {
    let prec = s.prec();
    match profile {
        RadialProfile::Lambda { rho, .. } => {
            let mut re = Float::new(prec);
            let mut im = Float::new(prec);
            for n in 0..rho.dim().saturating_sub(k) {
                let v = rho.get(n + k, n);
                if v == c0() {
                    continue;
                }
                let kern = kernel_stripped_mp(n, k, lambda, s);
                re += Float::with_val(prec, &kern * v.re);
                im += kern * v.im;
            }
            Ok((re, im))
        }
        RadialProfile::Zero { .. } => Ok((Float::new(prec), Float::new(prec))),
        RadialProfile::Sampled(_) => {
            let r = Float::with_val(prec, s.sqrt_ref());
            let (re, im) = profile.eval_mp_or_f64(&r)?;
            let g = Float::with_val(prec, Float::with_val(prec, 1u32 - lambda) * s).exp()
                / Float::with_val(prec, (&r).pow(k as i32));
            Ok((re * &g, im * g))
        }
        RadialProfile::Quadrature { .. } | RadialProfile::FiniteAngle { .. } => Err(Error::Precondition(
            "the λ reconstruction methods need a λ-distribution component, not a quadrature component".into(),
        )),
    }
}

fn check_lambda_profile(profile: &RadialProfile, lambda: f64, k: usize) -> Result<()> {
    if profile.k() != k {
        return Err(Error::Precondition(format!("profile carries component {}, not k = {k}", profile.k())));
    }
    match profile {
        RadialProfile::Lambda { lambda: l, .. } if l.im != 0.0 || l.re != lambda => Err(Error::Precondition(format!(
            "profile was generated at lambda = {l}, reconstruction requested at {lambda}"
        ))),
        RadialProfile::Sampled(s) if !s.decays => Err(Error::Domain(
            "sampled λ profile does not decay at the end of its grid; the radial integral cannot be truncated".into(),
        )),
        RadialProfile::Sampled(s) if s.range().0 > 0.0 => Err(Error::Domain(format!(
            "sampled λ profile starts at r = {}; the radial integral needs samples from r = 0",
            s.range().0
        ))),
        _ => Ok(()),
    }
}

/// `rho_{n+k,n}` for each `n` in `ns` from one component, with a Gauss–Laguerre rule of `nodes` points.
fn integrate_component(
    profile: &RadialProfile,
    lambda: f64,
    k: usize,
    ns: &[usize],
    nodes: usize,
) -> Result<Vec<C64>> {
    check_integration_lambda(lambda)?;
    check_lambda_profile(profile, lambda, k)?;
    if ns.is_empty() {
        return Ok(Vec::new());
    }
    let prec = integration_prec(profile, lambda, k, ns, nodes);
    let rule = GaussLaguerreMp::new(nodes, k as u32, prec);
    let lam = Float::with_val(prec, lambda);
    let mu = Float::with_val(prec, lam.recip_ref());
    // x = (2 - λ - 1/λ) r^2 turns the radial integral into a Laguerre integral with weight x^k e^{-x}
    let c = Float::with_val(prec, 2u32 - Float::with_val(prec, &lam + &mu));
    let s: Vec<Float> = rule.nodes.iter().map(|x| Float::with_val(prec, x / &c)).collect();
    let ws = s
        .par_iter()
        .map(|s| stripped_value(profile, &lam, k, s))
        .collect::<Result<Vec<_>>>()?;
    let scale = Float::with_val(prec, (&c).pow(-(k as i32) - 1));
    Ok(ns
        .par_iter()
        .map(|&n| {
            let mut re = Float::new(prec);
            let mut im = Float::new(prec);
            for ((w, s), (a, b)) in rule.weights.iter().zip(&s).zip(&ws) {
                let kw = kernel_stripped_mp(n, k, &mu, s) * w;
                re += Float::with_val(prec, &kw * a);
                im += kw * b;
            }
            C64::new(Float::with_val(prec, re * &scale).to_f64(), Float::with_val(prec, im * &scale).to_f64())
        })
        .collect())
}

/// `rho_{n+k,n} = 2 ∫_0^∞ W^λ_k(r) K^{1/λ}_{n,n+k}(r) r dr` for `-1 < λ < 0`.
pub fn reconstruct_integration(profile: &RadialProfile, lambda: f64, n: usize, k: usize) -> Result<C64> {
    Ok(integrate_component(profile, lambda, k, &[n], INTEGRATION_NODES)?[0])
}

/// Not checked by the integration method: the condition that would extend it to the Wigner function.
pub const WIGNER_NOTE: &str = "lambda = -1 is excluded: the integration formula extends to the Wigner function only if \
sum_n |rho_{n+k,n}| sqrt((n+k)!/n!) converges for every k, which distribution data cannot confirm";

/// All `rho_{n+k,n}` with `n + k < dim` from the components `k -> W^λ_k`.
pub fn reconstruct_integration_full(
    provider: impl Fn(usize) -> Result<RadialProfile>,
    lambda: f64,
    dim: usize,
) -> Result<ReconstructionReport> {
    check_integration_lambda(lambda)?;
    check_dim(dim)?;
    let mut fine = DMatrix::from_element(dim, dim, c0());
    let mut residuals = DMatrix::from_element(dim, dim, 0.0);
    let mut failures = Vec::new();
    let mut sampled = false;
    let mut precision = Vec::with_capacity(dim);
    for k in 0..dim {
        let ns: Vec<usize> = (0..dim - k).collect();
        let profile = match provider(k) {
            Ok(p) => p,
            Err(e) => {
                failures.push((k, e.to_string()));
                continue;
            }
        };
        sampled |= !profile.is_closed_form();
        precision.push(integration_prec(&profile, lambda, k, &ns, INTEGRATION_NODES));
        let a = integrate_component(&profile, lambda, k, &ns, INTEGRATION_NODES);
        let b = integrate_component(&profile, lambda, k, &ns, INTEGRATION_CHECK_NODES);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for n in 0..dim - k {
                    fine[(n + k, n)] = a[n];
                    fine[(n, n + k)] = a[n].conj();
                    residuals[(n + k, n)] = (a[n] - b[n]).norm();
                    residuals[(n, n + k)] = residuals[(n + k, n)];
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                if matches!(e, Error::Validity(_) | Error::Precondition(_)) {
                    return Err(e);
                }
                failures.push((k, e.to_string()));
            }
        }
    }
    let tol = if sampled { 1e-4 } else { DEFAULT_TOLERANCE };
    let mut report = ReconstructionReport::new("lambda-integration", fine, residuals.clone(), tol)?;
    for (k, e) in &failures {
        for n in 0..dim - k {
            report.flag(n + k, n, format!("component k={k} unavailable: {e}"));
            if *k > 0 {
                report.flag(n, n + k, format!("component k={k} unavailable: {e}"));
            }
            report.residuals[(n + k, n)] = f64::INFINITY;
            report.residuals[(n, n + k)] = f64::INFINITY;
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            if residuals[(i, j)] > tol {
                report.flag(i, j, format!("node-count residual {:e} exceeds {tol:e}", residuals[(i, j)]));
            }
        }
    }
    if sampled {
        report.assumptions.push("components interpolated from samples by cubic splines".into());
    }
    report.note("lambda", lambda);
    report.note("laguerre_nodes", INTEGRATION_NODES);
    report.note("residual_nodes", INTEGRATION_CHECK_NODES);
    report.note("precision_bits", precision.iter().max());
    report.note("wigner_note", WIGNER_NOTE);
    Ok(report)
}

/// Integration method on the exact components of `rho`.
pub fn integration_from_state(rho: &Arc<DensityMatrix>, lambda: f64, dim: usize) -> Result<ReconstructionReport> {
    reconstruct_integration_full(
        |k| Ok(RadialProfile::Lambda { rho: rho.clone(), lambda: C64::new(lambda, 0.0), k }),
        lambda,
        dim,
    )
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > crate::recon_quad::DEFAULT_DIM_CAP {
        return Err(Error::Domain(format!(
            "reconstruction dim {dim} must lie in 1..={}",
            crate::recon_quad::DEFAULT_DIM_CAP
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceProbe {
    pub lambda: f64,
    pub cutoffs: Vec<f64>,
    /// `∫_0^R e^{-(1-λ)(1-1/λ) r^2} r dr` at each cutoff.
    pub integrals: Vec<f64>,
    /// The vacuum `rho_00` from the truncated integral, `1 - e^{-(1-λ)(1-1/λ) R^2}`.
    pub values: Vec<f64>,
    /// "convergent", "divergent" or "inconclusive".
    pub trend: String,
}

/// The vacuum element `rho_00` by the integration formula with the radial integral stopped at each cutoff.
pub fn divergence_probe(lambda: f64, cutoffs: &[f64]) -> DivergenceProbe {
    let a = if lambda == 0.0 { f64::NEG_INFINITY } else { vacuum_rate(lambda) };
    let integrals: Vec<f64> = cutoffs
        .iter()
        .map(|&r| {
            if a.is_infinite() {
                f64::INFINITY
            } else if a == 0.0 {
                0.5 * r * r
            } else {
                -(-a * r * r).exp_m1() / (2.0 * a)
            }
        })
        .collect();
    let values: Vec<f64> = integrals.iter().map(|i| if a.is_infinite() { f64::NEG_INFINITY } else { 2.0 * a * i }).collect();
    let increasing = integrals.windows(2).all(|w| w[1] > w[0]);
    let growing = values.windows(2).all(|w| w[1].abs() > w[0].abs());
    let trend = if a <= 0.0 && increasing && growing {
        "divergent"
    } else if a > 0.0 && values.last().is_some_and(|v| (v - 1.0).abs() < 1e-10) {
        "convergent"
    } else {
        "inconclusive"
    };
    DivergenceProbe { lambda, cutoffs: cutoffs.to_vec(), integrals, values, trend: trend.into() }
}

// ---------------------------------------------------------------------------
// Taylor coefficients at the origin

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaylorSource {
    AnalyticFromState,
    FittedFromSamples { condition: f64, r_fit: f64, points: usize },
}

/// Coefficients `a_j` of `r^j` in `e^{(1-λ) r^2} W^λ_k(r)`, `j <= order`.
#[derive(Debug, Clone)]
pub struct TaylorCoefficients {
    pub k: usize,
    pub lambda: f64,
    pub order: usize,
    /// `a_{k+2i}` for `i = 0..`; the other coefficients vanish by parity.
    coeffs: Vec<(Float, Float)>,
    /// Largest `p` with `a_{2p+k}` possibly nonzero.
    pub support: usize,
    pub source: TaylorSource,
}

impl TaylorCoefficients {
    fn get_mp(&self, j: usize) -> Option<&(Float, Float)> {
        if j < self.k || (j - self.k) % 2 == 1 {
            return None;
        }
        self.coeffs.get((j - self.k) / 2)
    }

    /// `a_j`; zero for `j < k`, for odd `j - k` and beyond the order.
    pub fn coefficient(&self, j: usize) -> C64 {
        self.get_mp(j).map(to_c64).unwrap_or_else(c0)
    }

    /// `j!-scaled` coefficient, the derivative of order `j` at `r = 0`.
    pub fn derivative(&self, j: usize) -> C64 {
        match self.get_mp(j) {
            Some((re, im)) => {
                let f = mp::factorial(re.prec(), j as u32);
                C64::new(Float::with_val(re.prec(), re * &f).to_f64(), (f * im).to_f64())
            }
            None => c0(),
        }
    }

    pub fn coefficients(&self) -> Vec<C64> {
        (0..=self.order).map(|j| self.coefficient(j)).collect()
    }
}

fn taylor_prec(dim: usize) -> u32 {
    128 + 4 * dim as u32
}

/// Exact coefficients of a finite state:
/// `a_{2u+k} = sum_{n>=u} rho_{n+k,n} √(n!/(n+k)!) (1-λ)^{k+1+2u} λ^{n-u}/u! C(n+k, n-u)`.
pub fn taylor_from_state(rho: &DensityMatrix, lambda: f64, k: usize, order: usize) -> Result<TaylorCoefficients> {
    crate::forward::check_lambda(C64::new(lambda, 0.0))?;
    let d = rho.dim();
    let prec = taylor_prec(d);
    let lam = Float::with_val(prec, lambda);
    let oml = Float::with_val(prec, 1u32 - &lam);
    let support = d.saturating_sub(k + 1);
    let count = if order < k { 0 } else { (order - k) / 2 + 1 };
    let coeffs = (0..count)
        .map(|u| {
            let mut re = Float::new(prec);
            let mut im = Float::new(prec);
            if k < d {
                for n in u..d - k {
                    let v = rho.get(n + k, n);
                    if v == c0() {
                        continue;
                    }
                    let lp = if n == u { Float::with_val(prec, 1u32) } else { Float::with_val(prec, (&lam).pow((n - u) as u32)) };
                    let t = Float::with_val(prec, mp::factorial(prec, n as u32) / mp::factorial(prec, (n + k) as u32)).sqrt()
                        * lp
                        * mp::binomial(prec, (n + k) as i64, (n - u) as i64)
                        / mp::factorial(prec, u as u32);
                    re += Float::with_val(prec, &t * v.re);
                    im += t * v.im;
                }
            }
            let p = Float::with_val(prec, (&oml).pow((k + 1 + 2 * u) as u32));
            (re * &p, im * p)
        })
        .collect();
    Ok(TaylorCoefficients { k, lambda, order, coeffs, support, source: TaylorSource::AnalyticFromState })
}

fn fit_design(r: &[f64], k: usize, terms: usize, r_fit: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r.len(), terms, |i, j| (r[i] / r_fit).powi((k + 2 * j) as i32))
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Least-squares fit of `e^{(1-λ) r^2} W^λ_k(r)` to `sum_j a_{k+2j} r^{k+2j}` on the
/// samples with `r <= 0.5`. Coefficients past `order` are taken as zero.
pub fn taylor_from_samples(profile: &SampledProfile, lambda: f64, order: usize) -> Result<TaylorCoefficients> {
    crate::forward::check_lambda(C64::new(lambda, 0.0))?;
    let k = profile.k;
    if order < k {
        return Err(Error::Precondition(format!("order {order} is below the angular index k = {k}")));
    }
    let pts: Vec<(f64, C64)> = profile
        .grid()
        .iter()
        .zip(profile.values())
        .filter(|(r, _)| **r >= 0.0 && **r <= MAX_FIT_RADIUS)
        .map(|(r, v)| (*r, *v))
        .collect();
    let need = 4 * order.max(1);
    if pts.len() < need {
        return Err(Error::Precondition(format!(
            "a fit of order {order} needs at least {need} samples in [0, {MAX_FIT_RADIUS}], found {}",
            pts.len()
        )));
    }
    let r: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let r_fit = r.iter().copied().fold(0.0, f64::max);
    let terms = (order - k) / 2 + 1;
    let a = fit_design(&r, k, terms, r_fit);
    let cond = condition(&a);
    if !(cond <= MAX_CONDITION) {
        let suggest = (0..terms)
            .rev()
            .find(|&t| t > 0 && condition(&fit_design(&r, k, t, r_fit)) <= MAX_CONDITION)
            .map(|t| format!("; order {} stays below the limit", k + 2 * (t - 1)))
            .unwrap_or_default();
        return Err(Error::IllConditioned(format!(
            "design matrix condition number {cond:e} exceeds {MAX_CONDITION:e} at order {order}{suggest}"
        )));
    }
    let g = |r: f64, v: f64| ((1.0 - lambda) * r * r).exp() * v;
    let yr = DVector::from_iterator(pts.len(), pts.iter().map(|(r, v)| g(*r, v.re)));
    let yi = DVector::from_iterator(pts.len(), pts.iter().map(|(r, v)| g(*r, v.im)));
    let svd = a.svd(true, true);
    let br = svd.solve(&yr, 0.0).map_err(|e| Error::IllConditioned(e.to_string()))?;
    let bi = svd.solve(&yi, 0.0).map_err(|e| Error::IllConditioned(e.to_string()))?;
    let prec = taylor_prec(terms);
    let coeffs = (0..terms)
        .map(|j| {
            let s = r_fit.powi((k + 2 * j) as i32);
            (Float::with_val(prec, br[j] / s), Float::with_val(prec, bi[j] / s))
        })
        .collect();
    Ok(TaylorCoefficients {
        k,
        lambda,
        order,
        coeffs,
        support: terms - 1,
        source: TaylorSource::FittedFromSamples { condition: cond, r_fit, points: pts.len() },
    })
}

// ---------------------------------------------------------------------------
// differentiation method

/// `((K+l)!/(K-n)!) (1-|λ|)^{-(l+1)} (|λ|/(1-|λ|))^K`, the majorant of the
/// truncation remainder for angular index `l` at truncation index `K >= n`.
pub fn tail_bound(lambda: f64, l: usize, n: usize, truncation: usize) -> f64 {
    let a = lambda.abs();
    if truncation < n || a >= 1.0 {
        return f64::INFINITY;
    }
    if a == 0.0 {
        return if truncation == 0 { log_factorial(l as u64).exp() } else { 0.0 };
    }
    (log_factorial((truncation + l) as u64) - log_factorial((truncation - n) as u64) - (l + 1) as f64 * (1.0 - a).ln()
        + truncation as f64 * (a / (1.0 - a)).ln())
    .exp()
}

/// The bound on `rho_{n+k,n}` itself: the remainder divides by `|λ|^n √((n+k)! n!)`.
fn element_tail(lambda: f64, k: usize, n: usize, truncation: usize) -> f64 {
    let b = tail_bound(lambda, k, n, truncation);
    if b == 0.0 {
        return 0.0;
    }
    let ln_scale = n as f64 * lambda.abs().ln() + 0.5 * (log_factorial((n + k) as u64) + log_factorial(n as u64));
    (b.ln() - ln_scale).exp()
}

/// A window `x_0..x_N` of a sequence, and whether it is known to vanish past the window.
#[derive(Debug, Clone)]
pub struct SequenceWindow {
    pub values: Vec<C64>,
    pub zero_beyond: bool,
}

/// Whether `|x_n|` visibly tends to zero: true for sequences known to vanish past
/// the window; otherwise the last quarter of the window (at least three terms)
/// must be non-increasing and end below [`DECAY_TOL`].
pub fn tail_decay_check(x: &SequenceWindow) -> bool {
    if x.values.iter().any(|v| !v.norm().is_finite()) {
        return false;
    }
    if x.zero_beyond {
        return true;
    }
    let n = x.values.len();
    if n < 3 {
        return false;
    }
    let tail = &x.values[n - (n / 4).max(3)..];
    tail.windows(2).all(|w| w[1].norm() <= w[0].norm()) && tail[tail.len() - 1].norm() < DECAY_TOL
}

/// `x_n = rho_{n+k,n} λ^n √((n+k)! n!)` for the window of `rho` held in the matrix.
pub fn transformed_sequence(rho: &DensityMatrix, lambda: f64, k: usize) -> SequenceWindow {
    let d = rho.dim();
    let values = (0..d.saturating_sub(k))
        .map(|n| {
            let s = (n as f64 * lambda.abs().ln()
                + 0.5 * (log_factorial((n + k) as u64) + log_factorial(n as u64)))
            .exp();
            let sign = if lambda < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
            let s = if lambda == 0.0 { if n == 0 { 1.0 } else { 0.0 } } else { sign * s };
            rho.get(n + k, n) * s
        })
        .collect();
    SequenceWindow { values, zero_beyond: true }
}

/// Both sides of
/// `sum_n x_n/(n - (l-k)/2)! = W_{k,l} C(l, (l-k)/2)^{-1} (1-λ)^{-(l+1)} λ^{(l-k)/2}`
/// where `x_n = rho_{n+k,n} λ^n √((n+k)! n!)` and `W_{k,l} = l! a_l`. `l - k` must be even and non-negative.
pub fn transformed_moment_identity(rho: &DensityMatrix, lambda: f64, k: usize, l: usize) -> Result<(C64, C64)> {
    if l < k || (l - k) % 2 == 1 {
        return Err(Error::Domain(format!("l = {l} and k = {k} must satisfy l >= k with l - k even")));
    }
    let j = (l - k) / 2;
    let prec = taylor_prec(rho.dim());
    let lam = Float::with_val(prec, lambda);
    let mut re = Float::new(prec);
    let mut im = Float::new(prec);
    for n in j..rho.dim().saturating_sub(k) {
        let v = rho.get(n + k, n);
        let lp = if n == 0 { Float::with_val(prec, 1u32) } else { Float::with_val(prec, (&lam).pow(n as u32)) };
        let t = Float::with_val(
            prec,
            mp::factorial(prec, (n + k) as u32) * mp::factorial(prec, n as u32),
        )
        .sqrt()
            * lp
            / mp::factorial(prec, (n - j) as u32);
        re += Float::with_val(prec, &t * v.re);
        im += t * v.im;
    }
    let lhs = C64::new(re.to_f64(), im.to_f64());
    let tc = taylor_from_state(rho, lambda, k, l)?;
    let (a_re, a_im) = tc.get_mp(l).cloned().unwrap_or((Float::new(prec), Float::new(prec)));
    let lj = if j == 0 { Float::with_val(prec, 1u32) } else { Float::with_val(prec, (&lam).pow(j as u32)) };
    let f = mp::factorial(prec, l as u32) / mp::binomial(prec, l as i64, j as i64)
        * Float::with_val(prec, Float::with_val(prec, 1u32 - &lam).pow(-(l as i32) - 1))
        * lj;
    let rhs = C64::new(Float::with_val(prec, &a_re * &f).to_f64(), (a_im * f).to_f64());
    Ok((lhs, rhs))
}

/// Options of the differentiation method.
#[derive(Debug, Clone, Copy)]
pub struct DiffOptions {
    /// Target for the truncation error of each element.
    pub tolerance: f64,
    /// Permit `|λ| >= 1/2` (and `λ = -1`) once the transformed sequence passes [`tail_decay_check`].
    pub allow_override: bool,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions { tolerance: DEFAULT_TOLERANCE, allow_override: false }
    }
}

/// Element value with the truncation that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffElement {
    pub value: C64,
    /// Last `p` in the sum.
    pub truncation: usize,
    /// Majorant of the neglected terms; zero when the coefficients end at `truncation`.
    pub tail: f64,
}

fn check_diff_lambda(lambda: f64, allow_override: bool) -> Result<()> {
    check_real(lambda)?;
    if lambda.abs() < 0.5 {
        return Ok(());
    }
    if !(lambda.abs() <= 1.0 && lambda != 1.0) {
        return Err(Error::Domain(format!("lambda = {lambda} must satisfy |lambda| <= 1, lambda != 1")));
    }
    if !allow_override {
        return Err(Error::Validity(format!(
            "the differentiation formula is guaranteed only for |lambda| < 1/2, where |λ|/(1-|λ|) < 1 makes the \
             truncation remainder vanish; got lambda = {lambda}. Outside that window it holds only if the sequence \
             rho_{{n+k,n}} λ^n √((n+k)! n!) tends to zero; enable the override to check this"
        )));
    }
    Ok(())
}

/// Smallest truncation meeting `tolerance` by the majorant, limited by the coefficient support.
fn choose_truncation(c: &TaylorCoefficients, n: usize, tolerance: f64) -> Result<(usize, f64)> {
    let k = c.k;
    if c.lambda == 0.0 {
        return Ok((n, 0.0));
    }
    let by_bound = if c.lambda.abs() < 0.5 {
        (n..=ORDER_CAP).find(|&p| element_tail(c.lambda, k, n, p) < tolerance)
    } else {
        None
    };
    match by_bound {
        Some(p) if p < c.support => Ok((p, element_tail(c.lambda, k, n, p))),
        _ if c.support <= ORDER_CAP => Ok((c.support.max(n), 0.0)),
        _ => Err(Error::Convergence(format!(
            "tail bound for rho_{{{},{n}}} stays above {tolerance:e} up to truncation {ORDER_CAP}",
            n + k
        ))),
    }
}

/// `rho_{n+k,n} = √(n!/(n+k)!) sum_{p=n}^{P} C(p,n) (p+k)! (-λ)^{p-n} (1-λ)^{-(2p+k+1)} a_{2p+k}`.
fn diff_sum(c: &TaylorCoefficients, n: usize, last: usize) -> C64 {
    let k = c.k;
    let prec = c.coeffs.first().map(|v| v.0.prec()).unwrap_or(128);
    let lam = Float::with_val(prec, c.lambda);
    let neg = Float::with_val(prec, -&lam);
    let oml = Float::with_val(prec, 1u32 - &lam);
    let mut re = Float::new(prec);
    let mut im = Float::new(prec);
    for p in n..=last {
        let Some((a, b)) = c.get_mp(2 * p + k) else { break };
        let lp = if p == n { Float::with_val(prec, 1u32) } else { Float::with_val(prec, (&neg).pow((p - n) as u32)) };
        let t = mp::binomial(prec, p as i64, n as i64) * mp::factorial(prec, (p + k) as u32) * lp
            / Float::with_val(prec, (&oml).pow((2 * p + k + 1) as u32));
        re += Float::with_val(prec, &t * a);
        im += t * b;
    }
    let s = Float::with_val(prec, mp::factorial(prec, n as u32) / mp::factorial(prec, (n + k) as u32)).sqrt();
    C64::new(Float::with_val(prec, re * &s).to_f64(), (im * s).to_f64())
}

/// One element by the differentiation formula.
pub fn reconstruct_differentiation(c: &TaylorCoefficients, n: usize, opts: DiffOptions) -> Result<DiffElement> {
    check_diff_lambda(c.lambda, opts.allow_override)?;
    let (last, tail) = choose_truncation(c, n, opts.tolerance)?;
    if 2 * last + c.k > c.order {
        return Err(Error::Precondition(format!(
            "truncation p = {last} needs the coefficient of order {}, but only {} are available",
            2 * last + c.k,
            c.order
        )));
    }
    Ok(DiffElement { value: diff_sum(c, n, last), truncation: last, tail })
}

/// Single-term Q-function formula `rho_{n+k,n} = √(n!(n+k)!) a_{2n+k}` at `λ = 0`.
pub fn q_function_element(c: &TaylorCoefficients, n: usize) -> Result<C64> {
    if c.lambda != 0.0 {
        return Err(Error::Precondition(format!("Q-function coefficients need lambda = 0, got {}", c.lambda)));
    }
    if 2 * n + c.k > c.order {
        return Err(Error::Precondition(format!("coefficient of order {} is not available", 2 * n + c.k)));
    }
    Ok(diff_sum(c, n, n))
}

/// All elements `rho_{n+k,n}` with `n + k < dim` from per-component coefficients.
/// With the override, each component must pass [`tail_decay_check`] on its
/// reconstructed transformed sequence.
pub fn reconstruct_differentiation_full(
    coeffs: &[TaylorCoefficients],
    dim: usize,
    opts: DiffOptions,
) -> Result<ReconstructionReport> {
    check_dim(dim)?;
    let lambda = coeffs.first().map(|c| c.lambda).unwrap_or(0.0);
    check_diff_lambda(lambda, opts.allow_override)?;
    for k in 0..dim {
        match coeffs.get(k) {
            Some(c) if c.k == k && c.lambda == lambda => {}
            _ => {
                return Err(Error::Precondition(format!(
                    "coefficients for every k < {dim} at a common lambda are required (k = {k})"
                )))
            }
        }
    }
    let elements: Vec<Vec<DiffElement>> = (0..dim)
        .into_par_iter()
        .map(|k| (0..dim - k).map(|n| reconstruct_differentiation(&coeffs[k], n, opts)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let overridden = lambda.abs() >= 0.5;
    if overridden {
        for (k, row) in elements.iter().enumerate() {
            let window = SequenceWindow {
                values: transformed_window(row, lambda, k),
                zero_beyond: coeffs[k].support <= row.len().saturating_sub(1)
                    || coeffs[k].source == TaylorSource::AnalyticFromState,
            };
            if !tail_decay_check(&window) {
                return Err(Error::Validity(format!(
                    "override refused: the sequence rho_{{n+{k},n}} λ^n √((n+{k})! n!) does not decay within the window"
                )));
            }
        }
    }
    let mut m = DMatrix::from_element(dim, dim, c0());
    let mut residuals = DMatrix::from_element(dim, dim, 0.0);
    for (k, row) in elements.iter().enumerate() {
        for (n, e) in row.iter().enumerate() {
            m[(n + k, n)] = e.value;
            m[(n, n + k)] = e.value.conj();
            residuals[(n + k, n)] = e.tail;
            residuals[(n, n + k)] = e.tail;
        }
    }
    let method = if lambda == 0.0 { "q-function" } else { "lambda-differentiation" };
    let mut report = ReconstructionReport::new(method, m, residuals, opts.tolerance)?;
    if coeffs.iter().any(|c| matches!(c.source, TaylorSource::FittedFromSamples { .. })) {
        report.assumptions.push("Taylor coefficients past the fitted order are taken as zero".into());
        report.advertised_tolerance = opts.tolerance.max(1e-5);
    }
    if overridden {
        report.assumptions.push(format!(
            "|lambda| = {} >= 1/2: valid only because the transformed sequence decays (checked on the window)",
            lambda.abs()
        ));
    }
    report.note("lambda", lambda);
    report.note(
        "truncation",
        elements.iter().map(|r| r.iter().map(|e| e.truncation).collect::<Vec<_>>()).collect::<Vec<_>>(),
    );
    report.note("override", overridden);
    report.note(
        "fit_condition",
        coeffs
            .iter()
            .filter_map(|c| match c.source {
                TaylorSource::FittedFromSamples { condition, .. } => Some(condition),
                _ => None,
            })
            .fold(None, |a: Option<f64>, c| Some(a.map_or(c, |a| a.max(c)))),
    );
    Ok(report)
}

fn transformed_window(row: &[DiffElement], lambda: f64, k: usize) -> Vec<C64> {
    row.iter()
        .enumerate()
        .map(|(n, e)| {
            let s = (n as f64 * lambda.abs().ln() + 0.5 * (log_factorial((n + k) as u64) + log_factorial(n as u64)))
                .exp();
            e.value * s
        })
        .collect()
}

/// Differentiation method with the exact coefficients of `rho`.
pub fn differentiation_from_state(
    rho: &DensityMatrix,
    lambda: f64,
    dim: usize,
    opts: DiffOptions,
) -> Result<ReconstructionReport> {
    let coeffs = (0..dim)
        .map(|k| taylor_from_state(rho, lambda, k, 2 * dim.max(rho.dim())))
        .collect::<Result<Vec<_>>>()?;
    reconstruct_differentiation_full(&coeffs, dim, opts)
}
