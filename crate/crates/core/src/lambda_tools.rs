//! Bridges between representations: λ-distributions from quadrature densities
//! through the Markov kernel, and Gaussian shifts of the λ parameter.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rug::{Complex, Float};
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{check_lambda, Coords, DistributionGrid, GridSpec};
use crate::specfun;

/// Term cap of the Hermite series of the kernel.
pub const MAX_KERNEL_TERMS: usize = 2000;
/// Angles in the θ trapezoid of [`lambda_from_quadratures`].
pub const THETA_POINTS: usize = 256;
/// Deconvolution discards frequencies where `1/ĝ` exceeds this.
pub const MAX_AMPLIFICATION: f64 = 1e8;
/// Largest amplified-spectrum level, relative to its peak, tolerated near the cutoff.
pub const GATE_LEVEL: f64 = 1e-4;
/// Grid margin, in standard deviations of the shift kernel.
pub const MARGIN_SIGMAS: f64 = 5.0;

/// Markov kernel `M^{q,p}_λ(x, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub lambda: C64,
    pub q: f64,
    pub p: f64,
    pub max_terms: usize,
}

impl KernelSpec {
    pub fn new(lambda: C64, q: f64, p: f64) -> Result<KernelSpec> {
        check_open_disc(lambda)?;
        Ok(KernelSpec { lambda, q, p, max_terms: MAX_KERNEL_TERMS })
    }
}

fn check_open_disc(lambda: C64) -> Result<()> {
    check_lambda(lambda)?;
    if lambda.norm() >= 1.0 {
        return Err(Error::Domain(format!("the Markov kernel needs |lambda| < 1, got |lambda| = {}", lambda.norm())));
    }
    Ok(())
}

/// `((1-λ)/(1+λ)) Y(√((1-λ)/(1+λ)) y)` for real λ, the closed form of `M^{0,0}_λ(y)`.
pub fn markov_kernel_closed(lambda: f64, y: f64) -> f64 {
    let ratio = (1.0 - lambda) / (1.0 + lambda);
    ratio * specfun::y_derivative(0, ratio.sqrt() * y)
}

/// `(1-λ) sum_k (λ-1)^k k!/(2^k (2k)!) H_{2k}(y)`, summed in extended precision until
/// 30 consecutive terms fall below `1e-15` of the partial sum.
pub fn markov_kernel_series(lambda: C64, y: f64, max_terms: usize) -> Result<C64> {
    check_open_disc(lambda)?;
    // Hermite values reach e^{y^2/2} before the series settles
    let prec = 128 + (0.75 * y * y).ceil() as u32;
    let yf = Float::with_val(prec, y);
    let lm1 = Complex::with_val(prec, (lambda.re - 1.0, lambda.im));
    let mut coef = Complex::with_val(prec, (1, 0));
    let mut h_prev = Float::with_val(prec, 1u32);
    let mut h_cur = Float::with_val(prec, &yf * 2u32);
    let mut sum = Complex::with_val(prec, (1, 0));
    let mut quiet = 0;
    for k in 1..max_terms {
        // H_{2k} from H_{2k-2}, H_{2k-1}
        let n = 2 * k - 1;
        let h_even = Float::with_val(prec, &yf * &h_cur) * 2u32 - Float::with_val(prec, &h_prev * (2 * (n as u32)));
        let h_odd = Float::with_val(prec, &yf * &h_even) * 2u32 - Float::with_val(prec, &h_cur * (2 * (n as u32 + 1)));
        coef *= &lm1;
        coef /= 4 * (2 * k as u32 - 1);
        let term = Complex::with_val(prec, &coef * &h_even);
        sum += &term;
        h_prev = h_even;
        h_cur = h_odd;
        let t = Float::with_val(prec, term.abs_ref());
        let s = Float::with_val(prec, sum.abs_ref());
        if t < s * 1e-15 {
            quiet += 1;
            if quiet >= 30 {
                let v = C64::new(sum.real().to_f64(), sum.imag().to_f64());
                return Ok(v * C64::new(1.0 - lambda.re, -lambda.im));
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::Convergence(format!(
        "kernel series at y = {y}, lambda = {lambda} did not settle within {max_terms} terms"
    )))
}

/// `M^{q,p}_λ(x, θ) = M^{0,0}_λ(x - q cos θ - p sin θ)`; closed form for real λ, series otherwise.
pub fn markov_kernel(spec: &KernelSpec, x: f64, theta: f64) -> Result<C64> {
    check_open_disc(spec.lambda)?;
    let y = x - spec.q * theta.cos() - spec.p * theta.sin();
    if spec.lambda.im == 0.0 {
        Ok(C64::new(markov_kernel_closed(spec.lambda.re, y), 0.0))
    } else {
        markov_kernel_series(spec.lambda, y, spec.max_terms)
    }
}

fn kernel_values(lambda: C64, offsets: &[f64]) -> Result<Vec<C64>> {
    if lambda.im == 0.0 {
        Ok(offsets.iter().map(|&y| C64::new(markov_kernel_closed(lambda.re, y), 0.0)).collect())
    } else {
        offsets.par_iter().map(|&y| markov_kernel_series(lambda, y, MAX_KERNEL_TERMS)).collect()
    }
}

/// Smallest half-width `L` with the density below `1e-14` of its peak at `|x| >= L`.
fn decay_width(provider: &(dyn Fn(f64, f64) -> Result<f64> + Sync)) -> Result<f64> {
    let thetas: Vec<f64> = (0..8).map(|t| PI * t as f64 / 8.0).collect();
    let mut peak: f64 = 0.0;
    for &t in &thetas {
        for i in -24..=24 {
            peak = peak.max(provider(0.25 * i as f64, t)?.abs());
        }
    }
    if peak == 0.0 {
        return Err(Error::Domain("quadrature density vanishes on [-6, 6]".into()));
    }
    for l in (6..=40).step_by(2) {
        let l = l as f64;
        let mut edge: f64 = 0.0;
        for &t in &thetas {
            for x in [-l - 1.0, -l, l, l + 1.0] {
                edge = edge.max(provider(x, t)?.abs());
            }
        }
        if edge < 1e-14 * peak {
            return Ok(l);
        }
    }
    Err(Error::Domain(
        "quadrature density does not decay below 1e-14 of its peak within |x| <= 40".into(),
    ))
}

fn fft_plan(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

/// Eight-point Lagrange interpolation on the lattice `i h`, `i = -half..=half`.
fn interpolate(f: &[C64], half: usize, h: f64, a: f64) -> C64 {
    let u = a / h;
    let i0 = u.floor() as i64 - 3;
    let mut s = C64::new(0.0, 0.0);
    for m in 0..8 {
        let im = i0 + m;
        let mut w = 1.0;
        for l in 0..8 {
            if l != m {
                w *= (u - (i0 + l) as f64) / (m - l) as f64;
            }
        }
        s += f[(im + half as i64) as usize] * w;
    }
    s
}

/// Tabulates `W^λ(q, p) = ∫_0^{2π} ∫ M^{q,p}_λ(x, θ) W^qd(x, θ) dx dθ/2π` on `grid`.
///
/// For each of the 256 angles the x-integral is a convolution of the kernel with
/// the density, done by the trapezoid rule on a lattice and read off by local
/// interpolation at `a = q cos θ + p sin θ`.
pub fn lambda_from_quadratures(
    provider: &(dyn Fn(f64, f64) -> Result<f64> + Sync),
    lambda: C64,
    grid: &GridSpec,
) -> Result<DistributionGrid> {
    check_open_disc(lambda)?;
    let a1 = grid.axis1.values();
    let a2 = grid.axis2.values();
    let qp: Vec<(f64, f64)> = match grid.coords {
        Coords::Cartesian => a1.iter().flat_map(|&q| a2.iter().map(move |&p| (q, p))).collect(),
        Coords::Polar => a1
            .iter()
            .flat_map(|&r| a2.iter().map(move |&t| (std::f64::consts::SQRT_2 * r * t.cos(), std::f64::consts::SQRT_2 * r * t.sin())))
            .collect(),
        Coords::Quadrature => {
            return Err(Error::Domain("a λ-distribution grid needs cartesian or polar coordinates".into()))
        }
    };
    let reach = qp.iter().map(|(q, p)| q.hypot(*p)).fold(0.0, f64::max);
    let width = decay_width(provider)?;

    let beta = ((C64::new(1.0, 0.0) - lambda) / (C64::new(1.0, 0.0) + lambda)).sqrt().norm();
    let h = (0.25 / beta.max(1.0)).min(0.1);
    let jx = (width / h).ceil() as usize;
    let ia = (reach / h).ceil() as usize + 5;
    let nx = 2 * jx + 1;
    let noff = jx + ia;
    let offsets: Vec<f64> = (0..=2 * noff).map(|d| (d as f64 - noff as f64) * h).collect();
    let kern = kernel_values(lambda, &offsets)?;

    let mut cross_check = None;
    if lambda.im == 0.0 {
        // near λ = -1 the series settles geometrically at rate (1-λ)/2 and may exceed
        // the term cap; such points are skipped rather than failing the construction
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for y in [0.0, 0.7, -1.9, 3.3] {
            match markov_kernel_series(lambda, y, MAX_KERNEL_TERMS) {
                Ok(s) => {
                    worst = worst.max((s.re - markov_kernel_closed(lambda.re, y)).abs());
                    checked += 1;
                }
                Err(Error::Convergence(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if worst > 1e-9 {
            return Err(Error::Consistency(format!(
                "kernel closed form and Hermite series differ by {worst:e}"
            )));
        }
        cross_check = Some((worst, checked));
    }

    // linear convolution of the density lattice with the kernel offsets
    let size = (nx + offsets.len()).next_power_of_two();
    let (fwd, inv) = fft_plan(size);
    let mut kf = vec![C64::new(0.0, 0.0); size];
    kf[..kern.len()].copy_from_slice(&kern);
    fwd.process(&mut kf);
    let kf = Arc::new(kf);

    let thetas: Vec<f64> = (0..THETA_POINTS).map(|t| 2.0 * PI * t as f64 / THETA_POINTS as f64).collect();
    let per_angle = |theta: f64| -> Result<Vec<C64>> {
        let mut buf = vec![C64::new(0.0, 0.0); size];
        for j in 0..nx {
            let x = (j as f64 - jx as f64) * h;
            buf[j] = C64::new(provider(x, theta)?, 0.0);
        }
        fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(kf.iter()) {
            *b *= k;
        }
        inv.process(&mut buf);
        // conv[s] = sum_j W_j M((s - j - noff) h) and M is even
        let scale = h / size as f64;
        let f: Vec<C64> = (0..=2 * ia)
            .map(|i| buf[i + jx + noff - ia] * scale)
            .collect();
        let (sn, cs) = theta.sin_cos();
        Ok(qp.iter().map(|(q, p)| interpolate(&f, ia, h, q * cs + p * sn)).collect())
    };
    let mut acc = vec![C64::new(0.0, 0.0); qp.len()];
    for chunk in thetas.chunks(16) {
        let parts = chunk.par_iter().map(|&t| per_angle(t)).collect::<Result<Vec<_>>>()?;
        for part in parts {
            for (a, v) in acc.iter_mut().zip(part) {
                *a += v;
            }
        }
    }
    let n2 = a2.len();
    let values = DMatrix::from_fn(a1.len(), n2, |i, j| acc[i * n2 + j] / THETA_POINTS as f64);
    let mut out = DistributionGrid::new(grid.coords, a1, a2, values)?;
    out.meta.insert("source".into(), "markov-kernel".into());
    out.meta.insert("lambda".into(), serde_json::json!([lambda.re, lambda.im]));
    out.meta.insert("theta_points".into(), THETA_POINTS.into());
    out.meta.insert("lattice_step".into(), h.into());
    out.meta.insert("density_half_width".into(), width.into());
    out.meta.insert("kernel_path".into(), (if lambda.im == 0.0 { "closed-form" } else { "series" }).into());
    if let Some((w, checked)) = cross_check {
        out.meta.insert("series_cross_check".into(), w.into());
        out.meta.insert("series_cross_check_points".into(), checked.into());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// λ shifts

fn check_pair(lambda: f64, lambda_prime: f64) -> Result<()> {
    for l in [lambda, lambda_prime] {
        if !(l > -1.0 && l < 1.0) {
            return Err(Error::Domain(format!("lambda = {l} must lie in (-1, 1)")));
        }
    }
    if !(lambda_prime > lambda) {
        return Err(Error::Domain(format!(
            "the Gaussian shift needs lambda' > lambda, got lambda = {lambda}, lambda' = {lambda_prime}"
        )));
    }
    Ok(())
}

/// `(λ' - λ)/((1 - λ')(1 - λ))`, the variance per axis of the shift kernel.
pub fn shift_variance(lambda: f64, lambda_prime: f64) -> f64 {
    (lambda_prime - lambda) / ((1.0 - lambda_prime) * (1.0 - lambda))
}

/// `g_{λ,λ'}(q, p) = (c/2π) e^{-c (q^2 + p^2)/2}` with `c = (1-λ')(1-λ)/(λ'-λ)`.
pub fn gaussian_shift_kernel(lambda: f64, lambda_prime: f64, q: f64, p: f64) -> Result<f64> {
    check_pair(lambda, lambda_prime)?;
    let c = 1.0 / shift_variance(lambda, lambda_prime);
    Ok(c / (2.0 * PI) * (-0.5 * c * (q * q + p * p)).exp())
}

/// `ĝ_{λ,λ'}(u, v) = e^{-s (u^2 + v^2)/2} / 2π` with `s` the kernel variance.
pub fn shift_transfer(lambda: f64, lambda_prime: f64, u: f64, v: f64) -> Result<f64> {
    check_pair(lambda, lambda_prime)?;
    Ok((-0.5 * shift_variance(lambda, lambda_prime) * (u * u + v * v)).exp() / (2.0 * PI))
}

/// Index ranges (inclusive) of the part of a shifted grid more than five kernel widths from the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Interior {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Interior {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.rows.0..=self.rows.1).contains(&i) && (self.cols.0..=self.cols.1).contains(&j)
    }
}

#[derive(Debug, Clone)]
pub struct ShiftResult {
    pub grid: DistributionGrid,
    pub interior: Interior,
    /// Frequencies zeroed by the deconvolution cutoff.
    pub discarded_frequencies: usize,
    /// Radius `|ω|` beyond which frequencies were zeroed, if any were.
    pub cutoff: Option<f64>,
}

fn uniform(axis: &[f64], name: &str) -> Result<f64> {
    if axis.len() < 2 {
        return Err(Error::Domain(format!("axis {name} needs at least two points")));
    }
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if axis.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(Error::Domain(format!("axis {name} must be equispaced")));
    }
    Ok(h)
}

fn interior(grid: &DistributionGrid, sigma: f64) -> Result<Interior> {
    let h1 = uniform(&grid.axis1, "q")?;
    let h2 = uniform(&grid.axis2, "p")?;
    let m1 = (MARGIN_SIGMAS * sigma / h1).ceil() as usize;
    let m2 = (MARGIN_SIGMAS * sigma / h2).ceil() as usize;
    let (n1, n2) = grid.values.shape();
    if 2 * m1 >= n1 || 2 * m2 >= n2 {
        return Err(Error::Domain(format!(
            "insufficient margin: the grid must extend {MARGIN_SIGMAS} standard deviations ({:.4}) of the shift \
             kernel beyond the region of interest on every side",
            MARGIN_SIGMAS * sigma
        )));
    }
    Ok(Interior { rows: (m1, n1 - 1 - m1), cols: (m2, n2 - 1 - m2) })
}

/// 2-D transform of `data` (row-major `p1 x p2`) in place.
fn fft2(data: &mut [C64], p1: usize, p2: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (f1, f2) = if inverse {
        (planner.plan_fft_inverse(p2), planner.plan_fft_inverse(p1))
    } else {
        (planner.plan_fft_forward(p2), planner.plan_fft_forward(p1))
    };
    data.par_chunks_mut(p2).for_each(|row| f1.process(row));
    let mut cols: Vec<Vec<C64>> = (0..p2).map(|j| (0..p1).map(|i| data[i * p2 + j]).collect()).collect();
    cols.par_iter_mut().for_each(|c| f2.process(c));
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[i * p2 + j] = *v;
        }
    }
}

fn freq(k: usize, p: usize, h: f64) -> f64 {
    let kk = if k < p.div_ceil(2) { k as f64 } else { k as f64 - p as f64 };
    2.0 * PI * kk / (p as f64 * h)
}

struct Spectrum {
    data: Vec<C64>,
    p1: usize,
    p2: usize,
    h1: f64,
    h2: f64,
}

impl Spectrum {
    fn of(grid: &DistributionGrid) -> Result<Spectrum> {
        let h1 = uniform(&grid.axis1, "q")?;
        let h2 = uniform(&grid.axis2, "p")?;
        let (n1, n2) = grid.values.shape();
        // zero padding to double size keeps the Gaussian from wrapping around
        let (p1, p2) = (2 * n1, 2 * n2);
        let mut data = vec![C64::new(0.0, 0.0); p1 * p2];
        for i in 0..n1 {
            for j in 0..n2 {
                data[i * p2 + j] = grid.values[(i, j)];
            }
        }
        fft2(&mut data, p1, p2, false);
        Ok(Spectrum { data, p1, p2, h1, h2 })
    }

    fn omega2(&self, idx: usize) -> f64 {
        let (i, j) = (idx / self.p2, idx % self.p2);
        let u = freq(i, self.p1, self.h1);
        let v = freq(j, self.p2, self.h2);
        u * u + v * v
    }

    fn back(mut self, like: &DistributionGrid) -> Result<DistributionGrid> {
        fft2(&mut self.data, self.p1, self.p2, true);
        let (n1, n2) = like.values.shape();
        let norm = (self.p1 * self.p2) as f64;
        let values = DMatrix::from_fn(n1, n2, |i, j| self.data[i * self.p2 + j] / norm);
        DistributionGrid::new(like.coords, like.axis1.clone(), like.axis2.clone(), values)
    }
}

fn check_cartesian(grid: &DistributionGrid) -> Result<()> {
    if grid.coords != Coords::Cartesian {
        return Err(Error::Domain("λ shifts act on cartesian (q, p) grids".into()));
    }
    Ok(())
}

fn annotate(out: &mut DistributionGrid, from: f64, to: f64, interior: &Interior, cutoff: Option<f64>, dropped: usize) {
    out.meta.insert("lambda_from".into(), from.into());
    out.meta.insert("lambda_to".into(), to.into());
    out.meta.insert("interior".into(), serde_json::to_value(interior).unwrap_or_default());
    out.meta.insert("regularization_cutoff".into(), serde_json::to_value(cutoff).unwrap_or_default());
    out.meta.insert("discarded_frequencies".into(), dropped.into());
}

/// `W^{λ'} = W^λ * g_{λ,λ'}` for `λ' > λ` by zero-padded spectral multiplication.
pub fn shift_lambda_forward(grid: &DistributionGrid, lambda: f64, lambda_prime: f64) -> Result<ShiftResult> {
    check_pair(lambda, lambda_prime)?;
    check_cartesian(grid)?;
    let s = shift_variance(lambda, lambda_prime);
    let interior = interior(grid, s.sqrt())?;
    let mut spec = Spectrum::of(grid)?;
    for idx in 0..spec.data.len() {
        let w2 = spec.omega2(idx);
        spec.data[idx] *= (-0.5 * s * w2).exp();
    }
    let mut out = spec.back(grid)?;
    out.meta = grid.meta.clone();
    annotate(&mut out, lambda, lambda_prime, &interior, None, 0);
    Ok(ShiftResult { grid: out, interior, discarded_frequencies: 0, cutoff: None })
}

/// `W^λ` from `W^{λ'}` (`λ < λ'`) by dividing the spectrum by the transfer of
/// `g_{λ,λ'}`. Frequencies where `1/ĝ > 1e8` are zeroed; the amplified spectrum
/// must have decayed to [`GATE_LEVEL`] of its peak near the cutoff.
pub fn shift_lambda_inverse(grid: &DistributionGrid, lambda_prime: f64, lambda: f64) -> Result<ShiftResult> {
    check_pair(lambda, lambda_prime)?;
    check_cartesian(grid)?;
    let s = shift_variance(lambda, lambda_prime);
    let interior = interior(grid, s.sqrt())?;
    let mut spec = Spectrum::of(grid)?;
    // 1/ĝ = 2π e^{s ω²/2} <= 1e8
    let limit = 2.0 * (MAX_AMPLIFICATION / (2.0 * PI)).ln() / s;
    let nyquist2 = (PI / spec.h1).powi(2).min((PI / spec.h2).powi(2));
    let band_lo = 0.64 * limit.min(nyquist2);
    let mut dropped = 0;
    let mut peak: f64 = 0.0;
    let mut band: (f64, f64) = (0.0, 0.0);
    for idx in 0..spec.data.len() {
        let w2 = spec.omega2(idx);
        if w2 > limit {
            spec.data[idx] = C64::new(0.0, 0.0);
            dropped += 1;
            continue;
        }
        spec.data[idx] *= (0.5 * s * w2).exp();
        let m = spec.data[idx].norm();
        peak = peak.max(m);
        if w2 >= band_lo && m > band.0 {
            band = (m, w2.sqrt());
        }
    }
    if band.0 > GATE_LEVEL * peak {
        return Err(Error::IllConditioned(format!(
            "deconvolution from lambda' = {lambda_prime} to lambda = {lambda} amplifies the spectrum to {:.3e} of its \
             peak at |omega| = {:.4}; the deconvolved spectrum is not absolutely summable on this grid",
            band.0 / peak,
            band.1
        )));
    }
    let cutoff = (dropped > 0).then(|| limit.sqrt());
    let mut out = spec.back(grid)?;
    out.meta = grid.meta.clone();
    annotate(&mut out, lambda_prime, lambda, &interior, cutoff, dropped);
    Ok(ShiftResult { grid: out, interior, discarded_frequencies: dropped, cutoff })
}
