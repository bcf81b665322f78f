//! One angular Fourier component `t ↦ W_k(t)` of a distribution, either in
//! closed form (from a state) or sampled on a grid.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rug::Float;

use super::dataset::QuadratureDataset;
use crate::error::{Error, Result};
use crate::states::DensityMatrix;

/// Natural cubic spline through complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<C64>,
    m: Vec<C64>,
}

impl CubicSpline {
    pub fn natural(x: Vec<f64>, y: Vec<C64>) -> Result<CubicSpline> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::Domain("spline needs at least 3 points and matching values".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("spline abscissae must be finite and strictly increasing".into()));
        }
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Domain("spline values must be finite".into()));
        }
        // tridiagonal system for the second derivatives, m_0 = m_{n-1} = 0
        let mut diag = vec![0.0; n];
        let mut rhs = vec![C64::new(0.0, 0.0); n];
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        diag[0] = 1.0;
        diag[n - 1] = 1.0;
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            sub[i] = h0 / 6.0;
            diag[i] = (h0 + h1) / 3.0;
            sup[i] = h1 / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        }
        for i in 1..n {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            let r = rhs[i - 1] * w;
            rhs[i] -= r;
        }
        let mut m = vec![C64::new(0.0, 0.0); n];
        m[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = (rhs[i] - m[i + 1] * sup[i]) / diag[i];
        }
        Ok(CubicSpline { x, y, m })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[C64] {
        &self.y
    }

    /// Value at `t`, or `None` outside the knot range.
    pub fn eval(&self, t: f64) -> Option<C64> {
        let (lo, hi) = self.range();
        if !(t >= lo && t <= hi) {
            return None;
        }
        let i = match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return Some(self.y[i]),
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        Some(
            self.y[i] * a
                + self.y[i + 1] * b
                + (self.m[i] * (a * a * a - a) + self.m[i + 1] * (b * b * b - b)) * (h * h / 6.0),
        )
    }
}

/// Sampled profile: a spline through at least 64 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProfile {
    pub k: usize,
    spline: CubicSpline,
    /// Whether the outer sample values are negligible, so the profile may be
    /// continued by zero outside the grid.
    pub decays: bool,
}

pub const MIN_SAMPLES: usize = 64;

impl SampledProfile {
    pub fn new(k: usize, grid: Vec<f64>, values: Vec<C64>) -> Result<SampledProfile> {
        if grid.len() < MIN_SAMPLES {
            return Err(Error::Domain(format!(
                "sampled profile needs at least {MIN_SAMPLES} points, got {}",
                grid.len()
            )));
        }
        let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let first = grid[0];
        let last = grid[grid.len() - 1];
        let small = |v: C64| v.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE);
        let decays = small(values[values.len() - 1]) && (first == 0.0 || small(values[0]));
        if !(last > 0.0) {
            return Err(Error::Domain("sampled profile grid must extend to positive values".into()));
        }
        let spline = CubicSpline::natural(grid, values)?;
        Ok(SampledProfile { k, spline, decays })
    }

    pub fn range(&self) -> (f64, f64) {
        self.spline.range()
    }

    pub fn grid(&self) -> &[f64] {
        self.spline.knots()
    }

    pub fn values(&self) -> &[C64] {
        self.spline.values()
    }

    pub fn eval(&self, t: f64) -> Result<C64> {
        match self.spline.eval(t) {
            Some(v) => Ok(v),
            None if self.decays => Ok(C64::new(0.0, 0.0)),
            None => {
                let (lo, hi) = self.range();
                Err(Error::Domain(format!(
                    "point {t} lies outside the sampled range [{lo}, {hi}] of a profile that does not decay"
                )))
            }
        }
    }
}

/// One angular Fourier component of a quadrature density or a λ-distribution.
#[derive(Debug, Clone)]
pub enum RadialProfile {
    /// `W^qd_k(x)` of a state, on the whole real line.
    Quadrature { rho: Arc<DensityMatrix>, k: usize },
    /// Discrete angular average of a finite quadrature dataset.
    FiniteAngle { dataset: Arc<QuadratureDataset>, k: usize },
    /// `W^λ_k(r)` of a state, on `r >= 0`.
    Lambda { rho: Arc<DensityMatrix>, lambda: C64, k: usize },
    Sampled(SampledProfile),
    Zero { k: usize },
}

impl RadialProfile {
    pub fn k(&self) -> usize {
        match self {
            RadialProfile::Quadrature { k, .. }
            | RadialProfile::FiniteAngle { k, .. }
            | RadialProfile::Lambda { k, .. }
            | RadialProfile::Zero { k } => *k,
            RadialProfile::Sampled(s) => s.k,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RadialProfile::Sampled(_) => "sampled",
            RadialProfile::FiniteAngle { dataset, .. } if !dataset.is_closed_form() => "sampled",
            _ => "closed-form",
        }
    }

    pub fn is_closed_form(&self) -> bool {
        self.kind() == "closed-form"
    }

    pub fn eval(&self, t: f64) -> Result<C64> {
        match self {
            RadialProfile::Quadrature { rho, k } => Ok(super::quad_fourier_component(rho, *k, t)),
            RadialProfile::FiniteAngle { dataset, k } => dataset.finite_angle_component(*k, t),
            RadialProfile::Lambda { rho, lambda, k } => super::lambda_fourier_component(rho, *lambda, *k, t),
            RadialProfile::Sampled(s) => s.eval(t),
            RadialProfile::Zero { .. } => Ok(C64::new(0.0, 0.0)),
        }
    }

    /// Extended-precision value for closed-form profiles; `None` when only
    /// double-precision values exist.
    pub fn eval_mp(&self, t: &Float) -> Result<Option<(Float, Float)>> {
        let prec = t.prec();
        match self {
            RadialProfile::Quadrature { rho, k } => Ok(Some(super::quad_fourier_component_mp(rho, *k, t))),
            RadialProfile::FiniteAngle { dataset, k } => dataset.finite_angle_component_mp(*k, t),
            RadialProfile::Lambda { rho, lambda, k } if lambda.im == 0.0 => {
                let l = Float::with_val(prec, lambda.re);
                Ok(Some(super::lambda_fourier_component_mp(rho, &l, *k, t)))
            }
            RadialProfile::Lambda { .. } | RadialProfile::Sampled(_) => Ok(None),
            RadialProfile::Zero { .. } => Ok(Some((Float::new(prec), Float::new(prec)))),
        }
    }

    /// Value in extended precision, falling back to the double-precision value.
    pub fn eval_mp_or_f64(&self, t: &Float) -> Result<(Float, Float)> {
        if let Some(v) = self.eval_mp(t)? {
            return Ok(v);
        }
        let prec = t.prec();
        let v = self.eval(t.to_f64())?;
        Ok((Float::with_val(prec, v.re), Float::with_val(prec, v.im)))
    }

    /// Samples the profile on `grid` into a [`SampledProfile`].
    pub fn sample(&self, grid: &[f64]) -> Result<SampledProfile> {
        let v = grid.iter().map(|&t| self.eval(t)).collect::<Result<Vec<_>>>()?;
        SampledProfile::new(self.k(), grid.to_vec(), v)
    }
}
