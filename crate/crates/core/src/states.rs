//! Finite Fock-basis density matrices: construction, validation, truncation
//! and the JSON state format.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::log_factorial;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
pub const CAUCHY_SCHWARZ_TOL: f64 = 1e-12;
/// Default bound on the probability mass a constructor may discard.
pub const DEFAULT_MAX_TAIL: f64 = 1e-12;

/// Density matrix `rho_mn = <m|rho|n>` truncated to `dim` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: DMatrix<C64>,
    /// Trace mass removed by truncation before renormalization.
    pub discarded_tail: f64,
}

impl DensityMatrix {
    /// Wraps a square matrix without checking the state invariants.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Schema(format!(
                "density matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(DensityMatrix { m, discarded_tail: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    /// `rho_mn`; zero outside the stored block.
    pub fn get(&self, m: usize, n: usize) -> C64 {
        if m < self.dim() && n < self.dim() {
            self.m[(m, n)]
        } else {
            C64::new(0.0, 0.0)
        }
    }

    pub fn adjoint(&self) -> DensityMatrix {
        DensityMatrix { m: self.m.adjoint(), discarded_tail: self.discarded_tail }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn validate(&self) -> Diagnostics {
        validate(self)
    }

    pub fn to_json(&self) -> StateFile {
        let d = self.dim();
        StateFile {
            dim: d,
            re: (0..d).map(|i| (0..d).map(|j| self.m[(i, j)].re).collect()).collect(),
            im: (0..d).map(|i| (0..d).map(|j| self.m[(i, j)].im).collect()).collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// How the reader treats a matrix that breaks the state invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadPolicy {
    Reject,
    Warn,
}

/// On-disk state format: row-major `dim x dim` real and imaginary parts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StateFile {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl StateFile {
    /// Converts to a matrix after checking the array shapes.
    pub fn to_matrix(&self) -> Result<DMatrix<C64>> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::Schema("dim must be positive".into()));
        }
        if self.re.len() != d || self.im.len() != d {
            return Err(Error::Schema(format!("expected {d} rows in re and im")));
        }
        for (i, (r, m)) in self.re.iter().zip(&self.im).enumerate() {
            if r.len() != d || m.len() != d {
                return Err(Error::Schema(format!("row {i} must have {d} entries")));
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| C64::new(self.re[i][j], self.im[i][j]));
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Schema("non-finite matrix entry".into()));
        }
        Ok(m)
    }

    pub fn to_state(&self, policy: ReadPolicy) -> Result<(DensityMatrix, Vec<String>)> {
        let rho = DensityMatrix::from_matrix(self.to_matrix()?)?;
        let diag = rho.validate();
        let problems = diag.problems();
        if !problems.is_empty() && policy == ReadPolicy::Reject {
            return Err(Error::Schema(format!("invalid density matrix: {}", problems.join("; "))));
        }
        Ok((rho, problems))
    }
}

pub fn read_state_json(path: &Path, policy: ReadPolicy) -> Result<(DensityMatrix, Vec<String>)> {
    let s = std::fs::read_to_string(path)?;
    let f: StateFile = serde_json::from_str(&s)?;
    f.to_state(policy)
}

/// Invariant defects of a candidate density matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    /// `max |rho_mn - conj(rho_nm)|`
    pub hermiticity_defect: f64,
    /// `|tr rho - 1|`
    pub trace_defect: f64,
    /// Smallest eigenvalue of the Hermitian part.
    pub min_eigenvalue: f64,
    /// `max(|rho_mn|^2 - rho_mm rho_nn)`, floored at zero.
    pub cauchy_schwarz_violation: f64,
}

impl Diagnostics {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.hermiticity_defect <= HERMITIAN_TOL) {
            out.push(format!("not Hermitian (defect {:e})", self.hermiticity_defect));
        }
        if !(self.trace_defect <= TRACE_TOL) {
            out.push(format!("trace differs from 1 by {:e}", self.trace_defect));
        }
        if !(self.min_eigenvalue > -PSD_TOL) {
            out.push(format!("not positive semidefinite (min eigenvalue {:e})", self.min_eigenvalue));
        }
        if !(self.cauchy_schwarz_violation <= CAUCHY_SCHWARZ_TOL) {
            out.push(format!(
                "|rho_mn|^2 exceeds rho_mm rho_nn by {:e}",
                self.cauchy_schwarz_violation
            ));
        }
        out
    }

    pub fn passes(&self) -> bool {
        self.problems().is_empty()
    }
}

pub fn validate(rho: &DensityMatrix) -> Diagnostics {
    let m = rho.matrix();
    let d = rho.dim();
    let mut herm: f64 = 0.0;
    let mut cs: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            herm = herm.max((m[(i, j)] - m[(j, i)].conj()).norm());
            let v = m[(i, j)].norm_sqr() - m[(i, i)].re * m[(j, j)].re;
            cs = cs.max(v);
        }
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let min_eig = h
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Diagnostics {
        hermiticity_defect: herm,
        trace_defect: (m.trace() - C64::new(1.0, 0.0)).norm(),
        min_eigenvalue: min_eig,
        cauchy_schwarz_violation: cs.max(0.0),
    }
}

/// `|n><n|` in `dim` levels.
pub fn fock_state(dim: usize, n: usize) -> Result<DensityMatrix> {
    if n >= dim {
        return Err(Error::Domain(format!("Fock index {n} must be below dim {dim}")));
    }
    let mut m = DMatrix::zeros(dim, dim);
    m[(n, n)] = C64::new(1.0, 0.0);
    DensityMatrix::from_matrix(m)
}

/// `ln` of the Poisson weights `e^{-|a|^2} |a|^{2n} / n!`.
fn ln_poisson(a2: f64, n: usize) -> f64 {
    if a2 == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -a2 + n as f64 * a2.ln() - log_factorial(n as u64)
}

/// Photon-number mass of the coherent state `|alpha>` at levels `n >= dim`.
pub fn coherent_tail(dim: usize, alpha: C64) -> f64 {
    let a2 = alpha.norm_sqr();
    let mut sum = 0.0;
    let mut n = dim;
    loop {
        let t = ln_poisson(a2, n).exp();
        sum += t;
        if (n as f64) > a2 && t < 1e-20 * sum.max(1e-300) {
            break;
        }
        if t == 0.0 && (n as f64) > a2 {
            break;
        }
        n += 1;
    }
    sum
}

/// Coherent state `|alpha><alpha|` truncated to `dim` levels and renormalized.
/// Fails unless the discarded mass is below `1e-12`.
pub fn coherent_state(dim: usize, alpha: C64) -> Result<DensityMatrix> {
    coherent_state_truncated(dim, alpha, DEFAULT_MAX_TAIL)
}

/// As [`coherent_state`] with a caller-chosen bound on the discarded mass.
pub fn coherent_state_truncated(dim: usize, alpha: C64, max_tail: f64) -> Result<DensityMatrix> {
    if dim == 0 {
        return Err(Error::Domain("dim must be positive".into()));
    }
    let tail = coherent_tail(dim, alpha);
    if tail >= max_tail {
        let mut d = dim;
        while coherent_tail(d, alpha) >= max_tail {
            d += 1;
        }
        return Err(Error::Precondition(format!(
            "coherent state alpha = {alpha} loses mass {tail:e} beyond dim {dim}; \
             the smallest dim with tail below {max_tail:e} is {d}"
        )));
    }
    let a2 = alpha.norm_sqr();
    // amplitudes c_n = e^{-|a|^2/2} a^n / sqrt(n!)
    let c: Vec<C64> = (0..dim)
        .map(|n| {
            if alpha == C64::new(0.0, 0.0) {
                return if n == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            }
            let mag = (0.5 * ln_poisson(a2, n)).exp();
            C64::from_polar(mag, n as f64 * alpha.arg())
        })
        .collect();
    let norm: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    let m = DMatrix::from_fn(dim, dim, |i, j| c[i] * c[j].conj() / norm);
    Ok(DensityMatrix { m, discarded_tail: tail })
}

/// Diagonal state `(1 - lambda) lambda^n`, truncated and renormalized.
/// Fails unless the discarded mass `lambda^dim` is below `1e-12`.
pub fn thermal_klambda_state(dim: usize, lambda: f64) -> Result<DensityMatrix> {
    thermal_klambda_state_truncated(dim, lambda, DEFAULT_MAX_TAIL)
}

pub fn thermal_klambda_state_truncated(dim: usize, lambda: f64, max_tail: f64) -> Result<DensityMatrix> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Domain(format!("thermal parameter lambda = {lambda} must lie in [0, 1)")));
    }
    if dim == 0 {
        return Err(Error::Domain("dim must be positive".into()));
    }
    let tail = lambda.powi(dim as i32);
    if tail >= max_tail {
        let need = (max_tail.ln() / lambda.ln()).floor() as usize + 1;
        return Err(Error::Precondition(format!(
            "thermal state lambda = {lambda} loses mass {tail:e} beyond dim {dim}; \
             the smallest dim with tail below {max_tail:e} is {need}"
        )));
    }
    let p: Vec<f64> = (0..dim).map(|n| (1.0 - lambda) * lambda.powi(n as i32)).collect();
    let norm: f64 = p.iter().sum();
    let mut m = DMatrix::zeros(dim, dim);
    for (n, pn) in p.iter().enumerate() {
        m[(n, n)] = C64::new(pn / norm, 0.0);
    }
    Ok(DensityMatrix { m, discarded_tail: tail })
}

/// Random full-rank state `G G^† / tr(G G^†)` with a complex Gaussian `G`.
pub fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<DensityMatrix> {
    if dim == 0 {
        return Err(Error::Domain("dim must be positive".into()));
    }
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    let mut m = &g * g.adjoint();
    let tr = m.trace().re;
    m /= C64::new(tr, 0.0);
    // remove rounding asymmetry
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::from_matrix(m)
}

/// Renormalized leading `p x p` block.
pub fn truncate_normalize(rho: &DensityMatrix, p: usize) -> Result<DensityMatrix> {
    if p == 0 || p > rho.dim() {
        return Err(Error::Domain(format!("truncation size {p} must lie in 1..={}", rho.dim())));
    }
    let block = rho.matrix().view((0, 0), (p, p)).into_owned();
    let tr = block.trace().re;
    if tr == 0.0 {
        return Err(Error::Precondition(format!(
            "leading {p}x{p} block has zero trace; no normalized truncation exists"
        )));
    }
    if p == rho.dim() {
        return Ok(rho.clone());
    }
    Ok(DensityMatrix {
        m: block / C64::new(tr, 0.0),
        discarded_tail: tail_mass(rho, p),
    })
}

/// `sum_{n >= p} rho_nn`
pub fn tail_mass(rho: &DensityMatrix, p: usize) -> f64 {
    (p..rho.dim()).map(|n| rho.get(n, n).re).sum()
}
