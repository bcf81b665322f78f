//! Reconstruction from quadrature distributions: Dawson-derivative moments,
//! the full and finite-angle reconstruction formulas, and the binomial
//! inversion they rest on.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rug::{Complex, Float};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{QuadratureDataset, RadialProfile};
use crate::quadrature::GaussHermiteMp;
use crate::report::ReconstructionReport;
use crate::specfun::{self, log_factorial, mp};
use crate::states::DensityMatrix;

/// Largest reconstruction dimension accepted by default.
pub const DEFAULT_DIM_CAP: usize = 64;
/// Tolerance advertised for closed-form inputs.
pub const EXACT_TOLERANCE: f64 = 1e-8;
/// Tolerance advertised once any component comes from interpolated samples.
pub const SAMPLED_TOLERANCE: f64 = 1e-4;

const LN2: f64 = std::f64::consts::LN_2;

/// `c_ln(k) = <n| Y^(k+2l)(Q) |n+k>`, zero for `n > l`.
pub fn c_coefficient(l: u64, n: u64, k: u64) -> f64 {
    if n > l {
        return 0.0;
    }
    let ln = (0.5 * k as f64 + l as f64) * LN2 + log_factorial(k + l)
        + 0.5 * (log_factorial(n) - log_factorial(n + k))
        + specfun::log_binomial(l, n);
    let s = if (l + n + k) % 2 == 1 { -1.0 } else { 1.0 };
    s * ln.exp()
}

/// `sum_{n<=l} c_ln(k) rho_{n+k,n}`, the moment a state must produce.
pub fn analytic_moment(rho: &DensityMatrix, k: usize, l: usize) -> C64 {
    (0..=l)
        .map(|n| rho.get(n + k, n) * c_coefficient(l as u64, n as u64, k as u64))
        .sum()
}

fn log2_abs(x: &Float) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let (m, e) = x.to_f64_exp();
    m.abs().log2() + e as f64
}

/// Upper estimate of `log2 sup |Y^(j)|`, from `|Y^(2p)(0)| = 2 4^p p!`.
fn log2_sup_y(j: usize) -> f64 {
    2.0 + j as f64 + log_factorial(j as u64 / 2 + 1) / LN2
}

/// Quadrature size and working precision for a set of moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MomentPlan {
    pub nodes: usize,
    pub prec: u32,
}

impl MomentPlan {
    /// Rule size for derivative orders up to `jmax` at `prec` bits: the
    /// Gauss–Hermite error starts falling near `4 jmax` nodes and then gains
    /// a little over one bit per node.
    pub fn for_orders(jmax: usize, prec: u32) -> MomentPlan {
        let nodes = (4 * jmax + (prec as f64 / 1.2).ceil() as usize).max(200);
        MomentPlan { nodes, prec }
    }

    /// Plan for moments up to derivative order `jmax`, with enough bits to absorb
    /// the cancellation against `sup |Y^(jmax)|`.
    pub fn for_moments(jmax: usize) -> MomentPlan {
        let prec = ((log2_sup_y(jmax) + 96.0).ceil() as u32).max(128);
        Self::for_orders(jmax, prec)
    }

    /// Plan for reconstructing every `rho_{n+k,n}` with `n <= lmax[k]`.
    /// The precision covers the cancellation of the binomial sums.
    pub fn for_reconstruction(lmax: &[Option<usize>]) -> MomentPlan {
        let mut worst: f64 = 0.0;
        let mut jmax = 0;
        for (k, lm) in lmax.iter().enumerate() {
            let Some(lm) = *lm else { continue };
            jmax = jmax.max(k + 2 * lm);
            for n in 0..=lm {
                let pre = 0.5 * (log_factorial((n + k) as u64) - log_factorial(n as u64)) / LN2 - 0.5 * k as f64;
                let terms: Vec<f64> = (0..=n)
                    .map(|l| {
                        specfun::log_binomial(n as u64, l as u64) / LN2 + log2_sup_y(k + 2 * l)
                            - l as f64
                            - log_factorial((k + l) as u64) / LN2
                    })
                    .collect();
                let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum = top + terms.iter().map(|t| (t - top).exp2()).sum::<f64>().log2();
                worst = worst.max(pre + sum);
            }
        }
        let prec = ((worst + 96.0).ceil() as u32).max(128);
        Self::for_orders(jmax, prec)
    }

    pub fn doubled(self) -> MomentPlan {
        MomentPlan { nodes: 2 * self.nodes, prec: self.prec }
    }
}

/// Moments `W_{k,l} = int Y^(k+2l)(x) W_k(x) dx` for a set of components.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub plan: MomentPlan,
    /// Largest |node| of the rule.
    pub x_range: f64,
    /// Nodes dropped because their contribution is below the working precision.
    pub skipped_nodes: usize,
    entries: Vec<Vec<(Float, Float)>>,
    failures: Vec<Option<String>>,
}

const CHUNK: usize = 8;

impl MomentTable {
    /// Moments of `profiles[i]` for `l = 0..=lmax[i]` (skipped when `None`).
    /// Nodes are processed in parallel in fixed chunks and summed in node order,
    /// so the result does not depend on the thread count.
    pub fn compute(profiles: &[RadialProfile], lmax: &[Option<usize>], plan: MomentPlan) -> MomentTable {
        assert_eq!(profiles.len(), lmax.len());
        let prec = plan.prec;
        let rule = GaussHermiteMp::new(plan.nodes, prec);
        let jmax = profiles
            .iter()
            .zip(lmax)
            .filter_map(|(p, l)| l.map(|l| p.k() + 2 * l))
            .max()
            .unwrap_or(0);
        let active: Vec<usize> = (0..profiles.len()).filter(|&i| lmax[i].is_some()).collect();

        // component values and a magnitude per node
        type NodeValues = (Vec<Result<(Float, Float)>>, f64);
        let values: Vec<NodeValues> = rule
            .nodes
            .par_iter()
            .zip(&rule.total_weights)
            .map(|(x, w)| {
                let mut big = f64::NEG_INFINITY;
                let vals: Vec<Result<(Float, Float)>> = active
                    .iter()
                    .map(|&i| {
                        let v = profiles[i].eval_mp_or_f64(x);
                        if let Ok((re, im)) = &v {
                            big = big.max(log2_abs(re)).max(log2_abs(im));
                        }
                        v
                    })
                    .collect();
                (vals, big + log2_abs(w))
            })
            .collect();
        let mut failures: Vec<Option<String>> = vec![None; profiles.len()];
        for (vals, _) in &values {
            for (a, v) in active.iter().zip(vals) {
                if let (Err(e), None) = (v, &failures[*a]) {
                    failures[*a] = Some(e.to_string());
                }
            }
        }
        let top = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let cutoff = top - prec as f64 - 64.0;
        let skipped_nodes = values.iter().filter(|v| !(v.1 >= cutoff)).count();

        let layout: Vec<(usize, usize)> = active
            .iter()
            .enumerate()
            .flat_map(|(slot, &i)| (0..=lmax[i].unwrap()).map(move |l| (slot, l)))
            .collect();
        let zero = || (Float::new(prec), Float::new(prec));
        let partials: Vec<Vec<(Float, Float)>> = (0..rule.nodes.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc: Vec<(Float, Float)> = layout.iter().map(|_| zero()).collect();
                for &node in chunk {
                    let (vals, mag) = &values[node];
                    if !(*mag >= cutoff) {
                        continue;
                    }
                    let x = &rule.nodes[node];
                    let w = &rule.total_weights[node];
                    let y = mp::y_derivatives(jmax, x, prec);
                    let wv: Vec<Option<(Float, Float)>> = vals
                        .iter()
                        .map(|v| {
                            v.as_ref().ok().map(|(re, im)| {
                                (Float::with_val(prec, re * w), Float::with_val(prec, im * w))
                            })
                        })
                        .collect();
                    for (slot_acc, &(slot, l)) in acc.iter_mut().zip(&layout) {
                        if let Some((re, im)) = &wv[slot] {
                            let yj = &y[profiles[active[slot]].k() + 2 * l];
                            slot_acc.0 += Float::with_val(prec, re * yj);
                            slot_acc.1 += Float::with_val(prec, im * yj);
                        }
                    }
                }
                acc
            })
            .collect();

        let mut flat: Vec<(Float, Float)> = layout.iter().map(|_| zero()).collect();
        for part in partials {
            for (a, p) in flat.iter_mut().zip(part) {
                a.0 += p.0;
                a.1 += p.1;
            }
        }
        let mut entries: Vec<Vec<(Float, Float)>> = vec![Vec::new(); profiles.len()];
        for ((slot, _), v) in layout.iter().zip(flat) {
            entries[active[*slot]].push(v);
        }
        let x_range = rule.nodes.last().map(|v| v.to_f64().abs()).unwrap_or(0.0);
        MomentTable { plan, x_range, skipped_nodes, entries, failures }
    }

    pub fn get_mp(&self, i: usize, l: usize) -> Option<&(Float, Float)> {
        if self.failures.get(i)?.is_some() {
            return None;
        }
        self.entries.get(i)?.get(l)
    }

    pub fn get(&self, i: usize, l: usize) -> Option<C64> {
        self.get_mp(i, l).map(|(re, im)| C64::new(re.to_f64(), im.to_f64()))
    }

    /// Why the moments of component `i` could not be computed, if they could not.
    pub fn failure(&self, i: usize) -> Option<&str> {
        self.failures.get(i)?.as_deref()
    }
}

/// `W_{k,l} = int Y^(k+2l)(x) W_k(x) dx` for one quadrature component.
pub fn quad_moment(profile: &RadialProfile, l: usize) -> Result<C64> {
    let plan = MomentPlan::for_moments(profile.k() + 2 * l);
    let t = MomentTable::compute(std::slice::from_ref(profile), &[Some(l)], plan);
    if let Some(e) = t.failure(0) {
        return Err(Error::Domain(format!("moment (k={}, l={l}) could not be evaluated: {e}", profile.k())));
    }
    Ok(t.get(0, l).expect("moment computed"))
}

/// Applies the reconstruction formula to a moment table; `None` marks failed components.
fn assemble(table: &MomentTable, ks: &[usize], lmax: &[Option<usize>], dim: usize) -> DMatrix<Option<C64>> {
    let prec = table.plan.prec;
    let mut out = DMatrix::from_element(dim, dim, None);
    for (i, &k) in ks.iter().enumerate() {
        let Some(lm) = lmax[i] else { continue };
        if table.failure(i).is_some() {
            continue;
        }
        for n in 0..=lm {
            if n + k >= dim {
                break;
            }
            let mut re = Float::new(prec);
            let mut im = Float::new(prec);
            for l in 0..=n {
                let (wr, wi) = table.get_mp(i, l).expect("moment present");
                let c = mp::binomial(prec, n as i64, l as i64)
                    / (Float::with_val(prec, Float::i_exp(1, l as i32)) * mp::factorial(prec, (k + l) as u32));
                re += Float::with_val(prec, wr * &c);
                im += Float::with_val(prec, wi * &c);
            }
            let pre = Float::with_val(
                prec,
                mp::factorial(prec, (n + k) as u32)
                    / (mp::factorial(prec, n as u32) * Float::with_val(prec, Float::i_exp(1, k as i32))),
            )
            .sqrt();
            let s = if k % 2 == 1 { -1.0 } else { 1.0 };
            let v = C64::new((re * &pre).to_f64() * s, (im * &pre).to_f64() * s);
            out[(n + k, n)] = Some(v);
            if k > 0 {
                out[(n, n + k)] = Some(v.conj());
            }
        }
    }
    out
}

struct Pipeline<'a> {
    method: &'static str,
    profiles: Vec<RadialProfile>,
    lmax: Vec<Option<usize>>,
    dim: usize,
    assumptions: Vec<String>,
    extra: Vec<(&'a str, serde_json::Value)>,
}

fn run(p: Pipeline) -> Result<ReconstructionReport> {
    let ks: Vec<usize> = p.profiles.iter().map(|q| q.k()).collect();
    let plan = MomentPlan::for_reconstruction(&p.lmax);
    let coarse = MomentTable::compute(&p.profiles, &p.lmax, plan);
    let fine = MomentTable::compute(&p.profiles, &p.lmax, plan.doubled());
    let a = assemble(&coarse, &ks, &p.lmax, p.dim);
    let b = assemble(&fine, &ks, &p.lmax, p.dim);

    let sampled = p.profiles.iter().any(|q| !q.is_closed_form());
    let tol = if sampled { SAMPLED_TOLERANCE } else { EXACT_TOLERANCE };
    let zero = C64::new(0.0, 0.0);
    let matrix = DMatrix::from_fn(p.dim, p.dim, |i, j| b[(i, j)].unwrap_or(zero));
    let residuals = DMatrix::from_fn(p.dim, p.dim, |i, j| match (a[(i, j)], b[(i, j)]) {
        (Some(u), Some(v)) => (u - v).norm(),
        _ => f64::INFINITY,
    });
    let mut report = ReconstructionReport::new(p.method, matrix, residuals.clone(), tol)?;
    for i in 0..p.dim {
        for j in 0..p.dim {
            let k = i.abs_diff(j);
            let slot = ks.iter().position(|&kk| kk == k);
            if b[(i, j)].is_none() {
                let why = slot
                    .and_then(|s| fine.failure(s).map(str::to_string))
                    .unwrap_or_else(|| "component not provided".to_string());
                report.flag(i, j, format!("moment evaluation failed: {why}"));
            } else if residuals[(i, j)] > tol {
                report.flag(i, j, format!("doubled-node residual {:e} exceeds {tol:e}", residuals[(i, j)]));
            }
        }
    }
    if sampled {
        report.assumptions.push(
            "components interpolated from samples by cubic splines; interpolation error dominates".into(),
        );
    }
    report.assumptions.extend(p.assumptions);
    report.note("moment_nodes", plan.nodes);
    report.note("residual_nodes", plan.doubled().nodes);
    report.note("precision_bits", plan.prec);
    report.note("x_range", fine.x_range);
    report.note("skipped_nodes", fine.skipped_nodes);
    report.note("max_derivative_order", ks.iter().zip(&p.lmax).filter_map(|(k, l)| l.map(|l| k + 2 * l)).max());
    report.note("components", ks.len());
    for (key, v) in p.extra {
        report.diagnostics.insert(key.to_string(), v);
    }
    Ok(report)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > DEFAULT_DIM_CAP {
        return Err(Error::Domain(format!("reconstruction dim {dim} must lie in 1..={DEFAULT_DIM_CAP}")));
    }
    Ok(())
}

/// Reconstructs `rho_{n+k,n}` for `n + k < dim` from the components `k -> W^qd_k`.
/// Failed components are flagged per element rather than aborting.
pub fn reconstruct_full(provider: impl Fn(usize) -> Result<RadialProfile>, dim: usize) -> Result<ReconstructionReport> {
    check_dim(dim)?;
    let mut profiles = Vec::with_capacity(dim);
    let mut lmax = Vec::with_capacity(dim);
    let mut provider_errors = Vec::new();
    for k in 0..dim {
        match provider(k) {
            Ok(p) if p.k() == k => {
                profiles.push(p);
                lmax.push(Some(dim - 1 - k));
            }
            Ok(p) => {
                return Err(Error::Precondition(format!("provider returned component {} for k = {k}", p.k())));
            }
            Err(e) => {
                provider_errors.push((k, e.to_string()));
                profiles.push(RadialProfile::Zero { k });
                lmax.push(None);
            }
        }
    }
    let mut report = run(Pipeline {
        method: "quadrature-full",
        profiles,
        lmax,
        dim,
        assumptions: Vec::new(),
        extra: Vec::new(),
    })?;
    for (k, e) in provider_errors {
        for n in 0..dim - k {
            report.flags.retain(|f| !((f.row, f.col) == (n + k, n) || (f.row, f.col) == (n, n + k)));
            report.flag(n + k, n, format!("component k={k} unavailable: {e}"));
            if k > 0 {
                report.flag(n, n + k, format!("component k={k} unavailable: {e}"));
            }
        }
    }
    Ok(report)
}

/// Convenience: full reconstruction from the exact components of `rho`.
pub fn reconstruct_from_state(rho: &Arc<DensityMatrix>, dim: usize) -> Result<ReconstructionReport> {
    reconstruct_full(|k| Ok(RadialProfile::Quadrature { rho: rho.clone(), k }), dim)
}

/// `(1/p) sum_t e^{ik theta_t} W^qd(x, theta_t)` over the equispaced angles of `dataset`.
pub fn finite_angle_component(dataset: &QuadratureDataset, k: usize, x: f64) -> Result<C64> {
    dataset.finite_angle_component(k, x)
}

pub const FINITE_ASSUMPTION: &str =
    "state assumed to satisfy rho_mn = 0 for m, n >= p; quadrature data at p angles cannot confirm this";

/// `p x p` reconstruction from the `p` equispaced quadratures of `dataset`.
pub fn reconstruct_finite(dataset: Arc<QuadratureDataset>) -> Result<ReconstructionReport> {
    let p = dataset.equispaced_p()?;
    check_dim(p)?;
    let profiles: Vec<RadialProfile> =
        (0..p).map(|k| RadialProfile::FiniteAngle { dataset: dataset.clone(), k }).collect();
    let lmax = (0..p).map(|k| Some(p - 1 - k)).collect();
    let mut report = run(Pipeline {
        method: "quadrature-finite",
        profiles,
        lmax,
        dim: p,
        assumptions: vec![FINITE_ASSUMPTION.to_string()],
        extra: vec![("angles", serde_json::json!(p))],
    })?;
    if p % 2 == 0 {
        // W(x, θ + π) = W(-x, θ): only p/2 of the angles are independent, and the
        // average for k also picks up rho_{n+k-p,n}, whose moments survive the parity rule
        for k in 1..p {
            for n in 0..p - k {
                let why = format!("even p: component k={k} is mixed with the conjugate of component {}", p - k);
                report.flag(n + k, n, why.clone());
                report.flag(n, n + k, why);
            }
        }
        report.assumptions.push(format!(
            "with p = {p} even, angles theta and theta + pi carry the same quadrature; off-diagonal elements are not determined"
        ));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// binomial inversion

/// `y_l = sum_{n<=l} (-1)^n C(l, n) x_n`.
pub fn binomial_forward(x: &[C64]) -> Vec<C64> {
    binomial_invert(x)
}

/// `x_n = sum_{l<=n} (-1)^l C(n, l) y_l`; the transform is its own inverse.
/// Sums are formed in extended precision and rounded once.
pub fn binomial_invert(y: &[C64]) -> Vec<C64> {
    let prec = 128 + 2 * y.len() as u32;
    let ym: Vec<Complex> = y.iter().map(|v| Complex::with_val(prec, (v.re, v.im))).collect();
    binomial_invert_mp(&ym)
        .iter()
        .map(|v| C64::new(v.real().to_f64(), v.imag().to_f64()))
        .collect()
}

/// Extended-precision transform at the precision of the inputs.
pub fn binomial_invert_mp(y: &[Complex]) -> Vec<Complex> {
    let prec = y.iter().map(|v| v.prec().0).max().unwrap_or(64);
    (0..y.len())
        .map(|n| {
            let mut s = Complex::new(prec);
            for (l, yl) in y.iter().enumerate().take(n + 1) {
                let b = mp::binomial(prec, n as i64, l as i64);
                if l % 2 == 1 {
                    s -= Complex::with_val(prec, yl * &b);
                } else {
                    s += Complex::with_val(prec, yl * &b);
                }
            }
            s
        })
        .collect()
}

/// Outcome of the inverse series for one test sequence.
#[derive(Debug, Clone, Serialize)]
pub struct PathologyCase {
    pub label: String,
    /// Partial sums of the inverse series for `x_0`.
    pub partial_sums: Vec<f64>,
    /// Spread of the last partial sums; zero when they settle.
    pub oscillation: f64,
    pub converged: bool,
    /// Limits of the inverse series for `x_0..x_{len-1}` when they converge.
    pub inverse: Vec<f64>,
    /// `max |inverse_n - x_n|` when the series converge.
    pub mismatch: f64,
    pub verdict: String,
}

/// The banded pair `a = I + S`, `b = sum_j (-S)^j` on a finite window.
#[derive(Debug, Clone, Serialize)]
pub struct FormalInverseDemo {
    pub window: usize,
    /// `max |(ab - I)_{lm}|` over the top-left block, where the products are finite sums.
    pub formal_inverse_defect: f64,
    pub cases: Vec<PathologyCase>,
}

const DEMO_WINDOW: usize = 64;
const DEMO_HEAD: usize = 8;

fn pathology_case(label: &str, x: impl Fn(usize) -> f64) -> PathologyCase {
    // y_l = x_l + x_{l+1}; inverse x_n = sum_{l>=n} (-1)^{l-n} y_l
    let y = |l: usize| x(l) + x(l + 1);
    let partial = |n: usize| -> Vec<f64> {
        let mut s = 0.0;
        (n..n + DEMO_WINDOW)
            .map(|l| {
                s += if (l - n) % 2 == 1 { -y(l) } else { y(l) };
                s
            })
            .collect()
    };
    let ps = partial(0);
    let tail = &ps[ps.len() - 8..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let oscillation = hi - lo;
    let converged = oscillation < 1e-12;
    let inverse: Vec<f64> = if converged {
        (0..DEMO_HEAD).map(|n| *partial(n).last().unwrap()).collect()
    } else {
        Vec::new()
    };
    let mismatch = inverse.iter().enumerate().map(|(n, v)| (v - x(n)).abs()).fold(0.0, f64::max);
    let verdict = if !converged {
        "divergent"
    } else if mismatch > 1e-12 {
        "converges to the wrong limit"
    } else {
        "recovered"
    };
    PathologyCase {
        label: label.to_string(),
        partial_sums: ps.into_iter().take(DEMO_HEAD).collect(),
        oscillation,
        converged,
        inverse,
        mismatch,
        verdict: verdict.to_string(),
    }
}

/// Demonstrates that a formal inverse need not invert: `x = 1` gives a divergent
/// inverse series, `x = (-1)^n` converges to zero instead of `x`, and a null
/// sequence is recovered.
pub fn formal_inverse_demo() -> FormalInverseDemo {
    let w = 16;
    let a = |l: usize, m: usize| if m == l || m == l + 1 { 1.0 } else { 0.0 };
    let b = |n: usize, m: usize| {
        if m < n {
            0.0
        } else if (m - n) % 2 == 1 {
            -1.0
        } else {
            1.0
        }
    };
    let mut defect: f64 = 0.0;
    for l in 0..w {
        for m in 0..w {
            // a is banded, so each product is a finite sum
            let ab: f64 = (l..=l + 1).map(|n| a(l, n) * b(n, m)).sum();
            let ba: f64 = (l..=m).map(|n| b(l, n) * a(n, m)).sum();
            let id = if l == m { 1.0 } else { 0.0 };
            defect = defect.max((ab - id).abs()).max((ba - id).abs());
        }
    }
    FormalInverseDemo {
        window: DEMO_WINDOW,
        formal_inverse_defect: defect,
        cases: vec![
            pathology_case("x_n = 1", |_| 1.0),
            pathology_case("x_n = (-1)^n", |n| if n % 2 == 1 { -1.0 } else { 1.0 }),
            pathology_case("x_n = 2^-n", |n| (-(n as f64)).exp2()),
        ],
    }
}
