//! Gauss–Hermite and generalized Gauss–Laguerre rules in double and in
//! arbitrary precision. Rules are built once per size and cached.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use rug::Float;

use crate::specfun::{log_factorial, mp};

/// Gauss–Hermite rule for `int e^{-x^2} f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    /// Standard weights (may underflow at the outermost nodes).
    pub weights: Vec<f64>,
    /// `ln(w_i e^{x_i^2})`, the weights for integrating an unweighted integrand.
    pub log_total_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Arc<GaussHermite> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(r) = cache.lock().unwrap().get(&n) {
            return r.clone();
        }
        let rule = Arc::new(build_hermite(n));
        cache.lock().unwrap().insert(n, rule.clone());
        rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `int e^{-x^2} f(x) dx`
    pub fn integrate_weighted(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// `int g(x) dx` for a Gaussian-decaying `g`, evaluating `g` directly at the nodes.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.log_total_weights)
            .map(|(&x, &lw)| {
                let v = g(x);
                if v == 0.0 {
                    0.0
                } else {
                    v.signum() * (v.abs().ln() + lw).exp()
                }
            })
            .sum()
    }
}

/// Generalized Gauss–Laguerre rule for `int_0^inf x^alpha e^{-x} f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussLaguerre {
    pub alpha: u32,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLaguerre {
    pub fn new(n: usize, alpha: u32) -> Arc<GaussLaguerre> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u32), Arc<GaussLaguerre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(r) = cache.lock().unwrap().get(&(n, alpha)) {
            return r.clone();
        }
        let rule = Arc::new(build_laguerre(n, alpha));
        cache.lock().unwrap().insert((n, alpha), rule.clone());
        rule
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn jacobi_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = off[i];
            m[(i + 1, i)] = off[i];
        }
    }
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

const RESCALE: f64 = 1e150;

/// Orthonormal Hermite polynomials `(p_n(x), p_{n-1}(x))` scaled by `e^{-s}`; returns `(p_n, p_{n-1}, s)`.
fn hermite_pair(n: usize, x: f64) -> (f64, f64, f64) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    let mut s = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
        if p1.abs() > RESCALE {
            p1 /= RESCALE;
            p2 /= RESCALE;
            s += RESCALE.ln();
        }
    }
    (p1, p2, s)
}

fn build_hermite(n: usize) -> GaussHermite {
    assert!(n >= 1);
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|i| (i as f64 / 2.0).sqrt()).collect();
    let seeds = jacobi_eigenvalues(&diag, &off);
    let mut nodes = Vec::with_capacity(n);
    let mut lw = Vec::with_capacity(n);
    let nf = n as f64;
    for &z0 in &seeds {
        let mut z = z0;
        for _ in 0..8 {
            let (p1, p2, _) = hermite_pair(n, z);
            let dz = p1 / ((2.0 * nf).sqrt() * p2);
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, p2, s) = hermite_pair(n, z);
        nodes.push(z);
        lw.push(z * z - nf.ln() - 2.0 * (p2.abs().ln() + s));
    }
    // enforce exact symmetry
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
        let w = 0.5 * (lw[i] + lw[n - 1 - i]);
        lw[i] = w;
        lw[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let weights = nodes.iter().zip(&lw).map(|(&x, &l)| (l - x * x).exp()).collect();
    GaussHermite { nodes, weights, log_total_weights: lw }
}

/// Laguerre `(L_n^a(x), L_{n-1}^a(x))` scaled by `e^{-s}`.
fn laguerre_pair(n: usize, alpha: f64, x: f64) -> (f64, f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    let mut s = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = ((2.0 * jf - 1.0 + alpha - x) * p2 - (jf - 1.0 + alpha) * p3) / jf;
        if p1.abs() > RESCALE {
            p1 /= RESCALE;
            p2 /= RESCALE;
            s += RESCALE.ln();
        }
    }
    (p1, p2, s)
}

fn build_laguerre(n: usize, alpha: u32) -> GaussLaguerre {
    assert!(n >= 1);
    let a = alpha as f64;
    let diag: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + a + 1.0).collect();
    let off: Vec<f64> = (1..n).map(|i| (i as f64 * (i as f64 + a)).sqrt()).collect();
    let seeds = jacobi_eigenvalues(&diag, &off);
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &z0 in &seeds {
        let mut z = z0;
        for _ in 0..8 {
            let (p1, p2, _) = laguerre_pair(n, a, z);
            let pp = (nf * p1 - (nf + a) * p2) / z;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs() {
                break;
            }
        }
        let (_, p2, s) = laguerre_pair(n, a, z);
        // w = Gamma(n+a+1) x / (n! (n+a)^2 L_{n-1}(x)^2)
        let lw = log_factorial((n + alpha as usize) as u64) - log_factorial(n as u64) + z.ln()
            - 2.0 * (nf + a).ln()
            - 2.0 * (p2.abs().ln() + s);
        nodes.push(z);
        weights.push(lw.exp());
    }
    GaussLaguerre { alpha, nodes, weights }
}

// ---------------------------------------------------------------------------
// arbitrary precision

/// Gauss–Hermite rule at `prec` bits, with total weights `w_i e^{x_i^2}` for
/// integrating unweighted Gaussian-decaying integrands.
#[derive(Debug)]
pub struct GaussHermiteMp {
    pub prec: u32,
    pub nodes: Vec<Float>,
    pub total_weights: Vec<Float>,
}

impl GaussHermiteMp {
    pub fn new(n: usize, prec: u32) -> Arc<GaussHermiteMp> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u32), Arc<GaussHermiteMp>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(r) = cache.lock().unwrap().get(&(n, prec)) {
            return r.clone();
        }
        let rule = Arc::new(build_hermite_mp(n, prec));
        cache.lock().unwrap().insert((n, prec), rule.clone());
        rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Recurrence coefficients `(sqrt(2/j), sqrt((j-1)/j))` for `j = 1..=n`.
fn hermite_coefs_mp(n: usize, prec: u32) -> Vec<(Float, Float)> {
    (1..=n as u32)
        .map(|j| {
            let a = Float::with_val(prec, Float::with_val(prec, 2u32) / j).sqrt();
            let b = Float::with_val(prec, Float::with_val(prec, j - 1) / j).sqrt();
            (a, b)
        })
        .collect()
}

fn hermite_pair_mp(coefs: &[(Float, Float)], x: &Float) -> (Float, Float) {
    let prec = x.prec();
    let mut p1 = Float::with_val(prec, mp::pi(prec).recip_ref()).sqrt().sqrt();
    let mut p2 = Float::new(prec);
    for (a, b) in coefs {
        let p3 = std::mem::replace(&mut p2, p1);
        p1 = Float::with_val(prec, x * &p2) * a - p3 * b;
    }
    (p1, p2)
}

fn build_hermite_mp(n: usize, prec: u32) -> GaussHermiteMp {
    let seed = GaussHermite::new(n);
    let wp = prec + 32;
    let coefs = hermite_coefs_mp(n, wp);
    let sqrt2n = Float::with_val(wp, 2 * n as u32).sqrt();

    let (pos_nodes, pos_w): (Vec<Float>, Vec<Float>) = ((n / 2)..n)
        .into_par_iter()
        .map(|i| {
            let z = if seed.nodes[i] == 0.0 {
                Float::new(wp)
            } else {
                // precision-doubling Newton from a double-precision seed
                let mut p = 64u32;
                let mut zw = Float::with_val(p, seed.nodes[i]);
                loop {
                    p = (2 * p).min(wp);
                    zw = Float::with_val(p, &zw);
                    for _ in 0..2 {
                        let (p1, p2) = hermite_pair_mp(&coefs, &zw);
                        zw -= p1 / (p2 * &sqrt2n);
                    }
                    if p >= wp {
                        break;
                    }
                }
                let (p1, p2) = hermite_pair_mp(&coefs, &zw);
                zw -= p1 / (p2 * &sqrt2n);
                zw
            };
            let (_, p2) = hermite_pair_mp(&coefs, &z);
            let ez = Float::with_val(wp, z.square_ref()).exp();
            let w = ez / (Float::with_val(wp, p2.square_ref()) * n as u32);
            (Float::with_val(prec, z), Float::with_val(prec, w))
        })
        .unzip();
    let mut nodes = Vec::with_capacity(n);
    let mut total_weights = Vec::with_capacity(n);
    let skip = if n % 2 == 1 { 1 } else { 0 };
    for (z, w) in pos_nodes.iter().zip(&pos_w).skip(skip).rev() {
        nodes.push(Float::with_val(prec, -z));
        total_weights.push(w.clone());
    }
    nodes.extend(pos_nodes);
    total_weights.extend(pos_w);
    debug_assert_eq!(nodes.len(), n);
    GaussHermiteMp { prec, nodes, total_weights }
}

/// Generalized Gauss–Laguerre rule at `prec` bits.
#[derive(Debug)]
pub struct GaussLaguerreMp {
    pub prec: u32,
    pub alpha: u32,
    pub nodes: Vec<Float>,
    pub weights: Vec<Float>,
}

impl GaussLaguerreMp {
    pub fn new(n: usize, alpha: u32, prec: u32) -> Arc<GaussLaguerreMp> {
        type Key = (usize, u32, u32);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<GaussLaguerreMp>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(r) = cache.lock().unwrap().get(&(n, alpha, prec)) {
            return r.clone();
        }
        let rule = Arc::new(build_laguerre_mp(n, alpha, prec));
        cache.lock().unwrap().insert((n, alpha, prec), rule.clone());
        rule
    }
}

fn laguerre_pair_mp(n: usize, alpha: u32, x: &Float) -> (Float, Float) {
    let prec = x.prec();
    let mut p1 = Float::with_val(prec, 1u32);
    let mut p2 = Float::new(prec);
    for j in 1..=n as u32 {
        let p3 = std::mem::replace(&mut p2, p1);
        let c = Float::with_val(prec, (2 * j - 1 + alpha) as f64 - x);
        p1 = (c * &p2 - p3 * (j - 1 + alpha)) / j;
    }
    (p1, p2)
}

fn build_laguerre_mp(n: usize, alpha: u32, prec: u32) -> GaussLaguerreMp {
    let seed = GaussLaguerre::new(n, alpha);
    let wp = prec + 32;
    let na = (n as u32 + alpha) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let gamma = Float::with_val(wp, Float::factorial(n as u32 + alpha))
        / Float::with_val(wp, Float::factorial(n as u32));
    for &z0 in &seed.nodes {
        let mut p = 64u32;
        let mut zw = Float::with_val(p, z0);
        loop {
            p = (2 * p).min(wp);
            zw = Float::with_val(p, &zw);
            for _ in 0..2 {
                let (p1, p2) = laguerre_pair_mp(n, alpha, &zw);
                let pp = (Float::with_val(p, &p1 * n as u32) - p2 * na) / &zw;
                zw -= p1 / pp;
            }
            if p >= wp {
                break;
            }
        }
        let (_, p2) = laguerre_pair_mp(n, alpha, &zw);
        let w = Float::with_val(wp, &gamma * &zw) / (Float::with_val(wp, p2.square_ref()) * (na * na));
        nodes.push(Float::with_val(prec, zw));
        weights.push(Float::with_val(prec, w));
    }
    GaussLaguerreMp { prec, alpha, nodes, weights }
}
