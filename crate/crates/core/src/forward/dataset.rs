//! Quadrature densities at a finite set of angles.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rug::float::Constant;
use rug::Float;
use serde::{Deserialize, Serialize};

use super::grid::{fmt, parse_num, AxisSpec};
use super::profile::{CubicSpline, MIN_SAMPLES};
use crate::error::{Error, Result};
use crate::states::{DensityMatrix, ReadPolicy, StateFile};

/// Angles must match `2πt/p` this closely to count as the equispaced grid.
pub const ANGLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Source {
    Closed(Arc<DensityMatrix>),
    Sampled { splines: Vec<CubicSpline> },
}

/// Densities `x ↦ W^qd(x, θ_t)` at the angles `θ_t`.
#[derive(Debug, Clone)]
pub struct QuadratureDataset {
    angles: Vec<f64>,
    source: Source,
}

/// `2πt/p` for `t = 0..p`.
pub fn equispaced_angles(p: usize) -> Vec<f64> {
    (0..p).map(|t| 2.0 * PI * t as f64 / p as f64).collect()
}

fn check_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(Error::Domain("a quadrature dataset needs at least one angle".into()));
    }
    for (i, &a) in angles.iter().enumerate() {
        if !(0.0..2.0 * PI).contains(&a) {
            return Err(Error::Domain(format!("angle {a} must lie in [0, 2π)")));
        }
        if angles[..i].iter().any(|&b| (a - b).abs() < ANGLE_TOL) {
            return Err(Error::Domain(format!("angle {a} occurs twice")));
        }
    }
    Ok(())
}

impl QuadratureDataset {
    /// Closed-form densities of `rho`.
    pub fn from_state(rho: Arc<DensityMatrix>, angles: Vec<f64>) -> Result<Self> {
        check_angles(&angles)?;
        Ok(QuadratureDataset { angles, source: Source::Closed(rho) })
    }

    /// Closed-form densities of `rho` at the `p` angles `2πt/p`.
    pub fn equispaced(rho: Arc<DensityMatrix>, p: usize) -> Result<Self> {
        Self::from_state(rho, equispaced_angles(p))
    }

    /// Sampled densities on a common grid; each must integrate to `1 ± 1e-6`.
    pub fn sampled(angles: Vec<f64>, x: Vec<f64>, densities: Vec<Vec<f64>>) -> Result<Self> {
        check_angles(&angles)?;
        if densities.len() != angles.len() {
            return Err(Error::Schema(format!(
                "{} densities for {} angles",
                densities.len(),
                angles.len()
            )));
        }
        if x.len() < MIN_SAMPLES {
            return Err(Error::Domain(format!("sampled densities need at least {MIN_SAMPLES} points")));
        }
        let mut splines = Vec::with_capacity(densities.len());
        for (t, d) in densities.iter().enumerate() {
            if d.len() != x.len() {
                return Err(Error::Schema(format!("density {t} has {} values for {} points", d.len(), x.len())));
            }
            let mass: f64 = x.windows(2).zip(d.windows(2)).map(|(xs, ds)| 0.5 * (xs[1] - xs[0]) * (ds[0] + ds[1])).sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "density at angle {} integrates to {mass} on its grid, not 1 ± 1e-6",
                    angles[t]
                )));
            }
            splines.push(CubicSpline::natural(x.clone(), d.iter().map(|&v| C64::new(v, 0.0)).collect())?);
        }
        Ok(QuadratureDataset { angles, source: Source::Sampled { splines } })
    }

    /// Tabulates the closed-form densities of `rho` on `axis`.
    pub fn sample(rho: &DensityMatrix, angles: Vec<f64>, axis: &AxisSpec) -> Result<Self> {
        let x = axis.values();
        let densities = angles
            .iter()
            .map(|&t| x.iter().map(|&v| super::quad_density(rho, v, t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::sampled(angles, x, densities)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.source, Source::Closed(_))
    }

    pub fn generator(&self) -> Option<&Arc<DensityMatrix>> {
        match &self.source {
            Source::Closed(r) => Some(r),
            Source::Sampled { .. } => None,
        }
    }

    /// `W^qd(x, θ_t)`; sampled densities vanish outside their grid.
    pub fn density(&self, t: usize, x: f64) -> Result<f64> {
        let theta = *self
            .angles
            .get(t)
            .ok_or_else(|| Error::Domain(format!("angle index {t} out of range")))?;
        match &self.source {
            Source::Closed(rho) => super::quad_density(rho, x, theta),
            Source::Sampled { splines, .. } => Ok(splines[t].eval(x).map(|v| v.re).unwrap_or(0.0)),
        }
    }

    /// Number of angles `p` after checking that the angles are exactly `2πt/p`.
    pub fn equispaced_p(&self) -> Result<usize> {
        let p = self.angles.len();
        for (t, &a) in self.angles.iter().enumerate() {
            let want = 2.0 * PI * t as f64 / p as f64;
            if (a - want).abs() > ANGLE_TOL {
                return Err(Error::Domain(format!(
                    "angle {t} is {a}, expected 2π·{t}/{p} = {want}; the finite-angle formula needs the equispaced grid"
                )));
            }
        }
        Ok(p)
    }

    /// `(1/p) sum_t e^{ikθ_t} W^qd(x, θ_t)` for `0 <= k < p`.
    pub fn finite_angle_component(&self, k: usize, x: f64) -> Result<C64> {
        let p = self.equispaced_p()?;
        if k >= p {
            return Err(Error::Domain(format!("component index k = {k} must be below p = {p}")));
        }
        let mut s = C64::new(0.0, 0.0);
        for t in 0..p {
            s += C64::from_polar(self.density(t, x)?, k as f64 * self.angles[t]);
        }
        Ok(s / p as f64)
    }

    /// Extended-precision version of [`Self::finite_angle_component`] for closed-form
    /// datasets, evaluated at the exact angles `2πt/p`.
    pub fn finite_angle_component_mp(&self, k: usize, x: &Float) -> Result<Option<(Float, Float)>> {
        let p = self.equispaced_p()?;
        if k >= p {
            return Err(Error::Domain(format!("component index k = {k} must be below p = {p}")));
        }
        let rho = match &self.source {
            Source::Closed(r) => r,
            Source::Sampled { .. } => return Ok(None),
        };
        let prec = x.prec();
        let two_pi = Float::with_val(prec, Constant::Pi) * 2u32;
        let mut re = Float::new(prec);
        let mut im = Float::new(prec);
        for t in 0..p {
            let theta = Float::with_val(prec, &two_pi * t as u32) / p as u32;
            let w = super::quad_density_mp(rho, x, &theta);
            let (s, c) = Float::with_val(prec, &theta * k as u32).sin_cos(Float::new(prec));
            re += Float::with_val(prec, &c * &w);
            im += s * w;
        }
        Ok(Some((re / p as u32, im / p as u32)))
    }

    /// Writes one CSV per angle plus `<stem>.json`; returns the manifest path.
    /// Closed-form datasets are tabulated on `axis` and embed their generating state.
    pub fn write(&self, dir: &Path, stem: &str, axis: &AxisSpec) -> Result<PathBuf> {
        let x = axis.values();
        let mut files = Vec::new();
        for t in 0..self.len() {
            let name = format!("{stem}_angle{t}.csv");
            let mut w = csv::Writer::from_path(dir.join(&name))?;
            w.write_record(["x", "density"])?;
            for &xv in &x {
                w.write_record([fmt(xv), fmt(self.density(t, xv)?)])?;
            }
            w.flush()?;
            files.push(name);
        }
        let m = QuadratureManifest {
            kind: "quadrature".into(),
            angles: self.angles.clone(),
            x: *axis,
            files,
            generator: self.generator().map(|r| r.to_json()),
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }

    /// Reads a dataset manifest. With `use_samples` false and a generator present,
    /// the closed-form densities of the generator are used; otherwise the CSV samples.
    pub fn read(path: &Path, use_samples: bool) -> Result<Self> {
        let m: QuadratureManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.kind != "quadrature" {
            return Err(Error::Schema(format!("{}: manifest kind '{}' is not 'quadrature'", path.display(), m.kind)));
        }
        if m.files.len() != m.angles.len() {
            return Err(Error::Schema(format!("{}: one CSV per angle required", path.display())));
        }
        if let (Some(g), false) = (&m.generator, use_samples) {
            let (rho, _) = g.to_state(ReadPolicy::Reject)?;
            return Self::from_state(Arc::new(rho), m.angles);
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut x: Option<Vec<f64>> = None;
        let mut densities = Vec::new();
        for f in &m.files {
            let mut r = csv::Reader::from_path(dir.join(f))?;
            let mut xs = Vec::new();
            let mut ds = Vec::new();
            for rec in r.records() {
                let rec = rec?;
                if rec.len() != 2 {
                    return Err(Error::Schema(format!("{f}: rows must be x,density")));
                }
                xs.push(parse_num(&rec[0])?);
                ds.push(parse_num(&rec[1])?);
            }
            match &x {
                None => x = Some(xs),
                Some(x0) if *x0 != xs => {
                    return Err(Error::Schema(format!("{f}: x-grid differs from the first file")))
                }
                _ => {}
            }
            densities.push(ds);
        }
        Self::sampled(m.angles, x.unwrap_or_default(), densities)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureManifest {
    pub kind: String,
    pub angles: Vec<f64>,
    pub x: AxisSpec,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<StateFile>,
}
