//! Rectangular tabulations of phase-space distributions and their CSV format.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{ReadPolicy, StateFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coords {
    /// `(q, p)` with phase-space point `z = (q + ip)/√2`.
    Cartesian,
    /// `(r, θ)` with `z = r e^{iθ}`.
    Polar,
    /// `(x, θ)` of a rotated quadrature density.
    Quadrature,
}

impl Coords {
    pub fn axis_names(self) -> (&'static str, &'static str) {
        match self {
            Coords::Cartesian => ("q", "p"),
            Coords::Polar => ("r", "theta"),
            Coords::Quadrature => ("x", "theta"),
        }
    }

    fn from_axis_names(a: &str, b: &str) -> Option<Coords> {
        [Coords::Cartesian, Coords::Polar, Coords::Quadrature]
            .into_iter()
            .find(|c| c.axis_names() == (a, b))
    }
}

/// Equispaced axis `start, ..., end` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn new(start: f64, end: f64, n: usize) -> Result<AxisSpec> {
        let a = AxisSpec { start, end, n };
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite()) || self.n == 0 {
            return Err(Error::Domain(format!("invalid axis {}:{}:{}", self.start, self.end, self.n)));
        }
        if self.n > 1 && !(self.end > self.start) {
            return Err(Error::Domain(format!(
                "axis end {} must exceed start {}",
                self.end, self.start
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.start];
        }
        let h = (self.end - self.start) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| if i == self.n - 1 { self.end } else { self.start + i as f64 * h })
            .collect()
    }

    /// Parses `start:end:n`.
    pub fn parse(s: &str) -> Result<AxisSpec> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Schema(format!("axis '{s}' must have the form start:end:n")));
        }
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::Schema(format!("'{t}' in axis '{s}' is not a number")))
        };
        let n = parts[2]
            .parse::<usize>()
            .map_err(|_| Error::Schema(format!("point count '{}' in axis '{s}' is not an integer", parts[2])))?;
        AxisSpec::new(num(parts[0])?, num(parts[1])?, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub coords: Coords,
    pub axis1: AxisSpec,
    pub axis2: AxisSpec,
}

impl GridSpec {
    /// Parses `x0:x1:n,y0:y1:n`.
    pub fn parse(s: &str, coords: Coords) -> Result<GridSpec> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::Schema(format!("grid '{s}' must have the form x0:x1:n,y0:y1:n")))?;
        Ok(GridSpec { coords, axis1: AxisSpec::parse(a)?, axis2: AxisSpec::parse(b)? })
    }
}

/// Complex values of a distribution on a rectangular grid; `values[(i, j)]`
/// belongs to `(axis1[i], axis2[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionGrid {
    pub coords: Coords,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub values: DMatrix<C64>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn check_axis(name: &str, a: &[f64]) -> Result<()> {
    if a.is_empty() || a.iter().any(|v| !v.is_finite()) || a.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Schema(format!("axis {name} must be non-empty, finite and strictly increasing")));
    }
    Ok(())
}

impl DistributionGrid {
    pub fn new(coords: Coords, axis1: Vec<f64>, axis2: Vec<f64>, values: DMatrix<C64>) -> Result<Self> {
        let (n1, n2) = coords.axis_names();
        check_axis(n1, &axis1)?;
        check_axis(n2, &axis2)?;
        if values.nrows() != axis1.len() || values.ncols() != axis2.len() {
            return Err(Error::Schema(format!(
                "values are {}x{} but the axes have {} and {} points",
                values.nrows(),
                values.ncols(),
                axis1.len(),
                axis2.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Schema("grid values must be finite".into()));
        }
        Ok(DistributionGrid { coords, axis1, axis2, values, meta: Default::default() })
    }

    /// Tabulates `f(axis1[i], axis2[j])` in parallel over rows.
    pub fn tabulate(
        coords: Coords,
        axis1: Vec<f64>,
        axis2: Vec<f64>,
        f: impl Fn(f64, f64) -> Result<C64> + Sync,
    ) -> Result<Self> {
        let rows: Vec<Vec<C64>> = axis1
            .par_iter()
            .map(|&a| axis2.iter().map(|&b| f(a, b)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let values = DMatrix::from_fn(axis1.len(), axis2.len(), |i, j| rows[i][j]);
        DistributionGrid::new(coords, axis1, axis2, values)
    }

    pub fn step1(&self) -> f64 {
        uniform_step(&self.axis1)
    }

    pub fn step2(&self) -> f64 {
        uniform_step(&self.axis2)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let (a, b) = self.coords.axis_names();
        w.write_record([a, b, "re", "im"])?;
        for (i, &x) in self.axis1.iter().enumerate() {
            for (j, &y) in self.axis2.iter().enumerate() {
                let v = self.values[(i, j)];
                w.write_record([fmt(x), fmt(y), fmt(v.re), fmt(v.im)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<DistributionGrid> {
        let mut r = csv::Reader::from_path(path)?;
        let h = r.headers()?.clone();
        if h.len() != 4 || &h[2] != "re" || &h[3] != "im" {
            return Err(Error::Schema(format!("{}: header must be <axis1>,<axis2>,re,im", path.display())));
        }
        let coords = Coords::from_axis_names(&h[0], &h[1])
            .ok_or_else(|| Error::Schema(format!("{}: unknown axes {},{}", path.display(), &h[0], &h[1])))?;
        let mut pts = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::Schema(format!("{}: every row needs 4 fields", path.display())));
            }
            let mut v = [0.0; 4];
            for (k, f) in rec.iter().enumerate() {
                v[k] = parse_num(f)?;
            }
            pts.push(v);
        }
        let mut axis1: Vec<f64> = Vec::new();
        for p in &pts {
            if axis1.last() != Some(&p[0]) {
                axis1.push(p[0]);
            }
        }
        if axis1.is_empty() || pts.len() % axis1.len() != 0 {
            return Err(Error::Schema(format!("{}: rows do not form a rectangular grid", path.display())));
        }
        let n2 = pts.len() / axis1.len();
        let axis2: Vec<f64> = pts[..n2].iter().map(|p| p[1]).collect();
        for (idx, p) in pts.iter().enumerate() {
            if p[0] != axis1[idx / n2] || p[1] != axis2[idx % n2] {
                return Err(Error::Schema(format!(
                    "{}: row {} breaks the row-major grid order",
                    path.display(),
                    idx + 2
                )));
            }
        }
        let values = DMatrix::from_fn(axis1.len(), n2, |i, j| {
            let p = pts[i * n2 + j];
            C64::new(p[2], p[3])
        });
        DistributionGrid::new(coords, axis1, axis2, values)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns the manifest path.
    pub fn write_with_manifest(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let csv_name = format!("{stem}.csv");
        self.write_csv(&dir.join(&csv_name))?;
        let m = GridManifest {
            kind: "grid".into(),
            coords: self.coords,
            csv: csv_name,
            meta: self.meta.clone(),
        };
        let mp = dir.join(format!("{stem}.json"));
        std::fs::write(&mp, serde_json::to_string_pretty(&m)?)?;
        Ok(mp)
    }

    pub fn read_manifest(path: &Path) -> Result<DistributionGrid> {
        let m: GridManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.kind != "grid" {
            return Err(Error::Schema(format!("{}: manifest kind '{}' is not 'grid'", path.display(), m.kind)));
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut g = DistributionGrid::read_csv(&dir.join(&m.csv))?;
        if g.coords != m.coords {
            return Err(Error::Schema(format!("{}: CSV axes disagree with manifest coords", path.display())));
        }
        g.meta = m.meta;
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridManifest {
    pub kind: String,
    pub coords: Coords,
    pub csv: String,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// Full-precision decimal (17 significant digits).
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Schema(format!("'{s}' is not a number")))
}

pub(crate) fn uniform_step(a: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64
}

/// What a grid tabulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    /// λ-distribution of a state; `lambda = [re, im]`.
    Lambda { state: StateFile, lambda: [f64; 2] },
    /// Rotated quadrature density of a state.
    QuadratureDensity { state: StateFile },
    /// Closed-form λ-distribution of the coherent state `alpha = [re, im]`.
    CoherentLambda { alpha: [f64; 2], lambda: [f64; 2] },
}

/// Tabulates `spec` on `grid`, recording the spec in the grid metadata.
pub fn sample_grid(spec: &DistributionSpec, grid: &GridSpec) -> Result<DistributionGrid> {
    let a1 = grid.axis1.values();
    let a2 = grid.axis2.values();
    let mut out = match spec {
        DistributionSpec::Lambda { state, lambda } => {
            let (rho, _) = state.to_state(ReadPolicy::Warn)?;
            let l = C64::new(lambda[0], lambda[1]);
            super::check_lambda(l)?;
            match grid.coords {
                Coords::Cartesian => DistributionGrid::tabulate(grid.coords, a1, a2, |q, p| {
                    super::lambda_distribution_qp(&rho, l, q, p)
                })?,
                Coords::Polar => DistributionGrid::tabulate(grid.coords, a1, a2, |r, t| {
                    super::lambda_distribution(&rho, l, r, t)
                })?,
                Coords::Quadrature => {
                    return Err(Error::Domain("a λ-distribution needs cartesian or polar coordinates".into()))
                }
            }
        }
        DistributionSpec::QuadratureDensity { state } => {
            if grid.coords != Coords::Quadrature {
                return Err(Error::Domain("a quadrature density needs (x, theta) coordinates".into()));
            }
            let (rho, _) = state.to_state(ReadPolicy::Warn)?;
            DistributionGrid::tabulate(grid.coords, a1, a2, |x, t| {
                super::quad_density(&rho, x, t).map(|v| C64::new(v, 0.0))
            })?
        }
        DistributionSpec::CoherentLambda { alpha, lambda } => {
            let a = C64::new(alpha[0], alpha[1]);
            let l = C64::new(lambda[0], lambda[1]);
            super::check_lambda(l)?;
            match grid.coords {
                Coords::Cartesian => DistributionGrid::tabulate(grid.coords, a1, a2, |q, p| {
                    Ok(super::coherent_lambda_distribution(a, l, super::z_of_qp(q, p)))
                })?,
                Coords::Polar => DistributionGrid::tabulate(grid.coords, a1, a2, |r, t| {
                    Ok(super::coherent_lambda_distribution(a, l, C64::from_polar(r, t)))
                })?,
                Coords::Quadrature => DistributionGrid::tabulate(grid.coords, a1, a2, |x, t| {
                    Ok(C64::new(super::coherent_quad_density(a, x, t), 0.0))
                })?,
            }
        }
    };
    out.meta.insert("spec".into(), serde_json::to_value(spec)?);
    out.meta.insert("grid".into(), serde_json::to_value(grid)?);
    Ok(out)
}
