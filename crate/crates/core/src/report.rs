//! Reconstruction reports shared by all reconstruction methods.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Result;
use crate::states::{validate, DensityMatrix, Diagnostics, StateFile};

/// A matrix element that needs attention, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementFlag {
    pub row: usize,
    pub col: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub method: String,
    /// Reconstructed matrix, not yet validated as a state.
    pub matrix: DensityMatrix,
    /// Per-element error estimates.
    pub residuals: DMatrix<f64>,
    pub flags: Vec<ElementFlag>,
    /// Assumptions the data cannot confirm.
    pub assumptions: Vec<String>,
    /// Method-specific details: rules, orders, precision.
    pub diagnostics: Map<String, Value>,
    pub validation: Diagnostics,
    /// Error level the method stands behind for this input.
    pub advertised_tolerance: f64,
}

impl ReconstructionReport {
    pub fn new(method: &str, matrix: DMatrix<C64>, residuals: DMatrix<f64>, advertised_tolerance: f64) -> Result<Self> {
        let matrix = DensityMatrix::from_matrix(matrix)?;
        let validation = validate(&matrix);
        Ok(ReconstructionReport {
            method: method.to_string(),
            matrix,
            residuals,
            flags: Vec::new(),
            assumptions: Vec::new(),
            diagnostics: Map::new(),
            validation,
            advertised_tolerance,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn flag(&mut self, row: usize, col: usize, reason: impl Into<String>) {
        self.flags.push(ElementFlag { row, col, reason: reason.into() });
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.diagnostics.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn is_flagged(&self, row: usize, col: usize) -> bool {
        self.flags.iter().any(|f| f.row == row && f.col == col)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `max |a_mn - b_mn|` against `other`, padding the smaller matrix with zeros.
    pub fn max_abs_deviation(&self, other: &DMatrix<C64>) -> f64 {
        max_abs_deviation(self.matrix.matrix(), other)
    }

    pub fn to_json(&self) -> ReportFile {
        ReportFile {
            state: self.matrix.to_json(),
            method: self.method.clone(),
            residuals: self.residuals.row_iter().map(|r| r.iter().copied().collect()).collect(),
            flags: self.flags.clone(),
            assumptions: self.assumptions.clone(),
            diagnostics: self.diagnostics.clone(),
            validation: self.validation,
            validation_problems: self.validation.problems(),
            advertised_tolerance: self.advertised_tolerance,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

pub fn max_abs_deviation(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let d = a.nrows().max(b.nrows());
    let get = |m: &DMatrix<C64>, i: usize, j: usize| {
        if i < m.nrows() && j < m.ncols() {
            m[(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    };
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            worst = worst.max((get(a, i, j) - get(b, i, j)).norm());
        }
    }
    worst
}

/// On-disk report: the matrix in the state schema plus a diagnostics block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub state: StateFile,
    pub method: String,
    pub residuals: Vec<Vec<f64>>,
    pub flags: Vec<ElementFlag>,
    pub assumptions: Vec<String>,
    pub diagnostics: Map<String, Value>,
    pub validation: Diagnostics,
    pub validation_problems: Vec<String>,
    pub advertised_tolerance: f64,
}
