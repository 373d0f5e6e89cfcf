//! Boundary conditions and loads on box domains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarGridFunction;
use crate::grid::{Face, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Dirichlet,
    Neumann,
    Mixed,
}

/// Affine boundary data `d(x) = A x + b` with `A ∈ ℝ^{N×n}`, `b ∈ ℝᴺ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineData {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Vec<f64>,
}

impl AffineData {
    pub fn new(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Self {
        AffineData { matrix, offset }
    }

    /// `d(x) = α x` for `N = n`.
    pub fn scaled_identity(n: usize, alpha: f64) -> Self {
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { alpha } else { 0.0 }).collect())
            .collect();
        AffineData::new(matrix, vec![0.0; n])
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i];
            *o = self.offset.get(i).copied().unwrap_or(0.0)
                + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn validate(&self, components: usize, dim: usize) -> Result<()> {
        if self.matrix.len() != components || self.matrix.iter().any(|r| r.len() != dim) {
            return Err(Error::config(format!(
                "bc.data.matrix: expected {components}×{dim}"
            )));
        }
        if !self.offset.is_empty() && self.offset.len() != components {
            return Err(Error::config(format!(
                "bc.data.offset: expected {components} entries"
            )));
        }
        if self.matrix.iter().flatten().chain(&self.offset).any(|v| !v.is_finite()) {
            return Err(Error::config("bc.data: non-finite entry"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryCondition {
    pub kind: BcKind,
    /// Dirichlet faces for `mixed`; ignored (all faces) for `dirichlet`.
    #[serde(default)]
    pub dirichlet_faces: Vec<Face>,
    /// Dirichlet data; zero when absent.
    #[serde(default)]
    pub data: Option<AffineData>,
    #[serde(default = "yes")]
    pub mean_zero: bool,
}

fn yes() -> bool {
    true
}

impl BoundaryCondition {
    pub fn dirichlet(data: AffineData) -> Self {
        BoundaryCondition {
            kind: BcKind::Dirichlet,
            dirichlet_faces: Vec::new(),
            data: Some(data),
            mean_zero: true,
        }
    }

    pub fn neumann() -> Self {
        BoundaryCondition {
            kind: BcKind::Neumann,
            dirichlet_faces: Vec::new(),
            data: None,
            mean_zero: true,
        }
    }

    pub fn mixed(faces: Vec<Face>, data: AffineData) -> Self {
        BoundaryCondition {
            kind: BcKind::Mixed,
            dirichlet_faces: faces,
            data: Some(data),
            mean_zero: true,
        }
    }

    /// The Dirichlet faces on `grid` after validation.
    pub fn faces_on(&self, grid: &Grid, components: usize) -> Result<Vec<Face>> {
        if let Some(d) = &self.data {
            d.validate(components, grid.dim())?;
        }
        if self.dirichlet_faces.iter().any(|f| f.axis >= grid.dim()) {
            return Err(Error::config("bc.dirichlet_faces: face axis exceeds grid dimension"));
        }
        match self.kind {
            BcKind::Dirichlet => Ok(grid.faces()),
            BcKind::Neumann => {
                if !self.mean_zero {
                    return Err(Error::config(
                        "bc.mean_zero: pure Neumann problems need the mean-zero normalization",
                    ));
                }
                Ok(Vec::new())
            }
            BcKind::Mixed => {
                let mut faces = self.dirichlet_faces.clone();
                faces.sort_by_key(|f| (f.axis, f.high));
                faces.dedup();
                if faces.is_empty() || faces.len() == grid.faces().len() {
                    return Err(Error::config(
                        "bc.dirichlet_faces: mixed conditions need a nonempty proper subset of faces",
                    ));
                }
                Ok(faces)
            }
        }
    }

    pub fn is_neumann(&self) -> bool {
        self.kind == BcKind::Neumann
    }
}

/// Body load `b` (per cell) and surface loads `s` (constant per face), both
/// entering the energy as `-∫b·u - ∫_𝒮 s·u`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Loads {
    pub body: Option<ScalarGridFunction>,
    pub surface: Vec<(Face, Vec<f64>)>,
}

impl Loads {
    pub fn none() -> Self {
        Loads::default()
    }

    /// Load density per degree of freedom: `b + s/h` on cells next to loaded faces.
    pub(crate) fn density(&self, grid: &Grid, components: usize, dirichlet: &[Face]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; components * grid.cells()];
        if let Some(b) = &self.body {
            if b.grid() != grid || b.components() != components {
                return Err(Error::config("loads.body: shape does not match the problem"));
            }
            out.copy_from_slice(b.values());
        }
        let inv_h = 1.0 / grid.spacing();
        for (face, s) in &self.surface {
            if dirichlet.contains(face) {
                return Err(Error::config(format!(
                    "loads.surface: face {face} carries Dirichlet data"
                )));
            }
            if face.axis >= grid.dim() || s.len() != components || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("loads.surface: bad load on face {face}")));
            }
            for c in grid.face_cells(*face) {
                for (i, v) in s.iter().enumerate() {
                    out[c * components + i] += v * inv_h;
                }
            }
        }
        Ok(out)
    }
}
