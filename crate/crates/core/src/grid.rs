//! Axis-aligned box grids, hypercubes of cells, and cube enumeration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Uniform cell-centred discretization of a box in ℝⁿ, `n ∈ {1, 2, 3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
}

impl Grid {
    /// `origin` is the physical coordinate of the first cell centre.
    pub fn new(shape: Vec<usize>, spacing: f64, origin: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_DIM {
            return Err(Error::domain(format!(
                "grid dimension must be 1, 2 or 3, got {}",
                shape.len()
            )));
        }
        if let Some(&s) = shape.iter().find(|&&s| s < 2) {
            return Err(Error::domain(format!(
                "every axis needs at least 2 cells, got {s}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::domain(format!("spacing must be positive, got {spacing}")));
        }
        if origin.len() != shape.len() || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::domain("origin must have one finite coordinate per axis"));
        }
        Ok(Grid {
            shape,
            spacing,
            origin,
        })
    }

    /// Grid on `[0, shape[0]·h]×…` with `h = 1/shape[0]`; unit measure when all
    /// axes have the same cell count.
    pub fn unit_box(shape: Vec<usize>) -> Result<Self> {
        let h = 1.0 / *shape.first().unwrap_or(&1) as f64;
        let origin = vec![0.5 * h; shape.len()];
        Grid::new(shape, h, origin)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    pub fn measure(&self) -> f64 {
        self.cell_volume() * self.cells() as f64
    }

    /// Row-major strides (last axis fastest), padded with zeros.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut strides = [0; MAX_DIM];
        let mut acc = 1;
        for axis in (0..self.dim()).rev() {
            strides[axis] = acc;
            acc *= self.shape[axis];
        }
        strides
    }

    pub fn linear_index(&self, index: &[usize]) -> usize {
        let strides = self.strides();
        index.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    /// Multi-index of a linear cell index, padded with zeros beyond `dim`.
    pub fn multi_index(&self, mut linear: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for axis in (0..self.dim()).rev() {
            out[axis] = linear % self.shape[axis];
            linear /= self.shape[axis];
        }
        out
    }

    /// Physical cell-centre coordinates of a linear cell index.
    pub fn center(&self, linear: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(linear);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim() {
            x[axis] = self.origin[axis] + idx[axis] as f64 * self.spacing;
        }
        x
    }

    pub fn min_side(&self) -> usize {
        self.shape.iter().copied().min().unwrap_or(0)
    }

    pub fn contains(&self, cube: &Cube) -> bool {
        cube.origin.len() == self.dim()
            && cube.side >= 1
            && cube
                .origin
                .iter()
                .zip(&self.shape)
                .all(|(&o, &s)| o + cube.side <= s)
    }

    pub(crate) fn check_cube(&self, cube: &Cube) -> Result<()> {
        if self.contains(cube) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "cube {:?} (side {}) is not contained in grid of shape {:?}",
                cube.origin, cube.side, self.shape
            )))
        }
    }

    /// Visits the linear index of every cell of the box `origin + [0, extent)`
    /// in row-major order.
    pub(crate) fn for_each_in_box(
        &self,
        origin: &[usize],
        extent: &[usize],
        mut f: impl FnMut(usize),
    ) {
        let strides = self.strides();
        let mut o = [0; MAX_DIM];
        let mut e = [1; MAX_DIM];
        o[..self.dim()].copy_from_slice(origin);
        e[..self.dim()].copy_from_slice(extent);
        for i in 0..e[0] {
            let base_i = (o[0] + i) * strides[0];
            for j in 0..e[1] {
                let base_j = base_i + (o[1] + j) * strides[1];
                for k in 0..e[2] {
                    f(base_j + (o[2] + k) * strides[2]);
                }
            }
        }
    }

    /// Linear indices of the cells adjacent to a boundary face.
    pub fn face_cells(&self, face: Face) -> Vec<usize> {
        let mut origin = vec![0; self.dim()];
        let mut extent = self.shape.clone();
        if face.high {
            origin[face.axis] = self.shape[face.axis] - 1;
        }
        extent[face.axis] = 1;
        let mut out = Vec::new();
        self.for_each_in_box(&origin, &extent, |c| out.push(c));
        out
    }

    pub fn faces(&self) -> Vec<Face> {
        (0..self.dim())
            .flat_map(|axis| [Face { axis, high: false }, Face { axis, high: true }])
            .collect()
    }
}

/// Axis-aligned hypercube of cells: `origin + [0, side)ⁿ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cube {
    pub origin: Vec<usize>,
    pub side: usize,
}

impl Cube {
    pub fn new(origin: Vec<usize>, side: usize) -> Self {
        Cube { origin, side }
    }

    pub fn volume_cells(&self) -> usize {
        self.side.pow(self.origin.len() as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeMode {
    /// Every cell-aligned cube with `1 ≤ side ≤ min(shape)`.
    All,
    /// Sides `1, 2, 4, …` at origins that are multiples of the side.
    Dyadic,
}

impl std::fmt::Display for CubeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CubeMode::All => write!(f, "all"),
            CubeMode::Dyadic => write!(f, "dyadic"),
        }
    }
}

impl std::str::FromStr for CubeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(CubeMode::All),
            "dyadic" => Ok(CubeMode::Dyadic),
            other => Err(Error::config(format!(
                "unknown cube mode `{other}` (expected `all` or `dyadic`)"
            ))),
        }
    }
}

/// Cube sides visited by `mode`, ascending.
pub fn cube_sides(grid: &Grid, mode: CubeMode) -> Vec<usize> {
    let max = grid.min_side();
    match mode {
        CubeMode::All => (1..=max).collect(),
        CubeMode::Dyadic => std::iter::successors(Some(1usize), |s| Some(s * 2))
            .take_while(|&s| s <= max)
            .collect(),
    }
}

/// Number of admissible origins per axis for a given side.
fn origin_counts(grid: &Grid, side: usize, mode: CubeMode) -> Vec<usize> {
    grid.shape()
        .iter()
        .map(|&s| match mode {
            CubeMode::All => s + 1 - side,
            CubeMode::Dyadic => s / side,
        })
        .collect()
}

/// Origins of every cube of the given side, in lexicographic order.
pub fn cube_origins(grid: &Grid, side: usize, mode: CubeMode) -> Vec<Vec<usize>> {
    let counts = origin_counts(grid, side, mode);
    let step = match mode {
        CubeMode::All => 1,
        CubeMode::Dyadic => side,
    };
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut lin in 0..total {
        let mut origin = vec![0; counts.len()];
        for axis in (0..counts.len()).rev() {
            origin[axis] = (lin % counts[axis]) * step;
            lin /= counts[axis];
        }
        out.push(origin);
    }
    out
}

pub fn cube_count(grid: &Grid, mode: CubeMode) -> usize {
    cube_sides(grid, mode)
        .into_iter()
        .map(|s| origin_counts(grid, s, mode).iter().product::<usize>())
        .sum()
}

/// Every cube of the sup domain in deterministic order: side ascending, then
/// origin lexicographic.
pub fn enumerate_cubes(grid: &Grid, mode: CubeMode) -> Vec<Cube> {
    cube_sides(grid, mode)
        .into_iter()
        .flat_map(|side| {
            cube_origins(grid, side, mode)
                .into_iter()
                .map(move |origin| Cube { origin, side })
        })
        .collect()
}

/// One face of the box: `axis` and whether it is the high (`+`) or low (`-`)
/// end. Serialized as `"x-"`, `"y+"`, ….
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub axis: usize,
    pub high: bool,
}

const AXIS_NAMES: [char; MAX_DIM] = ['x', 'y', 'z'];

impl std::fmt::Display for Face {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = AXIS_NAMES.get(self.axis).copied().unwrap_or('?');
        write!(f, "{}{}", name, if self.high { '+' } else { '-' })
    }
}

impl std::str::FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        let (Some(a), Some(sign), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::config(format!("bad face `{s}` (expected e.g. `x-`, `y+`)")));
        };
        let axis = AXIS_NAMES
            .iter()
            .position(|&c| c == a)
            .ok_or_else(|| Error::config(format!("bad face axis in `{s}`")))?;
        let high = match sign {
            '+' => true,
            '-' => false,
            _ => return Err(Error::config(format!("bad face sign in `{s}`"))),
        };
        Ok(Face { axis, high })
    }
}

impl Serialize for Face {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Face {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
