//! Grid functions with matrix or vector values, summed-area tables, Lᵖ norms
//! and the forward-difference gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cube, Grid, MAX_DIM};
use crate::numeric::{frob_norm, pairwise_sum};

/// Dense real `rows × cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= alpha);
        self
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm(&self.data)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::domain(format!(
            "non-finite value {} at position {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Cell samples of a map `Ω → ℝ^{N×n}`; each cell stores an `N × n` matrix
/// row-major, cells in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    rows: usize,
    values: Vec<f64>,
}

impl TensorField {
    pub fn new(grid: Grid, rows: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::domain("tensor field needs at least one row"));
        }
        let expected = rows * grid.dim() * grid.cells();
        if values.len() != expected {
            return Err(Error::domain(format!(
                "tensor field length {} does not match {} rows × {} cols × {} cells",
                values.len(),
                rows,
                grid.dim(),
                grid.cells()
            )));
        }
        check_finite(&values)?;
        Ok(TensorField { grid, rows, values })
    }

    pub fn zeros(grid: Grid, rows: usize) -> Self {
        let len = rows * grid.dim() * grid.cells();
        TensorField {
            grid,
            rows,
            values: vec![0.0; len],
        }
    }

    /// Same matrix in every cell.
    pub fn constant(grid: Grid, value: &Mat) -> Result<Self> {
        if value.cols != grid.dim() {
            return Err(Error::domain("constant matrix must have n columns"));
        }
        let values = value.data.repeat(grid.cells());
        TensorField::new(grid, value.rows, values)
    }

    /// Samples `f(x, out)` at every cell centre.
    pub fn from_fn(
        grid: Grid,
        rows: usize,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Result<Self> {
        let comps = rows * grid.dim();
        let mut values = vec![0.0; comps * grid.cells()];
        for c in 0..grid.cells() {
            let x = grid.center(c);
            f(&x[..grid.dim()], &mut values[c * comps..(c + 1) * comps]);
        }
        TensorField::new(grid, rows, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.grid.dim()
    }

    /// Scalar components per cell, `N·n`.
    pub fn components(&self) -> usize {
        self.rows * self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let m = self.components();
        &self.values[c * m..(c + 1) * m]
    }

    pub fn same_shape(&self, other: &TensorField) -> bool {
        self.grid == other.grid && self.rows == other.rows
    }

    pub(crate) fn check_same_shape(&self, other: &TensorField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "field shape mismatch: {}×{} on {:?} vs {}×{} on {:?}",
                self.rows,
                self.cols(),
                self.grid.shape(),
                other.rows,
                other.cols(),
                other.grid.shape()
            )))
        }
    }

    pub fn scaled(&self, alpha: f64) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            rows: self.rows,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn add(&self, other: &TensorField) -> Result<TensorField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &TensorField, f: impl Fn(f64, f64) -> f64) -> Result<TensorField> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        TensorField::new(self.grid.clone(), self.rows, values)
    }

    /// Frobenius norm `|F(x)|` per cell.
    pub fn cell_norms(&self) -> Vec<f64> {
        (0..self.grid.cells())
            .map(|c| frob_norm(self.cell(c)))
            .collect()
    }

    /// `⟨F⟩_Ω`, the componentwise average over the whole grid.
    pub fn mean(&self) -> Mat {
        let m = self.components();
        let cells = self.grid.cells();
        let mut column = vec![0.0; cells];
        let data = (0..m)
            .map(|k| {
                for (c, slot) in column.iter_mut().enumerate() {
                    *slot = self.values[c * m + k];
                }
                pairwise_sum(&column) / cells as f64
            })
            .collect();
        Mat::from_vec(self.rows, self.cols(), data)
    }

    /// `∫_Ω |F|ᵖ dx` by the midpoint rule.
    pub fn power_integral(&self, p: f64) -> f64 {
        let terms: Vec<f64> = self.cell_norms().into_iter().map(|v| v.powf(p)).collect();
        pairwise_sum(&terms) * self.grid.cell_volume()
    }
}

/// `‖F‖_p = (Σ |F(cell)|ᵖ hⁿ)^{1/p}` for finite `p ≥ 1`.
pub fn lp_norm(field: &TensorField, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::domain(format!(
            "Lp exponent must be finite and ≥ 1, got {p}"
        )));
    }
    Ok(field.power_integral(p).powf(1.0 / p))
}

/// Maximum cell Frobenius norm.
pub fn linf_norm(field: &TensorField) -> f64 {
    field.cell_norms().into_iter().fold(0.0, f64::max)
}

/// Cell samples of a map `Ω → ℝᴺ`, component fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGridFunction {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl ScalarGridFunction {
    pub fn new(grid: Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 {
            return Err(Error::domain("grid function needs at least one component"));
        }
        if values.len() != components * grid.cells() {
            return Err(Error::domain(format!(
                "grid function length {} does not match {} components × {} cells",
                values.len(),
                components,
                grid.cells()
            )));
        }
        check_finite(&values)?;
        Ok(ScalarGridFunction {
            grid,
            components,
            values,
        })
    }

    pub fn zeros(grid: Grid, components: usize) -> Self {
        let len = components * grid.cells();
        ScalarGridFunction {
            grid,
            components,
            values: vec![0.0; len],
        }
    }

    pub fn from_fn(
        grid: Grid,
        components: usize,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Result<Self> {
        let mut values = vec![0.0; components * grid.cells()];
        for c in 0..grid.cells() {
            let x = grid.center(c);
            f(
                &x[..grid.dim()],
                &mut values[c * components..(c + 1) * components],
            );
        }
        ScalarGridFunction::new(grid, components, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.values[c * self.components..(c + 1) * self.components]
    }

    /// Per-component average over the grid.
    pub fn mean(&self) -> Vec<f64> {
        let cells = self.grid.cells();
        (0..self.components)
            .map(|k| {
                let column: Vec<f64> = (0..cells)
                    .map(|c| self.values[c * self.components + k])
                    .collect();
                pairwise_sum(&column) / cells as f64
            })
            .collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        ScalarGridFunction {
            grid: self.grid.clone(),
            components: self.components,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self + alpha·other`.
    pub fn axpy(&self, alpha: f64, other: &ScalarGridFunction) -> Result<Self> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::domain("grid function shape mismatch"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        ScalarGridFunction::new(self.grid.clone(), self.components, values)
    }

    /// Discrete `L²` inner product `Σ u·v hⁿ`.
    pub fn l2_dot(&self, other: &ScalarGridFunction) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        pairwise_sum(&terms) * self.grid.cell_volume()
    }
}

/// Cell-centred forward differences; the last cell on each axis reuses the
/// backward difference. Output is `N × n` per cell.
pub fn gradient(u: &ScalarGridFunction) -> TensorField {
    let grid = u.grid();
    let n = grid.dim();
    let nc = u.components();
    let strides = grid.strides();
    let inv_h = 1.0 / grid.spacing();
    let m = nc * n;
    let mut out = vec![0.0; m * grid.cells()];
    let vals = u.values();
    for c in 0..grid.cells() {
        let idx = grid.multi_index(c);
        for axis in 0..n {
            let (hi, lo) = if idx[axis] + 1 < grid.shape()[axis] {
                (c + strides[axis], c)
            } else {
                (c, c - strides[axis])
            };
            for i in 0..nc {
                out[c * m + i * n + axis] = (vals[hi * nc + i] - vals[lo * nc + i]) * inv_h;
            }
        }
    }
    TensorField {
        grid: grid.clone(),
        rows: nc,
        values: out,
    }
}

/// Transpose of [`gradient`]: `Σ_c G(c):∇w(c) = Σ_c gradient_adjoint(G)(c)·w(c)`
/// for every `w`.
pub fn gradient_adjoint(g: &TensorField) -> ScalarGridFunction {
    let grid = g.grid();
    let n = grid.dim();
    let nc = g.rows();
    let strides = grid.strides();
    let inv_h = 1.0 / grid.spacing();
    let m = nc * n;
    let mut out = vec![0.0; nc * grid.cells()];
    let vals = g.values();
    for c in 0..grid.cells() {
        let idx = grid.multi_index(c);
        for axis in 0..n {
            let (hi, lo) = if idx[axis] + 1 < grid.shape()[axis] {
                (c + strides[axis], c)
            } else {
                (c, c - strides[axis])
            };
            for i in 0..nc {
                let s = vals[c * m + i * n + axis] * inv_h;
                out[hi * nc + i] += s;
                out[lo * nc + i] -= s;
            }
        }
    }
    ScalarGridFunction {
        grid: grid.clone(),
        components: nc,
        values: out,
    }
}

/// Summed-area tables over a tensor field: one per component plus one for the
/// squared cell norm. Values are shifted by the first cell's matrix before
/// accumulation, so constant fields produce identically zero tables.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    dim: usize,
    dims: [usize; MAX_DIM],
    components: usize,
    shift: Vec<f64>,
    centered: Vec<f64>,
    sums: Vec<f64>,
    squares: Vec<f64>,
}

impl PrefixTable {
    pub fn new(field: &TensorField) -> Self {
        let grid = field.grid();
        let dim = grid.dim();
        let m = field.components();
        let mut dims = [1; MAX_DIM];
        for (d, s) in dims.iter_mut().zip(grid.shape()) {
            *d = s + 1;
        }
        let shift = field.cell(0).to_vec();
        let centered: Vec<f64> = field
            .values()
            .chunks_exact(m)
            .flat_map(|cell| cell.iter().zip(&shift).map(|(v, s)| v - s))
            .collect();

        let table_len: usize = dims.iter().product();
        let mut sums = vec![0.0; table_len * m];
        let mut squares = vec![0.0; table_len];
        for c in 0..grid.cells() {
            let idx = grid.multi_index(c);
            let mut pos = [0; MAX_DIM];
            for axis in 0..dim {
                pos[axis] = idx[axis] + 1;
            }
            let t = table_index(&dims, pos);
            let cell = &centered[c * m..(c + 1) * m];
            sums[t * m..(t + 1) * m].copy_from_slice(cell);
            squares[t] = cell.iter().map(|v| v * v).sum();
        }
        for axis in 0..dim {
            accumulate_axis(&mut sums, &dims, m, axis);
            accumulate_axis(&mut squares, &dims, 1, axis);
        }
        PrefixTable {
            dim,
            dims,
            components: m,
            shift,
            centered,
            sums,
            squares,
        }
    }

    /// Inclusion–exclusion over the `2ⁿ` corners of the box `[lo, hi)`;
    /// `f` receives `(table index, sign)`.
    fn corners(&self, lo: [usize; MAX_DIM], hi: [usize; MAX_DIM], mut f: impl FnMut(usize, f64)) {
        for mask in 0..(1usize << self.dim) {
            let mut pos = [0; MAX_DIM];
            let mut sign = 1.0;
            for axis in 0..self.dim {
                if mask & (1 << axis) != 0 {
                    pos[axis] = hi[axis];
                } else {
                    pos[axis] = lo[axis];
                    sign = -sign;
                }
            }
            f(table_index(&self.dims, pos), sign);
        }
    }

    fn bounds(cube: &Cube) -> ([usize; MAX_DIM], [usize; MAX_DIM]) {
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        for (axis, &o) in cube.origin.iter().enumerate() {
            lo[axis] = o;
            hi[axis] = o + cube.side;
        }
        (lo, hi)
    }

    /// Mean of the shifted values over the cube; add the shift for the true
    /// mean.
    pub(crate) fn centered_mean(&self, cube: &Cube, out: &mut [f64]) {
        let m = self.components;
        out.iter_mut().for_each(|v| *v = 0.0);
        let (lo, hi) = Self::bounds(cube);
        self.corners(lo, hi, |t, sign| {
            for (o, s) in out.iter_mut().zip(&self.sums[t * m..(t + 1) * m]) {
                *o += sign * s;
            }
        });
        let vol = cube.volume_cells() as f64;
        out.iter_mut().for_each(|v| *v /= vol);
    }

    /// `⨍_Q |F - F(cell 0)|²`.
    pub(crate) fn centered_mean_square(&self, cube: &Cube) -> f64 {
        let (lo, hi) = Self::bounds(cube);
        let mut acc = 0.0;
        self.corners(lo, hi, |t, sign| acc += sign * self.squares[t]);
        acc / cube.volume_cells() as f64
    }

    /// Field values minus the first cell's matrix.
    pub(crate) fn centered(&self) -> &[f64] {
        &self.centered
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// `⟨F⟩_Q` as a flat component vector.
    pub fn cube_mean(&self, cube: &Cube) -> Vec<f64> {
        let mut out = vec![0.0; self.components];
        self.centered_mean(cube, &mut out);
        out.iter_mut().zip(&self.shift).for_each(|(v, s)| *v += s);
        out
    }

    /// Sum of the field values over the cube.
    pub fn cube_sum(&self, cube: &Cube) -> Vec<f64> {
        let vol = cube.volume_cells() as f64;
        self.cube_mean(cube).into_iter().map(|v| v * vol).collect()
    }

    /// Mean oscillation `⨍_Q |F - ⟨F⟩_Q|`: one `O(2ⁿ)` mean lookup, then a
    /// scan of the cube's cells.
    pub(crate) fn oscillation(&self, grid: &Grid, cube: &Cube, scratch: &mut [f64]) -> f64 {
        if cube.side == 1 {
            return 0.0;
        }
        let m = self.components;
        self.centered_mean(cube, scratch);
        let extent = [cube.side; MAX_DIM];
        let mut acc = 0.0;
        grid.for_each_in_box(&cube.origin, &extent[..grid.dim()], |c| {
            let cell = &self.centered[c * m..(c + 1) * m];
            let sq: f64 = cell
                .iter()
                .zip(scratch.iter())
                .map(|(v, mu)| (v - mu) * (v - mu))
                .sum();
            acc += sq.sqrt();
        });
        acc / cube.volume_cells() as f64
    }
}

fn table_index(dims: &[usize; MAX_DIM], pos: [usize; MAX_DIM]) -> usize {
    (pos[0] * dims[1] + pos[1]) * dims[2] + pos[2]
}

/// In-place running sum along one axis of a row-major table with `m`
/// interleaved components.
fn accumulate_axis(table: &mut [f64], dims: &[usize; MAX_DIM], m: usize, axis: usize) {
    let stride: usize = m * dims[axis + 1..].iter().product::<usize>();
    let block = stride * dims[axis];
    for chunk in table.chunks_exact_mut(block) {
        for i in 1..dims[axis] {
            let (prev, cur) = chunk.split_at_mut(i * stride);
            let prev = &prev[(i - 1) * stride..];
            for (c, p) in cur[..stride].iter_mut().zip(prev) {
                *c += p;
            }
        }
    }
}

/// `⟨F⟩_Q` through a freshly built [`PrefixTable`].
pub fn cube_mean(field: &TensorField, cube: &Cube) -> Result<Mat> {
    field.grid().check_cube(cube)?;
    let table = PrefixTable::new(field);
    Ok(Mat::from_vec(
        field.rows(),
        field.cols(),
        table.cube_mean(cube),
    ))
}

/// `⨍_Q |F(x) - ⟨F⟩_Q| dx` (midpoint rule, Frobenius norm); zero for
/// single-cell cubes.
pub fn cube_oscillation(field: &TensorField, cube: &Cube) -> Result<f64> {
    field.grid().check_cube(cube)?;
    let table = PrefixTable::new(field);
    let mut scratch = vec![0.0; field.components()];
    Ok(table.oscillation(field.grid(), cube, &mut scratch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, rows: usize, seed: u64) -> TensorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rows * grid.dim() * grid.cells();
        let v = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        TensorField::new(grid.clone(), rows, v).unwrap()
    }

    fn in_cube(g: &Grid, c: usize, cube: &Cube) -> bool {
        let idx = g.multi_index(c);
        (0..g.dim()).all(|a| idx[a] >= cube.origin[a] && idx[a] < cube.origin[a] + cube.side)
    }

    // Direct two-pass oracles, independent of the table path.
    fn direct_mean(field: &TensorField, cube: &Cube) -> Vec<f64> {
        let g = field.grid();
        let m = field.components();
        let mut acc = vec![0.0; m];
        let mut count = 0usize;
        for c in (0..g.cells()).filter(|&c| in_cube(g, c, cube)) {
            for (a, v) in acc.iter_mut().zip(field.cell(c)) {
                *a += v;
            }
            count += 1;
        }
        acc.into_iter().map(|v| v / count as f64).collect()
    }

    fn direct_oscillation(field: &TensorField, cube: &Cube) -> f64 {
        let mean = direct_mean(field, cube);
        let g = field.grid();
        let mut acc = 0.0;
        let mut count = 0usize;
        for c in (0..g.cells()).filter(|&c| in_cube(g, c, cube)) {
            let d: Vec<f64> = field.cell(c).iter().zip(&mean).map(|(a, b)| a - b).collect();
            acc += frob_norm(&d);
            count += 1;
        }
        acc / count as f64
    }

    #[test]
    fn constant_field_mean_and_oscillation() {
        let g = Grid::unit_box(vec![5, 4]).unwrap();
        let c = Mat::from_vec(2, 2, vec![1.5, -2.0, 0.25, 3.0]);
        let f = TensorField::constant(g, &c).unwrap();
        let q = Cube::new(vec![1, 1], 3);
        assert_eq!(cube_mean(&f, &q).unwrap(), c);
        assert_eq!(cube_oscillation(&f, &q).unwrap(), 0.0);
    }

    #[test]
    fn small_hand_examples() {
        let g = Grid::unit_box(vec![4]).unwrap();
        let f = TensorField::new(g, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let m = cube_mean(&f, &Cube::new(vec![1], 2)).unwrap();
        assert_eq!(m.data, vec![1.5]);

        let g2 = Grid::unit_box(vec![2]).unwrap();
        let f2 = TensorField::new(g2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(cube_oscillation(&f2, &Cube::new(vec![0], 2)).unwrap(), 0.5);
        assert_eq!(cube_oscillation(&f2, &Cube::new(vec![1], 1)).unwrap(), 0.0);
    }

    #[test]
    fn out_of_bounds_cube_is_domain_error() {
        let g = Grid::unit_box(vec![4, 4]).unwrap();
        let f = TensorField::zeros(g, 1);
        assert!(matches!(
            cube_mean(&f, &Cube::new(vec![2, 0], 3)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            cube_oscillation(&f, &Cube::new(vec![0], 2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn table_means_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (shape, rows) in [(vec![16, 16], 1), (vec![37], 2), (vec![6, 5, 7], 2)] {
            let g = Grid::unit_box(shape).unwrap();
            let f = random_field(&g, rows, rng.gen());
            let table = PrefixTable::new(&f);
            for _ in 0..50 {
                let side = rng.gen_range(1..=g.min_side());
                let origin: Vec<usize> = g
                    .shape()
                    .iter()
                    .map(|&s| rng.gen_range(0..=s - side))
                    .collect();
                let q = Cube::new(origin, side);
                let fast = table.cube_mean(&q);
                let slow = direct_mean(&f, &q);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0), "{a} vs {b}");
                }
                let osc = cube_oscillation(&f, &q).unwrap();
                let osc_direct = direct_oscillation(&f, &q);
                assert!(
                    (osc - osc_direct).abs() <= 1e-12 * osc_direct.max(1e-300),
                    "{osc} vs {osc_direct}"
                );
            }
        }
    }

    #[test]
    fn prefix_sum_roundoff_within_budget() {
        let g = Grid::unit_box(vec![64, 64]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..2 * g.cells()).map(|_| rng.gen_range(0.0..100.0)).collect();
        let f = TensorField::new(g.clone(), 1, v).unwrap();
        let table = PrefixTable::new(&f);
        let q = Cube::new(vec![3, 7], 50);
        let fast = table.cube_sum(&q);
        let slow: Vec<f64> = direct_mean(&f, &q).iter().map(|m| m * 2500.0).collect();
        let budget = 8.0 * f64::EPSILON * g.cells() as f64 * 100.0;
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= budget);
        }
    }

    #[test]
    fn lp_norms() {
        let g = Grid::unit_box(vec![8, 8]).unwrap();
        let one = TensorField::constant(g.clone(), &Mat::from_vec(1, 2, vec![1.0, 0.0])).unwrap();
        for p in [1.0, 2.0, 3.5, 10.0] {
            assert!((lp_norm(&one, p).unwrap() - 1.0).abs() < 1e-14);
        }
        assert_eq!(lp_norm(&TensorField::zeros(g.clone(), 1), 2.0).unwrap(), 0.0);
        assert!(matches!(lp_norm(&one, 0.5), Err(Error::Domain(_))));
        assert!(lp_norm(&one, f64::NAN).is_err());
        assert_eq!(linf_norm(&one), 1.0);

        let f = random_field(&g, 2, 3);
        let direct: f64 = (0..g.cells())
            .map(|c| f.cell(c).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            * g.cell_volume();
        let l2 = lp_norm(&f, 2.0).unwrap();
        assert!((l2 - direct.sqrt()).abs() < 1e-13 * l2);
        let alpha = -3.25;
        let scaled = lp_norm(&f.scaled(alpha), 3.0).unwrap();
        assert!((scaled - alpha.abs() * lp_norm(&f, 3.0).unwrap()).abs() < 1e-13);
        assert!((linf_norm(&f.scaled(alpha)) - alpha.abs() * linf_norm(&f)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_values_rejected() {
        let g = Grid::unit_box(vec![2]).unwrap();
        assert!(TensorField::new(g.clone(), 1, vec![0.0, f64::NAN]).is_err());
        assert!(TensorField::new(g.clone(), 1, vec![0.0]).is_err());
        assert!(ScalarGridFunction::new(g, 1, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn gradient_exact_on_affine() {
        let g = Grid::new(vec![5, 6, 4], 0.3, vec![0.1, -0.2, 0.7]).unwrap();
        let a = [[1.0, -2.0, 0.5], [0.25, 3.0, -1.0]];
        let u = ScalarGridFunction::from_fn(g.clone(), 2, |x, out| {
            for i in 0..2 {
                out[i] = 0.3 + (0..3).map(|j| a[i][j] * x[j]).sum::<f64>();
            }
        })
        .unwrap();
        let grad = gradient(&u);
        assert_eq!((grad.rows(), grad.cols()), (2, 3));
        for c in 0..g.cells() {
            for (v, want) in grad.cell(c).iter().zip(a.iter().flatten()) {
                assert!((v - want).abs() < 1e-12);
            }
        }
        let constant = ScalarGridFunction::from_fn(g, 1, |_, o| o[0] = 4.2).unwrap();
        assert!(gradient(&constant).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_first_order_on_sine() {
        let err = |m: usize| {
            let g = Grid::unit_box(vec![m]).unwrap();
            let u = ScalarGridFunction::from_fn(g.clone(), 1, |x, o| o[0] = (3.0 * x[0]).sin())
                .unwrap();
            let grad = gradient(&u);
            (0..g.cells())
                .map(|c| (grad.cell(c)[0] - 3.0 * (3.0 * g.center(c)[0]).cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        let order = (e1 / e2).log2();
        assert!(order >= 0.9, "observed order {order}");
    }

    #[test]
    fn adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for shape in [vec![7], vec![4, 5], vec![3, 4, 3]] {
            let g = Grid::unit_box(shape).unwrap();
            let w = ScalarGridFunction::new(
                g.clone(),
                2,
                (0..2 * g.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let s = random_field(&g, 2, rng.gen());
            let lhs: f64 = s
                .values()
                .iter()
                .zip(gradient(&w).values())
                .map(|(a, b)| a * b)
                .sum();
            let adj = gradient_adjoint(&s);
            let rhs: f64 = adj.values().iter().zip(w.values()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }
}
