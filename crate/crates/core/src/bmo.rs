//! BMO seminorm and norm on grid fields.
//!
//! `⦀F⦀ = sup_Q ⨍_Q |F - ⟨F⟩_Q|` over cell-aligned cubes, and
//! `‖F‖_BMO = ⦀F⦀ + |⟨F⟩_Ω|`. Two engines compute the seminorm: a table-based
//! sweep with exact pruning, and a direct two-pass oracle. Both return the
//! first maximizing cube in enumeration order.
//!
//! The interpolation ratio `‖F‖_q / (‖F‖_BMO^{1-p/q} ‖F‖_p^{p/q})` and the
//! embedding ratio `(⨍|F|^q)^{1/q} / ‖F‖_BMO` are computed here too; their
//! suprema over a family of fields give empirical constants `J₂` and `J₁`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{linf_norm, lp_norm, PrefixTable, TensorField};
use crate::grid::{cube_count, cube_origins, cube_sides, Cube, CubeMode, Grid};
use crate::numeric::frob_norm;

pub const DEFAULT_BRUTEFORCE_BUDGET: usize = 10_000_000;

/// Below this many cubes of one side the sweep stays on the calling thread.
const PARALLEL_MIN_CUBES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub seminorm: f64,
    pub mean_abs: f64,
    pub bmo_norm: f64,
    pub argmax_cube: Cube,
    pub mode: CubeMode,
    pub cubes_examined: usize,
}

impl NormReport {
    fn assemble(field: &TensorField, best: Best, mode: CubeMode, examined: usize) -> Self {
        let mean_abs = field.mean().frob_norm();
        NormReport {
            seminorm: best.value,
            mean_abs,
            bmo_norm: best.value + mean_abs,
            argmax_cube: best.cube,
            mode,
            cubes_examined: examined,
        }
    }
}

#[derive(Debug, Clone)]
struct Best {
    value: f64,
    index: usize,
    cube: Cube,
}

impl Best {
    /// Larger value wins; equal values go to the earlier cube.
    fn better(self, other: Best) -> Best {
        if other.value > self.value || (other.value == self.value && other.index < self.index) {
            other
        } else {
            self
        }
    }
}

/// Seminorm sweep over `enumerate_cubes(grid, mode)`.
///
/// Cube means come from a [`PrefixTable`]; each surviving cube is scanned once.
/// A cube is skipped when `sqrt(⨍_Q|F - ⟨F⟩_Q|²)`, an upper bound on its
/// oscillation, is certainly below the running sup, and the sweep stops once
/// the sup reaches the global cap `2·max|F - ⟨F⟩_Ω|`. Neither shortcut can
/// change the result or the tie-break.
pub fn bmo_seminorm(field: &TensorField, mode: CubeMode) -> NormReport {
    let grid = field.grid();
    let table = PrefixTable::new(field);
    let m = field.components();

    let global_mean = field.mean();
    let cap = 2.0
        * (0..grid.cells())
            .map(|c| {
                let d: Vec<f64> = field
                    .cell(c)
                    .iter()
                    .zip(&global_mean.data)
                    .map(|(a, b)| a - b)
                    .collect();
                frob_norm(&d)
            })
            .fold(0.0, f64::max);
    let scale_sq = table
        .centered()
        .chunks_exact(m)
        .map(|cell| cell.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let slack_sq = 1e-9 * scale_sq;

    let first = Cube::new(vec![0; grid.dim()], 1);
    let mut best = Best {
        value: 0.0,
        index: 0,
        cube: first,
    };
    let mut offset = 0usize;
    for side in cube_sides(grid, mode) {
        let origins = cube_origins(grid, side, mode);
        let count = origins.len();
        if side == 1 || best.value >= cap {
            offset += count;
            continue;
        }
        let threshold = best.value;
        let scan = |(i, origin): (usize, &Vec<usize>), scratch: &mut Vec<f64>| -> Option<Best> {
            let cube = Cube::new(origin.clone(), side);
            let mut mean = vec![0.0; m];
            table.centered_mean(&cube, &mut mean);
            let var = table.centered_mean_square(&cube) - mean.iter().map(|v| v * v).sum::<f64>();
            if var + slack_sq < threshold * threshold {
                return None;
            }
            let value = table.oscillation(grid, &cube, scratch);
            Some(Best {
                value,
                index: offset + i,
                cube,
            })
        };
        let side_best = if count >= PARALLEL_MIN_CUBES {
            origins
                .par_iter()
                .enumerate()
                .map_init(|| vec![0.0; m], |scratch, item| scan(item, scratch))
                .flatten()
                .reduce_with(Best::better)
        } else {
            let mut scratch = vec![0.0; m];
            origins
                .iter()
                .enumerate()
                .filter_map(|item| scan(item, &mut scratch))
                .reduce(Best::better)
        };
        if let Some(b) = side_best {
            best = best.better(b);
        }
        offset += count;
    }
    NormReport::assemble(field, best, mode, cube_count(grid, mode))
}

/// `‖F‖_BMO` over all cubes.
pub fn bmo_norm(field: &TensorField) -> f64 {
    bmo_seminorm(field, CubeMode::All).bmo_norm
}

/// Brute-force oracle over every cube (`mode = all`), default budget.
pub fn bmo_seminorm_bruteforce(field: &TensorField) -> Result<NormReport> {
    bmo_seminorm_bruteforce_with(field, CubeMode::All, DEFAULT_BRUTEFORCE_BUDGET)
}

/// Direct two-pass computation per cube, no tables and no pruning. Each cube's
/// values are shifted by its first cell before averaging.
pub fn bmo_seminorm_bruteforce_with(
    field: &TensorField,
    mode: CubeMode,
    budget: usize,
) -> Result<NormReport> {
    let grid = field.grid();
    let total = cube_count(grid, mode);
    if total > budget {
        return Err(Error::Resource(format!(
            "{total} cubes exceed the brute-force budget of {budget}"
        )));
    }
    let m = field.components();
    let mut best = Best {
        value: 0.0,
        index: 0,
        cube: Cube::new(vec![0; grid.dim()], 1),
    };
    let mut index = 0usize;
    let mut cells = Vec::new();
    let mut mean = vec![0.0; m];
    for side in cube_sides(grid, mode) {
        for origin in cube_origins(grid, side, mode) {
            let cube = Cube::new(origin, side);
            cells.clear();
            let extent = vec![side; grid.dim()];
            grid.for_each_in_box(&cube.origin, &extent, |c| cells.push(c));

            let base = field.cell(cells[0]);
            mean.iter_mut().for_each(|v| *v = 0.0);
            for &c in &cells {
                for ((acc, v), b) in mean.iter_mut().zip(field.cell(c)).zip(base) {
                    *acc += v - b;
                }
            }
            mean.iter_mut().for_each(|v| *v /= cells.len() as f64);

            let mut osc = 0.0;
            for &c in &cells {
                let sq: f64 = field
                    .cell(c)
                    .iter()
                    .zip(base)
                    .zip(&mean)
                    .map(|((v, b), mu)| {
                        let d = (v - b) - mu;
                        d * d
                    })
                    .sum();
                osc += sq.sqrt();
            }
            osc /= cells.len() as f64;
            best = best.better(Best {
                value: osc,
                index,
                cube,
            });
            index += 1;
        }
    }
    Ok(NormReport::assemble(field, best, mode, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationCheck {
    pub holds: bool,
    /// `2‖F‖_∞ - ⦀F⦀`.
    pub margin: f64,
    pub seminorm: f64,
    pub linf: f64,
}

/// Checks `⦀F⦀ ≤ 2‖F‖_∞`.
pub fn linf_domination_check(field: &TensorField) -> DominationCheck {
    let seminorm = bmo_seminorm(field, CubeMode::All).seminorm;
    let linf = linf_norm(field);
    let margin = 2.0 * linf - seminorm;
    DominationCheck {
        holds: margin >= 0.0,
        margin,
        seminorm,
        linf,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub p: f64,
    pub q: f64,
    /// `‖F‖_q`.
    pub lhs: f64,
    /// `‖F‖_BMO^{1-p/q} · ‖F‖_p^{p/q}`.
    pub rhs_factor: f64,
    pub ratio: f64,
    pub j2_estimate: f64,
}

fn check_exponents(p: f64, q: f64) -> Result<()> {
    if !(p >= 1.0 && q > p && q.is_finite()) {
        return Err(Error::domain(format!(
            "interpolation exponents need 1 ≤ p < q < ∞, got p = {p}, q = {q}"
        )));
    }
    Ok(())
}

/// Ratio `‖F‖_q / (‖F‖_BMO^{1-p/q} ‖F‖_p^{p/q})` for one field.
pub fn interpolation_ratio(field: &TensorField, p: f64, q: f64) -> Result<InterpolationReport> {
    interpolation_ratio_with_norm(field, p, q, bmo_norm(field))
}

/// As [`interpolation_ratio`] with a precomputed `‖F‖_BMO`.
pub fn interpolation_ratio_with_norm(
    field: &TensorField,
    p: f64,
    q: f64,
    bmo: f64,
) -> Result<InterpolationReport> {
    check_exponents(p, q)?;
    let lhs = lp_norm(field, q)?;
    if lhs == 0.0 {
        return Err(Error::domain(
            "interpolation ratio is undefined for the zero field",
        ));
    }
    let theta = p / q;
    let rhs_factor = bmo.powf(1.0 - theta) * lp_norm(field, p)?.powf(theta);
    let ratio = lhs / rhs_factor;
    Ok(InterpolationReport {
        p,
        q,
        lhs,
        rhs_factor,
        ratio,
        j2_estimate: ratio,
    })
}

/// Supremum of the interpolation ratio over `family`; zero fields are skipped.
pub fn calibrate_j2(family: &[TensorField], p: f64, q: f64) -> Result<f64> {
    Ok(calibrate_j2_report(family, p, q)?.j2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub p: f64,
    pub q: f64,
    pub j2: f64,
    pub members: Vec<InterpolationReport>,
}

pub fn calibrate_j2_report(family: &[TensorField], p: f64, q: f64) -> Result<CalibrationReport> {
    check_exponents(p, q)?;
    let mut members = family
        .par_iter()
        .filter(|f| f.values().iter().any(|&v| v != 0.0))
        .map(|f| interpolation_ratio(f, p, q))
        .collect::<Result<Vec<_>>>()?;
    if members.is_empty() {
        return Err(Error::domain("calibration family has no nonzero field"));
    }
    let j2 = members.iter().map(|r| r.ratio).fold(0.0, f64::max);
    members.iter_mut().for_each(|r| r.j2_estimate = j2);
    Ok(CalibrationReport { p, q, j2, members })
}

/// `(⨍_Ω |F|^q)^{1/q} / ‖F‖_BMO`.
pub fn embedding_ratio(field: &TensorField, q: f64) -> Result<f64> {
    let norm = bmo_norm(field);
    if norm == 0.0 {
        return Err(Error::domain("embedding ratio is undefined for the zero field"));
    }
    let avg = lp_norm(field, q)? / field.grid().measure().powf(1.0 / q);
    Ok(avg / norm)
}

/// Supremum of [`embedding_ratio`] over `family`.
pub fn calibrate_j1(family: &[TensorField], q: f64) -> Result<f64> {
    family
        .iter()
        .filter(|f| f.values().iter().any(|&v| v != 0.0))
        .map(|f| embedding_ratio(f, q))
        .try_fold(0.0, |acc, r| r.map(|r| f64::max(acc, r)))
}

/// `log|x - x₀|` in every component, with `x₀` displaced by `h/3` per axis
/// from the cell centre `anchor` so no sample hits the singularity.
pub fn log_field(grid: &Grid, rows: usize, anchor: &[usize]) -> Result<TensorField> {
    let h = grid.spacing();
    let x0: Vec<f64> = (0..grid.dim())
        .map(|a| grid.origin()[a] + anchor[a] as f64 * h + h / 3.0)
        .collect();
    TensorField::from_fn(grid.clone(), rows, |x, out| {
        let r = x
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        out.iter_mut().for_each(|v| *v = r.ln());
    })
}

/// Generator family for calibrating `J₁`/`J₂` on a grid: a constant, signed
/// and one-sided steps along each axis, log fields anchored at the centre and
/// at a corner, and `random_count` seeded uniform fields.
pub fn calibration_family(
    grid: &Grid,
    rows: usize,
    random_count: usize,
    seed: u64,
) -> Result<Vec<TensorField>> {
    let mut family = Vec::new();
    family.push(TensorField::from_fn(grid.clone(), rows, |_, out| {
        out.iter_mut().for_each(|v| *v = 1.0)
    })?);
    for axis in 0..grid.dim() {
        let mid = grid.origin()[axis] + 0.5 * (grid.shape()[axis] - 1) as f64 * grid.spacing();
        family.push(TensorField::from_fn(grid.clone(), rows, |x, out| {
            let s = if x[axis] > mid { 1.0 } else { -1.0 };
            out.iter_mut().for_each(|v| *v = s);
        })?);
        family.push(TensorField::from_fn(grid.clone(), rows, |x, out| {
            let s = if x[axis] > mid { 1.0 } else { 0.0 };
            out.iter_mut().for_each(|v| *v = s);
        })?);
    }
    let centre: Vec<usize> = grid.shape().iter().map(|s| s / 2).collect();
    family.push(log_field(grid, rows, &centre)?);
    family.push(log_field(grid, rows, &vec![0; grid.dim()])?);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rows * grid.dim() * grid.cells();
    for _ in 0..random_count {
        let values = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        family.push(TensorField::new(grid.clone(), rows, values)?);
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{cube_oscillation, Mat};

    fn random_field(grid: &Grid, rows: usize, rng: &mut ChaCha8Rng) -> TensorField {
        let len = rows * grid.dim() * grid.cells();
        TensorField::new(
            grid.clone(),
            rows,
            (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_field_has_zero_seminorm() {
        let g = Grid::unit_box(vec![6, 6]).unwrap();
        let c = Mat::from_vec(1, 2, vec![3.0, -4.0]);
        let f = TensorField::constant(g, &c).unwrap();
        for mode in [CubeMode::All, CubeMode::Dyadic] {
            let r = bmo_seminorm(&f, mode);
            assert_eq!(r.seminorm, 0.0);
            assert!((r.bmo_norm - 5.0).abs() < 1e-14);
        }
        assert_eq!(bmo_seminorm_bruteforce(&f).unwrap().seminorm, 0.0);
    }

    #[test]
    fn symmetric_step() {
        let g = Grid::unit_box(vec![2]).unwrap();
        let f = TensorField::new(g, 1, vec![-1.0, 1.0]).unwrap();
        let r = bmo_seminorm(&f, CubeMode::All);
        assert_eq!(r.seminorm, 1.0);
        assert_eq!(r.mean_abs, 0.0);
        assert_eq!(r.bmo_norm, 1.0);
        assert_eq!(r.argmax_cube, Cube::new(vec![0], 2));
        assert_eq!(r.cubes_examined, 3);
        let check = linf_domination_check(&f);
        assert!(check.holds);
        assert_eq!(check.margin, 1.0);
    }

    #[test]
    fn fast_matches_bruteforce_with_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for shape in [vec![16], vec![12, 9], vec![5, 6, 4]] {
            let g = Grid::unit_box(shape).unwrap();
            for rows in [1, 2] {
                let f = random_field(&g, rows, &mut rng);
                let fast = bmo_seminorm(&f, CubeMode::All);
                let slow = bmo_seminorm_bruteforce(&f).unwrap();
                assert!((fast.seminorm - slow.seminorm).abs() <= 1e-12 * slow.seminorm);
                assert_eq!(fast.argmax_cube, slow.argmax_cube);
                let at = cube_oscillation(&f, &fast.argmax_cube).unwrap();
                assert_eq!(at, fast.seminorm);
                let dy = bmo_seminorm_bruteforce_with(&f, CubeMode::Dyadic, 1_000_000).unwrap();
                let dy_fast = bmo_seminorm(&f, CubeMode::Dyadic);
                assert!((dy.seminorm - dy_fast.seminorm).abs() <= 1e-12 * dy.seminorm);
                assert!(dy_fast.seminorm <= fast.seminorm);
            }
        }
    }

    #[test]
    fn ties_go_to_first_cube() {
        // Two identical steps; the first side-2 cube straddling a jump wins.
        let g = Grid::unit_box(vec![6]).unwrap();
        let f = TensorField::new(g, 1, vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let fast = bmo_seminorm(&f, CubeMode::All);
        let slow = bmo_seminorm_bruteforce(&f).unwrap();
        assert_eq!(fast.argmax_cube, Cube::new(vec![0], 2));
        assert_eq!(slow.argmax_cube, fast.argmax_cube);
    }

    #[test]
    fn budget_exceeded_is_resource_error() {
        let g = Grid::unit_box(vec![8, 8]).unwrap();
        let f = TensorField::zeros(g, 1);
        assert!(matches!(
            bmo_seminorm_bruteforce_with(&f, CubeMode::All, 10),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn interpolation_ratio_of_constant_is_one() {
        let g = Grid::unit_box(vec![8, 8]).unwrap();
        let f = TensorField::constant(g.clone(), &Mat::from_vec(1, 2, vec![-2.0, 0.0])).unwrap();
        let r = interpolation_ratio(&f, 2.0, 3.0).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-14);
        assert!(matches!(
            interpolation_ratio(&TensorField::zeros(g, 1), 2.0, 3.0),
            Err(Error::Domain(_))
        ));
        assert!(interpolation_ratio(&f, 3.0, 2.0).is_err());
        assert!(interpolation_ratio(&f, 0.5, 2.0).is_err());
    }

    #[test]
    fn interpolation_ratio_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::unit_box(vec![10, 10]).unwrap();
        let f = random_field(&g, 1, &mut rng);
        let base = interpolation_ratio(&f, 2.0, 5.0).unwrap().ratio;
        for alpha in [-7.5, 1e-3, 40.0] {
            let r = interpolation_ratio(&f.scaled(alpha), 2.0, 5.0).unwrap().ratio;
            assert!((r - base).abs() <= 1e-12 * base);
        }
    }

    #[test]
    fn calibration_covers_members() {
        let g = Grid::unit_box(vec![8, 8]).unwrap();
        let family = calibration_family(&g, 1, 4, 1).unwrap();
        let report = calibrate_j2_report(&family, 3.0, 4.0).unwrap();
        assert_eq!(report.members.len(), family.len());
        assert!(report.members.iter().all(|m| m.ratio <= report.j2 && m.j2_estimate == report.j2));
        let j1 = calibrate_j1(&family, 3.0).unwrap();
        assert!(j1 > 0.0 && j1.is_finite());
    }

    #[test]
    fn log_field_avoids_singularity() {
        let g = Grid::unit_box(vec![9, 9]).unwrap();
        let f = log_field(&g, 2, &[4, 4]).unwrap();
        assert!(f.values().iter().all(|v| v.is_finite()));
        assert!(bmo_seminorm(&f, CubeMode::All).seminorm > 0.0);
    }
}
