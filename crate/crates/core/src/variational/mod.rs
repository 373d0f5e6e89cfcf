//! Gradient energies `E(u) = ∫W(x, ∇u) - ∫b·u - ∫_𝒮 s·u` on boxes: first and
//! second variations, the discrete Euler–Lagrange solve, the coercivity
//! estimate, and the BMO-neighbourhood stress test.
//!
//! A [`Problem`] fixes the integrand, boundary condition and loads. Degrees of
//! freedom are cell values; cells adjacent to a Dirichlet face are fixed, and
//! without Dirichlet faces functions are normalized to mean zero.

mod boundary;
mod eigen;
mod generators;
mod solver;
mod stress;

pub use boundary::{AffineData, BcKind, BoundaryCondition, Loads};
pub use eigen::{lambda_min, LambdaEstimate, LambdaOptions};
pub use generators::{generate, Generator, ALL_GENERATORS};
pub use solver::{solve_el, Equilibrium, SolveOptions, SolveStatus};
pub use stress::{
    certify_delta, minimizer_stress_test, remark_q_variant, QVariantReport, QVariantRow,
    SkippedSample, StressOptions, StressReport, StressSample, SweepReport, SweepTrial,
};

use crate::error::{Error, Result};
use crate::field::{gradient, gradient_adjoint, ScalarGridFunction, TensorField};
use crate::grid::Grid;
use crate::integrand::Integrand;
use crate::numeric::pairwise_sum;

#[derive(Debug, Clone)]
pub struct Problem {
    integrand: Integrand,
    bc: BoundaryCondition,
    grid: Grid,
    components: usize,
    /// Per cell: value prescribed by Dirichlet data.
    fixed: Vec<bool>,
    load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElResidual {
    /// Energy gradient per unit cell volume, projected onto the free directions.
    pub field: ScalarGridFunction,
    /// `(Σ |r|² hⁿ)^{1/2}`.
    pub norm: f64,
}

impl Problem {
    pub fn new(grid: Grid, integrand: Integrand, bc: BoundaryCondition, loads: Loads) -> Result<Self> {
        if integrand.cols() != grid.dim() {
            return Err(Error::config(format!(
                "integrand acts on {}×{} matrices but the grid is {}-dimensional",
                integrand.rows(),
                integrand.cols(),
                grid.dim()
            )));
        }
        let components = integrand.rows();
        let faces = bc.faces_on(&grid, components)?;
        let mut fixed = vec![false; grid.cells()];
        for face in &faces {
            for c in grid.face_cells(*face) {
                fixed[c] = true;
            }
        }
        let load = loads.density(&grid, components, &faces)?;
        Ok(Problem {
            integrand,
            bc,
            grid,
            components,
            fixed,
            load,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn integrand(&self) -> &Integrand {
        &self.integrand
    }

    pub fn bc(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_fixed(&self, cell: usize) -> bool {
        self.fixed[cell]
    }

    pub fn has_loads(&self) -> bool {
        self.load.iter().any(|&v| v != 0.0)
    }

    fn mean_zero(&self) -> bool {
        self.bc.is_neumann()
    }

    /// Projects a vector of cell values onto the variation space in place.
    pub(crate) fn project(&self, v: &mut [f64]) {
        let m = self.components;
        if self.mean_zero() {
            let cells = self.grid.cells();
            for i in 0..m {
                let column: Vec<f64> = (0..cells).map(|c| v[c * m + i]).collect();
                let mean = pairwise_sum(&column) / cells as f64;
                for c in 0..cells {
                    v[c * m + i] -= mean;
                }
            }
        } else {
            for (c, &f) in self.fixed.iter().enumerate() {
                if f {
                    v[c * m..(c + 1) * m].iter_mut().for_each(|x| *x = 0.0);
                }
            }
        }
    }

    fn check_shape(&self, u: &ScalarGridFunction) -> Result<()> {
        if u.grid() != &self.grid || u.components() != self.components {
            return Err(Error::domain("grid function does not match the problem"));
        }
        Ok(())
    }

    /// `Ok` when `w` lies in the variation space: zero on Dirichlet cells, or
    /// mean zero when there are none.
    pub fn check_variation(&self, w: &ScalarGridFunction) -> Result<()> {
        self.check_shape(w)?;
        let m = self.components;
        if self.mean_zero() {
            let scale = w.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if w.mean().iter().any(|mu| mu.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
                return Err(Error::precondition("variation is not mean-zero"));
            }
        } else if let Some(c) = (0..self.grid.cells())
            .find(|&c| self.fixed[c] && w.values()[c * m..(c + 1) * m].iter().any(|&x| x != 0.0))
        {
            return Err(Error::precondition(format!(
                "variation is nonzero on Dirichlet cell {c}"
            )));
        }
        Ok(())
    }

    /// Cell values of the Dirichlet data (zero elsewhere and when there is none).
    pub fn boundary_values(&self) -> ScalarGridFunction {
        let mut u = ScalarGridFunction::zeros(self.grid.clone(), self.components);
        if let Some(d) = &self.bc.data {
            let m = self.components;
            let n = self.grid.dim();
            let vals = u.values_mut();
            for c in 0..self.grid.cells() {
                if self.fixed[c] {
                    let x = self.grid.center(c);
                    d.eval(&x[..n], &mut vals[c * m..(c + 1) * m]);
                }
            }
        }
        u
    }

    /// The Dirichlet data extended affinely to every cell; zero for Neumann.
    pub fn affine_interpolant(&self) -> ScalarGridFunction {
        match (&self.bc.data, self.mean_zero()) {
            (Some(d), false) => {
                ScalarGridFunction::from_fn(self.grid.clone(), self.components, |x, out| d.eval(x, out))
                    .expect("affine data is finite")
            }
            _ => ScalarGridFunction::zeros(self.grid.clone(), self.components),
        }
    }

    /// `Ok` when `u` matches the Dirichlet data (or is mean-zero for Neumann).
    pub fn check_admissible(&self, u: &ScalarGridFunction) -> Result<()> {
        self.check_shape(u)?;
        if self.mean_zero() {
            return self.check_variation(u);
        }
        let d = self.boundary_values();
        let m = self.components;
        for c in (0..self.grid.cells()).filter(|&c| self.fixed[c]) {
            let (a, b) = (&u.values()[c * m..(c + 1) * m], &d.values()[c * m..(c + 1) * m]);
            if a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + y.abs())) {
                return Err(Error::precondition(format!(
                    "u does not match the Dirichlet data on cell {c}"
                )));
            }
        }
        Ok(())
    }

    fn load_work(&self, u: &[f64]) -> f64 {
        let terms: Vec<f64> = self.load.iter().zip(u).map(|(a, b)| a * b).collect();
        pairwise_sum(&terms) * self.grid.cell_volume()
    }

    fn cell_x(&self, c: usize) -> [f64; crate::grid::MAX_DIM] {
        self.grid.center(c)
    }

    /// `E(u)`.
    pub fn energy(&self, u: &ScalarGridFunction) -> Result<f64> {
        self.check_shape(u)?;
        Ok(energy(&self.integrand, u) - self.load_work(u.values()))
    }

    /// `E(u + w) - E(u)` summed as per-cell differences.
    pub fn energy_difference(&self, u: &ScalarGridFunction, w: &ScalarGridFunction) -> Result<f64> {
        self.check_shape(u)?;
        self.check_shape(w)?;
        let gu = gradient(u);
        let gw = gradient(w);
        let n = self.grid.dim();
        let mut kv = vec![0.0; gu.components()];
        let diffs: Vec<f64> = (0..self.grid.cells())
            .map(|c| {
                let x = self.cell_x(c);
                for ((o, a), b) in kv.iter_mut().zip(gu.cell(c)).zip(gw.cell(c)) {
                    *o = a + b;
                }
                self.integrand.value(&x[..n], &kv) - self.integrand.value(&x[..n], gu.cell(c))
            })
            .collect();
        Ok(pairwise_sum(&diffs) * self.grid.cell_volume() - self.load_work(w.values()))
    }

    /// `DW(x, ∇u)` at every cell.
    pub(crate) fn stress_field(&self, grad: &TensorField) -> TensorField {
        let n = self.grid.dim();
        let m = grad.components();
        let mut out = vec![0.0; grad.values().len()];
        for c in 0..self.grid.cells() {
            let x = self.cell_x(c);
            self.integrand
                .stress(&x[..n], grad.cell(c), &mut out[c * m..(c + 1) * m]);
        }
        TensorField::new(self.grid.clone(), grad.rows(), out).expect("finite stress")
    }

    /// Unprojected energy gradient per unit cell volume.
    fn raw_residual(&self, u: &ScalarGridFunction) -> Vec<f64> {
        let sigma = self.stress_field(&gradient(u));
        let mut r = gradient_adjoint(&sigma).into_values();
        for (a, b) in r.iter_mut().zip(&self.load) {
            *a -= b;
        }
        r
    }

    pub(crate) fn norm_h(&self, v: &[f64]) -> f64 {
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        (pairwise_sum(&sq) * self.grid.cell_volume()).sqrt()
    }

    pub(crate) fn dot_h(&self, a: &[f64], b: &[f64]) -> f64 {
        let t: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        pairwise_sum(&t) * self.grid.cell_volume()
    }

    /// Discrete Euler–Lagrange residual and its norm.
    pub fn el_residual(&self, u: &ScalarGridFunction) -> Result<ElResidual> {
        self.check_shape(u)?;
        let mut r = self.raw_residual(u);
        self.project(&mut r);
        let norm = self.norm_h(&r);
        Ok(ElResidual {
            field: ScalarGridFunction::new(self.grid.clone(), self.components, r)?,
            norm,
        })
    }

    /// `δE(u)[w] = ∫DW(∇u):∇w - ∫b·w - ∫_𝒮 s·w`.
    pub fn first_variation(&self, u: &ScalarGridFunction, w: &ScalarGridFunction) -> Result<f64> {
        self.check_shape(u)?;
        self.check_variation(w)?;
        let sigma = self.stress_field(&gradient(u));
        let gw = gradient(w);
        let terms: Vec<f64> = sigma.values().iter().zip(gw.values()).map(|(a, b)| a * b).collect();
        Ok(pairwise_sum(&terms) * self.grid.cell_volume() - self.load_work(w.values()))
    }

    /// `δ²E(u)[z₁, z₂] = ∫D²W(∇u)[∇z₁, ∇z₂]`.
    pub fn second_variation(
        &self,
        u: &ScalarGridFunction,
        z1: &ScalarGridFunction,
        z2: &ScalarGridFunction,
    ) -> Result<f64> {
        self.check_shape(u)?;
        self.check_variation(z1)?;
        self.check_variation(z2)?;
        let gu = gradient(u);
        Ok(self.hessian_form(&gu, &gradient(z1), &gradient(z2)))
    }

    pub(crate) fn hessian_form(&self, gu: &TensorField, g1: &TensorField, g2: &TensorField) -> f64 {
        let n = self.grid.dim();
        let m = gu.components();
        let mut tmp = vec![0.0; m];
        let terms: Vec<f64> = (0..self.grid.cells())
            .map(|c| {
                let x = self.cell_x(c);
                self.integrand
                    .hessian_apply(&x[..n], gu.cell(c), g1.cell(c), &mut tmp);
                tmp.iter().zip(g2.cell(c)).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        pairwise_sum(&terms) * self.grid.cell_volume()
    }

    /// Projected `∇ᵀ D²W(∇u)[∇v]` per unit cell volume.
    pub(crate) fn hessian_apply(&self, gu: &TensorField, v: &[f64]) -> Vec<f64> {
        let gv = gradient(&self.wrap(v));
        let n = self.grid.dim();
        let m = gu.components();
        let mut out = vec![0.0; gv.values().len()];
        for c in 0..self.grid.cells() {
            let x = self.cell_x(c);
            self.integrand
                .hessian_apply(&x[..n], gu.cell(c), gv.cell(c), &mut out[c * m..(c + 1) * m]);
        }
        let t = TensorField::new(self.grid.clone(), gu.rows(), out).expect("finite");
        let mut r = gradient_adjoint(&t).into_values();
        self.project(&mut r);
        r
    }

    /// Projected `∇ᵀ∇ v`.
    pub(crate) fn laplacian_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut r = gradient_adjoint(&gradient(&self.wrap(v))).into_values();
        self.project(&mut r);
        r
    }

    pub(crate) fn wrap(&self, v: &[f64]) -> ScalarGridFunction {
        ScalarGridFunction::new(self.grid.clone(), self.components, v.to_vec()).expect("finite values")
    }

    /// Solves `∇ᵀ∇ x = b` on the variation space by conjugate gradients.
    pub(crate) fn laplacian_solve(&self, b: &[f64], rtol: f64) -> Vec<f64> {
        let mut rhs = b.to_vec();
        self.project(&mut rhs);
        let mut x = vec![0.0; rhs.len()];
        let mut r = rhs.clone();
        let mut p = r.clone();
        let dot = |a: &[f64], b: &[f64]| pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>());
        let mut rr = dot(&r, &r);
        let stop = rtol * rtol * rr;
        for _ in 0..10 * rhs.len().max(10) {
            if rr <= stop || rr == 0.0 {
                break;
            }
            let ap = self.laplacian_apply(&p);
            let alpha = rr / dot(&p, &ap);
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..p.len() {
                p[i] = r[i] + beta * p[i];
            }
        }
        self.project(&mut x);
        x
    }
}

/// `∫W(x, ∇u)` by the midpoint rule, without loads.
pub fn energy(w: &Integrand, u: &ScalarGridFunction) -> f64 {
    let g = gradient(u);
    let grid = u.grid();
    let n = grid.dim();
    let vals: Vec<f64> = (0..grid.cells())
        .map(|c| {
            let x = grid.center(c);
            w.value(&x[..n], g.cell(c))
        })
        .collect();
    pairwise_sum(&vals) * grid.cell_volume()
}


#[cfg(test)]
mod tests;
