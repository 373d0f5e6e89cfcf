//! Discrete Euler–Lagrange solve.
//!
//! Descent runs in the `H¹` metric: the direction is `-(∇ᵀ∇)⁻¹ r` for the
//! projected residual `r`, the trial step is the Newton step of the energy
//! along that line, and an Armijo backtracking search accepts it.

use serde::{Deserialize, Serialize};

use super::eigen::{lambda_min, LambdaEstimate, LambdaOptions};
use super::Problem;
use crate::error::Result;
use crate::field::{gradient, ScalarGridFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub lambda: LambdaOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 500,
            lambda: LambdaOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No step along the descent direction decreased the energy or the residual.
    Stalled,
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    #[serde(skip)]
    pub u_e: ScalarGridFunction,
    pub el_residual_norm: f64,
    /// Estimated `λ` with `δ²E(u_e)[z, z] ≥ λ∫|∇z|²`; `a = λ/4`.
    pub coercivity_4a: f64,
    pub solver_iterations: usize,
    pub status: SolveStatus,
    pub energy: f64,
    pub lambda: LambdaEstimate,
}

impl Equilibrium {
    pub fn a(&self) -> f64 {
        self.coercivity_4a / 4.0
    }

    /// A copy with `coercivity_4a` replaced, e.g. to rerun a stress test with a smaller `a`.
    pub fn with_coercivity(&self, coercivity_4a: f64) -> Self {
        Equilibrium {
            coercivity_4a,
            ..self.clone()
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Minimizes the discrete energy from `init`. Non-convergence is reported in
/// `status` with the best iterate, not as an error.
pub fn solve_el(problem: &Problem, init: &ScalarGridFunction, opts: &SolveOptions) -> Result<Equilibrium> {
    let mut u = init.clone();
    if problem.mean_zero() {
        problem.project(u.values_mut());
    }
    problem.check_admissible(&u)?;

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut last_alpha = 1.0;
    let mut res = problem.el_residual(&u)?;
    while iterations < opts.max_iter {
        if res.norm <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        let r = res.field.values();
        let mut d: Vec<f64> = problem.laplacian_solve(r, 1e-12).iter().map(|v| -v).collect();
        let mut slope = problem.dot_h(r, &d);
        if !(slope < 0.0) {
            d = r.iter().map(|v| -v).collect();
            slope = problem.dot_h(r, &d);
        }
        let dfun = problem.wrap(&d);
        let gd = gradient(&dfun);
        let curvature = problem.hessian_form(&gradient(&u), &gd, &gd);
        let mut alpha = if curvature > 0.0 { -slope / curvature } else { 2.0 * last_alpha };

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let step = dfun.scaled(alpha);
            let de = problem.energy_difference(&u, &step)?;
            let trial = u.axpy(1.0, &step)?;
            if de <= ARMIJO * alpha * slope {
                accepted = Some(trial);
                break;
            }
            // Near convergence the energy change drowns in roundoff; a step
            // that does not raise the energy and shrinks the residual is kept.
            if de <= 1e-14 * problem.energy(&u)?.abs().max(1.0) {
                let tr = problem.el_residual(&trial)?;
                if tr.norm < res.norm {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some(next) => {
                u = next;
                last_alpha = alpha;
                res = problem.el_residual(&u)?;
            }
            None => {
                status = SolveStatus::Stalled;
                break;
            }
        }
    }
    if status == SolveStatus::MaxIterations && res.norm <= opts.tol {
        status = SolveStatus::Converged;
    }
    let lambda = lambda_min(problem, &u, &opts.lambda)?;
    Ok(Equilibrium {
        el_residual_norm: res.norm,
        coercivity_4a: lambda.lambda,
        solver_iterations: iterations,
        status,
        energy: problem.energy(&u)?,
        lambda,
        u_e: u,
    })
}
