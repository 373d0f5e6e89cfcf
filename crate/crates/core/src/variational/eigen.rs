//! Smallest generalized Rayleigh quotient `δ²E(u)[z, z] / ∫|∇z|²`.
//!
//! Locally optimal block iteration with one vector: Rayleigh–Ritz on
//! `span{z, T(Sz - ρLz), p}` where `T` inverts the discrete Laplacian `L`
//! and `p` is the previous update. Each Ritz value is the minimum over a
//! subspace containing the current iterate, so the sequence never increases.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::error::{Error, Result};
use crate::field::{gradient, ScalarGridFunction};
use crate::numeric::pairwise_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaOptions {
    pub max_iter: usize,
    /// Stop when `‖Sz - ρLz‖ ≤ tol·|ρ|·‖Lz‖`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        LambdaOptions {
            max_iter: 300,
            tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    /// Rayleigh quotient after each iteration, starting with the seed vector.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn lambda_min(problem: &Problem, u: &ScalarGridFunction, opts: &LambdaOptions) -> Result<LambdaEstimate> {
    let gu = gradient(u);
    let s_apply = |v: &[f64]| problem.hessian_apply(&gu, v);
    let l_apply = |v: &[f64]| problem.laplacian_apply(v);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z: Vec<f64> = (0..u.values().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    problem.project(&mut z);
    let mut lz = l_apply(&z);
    let zlz = dot(&z, &lz);
    if !(zlz > 0.0) {
        return Err(Error::domain(
            "no admissible variation with nonzero gradient: ∫|∇z|² = 0",
        ));
    }
    let scale = 1.0 / zlz.sqrt();
    z.iter_mut().for_each(|v| *v *= scale);
    lz.iter_mut().for_each(|v| *v *= scale);
    let mut sz = s_apply(&z);
    let mut rho = dot(&z, &sz);
    let mut history = vec![rho];
    let mut p: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut rel = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let res: Vec<f64> = sz.iter().zip(&lz).map(|(s, l)| s - rho * l).collect();
        rel = norm(&res) / (rho.abs() * norm(&lz)).max(f64::MIN_POSITIVE);
        if rel <= opts.tol {
            converged = true;
            break;
        }
        let t = problem.laplacian_solve(&res, 1e-8);

        // L-orthonormal basis starting from z.
        let mut basis: Vec<(Vec<f64>, Vec<f64>)> = vec![(z.clone(), lz.clone())];
        for cand in std::iter::once(t).chain(p.take()) {
            let mut v = cand;
            let mut lv = l_apply(&v);
            let before = dot(&v, &lv).max(0.0).sqrt();
            for _ in 0..2 {
                for (b, lb) in &basis {
                    let c = dot(&v, lb);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                    lv.iter_mut().zip(lb).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nv = dot(&v, &lv).max(0.0).sqrt();
            if nv > 1e-10 * before && nv > 0.0 {
                v.iter_mut().for_each(|x| *x /= nv);
                lv.iter_mut().for_each(|x| *x /= nv);
                basis.push((v, lv));
            }
        }
        let sv: Vec<Vec<f64>> = std::iter::once(sz.clone())
            .chain(basis[1..].iter().map(|(v, _)| s_apply(v)))
            .collect();
        let k = basis.len();
        let mut gram_s = DMatrix::zeros(k, k);
        let mut gram_l = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                gram_s[(i, j)] = 0.5 * (dot(&basis[i].0, &sv[j]) + dot(&basis[j].0, &sv[i]));
                gram_l[(i, j)] = 0.5 * (dot(&basis[i].0, &basis[j].1) + dot(&basis[j].0, &basis[i].1));
            }
        }
        // The basis is L-orthonormal up to roundoff; solve the small
        // generalized problem through a Cholesky factor anyway.
        let Some(chol) = gram_l.clone().cholesky() else {
            break;
        };
        let linv = chol.l().try_inverse().expect("triangular factor is invertible");
        let reduced = &linv * &gram_s * linv.transpose();
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let eig = SymmetricEigen::new(reduced);
        let (imin, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty basis");
        if !(theta < rho) {
            // Already minimal on this subspace to roundoff.
            iterations += 1;
            history.push(rho);
            converged = rel <= opts.tol.sqrt();
            break;
        }
        let y = linv.transpose() * eig.eigenvectors.column(imin);
        let mut znew = vec![0.0; z.len()];
        let mut lznew = vec![0.0; z.len()];
        let mut sznew = vec![0.0; z.len()];
        let mut pnew = vec![0.0; z.len()];
        for (i, (b, lb)) in basis.iter().enumerate() {
            let c = y[i];
            for idx in 0..z.len() {
                znew[idx] += c * b[idx];
                lznew[idx] += c * lb[idx];
                sznew[idx] += c * sv[i][idx];
                if i > 0 {
                    pnew[idx] += c * b[idx];
                }
            }
        }
        let nz = dot(&znew, &lznew).sqrt();
        for v in [&mut znew, &mut lznew, &mut sznew, &mut pnew] {
            v.iter_mut().for_each(|x| *x /= nz);
        }
        z = znew;
        lz = lznew;
        sz = sznew;
        rho = theta;
        p = Some(pnew);
        iterations += 1;
        history.push(rho);
    }
    Ok(LambdaEstimate {
        lambda: rho,
        iterations,
        converged,
        relative_residual: rel,
        history,
    })
}
