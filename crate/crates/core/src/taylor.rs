//! Functional Taylor expansion of `∫W(x, G)` about `F` with `H = G - F`.
//!
//! ```text
//! ∫W(G) = Σ_{j<k} (1/j!) ∫DʲW(F)[Hʲ] + ∫R,   R = ∫₀¹ (1-t)^{k-1}/(k-1)! D^kW(F+tH)[Hᵏ] dt
//! ```
//!
//! With `c_r = max{1, 2^{r-1}}`, `C1 = c_k(1 + c_r‖F‖_∞^r)/(k-1)!` and
//! `C2 = c_k c_r/(k-1)!`, growth of `D^kW` gives `∫R ≤ C1∫|H|^k + C2∫|H|^{k+r}`,
//! and the interpolation inequality at `(p, q) = (k, k+r)` turns this into
//! `∫R ≤ (C1 + C2 J₂^{k+r} ‖H‖_BMO^r) ∫|H|^k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bmo::bmo_norm;
use crate::error::{Error, Result};
use crate::field::{linf_norm, lp_norm, TensorField};
use crate::integrand::Integrand;
use crate::numeric::{factorial, frob_norm, pairwise_sum, GaussLegendre};

pub const DEFAULT_NODES: usize = 8;

const PARALLEL_MIN_CELLS: usize = 1024;

/// Relative slack for comparisons between a quadrature value and a bound.
const BOUND_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_r: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub lhs: f64,
    pub expansion_terms: Vec<f64>,
    pub remainder_quadrature: f64,
    pub identity_gap: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub h_bmo: f64,
    pub h_k: f64,
    pub h_k_plus_r: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub c_bound: f64,
    pub inequality_margin: f64,
    pub k: usize,
    pub r: f64,
    pub c_k: f64,
    pub c_r: f64,
    pub f_linf: f64,
    pub j2: f64,
    /// Whether `‖H‖_{k+r} ≤ J₂ ‖H‖_BMO^{r/(k+r)} ‖H‖_k^{k/(k+r)}` holds for this `H`.
    pub j2_valid: bool,
    pub nodes: usize,
    /// `C1·h_k + C2·h_{k+r}`.
    pub integrated_bound: f64,
    pub integrated_bound_holds: bool,
    pub full_bound_holds: bool,
    /// Quadrature nodes (over all cells) where the pointwise bound fails.
    pub pointwise_violations: usize,
}

fn check_pair(w: &Integrand, f: &TensorField, h: &TensorField) -> Result<()> {
    f.check_same_shape(h)?;
    if f.rows() != w.rows() || f.cols() != w.cols() {
        return Err(Error::domain(format!(
            "fields are {}×{} but the integrand expects {}×{}",
            f.rows(),
            f.cols(),
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

/// Sums `f(cell)` over cells in a fixed pairwise order, in parallel on large grids.
fn cell_sum(cells: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let vals: Vec<f64> = if cells >= PARALLEL_MIN_CELLS {
        (0..cells).into_par_iter().map(&f).collect()
    } else {
        (0..cells).map(f).collect()
    };
    pairwise_sum(&vals)
}

/// `(1/j!) ∫ DʲW(F)[H…H]` for `j = 0…k-1`.
pub fn expansion_terms(w: &Integrand, f: &TensorField, h: &TensorField) -> Result<Vec<f64>> {
    check_pair(w, f, h)?;
    let grid = f.grid();
    let vol = grid.cell_volume();
    let n = grid.dim();
    Ok((0..w.k())
        .map(|j| {
            let s = cell_sum(grid.cells(), |c| {
                let x = grid.center(c);
                let hc = h.cell(c);
                let dirs = vec![hc; j];
                w.eval_unchecked(&x[..n], f.cell(c), &dirs)
            });
            s * vol / factorial(j)
        })
        .collect())
}

fn remainder_weight(k: usize, t: f64) -> f64 {
    (1.0 - t).powi(k as i32 - 1) / factorial(k - 1)
}

/// `∫R(F; H)` with `nodes`-point Gauss–Legendre quadrature in `t` per cell.
pub fn remainder_quadrature(w: &Integrand, f: &TensorField, h: &TensorField, nodes: usize) -> Result<f64> {
    check_pair(w, f, h)?;
    if nodes < 2 {
        return Err(Error::domain(format!("quadrature needs at least 2 nodes, got {nodes}")));
    }
    let gl = GaussLegendre::new(nodes);
    let grid = f.grid();
    let n = grid.dim();
    let k = w.k();
    let s = cell_sum(grid.cells(), |c| {
        let x = grid.center(c);
        let (fc, hc) = (f.cell(c), h.cell(c));
        let dirs = vec![hc; k];
        let mut kt = vec![0.0; fc.len()];
        gl.integrate(|t| {
            for ((o, a), b) in kt.iter_mut().zip(fc).zip(hc) {
                *o = a + t * b;
            }
            remainder_weight(k, t) * w.eval_unchecked(&x[..n], &kt, &dirs)
        })
    });
    Ok(s * grid.cell_volume())
}

/// `c_r`, `C1`, `C2` from the integrand's `(k, r, c_k)` and `‖F‖_∞`.
pub fn bound_constants(w: &Integrand, f: &TensorField) -> BoundConstants {
    constants_for(w.k(), w.r(), w.c_k(), linf_norm(f))
}

pub fn constants_for(k: usize, r: f64, c_k: f64, f_linf: f64) -> BoundConstants {
    let c_r = f64::max(1.0, 2f64.powf(r - 1.0));
    let kf = factorial(k - 1);
    BoundConstants {
        c_r,
        c1: c_k * (1.0 + c_r * f_linf.powf(r)) / kf,
        c2: c_k * c_r / kf,
    }
}

/// Counts `(cell, node)` pairs where `|t-integrand|` exceeds
/// `(c_k/(k-1)!)(|H|^k(1 + c_r‖F‖_∞^r) + c_r|H|^{k+r})`.
pub fn pointwise_violations(w: &Integrand, f: &TensorField, h: &TensorField, nodes: usize) -> Result<usize> {
    check_pair(w, f, h)?;
    let gl = GaussLegendre::new(nodes.max(2));
    let grid = f.grid();
    let n = grid.dim();
    let (k, r, c_k) = (w.k(), w.r(), w.c_k());
    let f_linf = linf_norm(f);
    let c = constants_for(k, r, c_k, f_linf);
    let count = |c_idx: usize| -> usize {
        let x = grid.center(c_idx);
        let (fc, hc) = (f.cell(c_idx), h.cell(c_idx));
        let hn = frob_norm(hc);
        let bound = c_k / factorial(k - 1)
            * (hn.powi(k as i32) * (1.0 + c.c_r * f_linf.powf(r)) + c.c_r * hn.powf(k as f64 + r));
        let dirs = vec![hc; k];
        let mut kt = vec![0.0; fc.len()];
        gl.nodes()
            .iter()
            .filter(|&&t| {
                for ((o, a), b) in kt.iter_mut().zip(fc).zip(hc) {
                    *o = a + t * b;
                }
                let v = remainder_weight(k, t) * w.eval_unchecked(&x[..n], &kt, &dirs);
                v.abs() > bound * (1.0 + BOUND_RTOL)
            })
            .count()
    };
    Ok(if grid.cells() >= PARALLEL_MIN_CELLS {
        (0..grid.cells()).into_par_iter().map(count).sum()
    } else {
        (0..grid.cells()).map(count).sum()
    })
}

/// Checks `∫W(G) ≥ Σterms - c·∫|H|^k` with `c = C1 + C2 J₂^{k+r} ‖H‖_BMO^r`.
pub fn verify_taylor_inequality(
    w: &Integrand,
    f: &TensorField,
    g: &TensorField,
    m: f64,
    j2: f64,
) -> Result<TaylorReport> {
    verify_taylor_inequality_with(w, f, g, m, j2, DEFAULT_NODES)
}

pub fn verify_taylor_inequality_with(
    w: &Integrand,
    f: &TensorField,
    g: &TensorField,
    m: f64,
    j2: f64,
    nodes: usize,
) -> Result<TaylorReport> {
    f.check_same_shape(g)?;
    if !(j2.is_finite() && j2 > 0.0) {
        return Err(Error::domain(format!("J₂ must be positive, got {j2}")));
    }
    let h = g.sub(f)?;
    let h_bmo = bmo_norm(&h);
    if !(h_bmo < m) {
        return Err(Error::precondition(format!(
            "‖G - F‖_BMO = {h_bmo:e} is not below M = {m:e}"
        )));
    }
    let (k, r) = (w.k(), w.r());
    let zero = TensorField::zeros(f.grid().clone(), f.rows());
    let lhs = expansion_terms(w, g, &zero)?[0];
    let terms = expansion_terms(w, f, &h)?;
    let remainder = remainder_quadrature(w, f, &h, nodes)?;
    let sum_terms = pairwise_sum(&terms);
    let identity_gap = (lhs - sum_terms - remainder).abs();

    let f_linf = linf_norm(f);
    let consts = constants_for(k, r, w.c_k(), f_linf);
    let kr = k as f64 + r;
    let h_k = h.power_integral(k as f64);
    let h_k_plus_r = h.power_integral(kr);
    let c_bound = consts.c1 + consts.c2 * j2.powf(kr) * h_bmo.powf(r);
    let inequality_margin = lhs - (sum_terms - c_bound * h_k);

    let j2_valid = if h_k == 0.0 {
        true
    } else {
        let theta = k as f64 / kr;
        let rhs = j2 * h_bmo.powf(1.0 - theta) * lp_norm(&h, k as f64)?.powf(theta);
        lp_norm(&h, kr)? <= rhs * (1.0 + BOUND_RTOL)
    };
    let integrated_bound = consts.c1 * h_k + consts.c2 * h_k_plus_r;
    let slack = BOUND_RTOL * (integrated_bound + remainder.abs());
    let integrated_bound_holds = remainder.abs() <= integrated_bound + slack;
    let full_bound_holds = remainder <= c_bound * h_k + BOUND_RTOL * (c_bound * h_k + remainder.abs());

    Ok(TaylorReport {
        lhs,
        expansion_terms: terms,
        remainder_quadrature: remainder,
        identity_gap,
        m,
        h_bmo,
        h_k,
        h_k_plus_r,
        c1: consts.c1,
        c2: consts.c2,
        c_bound,
        inequality_margin,
        k,
        r,
        c_k: w.c_k(),
        c_r: consts.c_r,
        f_linf,
        j2,
        j2_valid,
        nodes,
        integrated_bound,
        integrated_bound_holds,
        full_bound_holds,
        pointwise_violations: pointwise_violations(w, f, &h, nodes)?,
    })
}

/// Aligned text view of a report.
pub fn summary_table(report: &TaylorReport) -> String {
    let sum_terms: f64 = pairwise_sum(&report.expansion_terms);
    let rows = [
        ("lhs", report.lhs),
        ("sum_terms", sum_terms),
        ("remainder", report.remainder_quadrature),
        ("identity_gap", report.identity_gap),
        ("c_bound", report.c_bound),
        ("integrated_bound", report.integrated_bound),
        ("inequality_margin", report.inequality_margin),
    ];
    rows.iter()
        .map(|(name, v)| format!("{name:<18} {v:>24.16e}\n"))
        .collect()
}
