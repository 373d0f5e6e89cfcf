//! Stress test of strict local minimality in a BMO-gradient neighbourhood.
//!
//! Each sample is a generated `w` scaled so that `‖∇w‖_BMO = ρδ` with
//! `ρ ∈ (0.05, 1)`. Its margin is `E(u_e + w) - E(u_e) - a∫|∇w|²`, with
//! `a = λ/4` from the equilibrium. The interpolation step behind the result,
//! `J³‖∇w‖_BMO ∫|∇w|² ≥ ∫|∇w|³`, is checked per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{generate, Generator, ALL_GENERATORS};
use super::solver::Equilibrium;
use super::Problem;
use crate::bmo::{bmo_norm, calibrate_j2, calibration_family};
use crate::error::{Error, Result};
use crate::field::{gradient, ScalarGridFunction, TensorField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StressOptions {
    pub generators: Vec<Generator>,
    pub n_samples: usize,
    pub seed: u64,
    /// Interpolation constant at `(p, q) = (2, 3)`; calibrated on the grid when absent.
    pub j: Option<f64>,
}

impl Default for StressOptions {
    fn default() -> Self {
        StressOptions {
            generators: ALL_GENERATORS.to_vec(),
            n_samples: 200,
            seed: 0,
            j: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressSample {
    pub id: usize,
    pub generator: Generator,
    pub rho: f64,
    pub grad_bmo: f64,
    pub grad_l2_sq: f64,
    pub grad_l3_cubed: f64,
    pub energy_gap: f64,
    pub margin: f64,
    /// `J³‖∇w‖_BMO ∫|∇w|²`.
    pub proof_bound: f64,
    pub proof_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub id: usize,
    pub generator: Generator,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StressReport {
    pub a: f64,
    pub coercivity_4a: f64,
    pub delta: f64,
    pub j: f64,
    pub samples: Vec<StressSample>,
    pub failures: usize,
    pub proof_violations: usize,
    pub skipped: Vec<SkippedSample>,
    #[serde(skip)]
    grads: Vec<TensorField>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrial {
    pub delta: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub upper: f64,
    pub steps: usize,
    pub trials: Vec<SweepTrial>,
    /// Largest tried `δ` with zero failures; 0 when every trial failed.
    pub certified_delta: f64,
}

struct Prepared {
    id: usize,
    generator: Generator,
    rho: f64,
    base: Option<(ScalarGridFunction, f64)>,
    skip: Option<String>,
}

/// Per-sample stream: mixes the run seed with the sample id.
fn sample_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

fn prepare(problem: &Problem, opts: &StressOptions) -> Result<Vec<Prepared>> {
    if opts.generators.is_empty() {
        return Err(Error::config("stress test needs at least one generator"));
    }
    Ok((0..opts.n_samples)
        .into_par_iter()
        .map(|id| {
            let generator = opts.generators[id % opts.generators.len()];
            let mut rng = sample_rng(opts.seed, id);
            let rho = rng.gen_range(0.05..0.999);
            let (base, skip) = match generate(problem, generator, &mut rng) {
                None => (None, Some("perturbation vanished after projection".to_string())),
                Some(w) => match problem.check_variation(&w) {
                    Err(e) => (None, Some(e.to_string())),
                    Ok(()) => {
                        let b = bmo_norm(&gradient(&w));
                        if b > 0.0 {
                            (Some((w, b)), None)
                        } else {
                            (None, Some("‖∇w‖_BMO = 0".to_string()))
                        }
                    }
                },
            };
            Prepared {
                id,
                generator,
                rho,
                base,
                skip,
            }
        })
        .collect())
}

fn default_j(problem: &Problem, seed: u64) -> Result<f64> {
    let family = calibration_family(problem.grid(), problem.components(), 8, seed)?;
    calibrate_j2(&family, 2.0, 3.0)
}

fn run(problem: &Problem, eq: &Equilibrium, delta: f64, j: f64, prepared: &[Prepared]) -> Result<StressReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    let a = eq.a();
    let u = &eq.u_e;
    let rows = prepared
        .par_iter()
        .filter_map(|p| p.base.as_ref().map(|b| (p, b)))
        .map(|(p, (base, b))| -> Result<(StressSample, TensorField)> {
            let w = base.scaled(p.rho * delta / b);
            let gw = gradient(&w);
            let grad_bmo = p.rho * delta;
            let l2 = gw.power_integral(2.0);
            let l3 = gw.power_integral(3.0);
            let gap = problem.energy_difference(u, &w)?;
            let proof_bound = j.powi(3) * grad_bmo * l2;
            Ok((
                StressSample {
                    id: p.id,
                    generator: p.generator,
                    rho: p.rho,
                    grad_bmo,
                    grad_l2_sq: l2,
                    grad_l3_cubed: l3,
                    energy_gap: gap,
                    margin: gap - a * l2,
                    proof_bound,
                    proof_holds: l3 <= proof_bound * (1.0 + 1e-12),
                },
                gw,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (samples, grads): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let skipped = prepared
        .iter()
        .filter_map(|p| {
            p.skip.as_ref().map(|reason| SkippedSample {
                id: p.id,
                generator: p.generator,
                reason: reason.clone(),
            })
        })
        .collect();
    Ok(StressReport {
        a,
        coercivity_4a: eq.coercivity_4a,
        delta,
        j,
        failures: samples.iter().filter(|s: &&StressSample| s.margin < 0.0).count(),
        proof_violations: samples.iter().filter(|s| !s.proof_holds).count(),
        samples,
        skipped,
        grads,
    })
}

fn check_equilibrium(problem: &Problem, eq: &Equilibrium) -> Result<()> {
    if !(eq.coercivity_4a > 0.0) {
        return Err(Error::precondition(format!(
            "stress test needs coercivity_4a > 0, got {}",
            eq.coercivity_4a
        )));
    }
    problem.check_admissible(&eq.u_e)
}

/// Margins of `n_samples` perturbations with `‖∇w‖_BMO < delta`.
pub fn minimizer_stress_test(
    problem: &Problem,
    eq: &Equilibrium,
    delta: f64,
    opts: &StressOptions,
) -> Result<StressReport> {
    check_equilibrium(problem, eq)?;
    let j = match opts.j {
        Some(j) => j,
        None => default_j(problem, opts.seed)?,
    };
    let prepared = prepare(problem, opts)?;
    run(problem, eq, delta, j, &prepared)
}

/// Bisection on `[0, upper]` for the largest `δ` with zero failures, reusing
/// the same perturbations at every trial. Returns the sweep and the report at
/// the certified `δ` (at `upper` if nothing was certified).
pub fn certify_delta(
    problem: &Problem,
    eq: &Equilibrium,
    upper: f64,
    steps: usize,
    opts: &StressOptions,
) -> Result<(SweepReport, StressReport)> {
    check_equilibrium(problem, eq)?;
    let j = match opts.j {
        Some(j) => j,
        None => default_j(problem, opts.seed)?,
    };
    let prepared = prepare(problem, opts)?;
    let mut trials = Vec::new();
    let top = run(problem, eq, upper, j, &prepared)?;
    trials.push(SweepTrial {
        delta: upper,
        failures: top.failures,
    });
    if top.failures == 0 {
        let sweep = SweepReport {
            upper,
            steps,
            trials,
            certified_delta: upper,
        };
        return Ok((sweep, top));
    }
    let (mut lo, mut hi) = (0.0, upper);
    let mut best: Option<StressReport> = None;
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let rep = run(problem, eq, mid, j, &prepared)?;
        trials.push(SweepTrial {
            delta: mid,
            failures: rep.failures,
        });
        if rep.failures == 0 {
            lo = mid;
            best = Some(rep);
        } else {
            hi = mid;
        }
    }
    let sweep = SweepReport {
        upper,
        steps,
        trials,
        certified_delta: lo,
    };
    Ok((sweep, best.unwrap_or(top)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVariantRow {
    pub id: usize,
    pub grad_lq: f64,
    pub bound: f64,
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVariantReport {
    pub q: f64,
    pub j: f64,
    pub j_hat: f64,
    pub formula: String,
    pub rows: Vec<QVariantRow>,
    pub violations: usize,
}

/// Checks `E(v) - E(u_e) ≥ a ĵ δ^{2-q} ∫|∇w|^q` per sample with `ĵ = J^{-q}`,
/// `J` the interpolation constant at `(p, q) = (2, q)`.
pub fn remark_q_variant(report: &StressReport, q: f64, j: f64) -> Result<QVariantReport> {
    if !(q > 2.0 && q.is_finite()) {
        return Err(Error::precondition(format!("q must exceed 2, got {q}")));
    }
    if !(j > 0.0 && j.is_finite()) {
        return Err(Error::domain(format!("J must be positive, got {j}")));
    }
    let j_hat = j.powf(-q);
    let factor = report.a * j_hat * report.delta.powf(2.0 - q);
    let rows: Vec<QVariantRow> = report
        .samples
        .iter()
        .zip(&report.grads)
        .map(|(s, g)| {
            let grad_lq = g.power_integral(q);
            let bound = factor * grad_lq;
            let margin = s.energy_gap - bound;
            QVariantRow {
                id: s.id,
                grad_lq,
                bound,
                margin,
                holds: margin >= 0.0,
            }
        })
        .collect();
    Ok(QVariantReport {
        q,
        j,
        j_hat,
        formula: "j_hat = J^(-q), J the (2,q) interpolation constant: \
                  ∫|∇w|^q ≤ J^q ‖∇w‖_BMO^(q-2) ∫|∇w|^2 < J^q δ^(q-2) ∫|∇w|^2"
            .to_string(),
        violations: rows.iter().filter(|r| !r.holds).count(),
        rows,
    })
}
