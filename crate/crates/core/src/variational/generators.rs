//! Seeded perturbations `w` in the variation space.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::field::ScalarGridFunction;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Compactly supported bumps `t^p (1-t)^q` per axis, skewed so one flank is steep.
    Bump,
    /// Tapered high-frequency sine products.
    Oscillation,
    /// `r ln(r/R)` inside a ball: gradient with a logarithmic singularity.
    LogSpike,
    /// Uniform noise after one box-averaging pass, tapered.
    Noise,
}

pub const ALL_GENERATORS: [Generator; 4] = [
    Generator::Bump,
    Generator::Oscillation,
    Generator::LogSpike,
    Generator::Noise,
];

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Generator::Bump => "bump",
            Generator::Oscillation => "oscillation",
            Generator::LogSpike => "log-spike",
            Generator::Noise => "noise",
        })
    }
}

struct Frame {
    lo: Vec<f64>,
    len: Vec<f64>,
}

impl Frame {
    fn of(grid: &Grid) -> Self {
        let h = grid.spacing();
        Frame {
            lo: grid.origin().iter().map(|o| o - 0.5 * h).collect(),
            len: grid.shape().iter().map(|&s| s as f64 * h).collect(),
        }
    }

    /// `Π sin(π (xₐ - loₐ)/Lₐ)`, vanishing on the box boundary.
    fn taper(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(a, xa)| (PI * (xa - self.lo[a]) / self.len[a]).sin())
            .product()
    }
}

fn coefficients(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let v: f64 = rng.gen_range(0.3..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// One perturbation from `gen`, projected onto the variation space of
/// `problem`. `None` when nothing survives the projection.
pub fn generate(problem: &Problem, gen: Generator, rng: &mut ChaCha8Rng) -> Option<ScalarGridFunction> {
    let grid = problem.grid();
    let m = problem.components();
    let n = grid.dim();
    let frame = Frame::of(grid);
    let coef = coefficients(rng, m);
    let mut values = vec![0.0; m * grid.cells()];
    let mut fill = |profile: &dyn Fn(&[f64]) -> f64| {
        for c in 0..grid.cells() {
            let x = grid.center(c);
            let s = profile(&x[..n]);
            for i in 0..m {
                values[c * m + i] = coef[i] * s;
            }
        }
    };
    match gen {
        Generator::Bump => {
            let axes: Vec<(f64, f64, f64, f64, bool)> = (0..n)
                .map(|a| {
                    let len = frame.len[a] * rng.gen_range(0.3..0.9);
                    let start = frame.lo[a] + rng.gen_range(0.0..1.0) * (frame.len[a] - len);
                    let p = rng.gen_range(1.0..2.0);
                    let q = rng.gen_range(0.05..1.0);
                    (start, len, p, q, rng.gen_bool(0.5))
                })
                .collect();
            let peak: Vec<f64> = axes.iter().map(|&(_, _, p, q, _)| bump_max(p, q)).collect();
            fill(&|x| {
                axes.iter()
                    .zip(&peak)
                    .zip(x)
                    .map(|((&(start, len, p, q, flip), &mx), &xa)| {
                        let mut t = (xa - start) / len;
                        if !(0.0..=1.0).contains(&t) {
                            return 0.0;
                        }
                        if flip {
                            t = 1.0 - t;
                        }
                        t.powf(p) * (1.0 - t).powf(q) / mx
                    })
                    .product()
            });
        }
        Generator::Oscillation => {
            let waves: Vec<(f64, f64)> = (0..n)
                .map(|a| {
                    let kmax = (grid.shape()[a] / 3).max(4);
                    (rng.gen_range(3..=kmax) as f64, rng.gen_range(0.0..2.0 * PI))
                })
                .collect();
            fill(&|x| {
                frame.taper(x)
                    * waves
                        .iter()
                        .zip(x)
                        .enumerate()
                        .map(|(a, (&(k, ph), &xa))| (2.0 * PI * k * (xa - frame.lo[a]) / frame.len[a] + ph).sin())
                        .product::<f64>()
            });
        }
        Generator::LogSpike => {
            let h = grid.spacing();
            let min_len = frame.len.iter().cloned().fold(f64::INFINITY, f64::min);
            let radius = min_len * rng.gen_range(0.2..0.45);
            let centre: Vec<f64> = (0..n)
                .map(|a| {
                    let lo = frame.lo[a] + radius;
                    let hi = (frame.lo[a] + frame.len[a] - radius).max(lo);
                    let raw = if hi > lo { rng.gen_range(lo..hi) } else { lo };
                    // Snap to a cell centre, then offset by h/3 so r > 0 at every sample.
                    let cell = ((raw - grid.origin()[a]) / h).round().max(0.0);
                    grid.origin()[a] + cell * h + h / 3.0
                })
                .collect();
            fill(&|x| {
                let r = x.iter().zip(&centre).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if r < radius {
                    r * (r / radius).ln()
                } else {
                    0.0
                }
            });
        }
        Generator::Noise => {
            let raw: Vec<f64> = (0..m * grid.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let smooth = box_average(grid, m, &raw);
            for c in 0..grid.cells() {
                let x = grid.center(c);
                let t = frame.taper(&x[..n]);
                for i in 0..m {
                    values[c * m + i] = t * smooth[c * m + i];
                }
            }
        }
    }
    problem.project(&mut values);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(scale > 1e-12) || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    ScalarGridFunction::new(grid.clone(), m, values).ok()
}

/// `max_t t^p (1-t)^q`, attained at `t = p/(p+q)`.
fn bump_max(p: f64, q: f64) -> f64 {
    let t = p / (p + q);
    t.powf(p) * (1.0 - t).powf(q)
}

/// Mean over the `3ⁿ` neighbourhood of each cell, clipped at the boundary.
fn box_average(grid: &Grid, m: usize, v: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    let mut out = vec![0.0; v.len()];
    for c in 0..grid.cells() {
        let idx = grid.multi_index(c);
        let mut origin = vec![0; n];
        let mut extent = vec![0; n];
        for a in 0..n {
            let lo = idx[a].saturating_sub(1);
            let hi = (idx[a] + 1).min(grid.shape()[a] - 1);
            origin[a] = lo;
            extent[a] = hi - lo + 1;
        }
        let mut count = 0usize;
        grid.for_each_in_box(&origin, &extent, |d| {
            count += 1;
            for i in 0..m {
                out[c * m + i] += v[d * m + i];
            }
        });
        for i in 0..m {
            out[c * m + i] /= count as f64;
        }
    }
    out
}
