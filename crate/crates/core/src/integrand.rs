//! Integrands `W(x, K)` with closed-form derivative tensors.
//!
//! Built-in families are the quadratic `½ K:A[K]`, the double well
//! `(|K|² - 1)²`, the p-growth density `(1 + |K|²)^{m/2}`, and any of these
//! times a smooth positive weight `ω(x) = 1 + a·cos(2πf Σxᵢ)`.
//!
//! The radial families are `φ(|K|²)`. Their derivatives expand over matchings
//! of the direction slots into singletons and pairs:
//!
//! ```text
//! DʲW(K)[H₁…Hⱼ] = Σ_matchings φ^{(#blocks)}(|K|²) · Π_{i single} 2K:Hᵢ · Π_{(i,l) pair} 2Hᵢ:Hₗ
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::numeric::{factorial, frob_dot, frob_norm};

/// Highest derivative order the matching expansion supports.
pub const MAX_ORDER: usize = 8;

pub const FAMILIES: [&str; 3] = ["quadratic", "double-well", "p-growth"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weight {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Weight {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().sum();
        1.0 + self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * s).cos()
    }

    pub fn max(&self) -> f64 {
        1.0 + self.amplitude.abs()
    }

    pub fn min(&self) -> f64 {
        1.0 - self.amplitude.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// Row-major symmetric operator on `ℝ^{N·n}`.
    Quadratic { a: Vec<f64> },
    DoubleWell,
    PGrowth { m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integrand {
    kind: Kind,
    weight: Option<Weight>,
    k: usize,
    r: f64,
    c_k: f64,
    rows: usize,
    cols: usize,
}

/// JSON selection of an integrand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSpec {
    pub family: String,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    pub k: usize,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub c_k: Option<f64>,
    #[serde(default)]
    pub weight: Option<Weight>,
}

impl IntegrandSpec {
    pub fn build(&self, rows: usize, cols: usize) -> Result<Integrand> {
        let params = &self.parameters;
        let allow = |keys: &[&str]| -> Result<()> {
            match params.keys().find(|k| !keys.contains(&k.as_str())) {
                Some(bad) => Err(Error::config(format!(
                    "integrand.parameters.{bad}: unknown parameter for family `{}`",
                    self.family
                ))),
                None => Ok(()),
            }
        };
        let mut w = match self.family.as_str() {
            "quadratic" => {
                allow(&["diag", "matrix"])?;
                let dim = rows * cols;
                let a = match (params.get("diag"), params.get("matrix")) {
                    (Some(_), Some(_)) => {
                        return Err(Error::config(
                            "integrand.parameters: give either `diag` or `matrix`, not both",
                        ))
                    }
                    (Some(d), None) => {
                        let d: Vec<f64> = parse_param(d, "diag")?;
                        if d.len() != dim {
                            return Err(Error::config(format!(
                                "integrand.parameters.diag: expected {dim} entries, got {}",
                                d.len()
                            )));
                        }
                        let mut a = vec![0.0; dim * dim];
                        for (i, v) in d.iter().enumerate() {
                            a[i * dim + i] = *v;
                        }
                        a
                    }
                    (None, Some(m)) => {
                        let m: Vec<Vec<f64>> = parse_param(m, "matrix")?;
                        if m.len() != dim || m.iter().any(|row| row.len() != dim) {
                            return Err(Error::config(format!(
                                "integrand.parameters.matrix: expected {dim}×{dim}"
                            )));
                        }
                        m.concat()
                    }
                    (None, None) => identity(dim),
                };
                Integrand::quadratic(rows, cols, a, self.k)?
            }
            "double-well" => {
                allow(&[])?;
                Integrand::double_well(rows, cols, self.k)?
            }
            "p-growth" => {
                allow(&["m"])?;
                let m = params
                    .get("m")
                    .ok_or_else(|| Error::config("integrand.parameters.m: required for p-growth"))?;
                Integrand::p_growth(rows, cols, parse_param(m, "m")?, self.k)?
            }
            other => {
                return Err(Error::config(format!(
                    "integrand.family: unknown family `{other}`; known families: {}",
                    FAMILIES.join(", ")
                )))
            }
        };
        if let Some(weight) = self.weight {
            w = w.with_weight(weight)?;
        }
        if self.r.is_some() || self.c_k.is_some() {
            let (r, c_k) = (self.r.unwrap_or(w.r), self.c_k.unwrap_or(w.c_k));
            w = w.with_growth(r, c_k)?;
        }
        Ok(w)
    }
}

fn parse_param<T: serde::de::DeserializeOwned>(v: &Value, name: &str) -> Result<T> {
    serde_json::from_value(v.clone())
        .map_err(|e| Error::config(format!("integrand.parameters.{name}: {e}")))
}

fn identity(dim: usize) -> Vec<f64> {
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        a[i * dim + i] = 1.0;
    }
    a
}

/// Number of matchings of `j` slots with exactly `b` blocks.
fn matching_count(j: usize, b: usize) -> f64 {
    if 2 * b < j || b > j {
        return 0.0;
    }
    let singles = 2 * b - j;
    let pairs = j - b;
    factorial(j) / (factorial(singles) * factorial(pairs) * 2f64.powi(pairs as i32))
}

/// `Π_{i<b} (e - i)`, the coefficient of `(1+s)^{e-b}` in the b-th derivative of `(1+s)^e`.
fn falling(e: f64, b: usize) -> f64 {
    (0..b).map(|i| e - i as f64).product()
}

impl Integrand {
    fn base(kind: Kind, rows: usize, cols: usize, k: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::domain("integrand needs N ≥ 1 and n ≥ 1"));
        }
        if !(2..=MAX_ORDER).contains(&k) {
            return Err(Error::domain(format!(
                "derivative order k must lie in 2..={MAX_ORDER}, got {k}"
            )));
        }
        let mut w = Integrand {
            kind,
            weight: None,
            k,
            r: 1.0,
            c_k: 1.0,
            rows,
            cols,
        };
        let (r, c) = w.default_growth();
        w.r = r;
        w.c_k = c;
        Ok(w)
    }

    /// `½ K:A[K]` with `A` a symmetric row-major `(N·n)×(N·n)` matrix.
    pub fn quadratic(rows: usize, cols: usize, a: Vec<f64>, k: usize) -> Result<Self> {
        let dim = rows * cols;
        if a.len() != dim * dim {
            return Err(Error::domain(format!(
                "quadratic operator needs {dim}×{dim} entries, got {}",
                a.len()
            )));
        }
        let scale = frob_norm(&a).max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in 0..i {
                if (a[i * dim + j] - a[j * dim + i]).abs() > 1e-14 * scale {
                    return Err(Error::domain("quadratic operator must be symmetric"));
                }
            }
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("quadratic operator has non-finite entries"));
        }
        Self::base(Kind::Quadratic { a }, rows, cols, k)
    }

    /// `½|K|²`.
    pub fn dirichlet(rows: usize, cols: usize, k: usize) -> Result<Self> {
        Self::quadratic(rows, cols, identity(rows * cols), k)
    }

    pub fn double_well(rows: usize, cols: usize, k: usize) -> Result<Self> {
        Self::base(Kind::DoubleWell, rows, cols, k)
    }

    pub fn p_growth(rows: usize, cols: usize, m: f64, k: usize) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::domain(format!("p-growth exponent m must be positive, got {m}")));
        }
        Self::base(Kind::PGrowth { m }, rows, cols, k)
    }

    /// Multiplies by `ω(x)`; requires `|amplitude| < 1` so that `ω ≥ ω_min > 0`.
    pub fn with_weight(mut self, weight: Weight) -> Result<Self> {
        if !(weight.amplitude.abs() < 1.0 && weight.frequency.is_finite()) {
            return Err(Error::domain("weight needs |amplitude| < 1 and finite frequency"));
        }
        let old_max = self.weight.map_or(1.0, |w| w.max());
        self.c_k *= weight.max() / old_max;
        self.weight = Some(weight);
        Ok(self)
    }

    /// Overrides the growth pair `(r, c_k)`.
    pub fn with_growth(mut self, r: f64, c_k: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0 && c_k.is_finite() && c_k > 0.0) {
            return Err(Error::domain(format!(
                "growth needs r ≥ 0 and c_k > 0, got r = {r}, c_k = {c_k}"
            )));
        }
        self.r = r;
        self.c_k = c_k;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn x_dependent(&self) -> bool {
        self.weight.is_some()
    }

    pub fn weight(&self) -> Option<Weight> {
        self.weight
    }

    pub fn family(&self) -> &'static str {
        match self.kind {
            Kind::Quadratic { .. } => "quadratic",
            Kind::DoubleWell => "double-well",
            Kind::PGrowth { .. } => "p-growth",
        }
    }

    /// Highest degree `d` such that `W` is a polynomial of degree `d` in `K`,
    /// if it is one.
    pub fn polynomial_degree(&self) -> Option<usize> {
        match self.kind {
            Kind::Quadratic { .. } => Some(2),
            Kind::DoubleWell => Some(4),
            Kind::PGrowth { m } if m.fract() == 0.0 && (m as usize).is_multiple_of(2) => Some(m as usize),
            Kind::PGrowth { .. } => None,
        }
    }

    fn omega(&self, x: &[f64]) -> f64 {
        self.weight.map_or(1.0, |w| w.eval(x))
    }

    fn omega_max(&self) -> f64 {
        self.weight.map_or(1.0, |w| w.max())
    }

    fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// `φ^{(b)}(s)` for the radial families.
    fn phi(&self, b: usize, s: f64) -> f64 {
        match self.kind {
            Kind::DoubleWell => match b {
                0 => (s - 1.0) * (s - 1.0),
                1 => 2.0 * (s - 1.0),
                2 => 2.0,
                _ => 0.0,
            },
            Kind::PGrowth { m } => {
                let e = 0.5 * m;
                falling(e, b) * (1.0 + s).powf(e - b as f64)
            }
            Kind::Quadratic { .. } => unreachable!("quadratic is not radial"),
        }
    }

    fn apply_a(a: &[f64], v: &[f64], out: &mut [f64]) {
        let d = v.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = frob_dot(&a[i * d..(i + 1) * d], v);
        }
    }

    fn check_args(&self, x: &[f64], kmat: &[f64], dirs: &[&[f64]]) -> Result<()> {
        let d = self.dim();
        if kmat.len() != d || dirs.iter().any(|h| h.len() != d) {
            return Err(Error::domain(format!(
                "matrix arguments must have {}×{} entries",
                self.rows, self.cols
            )));
        }
        if x.len() != self.cols {
            return Err(Error::domain(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.cols
            )));
        }
        Ok(())
    }

    /// `DʲW(x, K)[dirs…]`, with `j = dirs.len()`.
    pub fn eval(&self, j: usize, x: &[f64], kmat: &[f64], dirs: &[&[f64]]) -> Result<f64> {
        if j > self.k {
            return Err(Error::domain(format!(
                "derivative order {j} exceeds k = {}",
                self.k
            )));
        }
        if dirs.len() != j {
            return Err(Error::domain(format!(
                "order {j} needs {j} directions, got {}",
                dirs.len()
            )));
        }
        self.check_args(x, kmat, dirs)?;
        Ok(self.eval_unchecked(x, kmat, dirs))
    }

    /// [`Integrand::eval`] without argument validation, for inner loops.
    pub fn eval_unchecked(&self, x: &[f64], kmat: &[f64], dirs: &[&[f64]]) -> f64 {
        self.omega(x) * self.eval_unweighted(kmat, dirs)
    }

    fn eval_unweighted(&self, kmat: &[f64], dirs: &[&[f64]]) -> f64 {
        let j = dirs.len();
        match &self.kind {
            Kind::Quadratic { a } => {
                let mut tmp = vec![0.0; kmat.len()];
                match j {
                    0 => {
                        Self::apply_a(a, kmat, &mut tmp);
                        0.5 * frob_dot(kmat, &tmp)
                    }
                    1 => {
                        Self::apply_a(a, kmat, &mut tmp);
                        frob_dot(dirs[0], &tmp)
                    }
                    2 => {
                        Self::apply_a(a, dirs[1], &mut tmp);
                        frob_dot(dirs[0], &tmp)
                    }
                    _ => 0.0,
                }
            }
            _ => {
                let s = frob_dot(kmat, kmat);
                let mut kd = [0.0; MAX_ORDER];
                let mut hh = [[0.0; MAX_ORDER]; MAX_ORDER];
                for i in 0..j {
                    kd[i] = 2.0 * frob_dot(kmat, dirs[i]);
                    for l in i + 1..j {
                        hh[i][l] = 2.0 * frob_dot(dirs[i], dirs[l]);
                    }
                }
                let mut by_blocks = [0.0; MAX_ORDER + 1];
                let full = (1u16 << j) - 1;
                matchings(full, 0, 1.0, &kd, &hh, &mut by_blocks);
                (0..=j)
                    .filter(|&b| by_blocks[b] != 0.0)
                    .map(|b| self.phi(b, s) * by_blocks[b])
                    .sum()
            }
        }
    }

    /// `W(x, K)`.
    pub fn value(&self, x: &[f64], kmat: &[f64]) -> f64 {
        self.eval_unchecked(x, kmat, &[])
    }

    /// The matrix `DW(x, K)` (the stress), written into `out`.
    pub fn stress(&self, x: &[f64], kmat: &[f64], out: &mut [f64]) {
        let w = self.omega(x);
        match &self.kind {
            Kind::Quadratic { a } => {
                Self::apply_a(a, kmat, out);
                out.iter_mut().for_each(|v| *v *= w);
            }
            _ => {
                let c = 2.0 * w * self.phi(1, frob_dot(kmat, kmat));
                for (o, kv) in out.iter_mut().zip(kmat) {
                    *o = c * kv;
                }
            }
        }
    }

    /// The matrix `D²W(x, K)[H, ·]`, written into `out`.
    pub fn hessian_apply(&self, x: &[f64], kmat: &[f64], h: &[f64], out: &mut [f64]) {
        let w = self.omega(x);
        match &self.kind {
            Kind::Quadratic { a } => {
                Self::apply_a(a, h, out);
                out.iter_mut().for_each(|v| *v *= w);
            }
            _ => {
                let s = frob_dot(kmat, kmat);
                let ck = 4.0 * w * self.phi(2, s) * frob_dot(kmat, h);
                let ch = 2.0 * w * self.phi(1, s);
                for ((o, kv), hv) in out.iter_mut().zip(kmat).zip(h) {
                    *o = ck * kv + ch * hv;
                }
            }
        }
    }

    /// Closed-form growth pair `(r, c_k)` for the family at order `k`.
    fn default_growth(&self) -> (f64, f64) {
        let k = self.k;
        let (r, c) = match &self.kind {
            Kind::Quadratic { a } => (1.0, frob_norm(a).max(f64::MIN_POSITIVE)),
            Kind::DoubleWell => match k {
                2 => (2.0, 12.0),
                3 => (1.0, 24.0),
                4 => (1.0, 24.0),
                _ => (1.0, 1.0),
            },
            Kind::PGrowth { m } => {
                // |D^kW| ≤ C (1+|K|²)^{(m-k)/2} with C summed over matchings.
                let e = 0.5 * m;
                let c: f64 = (0..=k)
                    .map(|b| matching_count(k, b) * falling(e, b).abs() * 2f64.powi(b as i32))
                    .sum();
                let c = c.max(f64::MIN_POSITIVE);
                let half = 0.5 * (m - k as f64);
                if half <= 0.0 {
                    (1.0, c)
                } else if half <= 1.0 {
                    (m - k as f64, c)
                } else {
                    (m - k as f64, c * 2f64.powf(half - 1.0))
                }
            }
        };
        (r, c * self.omega_max())
    }

    /// Closed-form upper bound on the operator norm of `DʲW(·, K)` at `s = |K|²`.
    pub fn norm_bound(&self, j: usize, s: f64) -> f64 {
        let w = self.omega_max();
        match &self.kind {
            Kind::Quadratic { a } => {
                let na = frob_norm(a);
                w * match j {
                    0 => 0.5 * na * s,
                    1 => na * s.sqrt(),
                    2 => na,
                    _ => 0.0,
                }
            }
            _ => {
                let rk = s.sqrt();
                w * (0..=j)
                    .filter(|&b| 2 * b >= j)
                    .map(|b| {
                        let singles = (2 * b - j) as i32;
                        matching_count(j, b)
                            * self.phi(b, s).abs()
                            * 2f64.powi(b as i32)
                            * rk.powi(singles)
                    })
                    .sum::<f64>()
            }
        }
    }
}

/// Accumulates, per block count, the products over all matchings of the
/// slots still in `free`.
fn matchings(
    free: u16,
    blocks: usize,
    prod: f64,
    kd: &[f64; MAX_ORDER],
    hh: &[[f64; MAX_ORDER]; MAX_ORDER],
    out: &mut [f64; MAX_ORDER + 1],
) {
    if free == 0 {
        out[blocks] += prod;
        return;
    }
    let i = free.trailing_zeros() as usize;
    let rest = free & !(1 << i);
    matchings(rest, blocks + 1, prod * kd[i], kd, hh, out);
    let mut others = rest;
    while others != 0 {
        let l = others.trailing_zeros() as usize;
        others &= !(1 << l);
        matchings(rest & !(1 << l), blocks + 1, prod * hh[i][l], kd, hh, out);
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = frob_norm(&v);
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Sampled operator norm of `DʲW(x, K)`: the largest `|DʲW[H₁…Hⱼ]|` over
/// `tuples` random unit direction tuples plus the diagonal along `K/|K|`.
/// A lower bound on the true norm.
pub fn sampled_operator_norm(
    w: &Integrand,
    j: usize,
    x: &[f64],
    kmat: &[f64],
    tuples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = w.dim();
    let mut best: f64 = 0.0;
    let kn = frob_norm(kmat);
    if kn > 0.0 {
        let u: Vec<f64> = kmat.iter().map(|v| v / kn).collect();
        let dirs: Vec<&[f64]> = vec![&u; j];
        best = best.max(w.eval_unchecked(x, kmat, &dirs).abs());
    }
    for t in 0..tuples {
        // Every other tuple is diagonal: for symmetric forms the norm is
        // attained on the diagonal.
        let hs: Vec<Vec<f64>> = if t % 2 == 0 {
            vec![random_unit(rng, d); j]
        } else {
            (0..j).map(|_| random_unit(rng, d)).collect()
        };
        let dirs: Vec<&[f64]> = hs.iter().map(|h| h.as_slice()).collect();
        best = best.max(w.eval_unchecked(x, kmat, &dirs).abs());
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub family: String,
    pub k: usize,
    pub r: f64,
    pub c_k: f64,
    pub radius: f64,
    pub samples: usize,
    /// Largest sampled operator norm of `D^kW` over `1 + |K|^r`.
    pub max_ratio: f64,
    pub worst_k_norm: f64,
    pub passes: bool,
}

/// Samples `(x, K)` with `x ∈ [0,1]ⁿ` and `|K| ≤ radius` (every fourth sample
/// on the shell `|K| = radius`) and compares the sampled norm of `D^kW` with
/// `c_k(1 + |K|^r)`.
pub fn check_growth(w: &Integrand, sample_count: usize, radius: f64, seed: u64) -> Result<GrowthReport> {
    if sample_count == 0 {
        return Err(Error::domain("check_growth needs at least one sample"));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::domain("radius must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = w.dim();
    let mut max_ratio: f64 = 0.0;
    let mut worst = 0.0;
    for i in 0..sample_count {
        let x: Vec<f64> = (0..w.cols).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rad = if i % 4 == 0 {
            radius
        } else {
            radius * rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64)
        };
        let kmat: Vec<f64> = random_unit(&mut rng, d).into_iter().map(|v| v * rad).collect();
        let norm = sampled_operator_norm(w, w.k, &x, &kmat, 100, &mut rng);
        let ratio = norm / (1.0 + rad.powf(w.r));
        if ratio > max_ratio {
            max_ratio = ratio;
            worst = rad;
        }
    }
    Ok(GrowthReport {
        family: w.family().to_string(),
        k: w.k,
        r: w.r,
        c_k: w.c_k,
        radius,
        samples: sample_count,
        max_ratio,
        worst_k_norm: worst,
        passes: max_ratio <= w.c_k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatedConstant {
    pub j: usize,
    /// `r + k - j`.
    pub exponent: f64,
    pub c_j: f64,
    /// False when the ratio still grows polynomially at the end of the radial grid.
    pub bounded: bool,
}

/// Constants `c_j` with `|DʲW(x,K)| ≤ c_j(1 + |K|^{r+k-j})` for `j = 0…k`.
///
/// Each is 1.01 times the maximum of [`Integrand::norm_bound`] over
/// `1 + |K|^{r+k-j}` on a geometric grid of radii in `[10⁻³, 10⁴]` plus zero.
pub fn propagated_constants(w: &Integrand) -> Vec<PropagatedConstant> {
    let radii: Vec<f64> = std::iter::once(0.0)
        .chain((0..=2000).map(|i| 10f64.powf(-3.0 + 7.0 * i as f64 / 2000.0)))
        .collect();
    (0..=w.k)
        .map(|j| {
            let exponent = w.r + (w.k - j) as f64;
            let ratios: Vec<f64> = radii
                .iter()
                .map(|&rad| w.norm_bound(j, rad * rad) / (1.0 + rad.powf(exponent)))
                .collect();
            let max = ratios.iter().cloned().fold(0.0, f64::max);
            // Log-slope of the ratio over the last decade of radii.
            let n = ratios.len();
            let (hi, lo) = (ratios[n - 1], ratios[n - 1 - 2000 / 7]);
            let bounded = hi <= lo || (hi / lo).log10() < 1e-2;
            PropagatedConstant {
                j,
                exponent,
                c_j: 1.01 * max,
                bounded,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub j: usize,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// Smallest observed order between consecutive steps whose errors sit
    /// above roundoff; infinite when every error is at roundoff level.
    pub order: f64,
}

/// Compares `DʲW[dirs]` with the central difference of `D^{j-1}W[dirs₁…ⱼ₋₁]`
/// along `dirs_j`.
pub fn fd_derivative_check(
    w: &Integrand,
    j: usize,
    x: &[f64],
    kmat: &[f64],
    dirs: &[&[f64]],
    steps: &[f64],
) -> Result<FdReport> {
    if j == 0 || j > w.k {
        return Err(Error::domain(format!("fd check needs 1 ≤ j ≤ k, got j = {j}")));
    }
    let exact = w.eval(j, x, kmat, dirs)?;
    let (last, lower) = dirs.split_last().expect("j ≥ 1");
    let mut errors = Vec::with_capacity(steps.len());
    let mut scale = exact.abs();
    for &h in steps {
        let plus: Vec<f64> = kmat.iter().zip(*last).map(|(k, d)| k + h * d).collect();
        let minus: Vec<f64> = kmat.iter().zip(*last).map(|(k, d)| k - h * d).collect();
        let fp = w.eval(j - 1, x, &plus, lower)?;
        let fm = w.eval(j - 1, x, &minus, lower)?;
        scale = scale.max(fp.abs()).max(fm.abs());
        errors.push(((fp - fm) / (2.0 * h) - exact).abs());
    }
    let floor = 1e-11 * (1.0 + scale);
    let mut order = f64::INFINITY;
    for i in 1..steps.len() {
        if errors[i - 1] > floor && errors[i] > floor {
            let o = (errors[i - 1] / errors[i]).ln() / (steps[i - 1] / steps[i]).ln();
            order = order.min(o);
        }
    }
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    Ok(FdReport {
        j,
        steps: steps.to_vec(),
        errors,
        max_error,
        order,
    })
}
