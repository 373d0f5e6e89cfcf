//! Batch experiment driver: a JSON config selects one command, its inputs and
//! parameters; the run produces a JSON report (and optionally a CSV table) and
//! an exit status.
//!
//! Exit status: 0 when every checked property holds, 2 when a property check
//! fails, 1 on configuration or I/O errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bmo::{
    bmo_norm, bmo_seminorm, bmo_seminorm_bruteforce, calibrate_j1, calibrate_j2, calibrate_j2_report,
    calibration_family, linf_domination_check, log_field, DominationCheck, NormReport,
};
use crate::error::{Error, Result};
use crate::field::{gradient, ScalarGridFunction, TensorField};
use crate::grid::{CubeMode, Face, Grid};
use crate::integrand::IntegrandSpec;
use crate::report::{content_hash, to_csv_string, to_json_string};
use crate::taylor::{verify_taylor_inequality_with, TaylorReport, DEFAULT_NODES};
use crate::variational::{
    certify_delta, minimizer_stress_test, remark_q_variant, solve_el, BoundaryCondition, Equilibrium, Generator,
    Loads, Problem, QVariantReport, SolveOptions, StressOptions, StressReport, SweepReport, ALL_GENERATORS,
};
use crate::gf1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BmoNorm,
    InterpCalibrate,
    TaylorCheck,
    ElSolve,
    StressTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    /// JSON report path; the report goes to stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub params: Value,
}

impl ExperimentConfig {
    /// Parses a config, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(format!("{}: {}", e.path(), e.inner())))
    }
}

fn parse_params<T: DeserializeOwned>(params: &Value) -> Result<T> {
    serde_path_to_error::deserialize(params).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { "params".to_string() } else { format!("params.{path}") };
        Error::config(format!("{at}: {}", e.inner()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub shape: Vec<usize>,
    /// Defaults to `1/shape[0]`.
    #[serde(default)]
    pub spacing: Option<f64>,
    /// First cell centre; defaults to `h/2` on every axis.
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        let h = match self.spacing {
            Some(h) => h,
            None => 1.0 / *self.shape.first().ok_or_else(|| Error::config("grid.shape is empty"))? as f64,
        };
        let origin = self.origin.clone().unwrap_or_else(|| vec![0.5 * h; self.shape.len()]);
        Grid::new(self.shape.clone(), h, origin)
    }
}

fn one() -> f64 {
    1.0
}

/// Where a tensor field comes from: a GF1 file or a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSource {
    File {
        path: PathBuf,
    },
    Constant {
        grid: GridSpec,
        rows: usize,
        value: f64,
    },
    /// Uniform entries in `(-amplitude, amplitude)` from stream `stream` of the run seed.
    Random {
        grid: GridSpec,
        rows: usize,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        stream: u64,
    },
    /// `log|x - x₀|` with `x₀` next to the centre of cell `anchor`.
    Log {
        grid: GridSpec,
        rows: usize,
        anchor: Vec<usize>,
    },
    /// `-amplitude` below the midpoint of `axis`, `+amplitude` above.
    Step {
        grid: GridSpec,
        rows: usize,
        axis: usize,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

struct Inputs {
    base: PathBuf,
    seed: u64,
    files: BTreeMap<String, String>,
}

impl Inputs {
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn field(&mut self, src: &FieldSource) -> Result<TensorField> {
        match src {
            FieldSource::File { path } => {
                let full = self.resolve(path);
                let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
                self.files.insert(path.display().to_string(), content_hash(&bytes));
                let text = String::from_utf8(bytes)
                    .map_err(|_| Error::Format(format!("{} is not UTF-8", full.display())))?;
                gf1::from_str(&text)
            }
            FieldSource::Constant { grid, rows, value } => {
                let grid = grid.build()?;
                TensorField::from_fn(grid, *rows, |_, out| out.fill(*value))
            }
            FieldSource::Random {
                grid,
                rows,
                amplitude,
                stream,
            } => {
                let grid = grid.build()?;
                if !(amplitude.is_finite() && *amplitude > 0.0) {
                    return Err(Error::config("random field amplitude must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(*stream);
                let len = rows * grid.dim() * grid.cells();
                let values = (0..len).map(|_| rng.gen_range(-*amplitude..*amplitude)).collect();
                TensorField::new(grid, *rows, values)
            }
            FieldSource::Log { grid, rows, anchor } => {
                let grid = grid.build()?;
                if anchor.len() != grid.dim() || anchor.iter().zip(grid.shape()).any(|(a, s)| a >= s) {
                    return Err(Error::config("log field anchor must be a cell index of the grid"));
                }
                log_field(&grid, *rows, anchor)
            }
            FieldSource::Step {
                grid,
                rows,
                axis,
                amplitude,
            } => {
                let grid = grid.build()?;
                if *axis >= grid.dim() {
                    return Err(Error::config(format!("step axis {axis} out of range")));
                }
                let mid = grid.origin()[*axis] + 0.5 * (grid.shape()[*axis] as f64 - 1.0) * grid.spacing();
                TensorField::from_fn(grid, *rows, |x, out| {
                    out.fill(if x[*axis] < mid { -*amplitude } else { *amplitude })
                })
            }
        }
    }
}

fn default_mode() -> CubeMode {
    CubeMode::All
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BmoNormParams {
    input: FieldSource,
    #[serde(default = "default_mode")]
    mode: CubeMode,
    /// Also run the brute-force engine and require agreement to `1e-12`.
    #[serde(default)]
    bruteforce_check: bool,
}

#[derive(Debug, Serialize)]
struct BmoNormResult {
    report: NormReport,
    domination: DominationCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    bruteforce_seminorm: Option<f64>,
}

fn default_random_count() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateParams {
    grid: GridSpec,
    rows: usize,
    p: f64,
    q: f64,
    #[serde(default = "default_random_count")]
    random_count: usize,
    /// Extra fields appended to the generated family.
    #[serde(default)]
    inputs: Vec<FieldSource>,
}

#[derive(Debug, Serialize)]
struct CalibrateResult {
    p: f64,
    q: f64,
    #[serde(rename = "J1")]
    j1: f64,
    #[serde(rename = "J2")]
    j2: f64,
    members: Vec<CalibrationRow>,
}

#[derive(Debug, Serialize)]
struct CalibrationRow {
    index: usize,
    lhs: f64,
    rhs_factor: f64,
    ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaylorParams {
    integrand: IntegrandSpec,
    f: FieldSource,
    #[serde(default)]
    g: Option<FieldSource>,
    /// Alternative to `g`: `G = F + H`.
    #[serde(default)]
    h: Option<FieldSource>,
    /// Rescales `H` to this BMO norm before use.
    #[serde(default)]
    h_bmo: Option<f64>,
    #[serde(rename = "M")]
    m: f64,
    /// Calibrated at `(k, k+r)` over the generated family plus `H` when absent.
    #[serde(default, rename = "J2")]
    j2: Option<f64>,
    #[serde(default = "default_nodes")]
    nodes: usize,
    #[serde(default = "default_random_count")]
    random_count: usize,
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

#[derive(Debug, Serialize)]
struct TaylorResult {
    j2_source: &'static str,
    report: TaylorReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Affine extension of the Dirichlet data (zero for Neumann).
    #[default]
    Affine,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceLoad {
    pub face: Face,
    pub value: Vec<f64>,
}

/// Constant body load per component and constant surface loads per face.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    #[serde(default)]
    pub body: Option<Vec<f64>>,
    #[serde(default)]
    pub surface: Vec<SurfaceLoad>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemParams {
    grid: GridSpec,
    components: usize,
    integrand: IntegrandSpec,
    bc: BoundaryCondition,
    #[serde(default)]
    loads: LoadSpec,
    #[serde(default)]
    init: InitKind,
    #[serde(default)]
    solver: SolveOptions,
}

impl ProblemParams {
    fn build(&self) -> Result<Problem> {
        let grid = self.grid.build()?;
        let w = self.integrand.build(self.components, grid.dim())?;
        let mut loads = Loads::none();
        if let Some(b) = &self.loads.body {
            if b.len() != self.components {
                return Err(Error::config("params.problem.loads.body: one value per component"));
            }
            loads.body = Some(ScalarGridFunction::from_fn(grid.clone(), self.components, |_, out| {
                out.copy_from_slice(b)
            })?);
        }
        for s in &self.loads.surface {
            if s.value.len() != self.components {
                return Err(Error::config("params.problem.loads.surface: one value per component"));
            }
            loads.surface.push((s.face, s.value.clone()));
        }
        Problem::new(grid, w, self.bc.clone(), loads)
    }

    fn init(&self, problem: &Problem) -> ScalarGridFunction {
        match self.init {
            InitKind::Affine => problem.affine_interpolant(),
            InitKind::Zero => problem.boundary_values(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
enum SweepTag {
    #[serde(rename = "sweep")]
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
enum DeltaSpec {
    Value(f64),
    Mode(SweepTag),
}

fn default_steps() -> usize {
    8
}

fn default_generators() -> Vec<Generator> {
    ALL_GENERATORS.to_vec()
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StressParams {
    problem: ProblemParams,
    /// A radius, or `"sweep"` for bisection on `[0, sweep_upper]`.
    delta: DeltaSpec,
    /// Defaults to `10·max(1, ‖∇u_e‖_BMO)`.
    #[serde(default)]
    sweep_upper: Option<f64>,
    #[serde(default = "default_steps")]
    sweep_steps: usize,
    #[serde(default = "default_generators")]
    generators: Vec<Generator>,
    #[serde(default = "default_samples")]
    n_samples: usize,
    /// Interpolation constant at `(2, 3)`; calibrated when absent.
    #[serde(default, rename = "J")]
    j: Option<f64>,
    /// Exponent `q > 2` for the `L^q` variant of the margin check.
    #[serde(default)]
    q_variant: Option<f64>,
}

#[derive(Debug, Serialize)]
struct StressResult {
    equilibrium: Equilibrium,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepReport>,
    stress: StressReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_variant: Option<QVariantReport>,
}

/// Run-level switches that are not part of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub timestamp: bool,
    pub csv: bool,
    /// Directory for relative input paths.
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub json: String,
    pub csv: Option<String>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: Command,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
    /// Hash of the canonical config echo.
    config_hash: String,
    /// Hash of every file read, keyed by the path as written in the config.
    input_files: &'a BTreeMap<String, String>,
    config: &'a ExperimentConfig,
    violations: &'a [String],
    warnings: &'a [String],
    result: T,
}

struct Produced<T> {
    result: T,
    violations: Vec<String>,
    warnings: Vec<String>,
    csv: Option<String>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::config(format!("csv export failed: {e}"))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn run_bmo_norm(p: BmoNormParams, inputs: &mut Inputs) -> Result<Produced<BmoNormResult>> {
    let field = inputs.field(&p.input)?;
    let report = bmo_seminorm(&field, p.mode);
    let domination = linf_domination_check(&field);
    let mut violations = Vec::new();
    if !domination.holds {
        violations.push(format!("seminorm {} exceeds 2‖F‖∞ = {}", domination.seminorm, 2.0 * domination.linf));
    }
    let bruteforce_seminorm = if p.bruteforce_check {
        let brute = bmo_seminorm_bruteforce(&field)?;
        let fast = if p.mode == CubeMode::All {
            report.seminorm
        } else {
            bmo_seminorm(&field, CubeMode::All).seminorm
        };
        if !(rel_close(fast, brute.seminorm, 1e-12) || (fast == 0.0 && brute.seminorm == 0.0)) {
            violations.push(format!("fast seminorm {fast} differs from brute force {}", brute.seminorm));
        }
        Some(brute.seminorm)
    } else {
        None
    };
    Ok(Produced {
        result: BmoNormResult {
            report,
            domination,
            bruteforce_seminorm,
        },
        violations,
        warnings: Vec::new(),
        csv: None,
    })
}

fn run_calibrate(p: CalibrateParams, inputs: &mut Inputs) -> Result<Produced<CalibrateResult>> {
    let grid = p.grid.build()?;
    let mut family = calibration_family(&grid, p.rows, p.random_count, inputs.seed)?;
    for src in &p.inputs {
        family.push(inputs.field(src)?);
    }
    let report = calibrate_j2_report(&family, p.p, p.q)?;
    let j1 = calibrate_j1(&family, p.q)?;
    let members: Vec<CalibrationRow> = report
        .members
        .iter()
        .enumerate()
        .map(|(index, m)| CalibrationRow {
            index,
            lhs: m.lhs,
            rhs_factor: m.rhs_factor,
            ratio: m.ratio,
        })
        .collect();
    let csv = to_csv_string(&members).map_err(csv_err)?;
    Ok(Produced {
        result: CalibrateResult {
            p: p.p,
            q: p.q,
            j1,
            j2: report.j2,
            members,
        },
        violations: Vec::new(),
        warnings: Vec::new(),
        csv: Some(csv),
    })
}

#[derive(Serialize)]
struct TermRow {
    j: usize,
    term: f64,
}

fn run_taylor(p: TaylorParams, inputs: &mut Inputs) -> Result<Produced<TaylorResult>> {
    let f = inputs.field(&p.f)?;
    let w = p.integrand.build(f.rows(), f.cols())?;
    let g = match (&p.g, &p.h) {
        (Some(g), None) => {
            if p.h_bmo.is_some() {
                return Err(Error::config("params.h_bmo: only valid together with params.h"));
            }
            inputs.field(g)?
        }
        (None, Some(h)) => {
            let mut h = inputs.field(h)?;
            if let Some(target) = p.h_bmo {
                let b = bmo_norm(&h);
                if !(b > 0.0) {
                    return Err(Error::config("params.h: cannot rescale a zero field"));
                }
                h = h.scaled(target / b);
            }
            f.add(&h)?
        }
        _ => return Err(Error::config("params: exactly one of `g` and `h` is required")),
    };
    let (j2, j2_source) = match p.j2 {
        Some(j2) => (j2, "config"),
        None => {
            let h = g.sub(&f)?;
            let mut family = calibration_family(f.grid(), f.rows(), p.random_count, inputs.seed)?;
            if h.values().iter().any(|&v| v != 0.0) {
                family.push(h);
            }
            let k = w.k() as f64;
            (calibrate_j2(&family, k, k + w.r())?, "calibrated")
        }
    };
    let report = verify_taylor_inequality_with(&w, &f, &g, p.m, j2, p.nodes)?;
    let mut violations = Vec::new();
    if report.identity_gap > 1e-10 * (1.0 + report.lhs.abs()) {
        violations.push(format!("identity gap {} exceeds tolerance", report.identity_gap));
    }
    if report.pointwise_violations > 0 {
        violations.push(format!("{} pointwise remainder-bound violations", report.pointwise_violations));
    }
    if !report.integrated_bound_holds {
        violations.push("integrated remainder bound fails".to_string());
    }
    let scale = 1.0 + report.lhs.abs() + report.expansion_terms.iter().map(|t| t.abs()).sum::<f64>();
    if report.j2_valid && report.inequality_margin < -1e-10 * scale {
        violations.push(format!("inequality margin {} is negative", report.inequality_margin));
    }
    let mut warnings = Vec::new();
    if !report.j2_valid {
        warnings.push(format!("J2 = {j2} does not satisfy the interpolation inequality for this H"));
    }
    let rows: Vec<TermRow> = report
        .expansion_terms
        .iter()
        .enumerate()
        .map(|(j, &term)| TermRow { j, term })
        .collect();
    let csv = to_csv_string(&rows).map_err(csv_err)?;
    Ok(Produced {
        result: TaylorResult { j2_source, report },
        violations,
        warnings,
        csv: Some(csv),
    })
}

fn solution_csv(u: &ScalarGridFunction) -> Result<String> {
    let grid = u.grid();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cell".to_string()];
    header.extend(["x", "y", "z"].iter().take(grid.dim()).map(|s| s.to_string()));
    header.extend((0..u.components()).map(|i| format!("u{i}")));
    writer.write_record(&header).map_err(csv_err)?;
    for c in 0..grid.cells() {
        let x = grid.center(c);
        let mut rec = vec![c.to_string()];
        rec.extend(x[..grid.dim()].iter().map(|v| gf1::format_f64(*v)));
        rec.extend(u.cell(c).iter().map(|v| gf1::format_f64(*v)));
        writer.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv emits UTF-8"))
}

fn solve(p: &ProblemParams, seed: u64) -> Result<(Problem, Equilibrium)> {
    let problem = p.build()?;
    let mut opts = p.solver.clone();
    opts.lambda.seed = seed;
    let eq = solve_el(&problem, &p.init(&problem), &opts)?;
    Ok((problem, eq))
}

fn equilibrium_violations(eq: &Equilibrium) -> Vec<String> {
    let mut v = Vec::new();
    if eq.status != crate::variational::SolveStatus::Converged {
        v.push(format!(
            "solver stopped with status {:?} at residual {}",
            eq.status, eq.el_residual_norm
        ));
    }
    v
}

fn run_el_solve(p: ProblemParams, inputs: &mut Inputs) -> Result<Produced<Equilibrium>> {
    let (_, eq) = solve(&p, inputs.seed)?;
    let csv = solution_csv(&eq.u_e)?;
    Ok(Produced {
        violations: equilibrium_violations(&eq),
        result: eq,
        warnings: Vec::new(),
        csv: Some(csv),
    })
}

fn run_stress(p: StressParams, inputs: &mut Inputs) -> Result<Produced<StressResult>> {
    let (problem, eq) = solve(&p.problem, inputs.seed)?;
    let mut violations = equilibrium_violations(&eq);
    let opts = StressOptions {
        generators: p.generators.clone(),
        n_samples: p.n_samples,
        seed: inputs.seed,
        j: p.j,
    };
    let (sweep, stress) = match p.delta {
        DeltaSpec::Value(delta) => (None, minimizer_stress_test(&problem, &eq, delta, &opts)?),
        DeltaSpec::Mode(SweepTag::Sweep) => {
            let upper = match p.sweep_upper {
                Some(u) => u,
                None => 10.0 * bmo_norm(&gradient(&eq.u_e)).max(1.0),
            };
            let (sweep, stress) = certify_delta(&problem, &eq, upper, p.sweep_steps, &opts)?;
            if !(sweep.certified_delta > 0.0) {
                violations.push("bisection certified no positive delta".to_string());
            }
            (Some(sweep), stress)
        }
    };
    if stress.failures > 0 {
        violations.push(format!("{} negative margins at delta {}", stress.failures, stress.delta));
    }
    // A per-sample failure of the interpolation step flags the calibrated J,
    // not the minimality property itself.
    let mut warnings = Vec::new();
    if stress.proof_violations > 0 {
        warnings.push(format!(
            "{} samples violate the interpolation step with J = {}",
            stress.proof_violations, stress.j
        ));
    }
    let q_variant = match p.q_variant {
        Some(q) => {
            let family = calibration_family(problem.grid(), problem.components(), 8, inputs.seed)?;
            let jq = calibrate_j2(&family, 2.0, q)?;
            let rep = remark_q_variant(&stress, q, jq)?;
            if rep.violations > 0 {
                violations.push(format!("{} samples violate the L^{q} margin", rep.violations));
            }
            Some(rep)
        }
        None => None,
    };
    let csv = to_csv_string(&stress.samples).map_err(csv_err)?;
    Ok(Produced {
        result: StressResult {
            equilibrium: eq,
            sweep,
            stress,
            q_variant,
        },
        violations,
        warnings,
        csv: Some(csv),
    })
}

fn finish<T: Serialize>(
    config: &ExperimentConfig,
    inputs: &Inputs,
    opts: &RunOptions,
    produced: Produced<T>,
) -> Result<RunOutcome> {
    let echo = to_json_string(config).map_err(|e| Error::config(format!("config echo: {e}")))?;
    let timestamp_unix = if opts.timestamp {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs())
    } else {
        None
    };
    let envelope = Envelope {
        command: config.command,
        seed: config.seed,
        timestamp_unix,
        config_hash: content_hash(echo.as_bytes()),
        input_files: &inputs.files,
        config,
        violations: &produced.violations,
        warnings: &produced.warnings,
        result: produced.result,
    };
    let json = to_json_string(&envelope).map_err(|e| Error::config(format!("report serialization: {e}")))?;
    let exit_code = if produced.violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    };
    Ok(RunOutcome {
        exit_code,
        violations: produced.violations,
        warnings: produced.warnings,
        json,
        csv: if opts.csv { produced.csv } else { None },
    })
}

/// Runs one experiment in memory. Errors correspond to exit status 1.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let mut inputs = Inputs {
        base: opts.base_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
        seed: config.seed,
        files: BTreeMap::new(),
    };
    let params = &config.params;
    match config.command {
        Command::BmoNorm => {
            let p = run_bmo_norm(parse_params(params)?, &mut inputs)?;
            finish(&config, &inputs, opts, p)
        }
        Command::InterpCalibrate => {
            let p = run_calibrate(parse_params(params)?, &mut inputs)?;
            finish(&config, &inputs, opts, p)
        }
        Command::TaylorCheck => {
            let p = run_taylor(parse_params(params)?, &mut inputs)?;
            finish(&config, &inputs, opts, p)
        }
        Command::ElSolve => {
            let p = run_el_solve(parse_params(params)?, &mut inputs)?;
            finish(&config, &inputs, opts, p)
        }
        Command::StressTest => {
            let p = run_stress(parse_params(params)?, &mut inputs)?;
            finish(&config, &inputs, opts, p)
        }
    }
}

/// Reads the config at `path`, runs it, and writes the report to the
/// configured output (stdout when absent). The CSV table, when requested,
/// goes next to the JSON report with a `.csv` extension.
pub fn run_file(path: &Path, mut opts: RunOptions) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = ExperimentConfig::from_json(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if opts.base_dir.is_none() {
        opts.base_dir = Some(base.clone());
    }
    if opts.csv && config.output.is_none() {
        return Err(Error::config("--csv needs `output` in the config"));
    }
    let outcome = run(&config, &opts)?;
    match &config.output {
        Some(out) => {
            let out = if out.is_absolute() { out.clone() } else { base.join(out) };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&out, &outcome.json).map_err(|e| Error::io(&out, e))?;
            if let Some(csv) = &outcome.csv {
                let csv_path = out.with_extension("csv");
                std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
            }
        }
        None => print!("{}", outcome.json),
    }
    Ok(outcome)
}
