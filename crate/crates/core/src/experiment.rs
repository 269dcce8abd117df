//! File-driven experiments: a TOML config in, a directory of CSV files out.
//!
//! A bundle directory contains
//!
//! * `config.toml`: the resolved config the bundle was produced from,
//! * `manifest.toml`: tool version, sha256 of `config.toml`, notes,
//! * `summary.csv`: one row per `(epsilon, seed)` run, sorted by both,
//! * `analysis.csv`: one [`AnalysisReport`] row per epsilon,
//! * `traces/*.csv`: one trace per run.
//!
//! Runs execute on the rayon pool; all files are written afterwards from the
//! ordered results so the output does not depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{analyze, write_reports_csv, AnalysisReport};
use crate::error::{Error, Result};
use crate::estimator::{PositiveBasis, SamplingPlan, DEFAULT_DELTA};
use crate::follower::OracleKind;
use crate::game::{generate_instance, Conditioning, InstanceFile, QuadraticGame};
use crate::solver::{self, default_x_init, SolverConfig, SolverTrace, Termination, DEFAULT_ALPHA, DEFAULT_ITERS};

pub const TOOL_NAME: &str = "stackelberg-ibr";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ANALYSIS_FILE: &str = "analysis.csv";
pub const TRACES_DIR: &str = "traces";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const TIGHTNESS_FILE: &str = "tightness.csv";

fn default_epsilons() -> Vec<f64> {
    vec![0.01, 0.025, 0.04, 0.1, 0.2]
}

fn default_seeds() -> usize {
    10
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds_per_epsilon: usize,
    /// Run `j` of every epsilon uses oracle seed `seed + j`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub instance: InstanceSource,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            seeds_per_epsilon: default_seeds(),
            seed: 0,
            out_dir: default_out_dir(),
            instance: InstanceSource::default(),
            oracle: OracleConfig::default(),
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InstanceSource {
    Generate {
        n: usize,
        m: usize,
        seed: u64,
        #[serde(default)]
        conditioning: Conditioning,
    },
    /// Path to an instance TOML, relative to the config file.
    File { path: PathBuf },
    Inline(InstanceFile),
}

impl Default for InstanceSource {
    fn default() -> Self {
        InstanceSource::Generate { n: 5, m: 4, seed: 1, conditioning: default_experiment_conditioning() }
    }
}

/// Conditioning used by the default experiment instance: `shift = 2` makes
/// `mu_f >= 2`, enough for 1000 steps at `alpha = 0.01` to reach the noise floor.
pub fn default_experiment_conditioning() -> Conditioning {
    Conditioning { shift: 2.0, ..Conditioning::default() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    Exact,
    #[default]
    Ball,
    Sphere,
    Gd,
}

impl std::str::FromStr for OracleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(OracleChoice::Exact),
            "ball" => Ok(OracleChoice::Ball),
            "sphere" => Ok(OracleChoice::Sphere),
            "gd" => Ok(OracleChoice::Gd),
            _ => Err(Error::Config(format!("unknown oracle {s:?}; expected exact, ball, sphere or gd"))),
        }
    }
}

fn default_gd_iters() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub kind: OracleChoice,
    /// Step size of the gradient-descent follower; `1/lambda_max(S_2)` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Inner iteration budget of the gradient-descent follower.
    #[serde(default = "default_gd_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub warm_start: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { kind: OracleChoice::Ball, beta: None, max_iters: default_gd_iters(), warm_start: false }
    }
}

impl OracleConfig {
    pub fn kind_for(&self, eps: f64, seed: u64) -> OracleKind {
        match self.kind {
            OracleChoice::Exact => OracleKind::Exact,
            OracleChoice::Ball => OracleKind::PerturbedBall { eps, seed },
            OracleChoice::Sphere => OracleKind::PerturbedSphere { eps, seed },
            OracleChoice::Gd => OracleKind::GradientDescent {
                beta: self.beta,
                eps_target: eps,
                max_iters: self.max_iters,
                warm_start: self.warm_start,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisConfig {
    #[default]
    StandardDouble,
    /// One direction per row.
    Custom { directions: Vec<Vec<f64>> },
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_iters() -> usize {
    DEFAULT_ITERS
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_x_init_scale() -> f64 {
    10.0
}
fn default_window() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub x_init_seed: u64,
    #[serde(default = "default_x_init_scale")]
    pub x_init_scale: f64,
    /// Explicit starting point; overrides the seeded one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    /// Trailing records averaged into the steady-state error.
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            iters: DEFAULT_ITERS,
            delta: DEFAULT_DELTA,
            basis: BasisConfig::StandardDouble,
            x_init_seed: 0,
            x_init_scale: default_x_init_scale(),
            x_init: None,
            stop: None,
            window: default_window(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config; relative instance paths stay relative.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file. Instance paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let InstanceSource::File { path: p } = &mut cfg.instance {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilons is empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("epsilon values must be finite and >= 0, got {e}")));
        }
        if self.seeds_per_epsilon == 0 {
            return Err(Error::Config("seeds_per_epsilon must be at least 1".into()));
        }
        if self.oracle.kind == OracleChoice::Exact && self.epsilons.iter().any(|e| *e != 0.0) {
            return Err(Error::Config("the exact oracle only supports epsilon = 0".into()));
        }
        if self.oracle.kind == OracleChoice::Gd && self.epsilons.contains(&0.0) {
            return Err(Error::Config("the gradient-descent oracle needs epsilon > 0".into()));
        }
        if let InstanceSource::File { path } = &self.instance {
            if !path.is_file() {
                return Err(Error::Config(format!("instance file {} does not exist", path.display())));
            }
        }
        let s = &self.solver;
        if !(s.alpha > 0.0 && s.alpha.is_finite()) || !(s.delta > 0.0 && s.delta.is_finite()) {
            return Err(Error::Config("alpha and delta must be finite and > 0".into()));
        }
        if s.iters == 0 || s.window == 0 || s.window > s.iters + 1 {
            return Err(Error::Config("iters must be >= 1 and window in 1..=iters+1".into()));
        }
        if !(s.x_init_scale >= 0.0 && s.x_init_scale.is_finite()) {
            return Err(Error::Config("x_init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Build the game named by the instance source.
    pub fn game(&self) -> Result<QuadraticGame> {
        match &self.instance {
            InstanceSource::Generate { n, m, seed, conditioning } => {
                Ok(generate_instance(*n, *m, *seed, conditioning)?.game)
            }
            InstanceSource::File { path } => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                QuadraticGame::from_toml(&text)
            }
            InstanceSource::Inline(file) => QuadraticGame::try_from(file.clone()),
        }
    }

    pub fn plan(&self, n: usize) -> Result<SamplingPlan> {
        let basis = match &self.solver.basis {
            BasisConfig::StandardDouble => PositiveBasis::standard_double(n),
            BasisConfig::Custom { directions } => {
                if directions.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("custom basis directions must have {n} entries")));
                }
                let p = directions.len();
                PositiveBasis::custom(DMatrix::from_fn(p, n, |i, j| directions[i][j]))?
            }
        };
        SamplingPlan::new(basis, self.solver.delta)
    }

    pub fn x_init(&self, n: usize) -> Result<DVector<f64>> {
        match &self.solver.x_init {
            Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::Config(format!("x_init has {} entries, game has n = {n}", v.len()))),
            None => Ok(default_x_init(n, self.solver.x_init_seed, self.solver.x_init_scale)),
        }
    }

    /// Oracle seeds in run order.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds_per_epsilon as u64).map(|j| self.seed + j).collect()
    }

    /// SHA-256 of the resolved config text, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_text(&self.to_toml()?))
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// One row of `summary.csv`. Undefined bound and gap are written empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub epsilon: f64,
    pub seed: u64,
    /// `f(x_T) - f*`, averaged over the configured window.
    pub steady_state_error: f64,
    pub condition_value: f64,
    pub theorem_bound: Option<f64>,
    /// `theorem_bound - steady_state_error`.
    pub gap: Option<f64>,
    /// `||x_T - x*||`
    pub err_x: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub runs: usize,
    #[serde(default)]
    pub skipped_epsilons: Vec<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub epsilon: f64,
    pub seed: u64,
    pub trace: SolverTrace,
    pub row: SummaryRow,
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub runs: Vec<RunOutput>,
    pub reports: Vec<AnalysisReport>,
    pub manifest: Manifest,
}

impl ResultBundle {
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }
}

pub fn trace_file_name(eps: f64, seed: u64) -> String {
    format!("eps{eps}_seed{seed}.csv")
}

/// Run one `(eps, seed)` cell. Oracle failure and divergence become
/// [`Error::Run`] carrying the coordinates.
pub fn run_cell(game: &QuadraticGame, cfg: &ExperimentConfig, plan: &SamplingPlan, eps: f64, seed: u64) -> Result<RunOutput> {
    let mut scfg = SolverConfig::new(cfg.x_init(game.n())?, plan.clone(), cfg.oracle.kind_for(eps, seed));
    scfg.alpha = cfg.solver.alpha;
    scfg.max_iters = cfg.solver.iters;
    scfg.stop = cfg.solver.stop;
    let trace = solver::run(game, &scfg)?;
    match &trace.termination {
        Termination::OracleFailure { k, message } => {
            return Err(Error::Run { eps, seed, k: *k, reason: message.clone(), diverged: false })
        }
        Termination::Diverged { k, norm } => {
            return Err(Error::Run { eps, seed, k: *k, reason: format!("||x|| = {norm:e}"), diverged: true })
        }
        Termination::Completed | Termination::GradientThreshold => {}
    }
    let window = cfg.solver.window.min(trace.records.len());
    let ss = solver::steady_state_error(&trace, window)?;
    let report = &trace.report;
    let row = SummaryRow {
        epsilon: eps,
        seed,
        steady_state_error: ss,
        condition_value: report.condition_value,
        theorem_bound: report.theorem_bound,
        gap: report.theorem_bound.map(|b| b - ss),
        err_x: trace.last().err_x,
        iterations: trace.iterations(),
    };
    Ok(RunOutput { epsilon: eps, seed, trace, row })
}

/// Every `(eps, seed)` cell for the given epsilons, sorted by eps then seed.
pub fn run_cells(game: &QuadraticGame, cfg: &ExperimentConfig, epsilons: &[f64]) -> Result<Vec<RunOutput>> {
    let plan = cfg.plan(game.n())?;
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let cells: Vec<(f64, u64)> = eps.iter().flat_map(|&e| cfg.run_seeds().into_iter().map(move |s| (e, s))).collect();
    cells.par_iter().map(|&(e, s)| run_cell(game, cfg, &plan, e, s)).collect()
}

/// The epsilon sweep: every configured epsilon, every seed.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let game = cfg.game()?;
    let runs = run_cells(&game, cfg, &cfg.epsilons)?;
    write_bundle(cfg, "run", &game, runs, Vec::new(), Vec::new())
}

/// The tightness study: like [`cmd_run`] but epsilons outside the region
/// where the convergence condition holds are skipped with a note.
pub fn cmd_tightness(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let game = cfg.game()?;
    let plan = cfg.plan(game.n())?;
    let mut keep = Vec::new();
    let mut skipped = Vec::new();
    let mut notes = Vec::new();
    for &eps in &cfg.epsilons {
        let report = analyze(&game, &plan, eps)?;
        if report.condition_holds() {
            keep.push(eps);
        } else {
            notes.push(format!("skipped eps = {eps}: condition value {} >= 0", report.condition_value));
            skipped.push(eps);
        }
    }
    if keep.is_empty() {
        return Err(Error::NoConformingEpsilon(notes.join("; ")));
    }
    let runs = run_cells(&game, cfg, &keep)?;
    write_bundle(cfg, "tightness", &game, runs, skipped, notes)
}

/// Analysis reports for each epsilon, no runs.
pub fn cmd_analyze(game: &QuadraticGame, plan: &SamplingPlan, epsilons: &[f64]) -> Result<Vec<AnalysisReport>> {
    epsilons.iter().map(|&e| analyze(game, plan, e)).collect()
}

/// Human-readable report.
pub fn format_report(r: &AnalysisReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| v.to_string());
    let mut s = String::new();
    let mut line = |k: &str, v: String| s.push_str(&format!("{k:<22} {v}\n"));
    line("eps", r.eps.to_string());
    line("delta", r.delta.to_string());
    line("n, p", format!("{}, {}", r.n, r.p));
    line("Lx, Ly", format!("{}, {}", r.lx, r.ly));
    line("rho1, rho2", format!("{}, {}", r.rho1, r.rho2));
    line("mu_f, L_f", format!("{}, {}", r.mu_f, r.l_f));
    line("||M^+||", r.pinv_norm.to_string());
    line("a", r.a.to_string());
    line("b", r.b.to_string());
    line("kappa (tight)", r.kappa.to_string());
    line("kappa (certified)", r.kappa_certified.to_string());
    line("kappa (swapped ratio)", opt(r.kappa_swapped_ratio));
    line("condition_value", r.condition_value.to_string());
    line("theorem_bound", opt(r.theorem_bound));
    line("b (sound)", r.b_sound.to_string());
    line("condition (sound)", r.condition_value_sound.to_string());
    line("theorem_bound (sound)", opt(r.theorem_bound_sound));
    s
}

fn write_bundle(
    cfg: &ExperimentConfig,
    command: &str,
    game: &QuadraticGame,
    runs: Vec<RunOutput>,
    skipped_epsilons: Vec<f64>,
    notes: Vec<String>,
) -> Result<ResultBundle> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(dir.join(TRACES_DIR))?;
    let config_text = cfg.to_toml()?;
    fs::write(dir.join(CONFIG_FILE), &config_text)?;

    let mut summary = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
    for run in &runs {
        let file = fs::File::create(dir.join(TRACES_DIR).join(trace_file_name(run.epsilon, run.seed)))?;
        solver::write_trace_csv(std::io::BufWriter::new(file), &run.trace)?;
        summary.serialize(&run.row)?;
    }
    summary.flush()?;

    let mut epsilons: Vec<f64> = runs.iter().map(|r| r.epsilon).collect();
    epsilons.dedup();
    let plan = cfg.plan(game.n())?;
    let reports = cmd_analyze(game, &plan, &epsilons)?;
    write_reports_csv(fs::File::create(dir.join(ANALYSIS_FILE))?, &reports)?;

    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        tool_version: TOOL_VERSION.into(),
        command: command.into(),
        config_hash: hash_text(&config_text),
        runs: runs.len(),
        skipped_epsilons,
        notes,
    };
    fs::write(dir.join(MANIFEST_FILE), toml::to_string(&manifest)?)?;
    Ok(ResultBundle { dir, runs, reports, manifest })
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join(SUMMARY_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(toml::from_str(&text)?)
}

/// Check that the manifest hash matches `config.toml` and that every
/// summary row has its trace file.
pub fn verify_bundle(dir: &Path) -> Result<()> {
    let manifest = read_manifest(dir)?;
    let config_text = fs::read_to_string(dir.join(CONFIG_FILE))?;
    if hash_text(&config_text) != manifest.config_hash {
        return Err(Error::Config(format!("{}: config hash does not match manifest", dir.display())));
    }
    let rows = read_summary(dir)?;
    if rows.len() != manifest.runs {
        return Err(Error::Config(format!("manifest lists {} runs, summary has {}", manifest.runs, rows.len())));
    }
    for row in &rows {
        let path = dir.join(TRACES_DIR).join(trace_file_name(row.epsilon, row.seed));
        if !path.is_file() {
            return Err(Error::Config(format!("missing trace {}", path.display())));
        }
    }
    Ok(())
}

/// Seed-averaged view of one epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonAggregate {
    pub epsilon: f64,
    pub runs: usize,
    pub mean_steady_state_error: f64,
    pub mean_err_x: f64,
    pub condition_value: f64,
    pub theorem_bound: Option<f64>,
    pub mean_gap: Option<f64>,
    pub min_gap: Option<f64>,
}

/// Group summary rows by epsilon (rows must be sorted by epsilon).
pub fn aggregate(rows: &[SummaryRow]) -> Vec<EpsilonAggregate> {
    rows.chunk_by(|a, b| a.epsilon == b.epsilon)
        .map(|g| {
            let n = g.len() as f64;
            let gaps: Option<Vec<f64>> = g.iter().map(|r| r.gap).collect();
            EpsilonAggregate {
                epsilon: g[0].epsilon,
                runs: g.len(),
                mean_steady_state_error: g.iter().map(|r| r.steady_state_error).sum::<f64>() / n,
                mean_err_x: g.iter().map(|r| r.err_x).sum::<f64>() / n,
                condition_value: g[0].condition_value,
                theorem_bound: g[0].theorem_bound,
                mean_gap: gaps.as_ref().map(|v| v.iter().sum::<f64>() / n),
                min_gap: gaps.map(|v| v.into_iter().fold(f64::INFINITY, f64::min)),
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ConvergenceRow {
    epsilon: f64,
    seed: u64,
    k: usize,
    err_x: f64,
    gap_f: f64,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    k: usize,
    err_x: f64,
    gap_f: f64,
}

/// Flatten a bundle into `convergence.csv` (long format, one row per
/// iterate) and `tightness.csv` (one [`EpsilonAggregate`] per epsilon) in
/// `out_dir`.
pub fn write_plot_data(bundle: &Path, out_dir: &Path) -> Result<()> {
    verify_bundle(bundle)?;
    let rows = read_summary(bundle)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: bundle has no runs", bundle.display())));
    }
    fs::create_dir_all(out_dir)?;
    let mut conv = csv::Writer::from_path(out_dir.join(CONVERGENCE_FILE))?;
    for row in &rows {
        let mut tr = csv::Reader::from_path(bundle.join(TRACES_DIR).join(trace_file_name(row.epsilon, row.seed)))?;
        for rec in tr.deserialize::<TraceRow>() {
            let rec = rec?;
            conv.serialize(ConvergenceRow { epsilon: row.epsilon, seed: row.seed, k: rec.k, err_x: rec.err_x, gap_f: rec.gap_f })?;
        }
    }
    conv.flush()?;
    let mut tight = csv::Writer::from_path(out_dir.join(TIGHTNESS_FILE))?;
    for agg in aggregate(&rows) {
        tight.serialize(agg)?;
    }
    tight.flush()?;
    Ok(())
}
