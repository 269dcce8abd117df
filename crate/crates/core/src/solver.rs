//! Leader descent `x_{k+1} = x_k - alpha g_k` on the inexact gradient.
//!
//! The algorithm itself only touches the leader's cost and the follower
//! oracle. The game is additionally used to fill in ground-truth columns of
//! the trace (optimality gap, true gradient, `phi`); for homogeneous
//! quadratic games the optimum is `x* = 0`, `f* = 0`.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::analysis::{analyze, AnalysisReport};
use crate::error::{Error, Result};
use crate::estimator::{estimate_gradient_at, SamplingPlan, DEFAULT_DELTA};
use crate::follower::{FollowerOracle, OracleKind, QuadraticFollower};
use crate::game::QuadraticGame;

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_ITERS: usize = 1000;
/// `||x_k||` above this aborts the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub x_init: DVector<f64>,
    pub plan: SamplingPlan,
    pub oracle: OracleKind,
    /// Stop once `||g_k||` drops to this value.
    pub stop: Option<f64>,
}

impl SolverConfig {
    /// Defaults: `alpha = 0.01`, 1000 iterations, no early stop.
    pub fn new(x_init: DVector<f64>, plan: SamplingPlan, oracle: OracleKind) -> Self {
        Self { alpha: DEFAULT_ALPHA, max_iters: DEFAULT_ITERS, x_init, plan, oracle, stop: None }
    }

    /// Defaults plus the standard basis with `delta = 0.1` and the seeded
    /// starting point from [`default_x_init`].
    pub fn standard(n: usize, oracle: OracleKind, x_init_seed: u64) -> Result<Self> {
        let plan = SamplingPlan::standard(n, DEFAULT_DELTA)?;
        Ok(Self::new(default_x_init(n, x_init_seed, 10.0), plan, oracle))
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if self.x_init.len() != n || self.plan.dim() != n {
            return Err(Error::InvalidParameter(format!(
                "x_init has {} entries and plan dimension {}, game has n = {n}",
                self.x_init.len(),
                self.plan.dim()
            )));
        }
        if self.x_init.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("x_init has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Seeded random direction scaled to norm `scale`.
pub fn default_x_init(n: usize, seed: u64, scale: f64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        if v.norm() > 1e-12 {
            return v.normalize() * scale;
        }
    }
}

/// One row of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub x: DVector<f64>,
    /// `||x_k - x*||`
    pub err_x: f64,
    /// `f(x_k) - f*`
    pub gap_f: f64,
    pub grad_norm: f64,
    pub g_norm: f64,
    /// `||grad f(x_k) - g_k||`
    pub grad_err: f64,
    pub phi: f64,
    /// Cumulative oracle queries including this record's estimate.
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    GradientThreshold,
    OracleFailure { k: usize, message: String },
    Diverged { k: usize, norm: f64 },
}

impl Termination {
    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::OracleFailure { .. } | Termination::Diverged { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    /// Constants at the oracle's nominal `eps`; `phi` in the records uses them.
    pub report: AnalysisReport,
    /// Whether `alpha < 1/L_f` held.
    pub alpha_certified: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub steady_state_error: f64,
    pub final_err_x: f64,
    pub termination: String,
    pub alpha_certified: bool,
    pub plateau_change: f64,
}

impl SolverTrace {
    /// Leader steps taken (`records.len() - 1`).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace has at least one record")
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            iterations: self.iterations(),
            steady_state_error: self.last().gap_f,
            final_err_x: self.last().err_x,
            termination: match &self.termination {
                Termination::Completed => "completed".into(),
                Termination::GradientThreshold => "gradient_threshold".into(),
                Termination::OracleFailure { k, message } => format!("oracle_failure at k={k}: {message}"),
                Termination::Diverged { k, norm } => format!("diverged at k={k}: ||x|| = {norm:e}"),
            },
            alpha_certified: self.alpha_certified,
            plateau_change: plateau_change(self),
        }
    }

    /// Number of records with `grad_err > phi`.
    pub fn bound_violations(&self) -> usize {
        self.records.iter().filter(|r| r.grad_err > r.phi).count()
    }
}

/// Run the descent with a follower oracle built from `cfg.oracle`.
pub fn run(game: &QuadraticGame, cfg: &SolverConfig) -> Result<SolverTrace> {
    let mut oracle = QuadraticFollower::new(cfg.oracle.clone(), game)?;
    run_with_oracle(game, cfg, &mut oracle)
}

/// Run the descent against any oracle. `cfg.oracle` is ignored; the
/// oracle's own nominal `eps` drives `phi`.
pub fn run_with_oracle<O: FollowerOracle + ?Sized>(game: &QuadraticGame, cfg: &SolverConfig, oracle: &mut O) -> Result<SolverTrace> {
    cfg.validate(game.n())?;
    let report = analyze(game, &cfg.plan, oracle.nominal_eps())?;
    let leader = game.leader();
    let mut records = Vec::with_capacity(cfg.max_iters + 1);
    let mut x = cfg.x_init.clone();
    let mut queries = 0;
    let mut termination = Termination::Completed;

    for k in 0..=cfg.max_iters {
        let est = match estimate_gradient_at(&leader, oracle, &x, &cfg.plan, None, k) {
            Ok(est) => est,
            Err(Error::Oracle(e)) => {
                termination = Termination::OracleFailure { k, message: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        queries += est.queries;
        let (f, grad) = game.leader_value_and_grad(&x);
        let g_norm = est.g.norm();
        records.push(TraceRecord {
            k,
            err_x: x.norm(),
            gap_f: f,
            grad_norm: grad.norm(),
            g_norm,
            grad_err: (&grad - &est.g).norm(),
            phi: report.phi(game, &x),
            queries,
            x: x.clone(),
        });
        if k == cfg.max_iters {
            break;
        }
        if cfg.stop.is_some_and(|tol| g_norm <= tol) {
            termination = Termination::GradientThreshold;
            break;
        }
        x -= est.g * cfg.alpha;
        let norm = x.norm();
        if !(norm <= DIVERGENCE_NORM) {
            termination = Termination::Diverged { k: k + 1, norm };
            break;
        }
    }
    if records.is_empty() {
        // oracle failed on the very first estimate
        let (f, grad) = game.leader_value_and_grad(&x);
        records.push(TraceRecord {
            k: 0,
            err_x: x.norm(),
            gap_f: f,
            grad_norm: grad.norm(),
            g_norm: 0.0,
            grad_err: grad.norm(),
            phi: report.phi(game, &x),
            queries,
            x,
        });
    }
    Ok(SolverTrace { records, termination, alpha_certified: report.step_certified(cfg.alpha), report, alpha: cfg.alpha })
}

/// Final optimality gap `f(x_T) - f*` (`window = 1`), or its mean over the
/// last `window` records.
pub fn steady_state_error(trace: &SolverTrace, window: usize) -> Result<f64> {
    let len = trace.records.len();
    if window == 0 || window > len {
        return Err(Error::InvalidParameter(format!("window {window} not in 1..={len}")));
    }
    let tail = &trace.records[len - window..];
    Ok(tail.iter().map(|r| r.gap_f).sum::<f64>() / window as f64)
}

/// Least-squares slope of `ln(f(x_k) - f*)` against `k` over records with a
/// positive gap.
pub fn log_gap_slope(trace: &SolverTrace) -> Option<f64> {
    let pts: Vec<(f64, f64)> = trace
        .records
        .iter()
        .filter(|r| r.gap_f > 0.0)
        .map(|r| (r.k as f64, r.gap_f.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mk = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mk) * (p.1 - ml)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mk).powi(2)).sum();
    Some(cov / var)
}

/// Relative change of the mean gap between the two halves of the last 10%
/// of the trace. Small values mean the run has settled.
pub fn plateau_change(trace: &SolverTrace) -> f64 {
    let len = trace.records.len();
    let tail = (len / 10).max(2);
    if len < tail {
        return f64::MAX;
    }
    let window = &trace.records[len - tail..];
    let half = tail / 2;
    let mean = |rs: &[TraceRecord]| rs.iter().map(|r| r.gap_f).sum::<f64>() / rs.len() as f64;
    let (early, late) = (mean(&window[..half]), mean(&window[half..]));
    let scale = mean(window);
    if scale <= 0.0 {
        return 0.0;
    }
    (late - early).abs() / scale
}

pub fn has_plateaued(trace: &SolverTrace) -> bool {
    plateau_change(trace) < 1e-3
}

pub const TRACE_HEADER: [&str; 8] = ["k", "err_x", "gap_f", "grad_norm", "g_norm", "grad_err", "phi", "queries"];

/// Write the trace as CSV with [`TRACE_HEADER`].
pub fn write_trace_csv<W: Write>(out: W, trace: &SolverTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            r.err_x.to_string(),
            r.gap_f.to_string(),
            r.grad_norm.to_string(),
            r.g_norm.to_string(),
            r.grad_err.to_string(),
            r.phi.to_string(),
            r.queries.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
