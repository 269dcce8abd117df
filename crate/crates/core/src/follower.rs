//! Inexact best-response oracles.
//!
//! The leader never sees the follower's cost. Everything it learns about the
//! follower comes through [`FollowerOracle::respond`], which returns an
//! action `y` together with a certified radius `eps` such that
//! `||y - r(x)|| <= eps`.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::game::QuadraticGame;
use crate::linalg;

/// Added to every gradient-descent certificate, relative to `1 + ||y||`.
pub const GD_ROUNDING_SLACK: f64 = 1e-12;

/// Which point of a sampling stencil a query belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryPurpose {
    Center,
    Probe(usize),
}

impl fmt::Display for QueryPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryPurpose::Center => f.write_str("center"),
            QueryPurpose::Probe(i) => write!(f, "probe{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbrQuery {
    pub x: DVector<f64>,
    pub purpose: QueryPurpose,
    /// Leader iteration that issued the query; used only for logging.
    pub iteration: usize,
}

impl IbrQuery {
    pub fn center(x: DVector<f64>) -> Self {
        Self { x, purpose: QueryPurpose::Center, iteration: 0 }
    }

    pub fn at_iteration(mut self, k: usize) -> Self {
        self.iteration = k;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbrResponse {
    pub y: DVector<f64>,
    /// Guaranteed upper bound on `||y - r(x)||`.
    pub eps_certified: f64,
    /// Inner iterations spent (0 for closed-form oracles).
    pub query_cost: usize,
}

/// Follower behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleKind {
    /// `y = r(x)`.
    Exact,
    /// `y = r(x) + d`, `d` uniform in the radius-`eps` ball.
    PerturbedBall { eps: f64, seed: u64 },
    /// `y = r(x) + d`, `d` uniform on the radius-`eps` sphere.
    PerturbedSphere { eps: f64, seed: u64 },
    /// `y_{t+1} = y_t - beta D_2 f_2(x, y_t)` until `||y_t - r(x)|| <= eps_target`
    /// is certified. `beta` defaults to `1 / lambda_max(S_2)`.
    GradientDescent {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        eps_target: f64,
        max_iters: usize,
        #[serde(default)]
        warm_start: bool,
    },
}

impl OracleKind {
    /// The `eps` every response of this oracle is guaranteed to meet.
    pub fn nominal_eps(&self) -> f64 {
        match *self {
            OracleKind::Exact => 0.0,
            OracleKind::PerturbedBall { eps, .. } | OracleKind::PerturbedSphere { eps, .. } => eps,
            OracleKind::GradientDescent { eps_target, .. } => eps_target,
        }
    }
}

/// The only channel between leader and follower.
pub trait FollowerOracle {
    fn respond(&mut self, query: &IbrQuery) -> Result<IbrResponse, OracleError>;

    /// Upper bound on `eps_certified` over all successful responses.
    fn nominal_eps(&self) -> f64;

    /// True when responses depend on the query alone (no RNG or warm state).
    fn is_stateless(&self) -> bool {
        false
    }
}

/// One line of the optional query log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryLogEntry {
    pub iter: usize,
    pub purpose: String,
    pub eps_certified: f64,
    pub query_cost: usize,
}

/// Oracle backed by a quadratic follower cost. Holds a private copy of the
/// follower's blocks; callers only ever see `(y, eps_certified)`.
#[derive(Debug, Clone)]
pub struct QuadraticFollower {
    kind: OracleKind,
    q2: DMatrix<f64>,
    s2: DMatrix<f64>,
    dr: DMatrix<f64>,
    beta: f64,
    contraction: f64,
    counter: u64,
    warm: Option<DVector<f64>>,
    log: Option<Vec<QueryLogEntry>>,
}

impl QuadraticFollower {
    pub fn new(kind: OracleKind, game: &QuadraticGame) -> Result<Self> {
        let (_, q2, s2) = game.follower_blocks();
        let (lmin, lmax) = linalg::sym_extreme_eigenvalues(s2);
        let mut beta = 1.0 / lmax;
        match kind {
            OracleKind::Exact => {}
            OracleKind::PerturbedBall { eps, .. } | OracleKind::PerturbedSphere { eps, .. } => {
                if !(eps >= 0.0 && eps.is_finite()) {
                    return Err(Error::InvalidParameter(format!("oracle eps must be finite and >= 0, got {eps}")));
                }
            }
            OracleKind::GradientDescent { beta: b, eps_target, .. } => {
                if !(eps_target >= 0.0 && eps_target.is_finite()) {
                    return Err(Error::InvalidParameter(format!("eps_target must be >= 0, got {eps_target}")));
                }
                if let Some(b) = b {
                    if !(b > 0.0 && b < 2.0 / lmax) {
                        return Err(Error::InvalidParameter(format!(
                            "beta = {b} outside (0, 2/lambda_max(S_2)) = (0, {})",
                            2.0 / lmax
                        )));
                    }
                    beta = b;
                }
            }
        }
        let contraction = (1.0 - beta * lmin).abs().max((1.0 - beta * lmax).abs());
        Ok(Self {
            kind,
            q2: q2.clone(),
            s2: s2.clone(),
            dr: game.effective_matrices().dr.clone(),
            beta,
            contraction,
            counter: 0,
            warm: None,
            log: None,
        })
    }

    pub fn kind(&self) -> &OracleKind {
        &self.kind
    }

    /// Contraction factor `q = max(|1 - beta lambda_min|, |1 - beta lambda_max|)`
    /// of the inner gradient iteration.
    pub fn contraction_factor(&self) -> f64 {
        self.contraction
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Queries answered so far.
    pub fn query_count(&self) -> u64 {
        self.counter
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn take_log(&mut self) -> Vec<QueryLogEntry> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn perturb(&self, center: DVector<f64>, eps: f64, seed: u64, in_ball: bool) -> DVector<f64> {
        let m = center.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.counter);
        let dir = loop {
            let d = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = d.norm();
            if norm > 1e-300 {
                break d / norm;
            }
        };
        let radius = if in_ball { eps * rng.random::<f64>().powf(1.0 / m as f64) } else { eps };
        // rounding in the scaling and the sum can overshoot eps by an ulp
        let mut d = dir * radius;
        loop {
            let y = &center + &d;
            if (&y - &center).norm() <= eps {
                return y;
            }
            d *= 1.0 - 4.0 * f64::EPSILON;
        }
    }

    fn gradient_descent(
        &mut self,
        x: &DVector<f64>,
        eps_target: f64,
        max_iters: usize,
        warm_start: bool,
    ) -> Result<IbrResponse, OracleError> {
        let q = self.contraction;
        let lin = self.q2.tr_mul(x);
        let mut y = match (&self.warm, warm_start) {
            (Some(w), true) => w.clone(),
            _ => DVector::zeros(self.s2.nrows()),
        };
        let mut best = (f64::INFINITY, y.clone());
        for t in 1..=max_iters {
            let next = &y - (&lin + &self.s2 * &y) * self.beta;
            let step = (&next - &y).norm();
            y = next;
            // the slack absorbs rounding in the iterate and in r(x) itself
            let slack = GD_ROUNDING_SLACK * (1.0 + y.norm());
            let cert = if q == 0.0 { slack } else { q / (1.0 - q) * step + slack };
            if cert < best.0 {
                best = (cert, y.clone());
            }
            if cert <= eps_target {
                if warm_start {
                    self.warm = Some(y.clone());
                }
                return Ok(IbrResponse { y, eps_certified: cert, query_cost: t });
            }
        }
        Err(OracleError { iterations: max_iters, target: eps_target, certificate: best.0, best_iterate: best.1 })
    }
}

impl FollowerOracle for QuadraticFollower {
    fn respond(&mut self, query: &IbrQuery) -> Result<IbrResponse, OracleError> {
        let r = &self.dr * &query.x;
        let resp = match self.kind.clone() {
            OracleKind::Exact => IbrResponse { y: r, eps_certified: 0.0, query_cost: 0 },
            OracleKind::PerturbedBall { eps, seed } => {
                IbrResponse { y: self.perturb(r, eps, seed, true), eps_certified: eps, query_cost: 0 }
            }
            OracleKind::PerturbedSphere { eps, seed } => {
                IbrResponse { y: self.perturb(r, eps, seed, false), eps_certified: eps, query_cost: 0 }
            }
            OracleKind::GradientDescent { eps_target, max_iters, warm_start, .. } => {
                self.gradient_descent(&query.x, eps_target, max_iters, warm_start)?
            }
        };
        self.counter += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(QueryLogEntry {
                iter: query.iteration,
                purpose: query.purpose.to_string(),
                eps_certified: resp.eps_certified,
                query_cost: resp.query_cost,
            });
        }
        Ok(resp)
    }

    fn nominal_eps(&self) -> f64 {
        self.kind.nominal_eps()
    }

    fn is_stateless(&self) -> bool {
        matches!(self.kind, OracleKind::Exact)
    }
}

/// Write query-log rows as CSV with header `iter,purpose,eps_certified,query_cost`.
pub fn write_query_log<W: Write>(out: W, entries: &[QueryLogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
