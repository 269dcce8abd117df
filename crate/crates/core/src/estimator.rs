//! Inexact gradient of the leader's reduced cost.
//!
//! At a point `x0` the estimator asks the follower for responses at `x0` and
//! at the `p` probes `x_i = x0 + delta v_i`, where the `v_i` form a positive
//! basis. With `y0` the response at the center and `c = D_2 f_1(x0, y0)`,
//! the surrogate values `psi_i = c . y_i` are fitted by least squares to an
//! affine model around `x0`; its slope estimates `D_2 f_1 Dr` at `x0`. The
//! returned gradient is
//!
//! ```text
//! g = D_1 f_1(x0, y0) + slope
//! ```
//!
//! For the standard basis `[I; -I]` the fitted slope is exactly the central
//! difference `(psi(x0 + delta e_j) - psi(x0 - delta e_j)) / (2 delta)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::{FollowerOracle, IbrQuery, IbrResponse, QueryPurpose};
use crate::linalg;

/// Default sampling radius.
pub const DEFAULT_DELTA: f64 = 0.1;

/// Random directions tried when checking that a basis positively spans.
const SPANNING_PROBES: usize = 1000;
const SPANNING_SEED: u64 = 0x5eed_ba51;

/// First-order access to the leader's own cost `f_1`.
pub trait LeaderCost {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;
    /// `D_1 f_1(x, y)` as a column vector.
    fn d1(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    /// `D_2 f_1(x, y)` as a column vector.
    fn d2(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `V = [I; -I]`, `p = 2n`.
    StandardDouble,
    Custom,
}

/// Directions `v_1 .. v_p` stored as the rows of a `p x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveBasis {
    directions: DMatrix<f64>,
    kind: BasisKind,
}

impl PositiveBasis {
    pub fn standard_double(n: usize) -> Self {
        let mut v = DMatrix::zeros(2 * n, n);
        for j in 0..n {
            v[(j, j)] = 1.0;
            v[(n + j, j)] = -1.0;
        }
        Self { directions: v, kind: BasisKind::StandardDouble }
    }

    /// A user-supplied direction set; rejected unless it has full column rank
    /// and passes the positive-spanning check.
    pub fn custom(directions: DMatrix<f64>) -> Result<Self> {
        let basis = Self { directions, kind: BasisKind::Custom };
        basis.validate()?;
        Ok(basis)
    }

    /// Rank check (exact, via SVD) followed by a probabilistic
    /// positive-spanning check: for every probe direction `u` some `v_i` must
    /// satisfy `<v_i, u> > 0`. Probes are the negated directions, the negated
    /// direction sum, and 1000 seeded random unit vectors.
    pub fn validate(&self) -> Result<()> {
        let (p, n) = self.directions.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidBasis("empty direction set".into()));
        }
        if self.directions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBasis("non-finite direction".into()));
        }
        let rank = linalg::rank(&self.directions);
        if rank < n {
            return Err(Error::InvalidBasis(format!("rank {rank} < dimension {n}")));
        }
        let covers = |u: &DVector<f64>| (&self.directions * u).max() > 0.0;
        let mut probes: Vec<DVector<f64>> = Vec::new();
        for i in 0..p {
            let v = self.directions.row(i).transpose();
            if v.norm() > 0.0 {
                probes.push(-v.normalize());
            }
        }
        let sum: DVector<f64> = self.directions.row_sum().transpose();
        if sum.norm() > 0.0 {
            probes.push(-sum.normalize());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SPANNING_SEED);
        for _ in 0..SPANNING_PROBES {
            let u = DVector::from_fn(n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            if u.norm() > 0.0 {
                probes.push(u.normalize());
            }
        }
        if let Some(u) = probes.iter().find(|u| !covers(u)) {
            return Err(Error::InvalidBasis(format!(
                "directions do not positively span R^{n}: no direction has positive inner product with {}",
                u.transpose()
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    /// Number of directions `p`.
    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.nrows() == 0
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }
}

/// `M = [0; delta V]` together with the pseudoinverse used by the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMatrix {
    /// `(p + 1) x n`, zero first row.
    pub matrix: DMatrix<f64>,
    /// `(delta V)^+`, `n x p`.
    pub pinv: DMatrix<f64>,
    /// `||M^+|| = 1 / sigma_min(M)` over the nonzero singular values.
    pub pinv_norm: f64,
    pub rank: usize,
}

impl SamplingMatrix {
    /// Build without validating the directions. Rank deficiency is recorded
    /// in `rank` and the fit falls back to the minimum-norm solution.
    pub fn from_directions(directions: &DMatrix<f64>, delta: f64) -> Self {
        let (p, n) = directions.shape();
        let scaled = directions * delta;
        let mut matrix = DMatrix::zeros(p + 1, n);
        matrix.view_mut((1, 0), (p, n)).copy_from(&scaled);
        let (pinv, rank) = linalg::pseudo_inverse(&scaled);
        let s = linalg::singular_values(&scaled);
        let smallest_nonzero = s.get(rank.saturating_sub(1)).copied().filter(|_| rank > 0);
        let pinv_norm = smallest_nonzero.map_or(0.0, |s| 1.0 / s);
        Self { matrix, pinv, pinv_norm, rank }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn probes(&self) -> usize {
        self.matrix.nrows() - 1
    }
}

/// Build `M = [0; delta V]` and `||M^+||`.
pub fn build_sampling_matrix(basis: &PositiveBasis, delta: f64) -> Result<SamplingMatrix> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
    }
    let sm = SamplingMatrix::from_directions(basis.directions(), delta);
    if sm.rank < basis.dim() {
        return Err(Error::InvalidBasis(format!("rank {} < dimension {}", sm.rank, basis.dim())));
    }
    Ok(sm)
}

/// Sampling radius, directions and the precomputed sampling matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    delta: f64,
    basis: PositiveBasis,
    matrix: SamplingMatrix,
}

impl SamplingPlan {
    pub fn new(basis: PositiveBasis, delta: f64) -> Result<Self> {
        let matrix = build_sampling_matrix(&basis, delta)?;
        Ok(Self { delta, basis, matrix })
    }

    pub fn standard(n: usize, delta: f64) -> Result<Self> {
        Self::new(PositiveBasis::standard_double(n), delta)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn basis(&self) -> &PositiveBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &SamplingMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// The probe points `x0 + delta v_i`.
    pub fn probe_points(&self, x0: &DVector<f64>) -> Vec<DVector<f64>> {
        let v = self.basis.directions();
        (0..v.nrows()).map(|i| x0 + v.row(i).transpose() * self.delta).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub slope: DVector<f64>,
    pub rank_deficient: bool,
}

/// Least-squares slope of the surrogate: the minimum-norm solution of
/// `min || (psi_values - psi_center 1) - delta V s ||`.
pub fn ls_solve(psi_center: f64, psi_values: &DVector<f64>, sm: &SamplingMatrix) -> Result<LsSolution> {
    if psi_values.len() != sm.probes() {
        return Err(Error::InvalidParameter(format!(
            "expected {} surrogate values, got {}",
            sm.probes(),
            psi_values.len()
        )));
    }
    if !psi_center.is_finite() || psi_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite surrogate value".into()));
    }
    let rhs = psi_values.add_scalar(-psi_center);
    Ok(LsSolution { slope: &sm.pinv * rhs, rank_deficient: sm.rank < sm.dim() })
}

/// One oracle query made while estimating a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSample {
    pub purpose: QueryPurpose,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// `D_2 f_1(x0, y0) . y`
    pub psi: f64,
    pub eps_certified: f64,
    pub query_cost: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g: DVector<f64>,
    /// `D_1 f_1(x0, y0)`
    pub d1_part: DVector<f64>,
    /// Least-squares slope of the surrogate.
    pub dpsi_part: DVector<f64>,
    /// Center sample first, then the `p` probes in basis order.
    pub samples: Vec<ProbeSample>,
    /// Largest certified eps among the queries.
    pub eps_used: f64,
    /// Oracle queries issued by this estimate.
    pub queries: usize,
    pub rank_deficient: bool,
}

impl GradientEstimate {
    pub fn center(&self) -> &ProbeSample {
        &self.samples[0]
    }

    /// Per-probe rows: `purpose,psi,eps_certified,query_cost,x,y` with the
    /// vectors written as `;`-separated lists.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let join = |v: &DVector<f64>| v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["purpose", "psi", "eps_certified", "query_cost", "x", "y"])?;
        for s in &self.samples {
            w.write_record([
                s.purpose.to_string(),
                s.psi.to_string(),
                s.eps_certified.to_string(),
                s.query_cost.to_string(),
                join(&s.x),
                join(&s.y),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimate the gradient of `x -> f_1(x, r(x))` at `x0`, querying the
/// oracle once at `x0` and once per probe.
pub fn estimate_gradient<L, O>(leader: &L, oracle: &mut O, x0: &DVector<f64>, plan: &SamplingPlan) -> Result<GradientEstimate>
where
    L: LeaderCost + ?Sized,
    O: FollowerOracle + ?Sized,
{
    estimate_gradient_at(leader, oracle, x0, plan, None, 0)
}

/// Like [`estimate_gradient`], but optionally reuses a response already held
/// for `x0` instead of querying the center again, and tags queries with the
/// leader iteration `k`.
pub fn estimate_gradient_at<L, O>(
    leader: &L,
    oracle: &mut O,
    x0: &DVector<f64>,
    plan: &SamplingPlan,
    reuse_center: Option<IbrResponse>,
    k: usize,
) -> Result<GradientEstimate>
where
    L: LeaderCost + ?Sized,
    O: FollowerOracle + ?Sized,
{
    if x0.len() != plan.dim() || leader.dim_x() != plan.dim() {
        return Err(Error::InvalidParameter(format!(
            "dimension mismatch: x0 has {}, plan has {}, leader has {}",
            x0.len(),
            plan.dim(),
            leader.dim_x()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("x0 has non-finite entries".into()));
    }
    let mut queries = 0;
    let center = match reuse_center {
        Some(resp) => resp,
        None => {
            queries += 1;
            oracle.respond(&IbrQuery { x: x0.clone(), purpose: QueryPurpose::Center, iteration: k })?
        }
    };
    let y0 = center.y.clone();
    let weight = leader.d2(x0, &y0);
    let d1_part = leader.d1(x0, &y0);

    let mut samples = Vec::with_capacity(plan.basis().len() + 1);
    samples.push(ProbeSample {
        purpose: QueryPurpose::Center,
        x: x0.clone(),
        psi: weight.dot(&y0),
        y: y0,
        eps_certified: center.eps_certified,
        query_cost: center.query_cost,
    });
    for (i, xi) in plan.probe_points(x0).into_iter().enumerate() {
        let purpose = QueryPurpose::Probe(i + 1);
        let resp = oracle.respond(&IbrQuery { x: xi.clone(), purpose, iteration: k })?;
        queries += 1;
        samples.push(ProbeSample {
            purpose,
            psi: weight.dot(&resp.y),
            x: xi,
            y: resp.y,
            eps_certified: resp.eps_certified,
            query_cost: resp.query_cost,
        });
    }

    let psi_values = DVector::from_iterator(samples.len() - 1, samples[1..].iter().map(|s| s.psi));
    let fit = ls_solve(samples[0].psi, &psi_values, plan.matrix())?;
    let eps_used = samples.iter().map(|s| s.eps_certified).fold(0.0, f64::max);
    Ok(GradientEstimate {
        g: &d1_part + &fit.slope,
        d1_part,
        dpsi_part: fit.slope,
        samples,
        eps_used,
        queries,
        rank_deficient: fit.rank_deficient,
    })
}
