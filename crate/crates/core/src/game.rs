//! Quadratic two-player Stackelberg games.
//!
//! Each player `i` has the cost
//!
//! ```text
//! f_i(x, y) = 1/2 [x; y]^T [[P_i, Q_i], [Q_i^T, S_i]] [x; y]
//! ```
//!
//! with `x` in R^n (leader) and `y` in R^m (follower). The follower block is
//! called `S_i` here so that it cannot be confused with the Lipschitz
//! constants of the best response.
//!
//! The follower's best response is linear, `r(x) = Dr x` with
//! `Dr = -S_2^{-1} Q_2^T`, so the leader's reduced cost `f(x) = f_1(x, r(x))`
//! is the quadratic form of the effective Hessian
//!
//! ```text
//! H_f = [I; Dr]^T K_1 [I; Dr]
//!     = P_1 - Q_1 S_2^{-1} Q_2^T - Q_2 S_2^{-1} Q_1^T + Q_2 S_2^{-1} S_1 S_2^{-1} Q_2^T
//! ```
//!
//! and `D_2 f_1(x, r(x))^T = B x` with `B = Q_1^T + S_1 Dr`. Both forms are
//! checked against finite differences in the tests below.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::LeaderCost;
use crate::linalg;

/// Reject when `||K_2|| / sigma_min(S_2)` exceeds this.
pub const MAX_S2_CONDITION: f64 = 1e8;

/// Input blocks must be symmetric to within this (relative to their largest entry).
const SYMMETRY_RTOL: f64 = 1e-9;

/// `H_f`, `B` and `Dr` for a quadratic game.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMatrices {
    /// n x n, `grad f(x) = h_f x`.
    pub h_f: DMatrix<f64>,
    /// m x n, `D_2 f_1(x, r(x))^T = b x`.
    pub b: DMatrix<f64>,
    /// m x n, constant Jacobian of the best response.
    pub dr: DMatrix<f64>,
}

/// Smoothness and curvature constants used by the error bounds, in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Lipschitz constant of `D_1 f_1(x, .)`: `||Q_1||`.
    pub lx: f64,
    /// Lipschitz constant of `D_2 f_1(x, .)`: `||S_1||`.
    pub ly: f64,
    /// Bound on `||Dr||`.
    pub rho1: f64,
    /// Lipschitz constant of `Dr`; zero because `r` is linear.
    pub rho2: f64,
    pub mu_f: f64,
    pub l_f: f64,
}

/// A validated quadratic Stackelberg game.
///
/// Construction checks that both stacked block matrices are positive
/// definite, that `S_2` is well conditioned and that `H_f` is positive
/// definite. Instances are immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct QuadraticGame {
    n: usize,
    m: usize,
    p1: DMatrix<f64>,
    q1: DMatrix<f64>,
    s1: DMatrix<f64>,
    p2: DMatrix<f64>,
    q2: DMatrix<f64>,
    s2: DMatrix<f64>,
    seed: Option<u64>,
    eff: EffectiveMatrices,
}

impl QuadraticGame {
    /// Build and validate a game from its six blocks.
    pub fn new(
        p1: DMatrix<f64>,
        q1: DMatrix<f64>,
        s1: DMatrix<f64>,
        p2: DMatrix<f64>,
        q2: DMatrix<f64>,
        s2: DMatrix<f64>,
    ) -> Result<Self> {
        let n = p1.nrows();
        let m = s1.nrows();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInstance("dimensions must be positive".into()));
        }
        let shapes = [
            ("p1", &p1, (n, n)),
            ("q1", &q1, (n, m)),
            ("s1", &s1, (m, m)),
            ("p2", &p2, (n, n)),
            ("q2", &q2, (n, m)),
            ("s2", &s2, (m, m)),
        ];
        for (name, mat, shape) in shapes {
            if mat.shape() != shape {
                return Err(Error::InvalidInstance(format!(
                    "{name} has shape {:?}, expected {:?}",
                    mat.shape(),
                    shape
                )));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInstance(format!("{name} has non-finite entries")));
            }
        }
        let mut sym = Vec::with_capacity(4);
        for (name, mat) in [("p1", p1), ("s1", s1), ("p2", p2), ("s2", s2)] {
            let scale = 1.0 + mat.abs().max();
            if linalg::max_asymmetry(&mat) > SYMMETRY_RTOL * scale {
                return Err(Error::InvalidInstance(format!("{name} is not symmetric")));
            }
            sym.push(linalg::symmetrize(&mat));
        }
        let [p1, s1, p2, s2]: [DMatrix<f64>; 4] = sym.try_into().expect("four blocks");

        for (i, (p, q, s)) in [(&p1, &q1, &s1), (&p2, &q2, &s2)].into_iter().enumerate() {
            if !linalg::is_positive_definite(&linalg::block_matrix(p, q, s)) {
                return Err(Error::InvalidInstance(format!(
                    "block matrix of player {} is not positive definite",
                    i + 1
                )));
            }
        }
        // measured against the whole follower Hessian so a tiny 1x1 block is caught
        let cond = linalg::spectral_norm(&linalg::block_matrix(&p2, &q2, &s2)) / linalg::sigma_min(&s2);
        if !(cond <= MAX_S2_CONDITION) {
            return Err(Error::InvalidInstance(format!(
                "s2 is numerically singular: condition number {cond:e} exceeds {MAX_S2_CONDITION:e}"
            )));
        }

        let eff = compute_effective(&p1, &q1, &s1, &q2, &s2)?;
        let (lmin, _) = linalg::sym_extreme_eigenvalues(&eff.h_f);
        if !(lmin > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "effective Hessian H_f is not positive definite (lambda_min = {lmin:e})"
            )));
        }

        Ok(Self { n, m, p1, q1, s1, p2, q2, s2, seed: None, eff })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Both players share the same cost (`f_1 = f_2`).
    pub fn collaborative(p: DMatrix<f64>, q: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        Self::new(p.clone(), q.clone(), s.clone(), p, q, s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn leader_blocks(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.p1, &self.q1, &self.s1)
    }

    pub fn follower_blocks(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.p2, &self.q2, &self.s2)
    }

    pub fn effective_matrices(&self) -> &EffectiveMatrices {
        &self.eff
    }

    pub fn f1(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        quad_form(&self.p1, &self.q1, &self.s1, x, y)
    }

    pub fn f2(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        quad_form(&self.p2, &self.q2, &self.s2, x, y)
    }

    /// `D_1 f_1(x, y)` as a column vector.
    pub fn d1f1(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.p1 * x + &self.q1 * y
    }

    /// `D_2 f_1(x, y)` as a column vector.
    pub fn d2f1(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.q1.tr_mul(x) + &self.s1 * y
    }

    /// `D_2 f_2(x, y)` as a column vector.
    pub fn d2f2(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.q2.tr_mul(x) + &self.s2 * y
    }

    /// The follower's exact best response `r(x) = -S_2^{-1} Q_2^T x`.
    pub fn best_response(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.eff.dr * x
    }

    /// `(f(x), grad f(x))` with `f(x) = f_1(x, r(x))`.
    pub fn leader_value_and_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let y = self.best_response(x);
        (self.f1(x, &y), &self.eff.h_f * x)
    }

    pub fn smoothness_constants(&self) -> SmoothnessConstants {
        let (mu_f, l_f) = linalg::sym_extreme_eigenvalues(&self.eff.h_f);
        SmoothnessConstants {
            lx: linalg::spectral_norm(&self.q1),
            ly: linalg::spectral_norm(&self.s1),
            rho1: linalg::spectral_norm(&self.eff.dr),
            rho2: 0.0,
            mu_f,
            l_f,
        }
    }

    /// A view that exposes only the leader's first-order information.
    pub fn leader(&self) -> QuadraticLeader<'_> {
        QuadraticLeader(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Parse and validate; a well-formed file describing an invalid game
    /// gives [`Error::InvalidInstance`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: InstanceFile = toml::from_str(text)?;
        Self::try_from(file)
    }
}

/// Leader-side view of a quadratic game: `f_1` and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticLeader<'a>(&'a QuadraticGame);

impl LeaderCost for QuadraticLeader<'_> {
    fn dim_x(&self) -> usize {
        self.0.n
    }

    fn dim_y(&self) -> usize {
        self.0.m
    }

    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.0.f1(x, y)
    }

    fn d1(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.0.d1f1(x, y)
    }

    fn d2(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.0.d2f1(x, y)
    }
}

fn quad_form(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> f64 {
    0.5 * x.dot(&(p * x)) + x.dot(&(q * y)) + 0.5 * y.dot(&(s * y))
}

fn compute_effective(
    p1: &DMatrix<f64>,
    q1: &DMatrix<f64>,
    s1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
    s2: &DMatrix<f64>,
) -> Result<EffectiveMatrices> {
    let chol = s2
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInstance("s2 is not positive definite".into()))?;
    let dr = -chol.solve(&q2.transpose());
    let h_f = p1 + q1 * &dr + dr.tr_mul(&q1.transpose()) + dr.tr_mul(&(s1 * &dr));
    let b = q1.transpose() + s1 * &dr;
    Ok(EffectiveMatrices { h_f: linalg::symmetrize(&h_f), b, dr })
}

/// Knobs for [`generate_instance`].
///
/// Each block matrix is `G^T G + shift * I` with `G` having i.i.d.
/// `N(0, scale^2 / (n + m))` entries, so `shift` is a lower bound on the
/// smallest eigenvalue of both stacked matrices and therefore on `mu_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Conditioning {
    pub shift: f64,
    pub scale: f64,
    pub max_attempts: usize,
    /// Reject candidates whose `mu_f` is below this.
    pub min_mu_f: Option<f64>,
    /// Reject candidates whose `L_f` is above this.
    pub max_l_f: Option<f64>,
}

impl Default for Conditioning {
    fn default() -> Self {
        Self { shift: 0.1, scale: 1.0, max_attempts: 100, min_mu_f: None, max_l_f: None }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub game: QuadraticGame,
    /// Candidates drawn and rejected before `game` was accepted.
    pub rejections: usize,
}

/// Draw a random valid game, deterministic in `seed`.
///
/// Candidates are resampled from one seeded stream until every validity
/// check (and the optional `mu_f`/`L_f` window) passes.
pub fn generate_instance(n: usize, m: usize, seed: u64, cond: &Conditioning) -> Result<GeneratedInstance> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("n and m must be at least 1".into()));
    }
    if !(cond.shift > 0.0) || !(cond.scale >= 0.0) {
        return Err(Error::InvalidParameter("shift must be > 0 and scale >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_reason = String::from("max_attempts is zero");
    for attempt in 0..cond.max_attempts {
        let k1 = random_spd(n + m, cond, &mut rng);
        let k2 = random_spd(n + m, cond, &mut rng);
        let split = |k: &DMatrix<f64>| {
            (
                k.view((0, 0), (n, n)).into_owned(),
                k.view((0, n), (n, m)).into_owned(),
                k.view((n, n), (m, m)).into_owned(),
            )
        };
        let (p1, q1, s1) = split(&k1);
        let (p2, q2, s2) = split(&k2);
        match QuadraticGame::new(p1, q1, s1, p2, q2, s2) {
            Ok(game) => {
                let c = game.smoothness_constants();
                if cond.min_mu_f.is_some_and(|lo| c.mu_f < lo) {
                    last_reason = format!("mu_f = {} below requested minimum", c.mu_f);
                } else if cond.max_l_f.is_some_and(|hi| c.l_f > hi) {
                    last_reason = format!("L_f = {} above requested maximum", c.l_f);
                } else {
                    return Ok(GeneratedInstance { game: game.with_seed(seed), rejections: attempt });
                }
            }
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(Error::GenerationFailed { attempts: cond.max_attempts, reason: last_reason })
}

fn random_spd(dim: usize, cond: &Conditioning, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let sd = cond.scale / (dim as f64).sqrt();
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    });
    let k = g.tr_mul(&g) + DMatrix::identity(dim, dim) * cond.shift;
    linalg::symmetrize(&k)
}

/// On-disk layout of an instance: dimensions plus row-major blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub m: usize,
    pub p1: Vec<Vec<f64>>,
    pub q1: Vec<Vec<f64>>,
    pub s1: Vec<Vec<f64>>,
    pub p2: Vec<Vec<f64>>,
    pub q2: Vec<Vec<f64>>,
    pub s2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::InvalidInstance(format!(
            "{name} must be {}x{} (row-major)",
            shape.0, shape.1
        )));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

impl TryFrom<InstanceFile> for QuadraticGame {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        let (n, m) = (f.n, f.m);
        let game = QuadraticGame::new(
            from_rows("p1", &f.p1, (n, n))?,
            from_rows("q1", &f.q1, (n, m))?,
            from_rows("s1", &f.s1, (m, m))?,
            from_rows("p2", &f.p2, (n, n))?,
            from_rows("q2", &f.q2, (n, m))?,
            from_rows("s2", &f.s2, (m, m))?,
        )?;
        Ok(match f.seed {
            Some(s) => game.with_seed(s),
            None => game,
        })
    }
}

impl From<QuadraticGame> for InstanceFile {
    fn from(g: QuadraticGame) -> Self {
        InstanceFile {
            n: g.n,
            m: g.m,
            p1: to_rows(&g.p1),
            q1: to_rows(&g.q1),
            s1: to_rows(&g.s1),
            p2: to_rows(&g.p2),
            q2: to_rows(&g.q2),
            s2: to_rows(&g.s2),
            seed: g.seed,
        }
    }
}

/// The 1-D game used throughout the docs and tests: `P_1 = 2, Q_1 = 0,
/// S_1 = 1` for the leader and `P_2 = 2, Q_2 = 1, S_2 = 1` for the follower,
/// so that `r(x) = -x` and `f(x) = 1.5 x^2`.
pub fn scalar_example() -> QuadraticGame {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    QuadraticGame::new(s(2.0), s(0.0), s(1.0), s(2.0), s(1.0), s(1.0)).expect("valid 1-D game")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Independent oracle: damped gradient descent on f_2(x, .) until the
    /// gradient vanishes.
    fn inner_minimizer(game: &QuadraticGame, x: &DVector<f64>) -> DVector<f64> {
        let (_, _, s2) = game.follower_blocks();
        let step = 0.5 / linalg::spectral_norm(s2);
        let mut y = DVector::zeros(game.m());
        for _ in 0..200_000 {
            let g = game.d2f2(x, &y);
            if g.norm() < 1e-13 {
                break;
            }
            y -= g * step;
        }
        y
    }

    fn central_grad(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    #[test]
    fn scalar_best_response() {
        let g = scalar_example();
        assert_eq!(g.best_response(&dvector![2.0]), dvector![-2.0]);
        assert_eq!(g.best_response(&dvector![0.0]), dvector![0.0]);
    }

    #[test]
    fn zero_action_gives_zero_response() {
        let g = generate_instance(4, 3, 11, &Conditioning::default()).unwrap().game;
        assert_eq!(g.best_response(&DVector::zeros(4)), DVector::zeros(3));
        let (f, grad) = g.leader_value_and_grad(&DVector::zeros(4));
        assert_eq!(f, 0.0);
        assert_eq!(grad, DVector::zeros(4));
    }

    #[test]
    fn best_response_matches_inner_minimizer() {
        let g = generate_instance(3, 2, 42, &Conditioning::default()).unwrap().game;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let x = rand_vec(3, &mut rng);
            let y = g.best_response(&x);
            let y_ref = inner_minimizer(&g, &x);
            assert!((&y - &y_ref).norm() < 1e-8, "{y} vs {y_ref}");
        }
    }

    #[test]
    fn scalar_value_and_grad() {
        let g = scalar_example();
        let (f, grad) = g.leader_value_and_grad(&dvector![1.0]);
        assert!((f - 1.5).abs() < 1e-15);
        assert!((grad[0] - 3.0).abs() < 1e-15);
        let fd = central_grad(|x| g.leader_value_and_grad(x).0, &dvector![1.0], 1e-5);
        assert!((fd[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn scalar_effective_matrices() {
        let e = scalar_example().effective_matrices().clone();
        assert_eq!(e.h_f, DMatrix::from_element(1, 1, 3.0));
        assert_eq!(e.b, DMatrix::from_element(1, 1, -1.0));
        assert_eq!(e.dr, DMatrix::from_element(1, 1, -1.0));
    }

    #[test]
    fn decoupled_follower() {
        let base = generate_instance(3, 2, 3, &Conditioning::default()).unwrap().game;
        let (p1, q1, s1) = base.leader_blocks();
        let (p2, _, s2) = base.follower_blocks();
        let g = QuadraticGame::new(p1.clone(), q1.clone(), s1.clone(), p2.clone(), DMatrix::zeros(3, 2), s2.clone())
            .unwrap();
        let e = g.effective_matrices();
        assert_eq!(e.dr, DMatrix::zeros(2, 3));
        assert!((&e.h_f - p1).abs().max() < 1e-15);
        assert!((&e.b - q1.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn collaborative_game_has_zero_b() {
        let base = generate_instance(4, 3, 9, &Conditioning::default()).unwrap().game;
        let (p, q, s) = base.leader_blocks();
        let g = QuadraticGame::collaborative(p.clone(), q.clone(), s.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = rand_vec(4, &mut rng);
            let bx = &g.effective_matrices().b * &x;
            assert!(bx.norm() / x.norm() <= 1e-10);
        }
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100u64 {
            let n = 1 + (trial % 6) as usize;
            let m = 1 + (trial % 4) as usize;
            let g = generate_instance(n, m, trial, &Conditioning::default()).unwrap().game;
            let x = rand_vec(n, &mut rng);
            let f = |z: &DVector<f64>| g.f1(z, &g.best_response(z));
            let fd = central_grad(f, &x, 1e-4);
            let (_, grad) = g.leader_value_and_grad(&x);
            // f is quadratic, so central differences are exact up to round-off
            let rel = (&fd - &grad).norm() / (1.0 + grad.norm());
            assert!(rel < 1e-6, "trial {trial}: rel err {rel}");

            // Hessian columns by differencing the gradient of f itself.
            let h_fd = DMatrix::from_fn(n, n, |i, j| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += 1e-4;
                xm[j] -= 1e-4;
                (central_grad(f, &xp, 1e-4)[i] - central_grad(f, &xm, 1e-4)[i]) / 2e-4
            });
            let h = &g.effective_matrices().h_f;
            assert!((h_fd - h).abs().max() / (1.0 + h.abs().max()) < 1e-4);
        }
    }

    #[test]
    fn chain_rule_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let g = generate_instance(5, 4, seed, &Conditioning::default()).unwrap().game;
            let e = g.effective_matrices();
            let x = rand_vec(5, &mut rng);
            let r = g.best_response(&x);
            let d2 = g.d2f1(&x, &r);
            assert!(linalg::max_abs_diff(&d2, &(&e.b * &x)) < 1e-10);
            let chain = g.d1f1(&x, &r) + e.dr.tr_mul(&d2);
            assert!(linalg::max_abs_diff(&chain, &g.leader_value_and_grad(&x).1) < 1e-10);
        }
    }

    #[test]
    fn stationarity_of_best_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..20 {
            let g = generate_instance(4, 5, seed, &Conditioning::default()).unwrap().game;
            let x = rand_vec(4, &mut rng) * 10.0;
            let res = g.d2f2(&x, &g.best_response(&x)).norm();
            assert!(res <= 1e-9 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn smoothness_constants_scalar() {
        let c = scalar_example().smoothness_constants();
        assert_eq!((c.lx, c.ly, c.rho1, c.rho2), (0.0, 1.0, 1.0, 0.0));
        assert!((c.mu_f - 3.0).abs() < 1e-15 && (c.l_f - 3.0).abs() < 1e-15);
    }

    #[test]
    fn smoothness_constants_identity_blocks() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let z = DMatrix::zeros(2, 2);
        let g = QuadraticGame::new(i2.clone(), z.clone(), i2.clone(), i2.clone(), z, i2).unwrap();
        let c = g.smoothness_constants();
        assert!((c.mu_f - 1.0).abs() < 1e-15 && (c.l_f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn extreme_eigenvalues_match_power_iteration() {
        for seed in 0..10 {
            let g = generate_instance(6, 3, seed, &Conditioning::default()).unwrap().game;
            let c = g.smoothness_constants();
            let h = &g.effective_matrices().h_f;
            let power = |a: &DMatrix<f64>| {
                let mut v = DVector::from_element(a.nrows(), 1.0).normalize();
                let mut lambda = 0.0;
                for _ in 0..20_000 {
                    let w = a * &v;
                    lambda = v.dot(&w);
                    v = w.normalize();
                }
                lambda
            };
            let lmax = power(h);
            // smallest eigenvalue via the shifted matrix L I - H
            let lmin = lmax - power(&(DMatrix::identity(6, 6) * lmax - h));
            assert!(c.mu_f <= c.l_f);
            assert!((lmax - c.l_f).abs() < 1e-8 * c.l_f, "{lmax} vs {}", c.l_f);
            assert!((lmin - c.mu_f).abs() < 1e-6 * c.l_f, "{lmin} vs {}", c.mu_f);
        }
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = generate_instance(5, 4, 1, &Conditioning::default()).unwrap();
        let b = generate_instance(5, 4, 1, &Conditioning::default()).unwrap();
        assert_eq!(a.game, b.game);
        assert!(linalg::is_positive_definite(&a.game.effective_matrices().h_f));
        let s = generate_instance(1, 1, 7, &Conditioning::default()).unwrap();
        assert_eq!((s.game.n(), s.game.m()), (1, 1));
        assert_eq!(s.game.seed(), Some(7));
    }

    #[test]
    fn generation_budget_exhaustion_is_an_error() {
        let cond = Conditioning { min_mu_f: Some(1e6), max_attempts: 5, ..Conditioning::default() };
        match generate_instance(3, 2, 1, &cond) {
            Err(Error::GenerationFailed { attempts, .. }) => assert_eq!(attempts, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generation_counts_rejections() {
        // Ask for a mu_f that only some draws reach.
        let loose = generate_instance(3, 2, 4, &Conditioning::default()).unwrap();
        assert_eq!(loose.rejections, 0);
        let mut found = false;
        for seed in 0..20 {
            let cond = Conditioning { min_mu_f: Some(0.25), ..Conditioning::default() };
            if let Ok(g) = generate_instance(3, 2, seed, &cond) {
                assert!(g.game.smoothness_constants().mu_f >= 0.25);
                found |= g.rejections > 0;
            }
        }
        assert!(found, "expected at least one rejection across seeds");
    }

    #[test]
    fn rejects_singular_follower_block() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let err = QuadraticGame::new(s(2.0), s(0.0), s(1.0), s(2.0), s(0.0), s(1e-12)).unwrap_err();
        assert!(matches!(err, Error::InvalidInstance(_)), "{err}");
    }

    #[test]
    fn rejects_indefinite_block() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let err = QuadraticGame::new(s(1.0), s(2.0), s(1.0), s(2.0), s(1.0), s(1.0)).unwrap_err();
        assert!(err.to_string().contains("player 1"));
    }

    #[test]
    fn toml_round_trip_is_bit_identical() {
        let g = generate_instance(5, 4, 1, &Conditioning::default()).unwrap().game;
        let text = g.to_toml().unwrap();
        let back = QuadraticGame::from_toml(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_toml().unwrap(), text);
        for key in ["n =", "m =", "p1 =", "q1 =", "s1 =", "p2 =", "q2 =", "s2 =", "seed ="] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn toml_shape_errors() {
        let text = "n = 1\nm = 1\np1 = [[1.0, 2.0]]\nq1 = [[0.0]]\ns1 = [[1.0]]\np2 = [[1.0]]\nq2 = [[0.0]]\ns2 = [[1.0]]\n";
        assert!(QuadraticGame::from_toml(text).is_err());
    }
}
