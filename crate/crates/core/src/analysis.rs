//! Error constants, the bounded-sensitivity constant `kappa`, the
//! convergence condition and the steady-state bound.
//!
//! For a sampling plan with `p` directions, sampling radius `delta` and
//! oracle accuracy `eps`, the gradient error satisfies
//! `||grad f(x) - g_x|| <= phi(x) = a eps + b ||D_2 f_1(x, r(x))||` with
//!
//! ```text
//! b = sqrt(p + 1) (delta^2 rho2 + eps) ||M^+|| / 2
//! a = Ly rho1 + Lx + b Ly
//! ```
//!
//! Under `||D_2 f_1(x, r(x))|| <= kappa ||grad f(x)||` and
//! `b^2 kappa^2 + 2 a b kappa eps - 1 < 0`, descent with step `alpha < 1/L_f`
//! settles into the level set
//!
//! ```text
//! limsup f(x_k) - f* <= (2 a b kappa eps + a^2 eps^2) / (2 mu_f (1 - b^2 kappa^2 - 2 a b kappa eps))
//! ```
//!
//! The noise part of `b` above undercounts the worst case by about a factor
//! of two: each surrogate value can be off by `||c|| eps`, so the stacked
//! error has norm up to `sqrt(p) ||c|| eps`, not `sqrt(p + 1) ||c|| eps / 2`.
//! [`AnalysisReport::b_sound`] carries the corrected constant
//! `sqrt(p + 1) delta^2 rho2 ||M^+|| / 2 + eps (sqrt(p) ||M^+|| + ||(delta V)^+ 1||)`
//! next to the nominal one; the nominal constants are what the report's
//! condition and bound use.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{BasisKind, SamplingPlan};
use crate::game::QuadraticGame;
use crate::linalg;
use crate::solver::{steady_state_error, SolverTrace};

/// Nominal `b = sqrt(p + 1) (delta^2 rho2 + eps) ||M^+|| / 2`.
pub fn nominal_b(p: usize, delta: f64, rho2: f64, eps: f64, pinv_norm: f64) -> f64 {
    ((p + 1) as f64).sqrt() * (delta * delta * rho2 + eps) * pinv_norm / 2.0
}

/// Closed form of [`nominal_b`] for the `[I; -I]` basis:
/// `sqrt(4n + 2) (eps / delta + delta rho2) / 4`.
pub fn standard_basis_b(n: usize, delta: f64, rho2: f64, eps: f64) -> f64 {
    ((4 * n + 2) as f64).sqrt() * (eps / delta + delta * rho2) / 4.0
}

/// `a = Ly rho1 + Lx + b Ly`.
pub fn constant_a(ly: f64, rho1: f64, lx: f64, b: f64) -> f64 {
    ly * rho1 + lx + b * ly
}

/// Worst-case gain from surrogate noise to slope error for this plan:
/// `sqrt(p) ||M^+|| + ||(delta V)^+ 1||`.
pub fn noise_gain(plan: &SamplingPlan) -> f64 {
    let sm = plan.matrix();
    let p = sm.probes();
    let ones = DVector::from_element(p, 1.0);
    (p as f64).sqrt() * sm.pinv_norm + (&sm.pinv * ones).norm()
}

/// `b` with the noise term counted at its worst case.
pub fn sound_b(plan: &SamplingPlan, rho2: f64, eps: f64) -> f64 {
    let sm = plan.matrix();
    let p = sm.probes();
    let delta = plan.delta();
    ((p + 1) as f64).sqrt() * delta * delta * rho2 * sm.pinv_norm / 2.0 + eps * noise_gain(plan)
}

/// Bounded-sensitivity constants of a quadratic game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaValues {
    /// `sigma_max(B H_f^{-1})`: the least `kappa` with `||Bx|| <= kappa ||H_f x||`.
    pub tight: f64,
    /// `sigma_max(B) / sigma_min(H_f)`: valid but looser.
    pub certified: f64,
    /// `sigma_max(H_f) / sigma_min(B)`, the ratio with the roles of the two
    /// matrices exchanged. Reported for comparison only; not a valid constant
    /// in general. `None` when `B` has a zero singular value.
    pub swapped_ratio: Option<f64>,
}

pub fn kappa(game: &QuadraticGame) -> Result<KappaValues> {
    let eff = game.effective_matrices();
    let chol = eff
        .h_f
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInstance("H_f is singular".into()))?;
    // B H^{-1} = (H^{-1} B^T)^T since H is symmetric
    let bh = chol.solve(&eff.b.transpose()).transpose();
    let smin_h = linalg::sigma_min(&eff.h_f);
    let smin_b = linalg::sigma_min(&eff.b);
    Ok(KappaValues {
        tight: linalg::spectral_norm(&bh),
        certified: linalg::spectral_norm(&eff.b) / smin_h,
        swapped_ratio: (smin_b > 0.0).then(|| linalg::spectral_norm(&eff.h_f) / smin_b),
    })
}

/// `(b^2 kappa^2 + 2 a b kappa eps - 1, bound)`; the bound is `None` when
/// the condition value is not negative.
pub fn condition_and_bound(a: f64, b: f64, kappa: f64, eps: f64, mu_f: f64) -> (f64, Option<f64>) {
    let cross = 2.0 * a * b * kappa * eps;
    let value = b * b * kappa * kappa + cross - 1.0;
    if value < 0.0 {
        (value, Some((cross + a * a * eps * eps) / (2.0 * mu_f * -value)))
    } else {
        (value, None)
    }
}

/// Every constant the error analysis needs for one `(game, plan, eps)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub eps: f64,
    pub delta: f64,
    pub n: usize,
    pub p: usize,
    pub lx: f64,
    pub ly: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub mu_f: f64,
    pub l_f: f64,
    pub pinv_norm: f64,
    pub a: f64,
    pub b: f64,
    /// Closed-form `b` for the standard basis, when that basis is in use.
    pub b_standard_form: Option<f64>,
    /// `kappa` used in the condition and bound (the tight value).
    pub kappa: f64,
    pub kappa_certified: f64,
    pub kappa_swapped_ratio: Option<f64>,
    pub condition_value: f64,
    pub theorem_bound: Option<f64>,
    pub b_sound: f64,
    pub a_sound: f64,
    pub condition_value_sound: f64,
    pub theorem_bound_sound: Option<f64>,
}

pub fn analyze(game: &QuadraticGame, plan: &SamplingPlan, eps: f64) -> Result<AnalysisReport> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be finite and >= 0, got {eps}")));
    }
    if plan.dim() != game.n() {
        return Err(Error::InvalidParameter(format!("plan dimension {} != n = {}", plan.dim(), game.n())));
    }
    let c = game.smoothness_constants();
    let sm = plan.matrix();
    let p = sm.probes();
    let delta = plan.delta();
    let b = nominal_b(p, delta, c.rho2, eps, sm.pinv_norm);
    let a = constant_a(c.ly, c.rho1, c.lx, b);
    let b_standard_form =
        (plan.basis().kind() == BasisKind::StandardDouble).then(|| standard_basis_b(game.n(), delta, c.rho2, eps));
    let k = kappa(game)?;
    let (condition_value, theorem_bound) = condition_and_bound(a, b, k.tight, eps, c.mu_f);
    let b_sound = sound_b(plan, c.rho2, eps);
    let a_sound = constant_a(c.ly, c.rho1, c.lx, b_sound);
    let (condition_value_sound, theorem_bound_sound) = condition_and_bound(a_sound, b_sound, k.tight, eps, c.mu_f);
    Ok(AnalysisReport {
        eps,
        delta,
        n: game.n(),
        p,
        lx: c.lx,
        ly: c.ly,
        rho1: c.rho1,
        rho2: c.rho2,
        mu_f: c.mu_f,
        l_f: c.l_f,
        pinv_norm: sm.pinv_norm,
        a,
        b,
        b_standard_form,
        kappa: k.tight,
        kappa_certified: k.certified,
        kappa_swapped_ratio: k.swapped_ratio,
        condition_value,
        theorem_bound,
        b_sound,
        a_sound,
        condition_value_sound,
        theorem_bound_sound,
    })
}

impl AnalysisReport {
    pub fn condition_holds(&self) -> bool {
        self.condition_value < 0.0
    }

    /// `phi(x) = a eps + b ||B x||` with the nominal constants.
    pub fn phi(&self, game: &QuadraticGame, x: &DVector<f64>) -> f64 {
        self.a * self.eps + self.b * (&game.effective_matrices().b * x).norm()
    }

    /// `phi` with the worst-case noise constant.
    pub fn phi_sound(&self, game: &QuadraticGame, x: &DVector<f64>) -> f64 {
        self.a_sound * self.eps + self.b_sound * (&game.effective_matrices().b * x).norm()
    }

    /// True when `alpha` satisfies the step-size hypothesis `alpha < 1/L_f`.
    pub fn step_certified(&self, alpha: f64) -> bool {
        alpha * self.l_f < 1.0
    }
}

/// `phi(x)` for a report; free-function form of [`AnalysisReport::phi`].
pub fn phi(report: &AnalysisReport, game: &QuadraticGame, x: &DVector<f64>) -> f64 {
    report.phi(game, x)
}

/// Bound minus the final-iterate optimality gap of `trace`.
pub fn tightness_gap(report: &AnalysisReport, trace: &SolverTrace) -> Result<f64> {
    let bound = report
        .theorem_bound
        .ok_or(Error::ConditionViolated { condition_value: report.condition_value })?;
    Ok(bound - steady_state_error(trace, 1)?)
}

/// Write reports as CSV rows, one per report (undefined bounds are empty).
pub fn write_reports_csv<W: Write>(out: W, reports: &[AnalysisReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
