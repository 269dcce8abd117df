//! Leader-side learning in Stackelberg games with an inexact follower.
//!
//! The leader plays `x`, a black-box follower answers with an approximate
//! best response `y`, `||y - r(x)|| <= eps`, and the leader descends a
//! gradient estimate assembled from such answers at a few probe points.
//!
//! * [`game`]: quadratic games with closed-form best response and reduced cost
//! * [`follower`]: follower oracles with certified `eps`
//! * [`estimator`]: positive-basis gradient estimation
//! * [`solver`]: the descent loop and its trace
//! * [`analysis`]: error constants, convergence condition, steady-state bound
//! * [`experiment`]: TOML-configured sweeps writing CSV bundles
//!
//! ```
//! use stackelberg_ibr::{analysis::analyze, estimator::SamplingPlan, game::scalar_example};
//!
//! let game = scalar_example();
//! let report = analyze(&game, &SamplingPlan::standard(1, 0.1)?, 0.0)?;
//! assert_eq!(report.theorem_bound, Some(0.0));
//! # Ok::<(), stackelberg_ibr::Error>(())
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod follower;
pub mod game;
pub mod linalg;
pub mod solver;

pub use error::{Error, OracleError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/games.md")]
    mod games {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
