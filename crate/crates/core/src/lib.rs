//! Simulation toolkit for a first-passage random-walk model of quantum
//! measurement and a detector-image local hidden-variable model of Bell-test
//! correlations.
//!
//! The crate is organised by subsystem:
//!
//! * [`states`]: quantum amplitudes and the joint system-detector state whose
//!   diagonal is the probability simplex the walk runs on.
//! * [`walk`]: the Monte Carlo first-passage engine (two-state gambler's ruin
//!   and its N-state generalisation with irreversible elimination), plus an
//!   exact linear-system solver for small discrete chains.
//! * [`analytic`]: Laplace-domain Green's function of the two-state diffusion
//!   with absorbing walls, wall fluxes and mean exit time.
//! * [`bell`]: quantum reference correlation, Bell's deterministic sign model,
//!   the detector-image model (quadrature, Monte Carlo and event level), and
//!   CHSH / three-setting inequality evaluators.
//! * [`quadrature`]: Gauss-Legendre and unit-sphere product rules.
//! * [`rng`]: seed-and-stream derivation shared by every Monte Carlo path.
//!
//! Every Monte Carlo estimator derives its random streams from a
//! `(seed, stream index)` pair, so results do not depend on the number of
//! worker threads.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bell;
pub mod quadrature;
pub mod rng;
pub mod states;
pub mod walk;

pub use analytic::{absorption_probs, greens_tilde, mean_exit_time, AnalyticError, DiffusionParams};
pub use bell::{
    BellError, Convention, CorrelationEstimate, DetectorSetting, Estimator, HiddenVector,
    InequalityReport, ModelConstants, ModelTag, QuadratureMethod,
};
pub use states::{JointState, QuantumState, StateError};
pub use walk::{born_statistics, run_walk, BornStatistics, WalkConfig, WalkError, WalkOutcome};
