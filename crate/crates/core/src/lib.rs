//! Random walks driven by a weakly coupled Markovian environment on a torus.
//!
//! The environment is a finite-alphabet field on `(Z/LZ)^d` updated
//! synchronously; the walk lives in `Z^d` and its step law depends on the
//! configuration around its current position. Besides Monte Carlo simulation
//! of one or two walkers, the crate enumerates small tori exactly to obtain
//! stationary laws, drift, the limiting covariance and the finite-volume lift
//! operators, which the statistical estimators are checked against.

pub mod error;
pub mod estimators;
pub mod exact;
pub mod fixtures;
pub mod geometry;
pub mod lattice;
pub mod lift;
pub mod pair;
pub mod rng;
pub mod stats;
pub mod walker;

pub use error::{Error, Result};
pub use geometry::{Geometry, Point, ORIGIN};
pub use lattice::{
    dobrushin_constants, env_step, kernel_tv_sensitivity, sample_equilibrium, spatial_correlation, DobrushinReport,
    EnvDynamics, EnvHistory, EnvKernel, EnvStart, EnvState, LocalObservable,
};
pub use estimators::{
    annealed_clt_test, mw_condition_scan, quenched_clt_test, quenched_walk_distribution, resolvent_solver, scale_stability,
    CltReport, MwScanConfig, MwScanReport, QuenchedDistribution, Reference, ResolventReport, ScanStart, StabilityReport,
};
pub use exact::{drift_and_sigma, mixing_report, ExactModel, MixingReport};
pub use lift::{lift_operators, verify_lift, LiftBundle, LiftReport};
pub use pair::{
    close_encounters, difference_chain_absorption, encounter_scaling, excursion_probability, offdiagonal_sum, separation_survival,
    simulate_pair, EncounterReport, ExcursionReport, PairTrajectory, SurvivalReport,
};
pub use rng::{Label, StreamKey};
pub use walker::{check_ellipticity, simulate, step_probabilities, walk_step, EllipticityReport, Perturbation, Setting, Trajectory, WalkModel};
