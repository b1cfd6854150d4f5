//! Statistical estimators: quenched position laws, the mean-field scan, the
//! resolvent solver, CLT checks and scale stability.

pub mod clt;
pub mod quenched;
pub mod resolvent;
pub mod scan;
pub mod stability;

pub use clt::{annealed_clt_test, quenched_clt_test, CltReport, Reference};
pub use quenched::{mean_field_terms, quenched_walk_distribution, QuenchedDistribution};
pub use resolvent::{resolvent_sequence, resolvent_solver, ResolventReport};
pub use scan::{mw_condition_scan, MwScanConfig, MwScanReport, ScanStart};
pub use stability::{martingale_check, scale_stability, StabilityReport};
