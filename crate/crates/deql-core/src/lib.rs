//! Closed-form linear-autoencoder recommenders trained under expected
//! dropout, with exact solvers for several solution families, an O(n^3)
//! shared-inverse route, Monte-Carlo and analytic loss oracles, and a
//! ranking-metric evaluation harness.
//!
//! The pipeline is: load interactions ([`data`]), split for evaluation,
//! build the Gram matrix, solve for an item-item weight matrix ([`solver`],
//! [`fast`], [`lowrank`]), then score and rank ([`eval`]). The [`oracle`]
//! module checks any weight matrix against the objective itself, with no
//! shared code paths to the solvers.

pub mod data;
pub mod error;
pub mod eval;
pub mod fast;
pub mod lowrank;
pub mod mat;
pub mod model;
pub mod oracle;
pub mod seeds;
pub mod solver;

/// Version stamped into every JSON report.
pub const SPEC_VERSION: &str = "1.0.0";
