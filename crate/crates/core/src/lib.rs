//! Attribution of changes in aggregated measures.
//!
//! When a derived measure (a success rate, an active-user count, any
//! arithmetic combination of aggregates) moves between a reference state and
//! a target state, this crate distributes the observed difference additively
//! over a matrix of (sub-cube × sub-measure) factors. The decomposition is
//! grounded in the Shapley value from cooperative game theory, so each
//! factor's share is fair in the axiomatic sense (completeness, dummy,
//! symmetry, linearity).
//!
//! The crate is organised around the lifecycle of one analysis:
//!
//! * [`cube`] ingests transactional records and aggregates them per sub-cube,
//! * [`expr`] parses measure definitions and differentiates them symbolically,
//! * [`model`] holds the shared vocabulary (predicates, partitions, matrices),
//! * [`game`] provides generic coalition-game solvers (exact, permutation
//!   sampled, kernel regression),
//! * [`gam`] attributes measures whose sub-measures aggregate additively,
//!   using a spectrum of engines from closed forms to sampled Shapley,
//! * [`nongam`] plays the coalition game directly on raw records for
//!   non-additive aggregations such as distinct counts,
//! * [`report`] serialises contribution matrices for downstream tools.

pub mod cube;
pub mod error;
pub mod expr;
pub mod gam;
pub mod game;
pub mod model;
pub mod nongam;
pub mod report;

pub use error::{Error, Result};
