//! Self-contained, seeded evaluation suites for the attribution engines:
//!
//! * [`rq1`] — a linear-measure simulation with known ground truth,
//!   measuring estimation error against the reference sample size,
//! * [`rq2`] — a distinct-count (active users) simulation, measuring how
//!   reliably the record-level game localises faulty pages,
//! * [`berkeley`] — the classic admission-rate paradox, decomposed into a
//!   department × sub-measure contribution table.
//!
//! Every run derives its randomness from one master seed, one stream per
//! repetition, so reports are bit-identical across runs and schedules.

pub mod berkeley;
pub mod metrics;
pub mod rq1;
pub mod rq2;

pub use berkeley::{berkeley_table, run_berkeley};
pub use metrics::{mase, ExperimentError, MetricPoint, MetricReport, Result};
pub use rq1::{run_linear_sim, LinearSimConfig};
pub use rq2::{run_dau_sim, DauSimConfig};
