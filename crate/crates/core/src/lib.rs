//! Flow matching under differentiable logical constraints.
//!
//! The crate trains time-conditioned vector fields with a conditional flow
//! matching objective plus a time-weighted violation penalty, samples them
//! with an Euler integrator that can descend the violation late in the flow,
//! and ships the metrics and numerical checks used to evaluate both.
//!
//! | module | contents |
//! |---|---|
//! | [`constraint`] | hinge relaxations, conjunctions, gradients, config schema |
//! | [`field`] | the MLP vector field, forward/backward passes, checkpoints |
//! | [`trainer`] | flow matching and logic losses, Adam, the training loop |
//! | [`sampler`] | Euler integration with the late-time correction schedule |
//! | [`targets`] | Gaussian mixtures and the built-in case studies |
//! | [`metrics`] | violation rate, average violation, MMD |
//! | [`theory`] | numerical checks of the descent and deviation bounds |
//! | [`harness`] | run files, result CSVs, reproduction studies |

pub mod constraint;
pub mod error;
pub mod field;
pub mod harness;
pub mod metrics;
pub mod sampler;
pub mod targets;
pub mod theory;
pub mod trainer;

pub use constraint::{parse_constraint, Constraint, ConstraintSpec, Violation};
pub use error::{Error, Result};
pub use field::{default_hidden, ForwardTrace, VectorFieldParams};
pub use metrics::MetricsReport;
pub use sampler::{EtaSchedule, SampleConfig, Trajectory};
pub use targets::{builtin_case_study, CaseStudy, GaussianMixture};
pub use trainer::{LogicMode, TrainConfig};
