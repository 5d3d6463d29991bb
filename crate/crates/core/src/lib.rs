//! Age-of-information analysis for multi-source M/G/1/1 status-update queues
//! with probabilistic same-source preemption.
//!
//! - [`analytic`]: closed-form MGFs and moments of AoI, PAoI, system time and
//!   interdeparture time, computed in truncated Taylor arithmetic ([`jet`]).
//! - [`semi_markov`]: an independent transfer-function solver over the
//!   delivery-cycle graph.
//! - [`sim`]: an event-driven simulator with batch-means confidence intervals
//!   and distributional checks.

pub mod analytic;
pub mod exec;
pub mod jet;
pub mod quadrature;
pub mod rng;
pub mod semi_markov;
pub mod service;
pub mod sim;

pub use analytic::{AnalyticError, AoiMetrics, SystemConfig, Transform};
pub use exec::Execution;
pub use jet::{Jet, JetError};
pub use service::{ServiceDistribution, ServiceError};
pub use sim::{Policy, SimConfig, SimError, SimReport, StopRule};
