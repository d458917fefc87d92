//! Counterfactual recourse for anomalies in strictly categorical tables.
//!
//! The pipeline: a black-box [`anomaly`] scorer flags records; the
//! [`explainer`] assigns each entity an in-context likelihood and picks the
//! domains to modify; [`kge`] embeddings over a metapath-typed entity graph
//! propose semantically close replacements; [`recourse`] enumerates and
//! ranks the resulting counterfactuals. [`metrics`] and [`baselines`] support
//! evaluation, and [`pipeline`] wires everything behind a config file.

pub mod anomaly;
pub mod archive;
pub mod baselines;
pub mod corpus;
pub mod data;
pub mod error;
pub mod explainer;
pub mod kge;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod recourse;
pub mod rng;

pub use error::{Error, Result};
