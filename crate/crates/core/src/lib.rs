//! Deterministic simulator for federated continual learning with a shared,
//! dynamically apportioned exemplar replay pool.
//!
//! The numeric core (parameters, datasets, the classifier, client and server
//! runtimes) is generic over [`Scalar`] (`f32` or `f64`). The aliases below
//! fix the scalar to `f64`, which is what the CLI and the reports use.

pub mod alloc;
pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod server;

pub use config::{AllocationMode, DeviationMetric, FederationConfig};
pub use error::{Error, Result};
pub use harness::RunConfig;
pub use report::ExperimentReport;
pub use scalar::Scalar;

pub type ModelParams = params::Params<f64>;
pub type Dataset = data::Dataset<f64>;
pub type LabeledSample = data::LabeledSample<f64>;
pub type Matrix = nn::Matrix<f64>;
pub type ClientState = client::ClientState<f64>;
pub type GlobalState = server::GlobalState<f64>;
pub type Federation = server::Federation<f64>;
pub type ScenarioData = scenario::ScenarioData<f64>;
