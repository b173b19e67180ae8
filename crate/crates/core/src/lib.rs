//! Generalization through personalization: build recommendation cases whose
//! target behavior is a group's interaction distribution, ask a model to
//! rank candidates, and compare the cross-entropy of its implied
//! distribution against the target entropy.
//!
//! The numeric core ([`metrics`], [`curves`]) is generic over [`Scalar`];
//! the aliases below fix it to `f64`, with `f32` variants alongside.

pub mod adapters;
pub mod casegen;
pub mod cohort;
pub mod curves;
pub mod hashing;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod promptio;
pub mod scalar;
pub mod synth;

pub use scalar::Scalar;

pub type Distribution = metrics::Distribution<f64>;
pub type Distribution32 = metrics::Distribution<f32>;
pub type Bin = curves::Bin<f64>;
pub type Bin32 = curves::Bin<f32>;
pub type PolyFit = curves::PolyFit<f64>;
pub type PolyFit32 = curves::PolyFit<f32>;
pub type Inflection = curves::Inflection<f64>;
pub type Inflection32 = curves::Inflection<f32>;
pub type CurveFit = curves::CurveFit<f64>;
pub type CurveFit32 = curves::CurveFit<f32>;
