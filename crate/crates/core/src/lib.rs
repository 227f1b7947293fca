//! Core math for envbench: baseline-relative statistics, the launch-schedule
//! simulator and the container-grouping search.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root pin the `f64` instantiation used by the file
//! formats and the command line; the `*32` aliases exist for callers that want
//! single precision.

pub mod grouping;
pub mod launchsim;
pub mod sample;
pub mod scalar;
pub mod stats;

pub use sample::{Polarity, Sample, Unit};
pub use scalar::Scalar;

pub type Summary = stats::SummaryStats<f64>;
pub type Summary32 = stats::SummaryStats<f32>;
pub type Fit = stats::AffineFit<f64>;
pub type Fit32 = stats::AffineFit<f32>;

pub type Node = launchsim::ServiceNode<f64>;
pub type Graph = launchsim::ServiceGraph<f64>;
pub type Graph32 = launchsim::ServiceGraph<f32>;
pub type Model = launchsim::OrchestratorModel<f64>;
pub type Model32 = launchsim::OrchestratorModel<f32>;
pub type Timeline = launchsim::LaunchTimeline<f64>;
pub type Timeline32 = launchsim::LaunchTimeline<f32>;
pub type Search = grouping::SearchResult<f64>;
pub type Search32 = grouping::SearchResult<f32>;

pub use launchsim::GroupingPlan;
