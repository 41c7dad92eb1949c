//! Evaluation harness: procedurally generated interaction scenes, quality
//! metrics for recovered poses, a registration baseline, and the benchmark
//! runner that ties them together.

pub mod bench;
pub mod cpd;
pub mod metrics;
pub mod shapes;
