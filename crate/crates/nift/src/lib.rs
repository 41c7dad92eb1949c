//! Imitation of demonstrated object-object interactions.
//!
//! A demonstrated interaction (a gripper grasping a mug, a mug hanging on a
//! rack) is summarized as a template: points sampled on the interaction
//! bisector surface between the two objects, each carrying a descriptor read
//! from a field bound to the demonstration object. Imitating the interaction
//! on a new object instance is a pose optimization that moves the template
//! until the new object's field reproduces the stored descriptors.
//!
//! Modules follow the pipeline order:
//!
//! - [`geometry`]: meshes and splat clouds, ray casting, distances, sampling
//! - [`scf`]: spherical distance functions and their band-power descriptors
//! - [`ibs`]: bisector surface extraction and importance sampling
//! - [`field`]: descriptor fields, analytic or learned (trained regressor)
//! - [`template`]: template construction and few-shot aggregation
//! - [`imitate`]: SE(3) pose optimization against a target field
//! - [`harness`]: procedural shapes, baselines, metrics, benchmark runner
//! - [`cli`]: the `nift` command line

pub mod cli;
pub mod field;
pub mod geometry;
pub mod harness;
pub mod ibs;
pub mod optim;
pub mod imitate;
pub mod rng;
pub mod scf;
pub mod template;

pub use geometry::{Geometry, RigidTransform};
