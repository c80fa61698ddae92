//! Self-supervised planar grasp learning on a simulated parallel-jaw gripper.

pub mod baselines;
pub mod collect;
pub mod config;
pub mod curriculum;
pub mod eval;
pub mod geometry;
pub mod learner;
pub mod patch;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod setup;
