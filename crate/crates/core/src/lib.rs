//! Generative dexterous-grasp models learned from demonstrated grasps.
//!
//! The library learns kernel density models over link poses and local surface
//! geometry from a handful of demonstrated grasps on partial point clouds,
//! then transfers those models to novel objects seen from a single view:
//!
//! * [`geometry`] rigid-body poses and quaternion algebra,
//! * [`density`] kernel densities over pose and surface descriptors,
//! * [`surface`] point-cloud features: normals, curvatures, view simulation,
//! * [`contact`] contact models tying hand links to local surface geometry,
//! * [`cluster`] contact-model merging across demonstrations,
//! * [`hand`] hand kinematics and the hand configuration model,
//! * [`query`] query densities computed on a novel view,
//! * [`planner`] grasp generation and simulated-annealing refinement,
//! * [`pipeline`] training, inference, storage, and self-training loops.

pub mod cluster;
pub mod contact;
pub mod density;
pub mod error;
pub mod geometry;
pub mod hand;
pub mod params;
pub mod pipeline;
pub mod planner;
pub mod query;
pub mod rng;
pub mod shapes;
pub mod spatial;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
pub use params::Params;
