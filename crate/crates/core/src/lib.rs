//! Deformation-driven shape diffusion: regularized point-cloud and mesh
//! dynamics, a denoising regressor trained on reversed trajectories, and
//! generative set metrics.

pub mod assignment;
pub mod cli;
pub mod config;
pub mod energy;
pub mod error;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod kdtree;
pub mod primitives;
pub mod rng;
pub mod shape;

pub use energy::{EnergyContext, EnergyReport, RegularizerWeights};
pub use error::{Error, Result};
pub use shape::{Neighborhood, NeighborhoodMode, Shape, ShapeKind, Vec3};
