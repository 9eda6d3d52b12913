//! Radiance-field driving simulator.
//!
//! Pipeline: analytic scenes stand in for a real capture rig, a small MLP
//! radiance field with per-condition appearance embeddings is trained on
//! oracle renders, collision meshes are extracted from its density, and a
//! driving environment renders the field as policy observations. Policies
//! trained in the field-built environment are scored against the oracle
//! environment to check that simulated success rates forecast "real"
//! (oracle) performance.

pub mod camera;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod field;
pub mod geom;
pub mod gradcheck;
pub mod image;
pub mod nn;
pub mod num;
pub mod opt;
pub mod render;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
pub mod cli;
pub mod train;
pub mod mesh;
pub mod sim;
pub mod sac;
pub mod eval;
