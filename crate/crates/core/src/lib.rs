//! Local patch meshing of signed distance fields and handle-guided
//! as-rigid-as-possible deformation of meshes and neural implicit surfaces.
//!
//! The crate is organized bottom-up:
//!
//! * [`nn`]: dense networks, reverse-mode gradients, Adam, checkpoints.
//! * [`sdf`]: analytic and neural signed distance fields.
//! * [`eikonal`]: fitting a neural SDF to a triangle mesh.
//! * [`sampling`]: closest-point projection and level-set sampling.
//! * [`patch`]: disk templates, Delaunay triangulation, patch placement and
//!   patch error metrics.
//! * [`deform`]: coordinate-network and invertible deformation fields.
//! * [`arap`]: cotangent weights, ARAP and handle energies, the optimization
//!   loop, mesh and field deformation.
//! * [`mc`] and [`metrics`]: marching cubes and deformation metrics.
//! * [`io`]: meshes, handles, configs and checkpoints on disk.

pub mod arap;
pub mod deform;
pub mod eikonal;
pub mod error;
pub mod io;
pub mod mc;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod patch;
pub mod rng;
pub mod sampling;
pub mod sdf;

pub use error::{Error, ErrorKind, Result};
pub use mesh::TriangleMesh;
pub use rng::SeedStream;
pub use sdf::ScalarField;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Fixed-order pairwise sum, so reductions do not depend on batch splitting.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}
