//! Template-deformation mesh reconstruction from voxel volumes.

pub mod cli;
pub mod energy;
pub mod error;
pub mod fit;
pub mod geom;
pub mod io;
pub mod isosurface;
pub mod mesh;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod spatial;
pub mod validity;
pub mod voxel;

pub use error::{Error, Result};
pub use geom::Vec3;
pub use mesh::TriMesh;
