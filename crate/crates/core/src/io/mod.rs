//! File formats, run configuration and manifests.

mod config;
mod manifest;
mod mesh_format;

pub use config::{Paths, RunConfig, TemplateConfig, TrainData};
pub use manifest::{file_sha256, sha256_hex, FileDigest, RunManifest, StepTime};
pub use mesh_format::{
    mesh_to_string, parse_mesh, read_cfd_material, read_mesh, read_stl_triangles, write_cfd_sidecar, write_mesh,
    write_stl, CfdMaterial,
};
