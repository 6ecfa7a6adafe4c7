//! Meshes, handles, configuration files and run manifests on disk.

pub mod config;
pub mod handles;
pub mod manifest;
pub mod mesh;

pub use config::{load_deform_config, load_eikonal_config, parse_deform_config, parse_eikonal_config, render_config};
pub use handles::{load_handles, resolve_handles, HandleFile, HandleSpace, LoadedHandles, MovingHandle};
pub use manifest::RunManifest;
pub use mesh::{load_mesh, save_mesh, save_ply, PlyFormat};
