//! Handle files.
//!
//! ```json
//! { "space": "normalized",
//!   "static": [[x, y, z], ...],
//!   "moving": [{ "source": [x, y, z], "target": [x, y, z] }, ...] }
//! ```
//!
//! `space` is optional: `"normalized"` (default) for coordinates already in
//! the field's domain, `"raw"` for mesh coordinates mapped through the
//! field's normalization.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::arap::HandleSet;
use crate::error::{Error, Result};
use crate::sampling::{project_to_level_set, ProjectionConfig};
use crate::sdf::{Normalization, ScalarField};
use crate::Vec3;

/// Residual above which a projected handle source is reported.
pub const HANDLE_RESIDUAL_WARN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleSpace {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingHandle {
    pub source: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandleFile {
    #[serde(default)]
    pub space: HandleSpace,
    #[serde(default, rename = "static")]
    pub fixed: Vec<[f64; 3]>,
    #[serde(default)]
    pub moving: Vec<MovingHandle>,
}

impl HandleFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("handle file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("handles serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Static handles first, then moving ones, as written.
    pub fn from_set(set: &HandleSet) -> Self {
        let mut out = Self::default();
        for h in &set.handles {
            let s = [h.source.x, h.source.y, h.source.z];
            if h.is_static {
                out.fixed.push(s);
            } else {
                out.moving.push(MovingHandle {
                    source: s,
                    target: [h.target.x, h.target.y, h.target.z],
                });
            }
        }
        out
    }
}

/// Handles in the field's domain with sources on its zero set.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedHandles {
    pub handles: HandleSet,
    /// Distance each source moved during projection.
    pub displacements: Vec<f64>,
    /// `|f|` at each projected source.
    pub residuals: Vec<f64>,
}

fn in_domain(p: &Vec3) -> bool {
    p.iter().all(|c| c.abs() <= 1.0)
}

/// Normalize and project the handles of `file` onto the zero set of `field`.
pub fn resolve_handles(
    file: &HandleFile,
    field: &(impl ScalarField + ?Sized),
    norm: &Normalization,
    projection: &ProjectionConfig,
) -> Result<LoadedHandles> {
    let map = |p: &[f64; 3]| -> Vec3 {
        let v = Vec3::from(*p);
        match file.space {
            HandleSpace::Normalized => v,
            HandleSpace::Raw => norm.apply(&v),
        }
    };
    let mut out = LoadedHandles {
        handles: HandleSet::new(),
        displacements: Vec::new(),
        residuals: Vec::new(),
    };
    let entries = file
        .fixed
        .iter()
        .map(|s| (map(s), None))
        .chain(file.moving.iter().map(|m| (map(&m.source), Some(map(&m.target)))));
    for (i, (source, target)) in entries.enumerate() {
        for p in std::iter::once(&source).chain(target.as_ref()) {
            if !in_domain(p) {
                return Err(Error::InvalidArgument(format!(
                    "handle {i} at ({:.4}, {:.4}, {:.4}) lies outside [-1, 1]^3",
                    p.x, p.y, p.z
                )));
            }
        }
        let projected = project_to_level_set(field, source, 0.0, projection)?;
        let residual = field.value(&projected).abs();
        if residual > HANDLE_RESIDUAL_WARN {
            warn!("handle {i}: residual {residual:.4} after projection");
        }
        out.displacements.push((projected - source).norm());
        out.residuals.push(residual);
        match target {
            None => out.handles.push_static(projected),
            Some(t) => out.handles.push_moving(projected, t),
        }
    }
    Ok(out)
}

pub fn load_handles(
    path: &Path,
    field: &(impl ScalarField + ?Sized),
    norm: &Normalization,
    projection: &ProjectionConfig,
) -> Result<LoadedHandles> {
    resolve_handles(&HandleFile::load(path)?, field, norm, projection)
}
