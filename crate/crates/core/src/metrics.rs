//! Volume, area and distortion metrics between source and deformed shapes.

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::deform::{DeformationField, DeformedField};
use crate::error::{Error, Result};
use crate::mc::{marching_cubes, GridSpec};
use crate::mesh::TriangleMesh;
use crate::sdf::ScalarField;
use crate::{pairwise_sum, Vec3};

/// Enclosed volume and surface area of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeArea {
    /// Absolute value of `signed_volume`.
    pub volume: f64,
    pub signed_volume: f64,
    pub area: f64,
    /// False when the mesh is not closed; `volume` is then not meaningful.
    pub closed: bool,
}

pub fn mesh_volume_area(mesh: &TriangleMesh) -> VolumeArea {
    let mut tets = Vec::with_capacity(mesh.faces.len());
    let mut areas = Vec::with_capacity(mesh.faces.len());
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.corners(f);
        tets.push(a.dot(&b.cross(&c)) / 6.0);
        areas.push(mesh.face_area(f));
    }
    let closed = mesh.is_closed();
    if !closed {
        warn!("volume requested for an open mesh");
    }
    let signed_volume = pairwise_sum(&tets);
    VolumeArea {
        volume: signed_volume.abs(),
        signed_volume,
        area: pairwise_sum(&areas),
        closed,
    }
}

/// Errors of a deformation relative to its source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationReport {
    /// Relative volume change.
    pub e_vol: f64,
    /// Relative area change.
    pub e_area: f64,
    /// Mean absolute edge-length change over the longest source edge.
    pub el: f64,
    /// Mean absolute inner-angle change, degrees.
    pub fa_deg: f64,
    pub wall_s: f64,
}

fn relative_change(src: f64, dst: f64) -> Result<f64> {
    if src.abs() < 1e-300 {
        return Err(Error::DegenerateMesh("source measure is zero".into()));
    }
    Ok((src - dst).abs() / src.abs())
}

/// Mean absolute edge-length change over edges of `src`, relative to the
/// longest source edge. `deformed` holds the deformed vertex positions.
pub fn edge_length_error(src: &TriangleMesh, deformed: &[Vec3]) -> Result<f64> {
    check_same_vertices(src, deformed)?;
    let edges = src.edges();
    if edges.is_empty() {
        return Err(Error::DegenerateMesh("mesh has no edges".into()));
    }
    let mut longest = 0.0f64;
    let diffs: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| {
            let l0 = (src.vertices[i] - src.vertices[j]).norm();
            longest = longest.max(l0);
            (l0 - (deformed[i] - deformed[j]).norm()).abs()
        })
        .collect();
    if longest <= 0.0 {
        return Err(Error::DegenerateMesh("all source edges have zero length".into()));
    }
    Ok(pairwise_sum(&diffs) / edges.len() as f64 / longest)
}

fn corner_angle(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let (u, v) = (a - p, b - p);
    let denom = u.norm() * v.norm();
    if denom <= 0.0 {
        return 0.0;
    }
    (u.dot(&v) / denom).clamp(-1.0, 1.0).acos()
}

/// Mean absolute change of the three inner angles of every face, degrees.
pub fn face_angle_error(src: &TriangleMesh, deformed: &[Vec3]) -> Result<f64> {
    check_same_vertices(src, deformed)?;
    if src.faces.is_empty() {
        return Err(Error::DegenerateMesh("mesh has no faces".into()));
    }
    let mut diffs = Vec::with_capacity(3 * src.faces.len());
    for f in &src.faces {
        for c in 0..3 {
            let (p, a, b) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
            let before = corner_angle(&src.vertices[p], &src.vertices[a], &src.vertices[b]);
            let after = corner_angle(&deformed[p], &deformed[a], &deformed[b]);
            diffs.push((before - after).abs());
        }
    }
    Ok(pairwise_sum(&diffs) / diffs.len() as f64 * 180.0 / std::f64::consts::PI)
}

fn check_same_vertices(src: &TriangleMesh, deformed: &[Vec3]) -> Result<()> {
    if src.vertices.len() != deformed.len() {
        return Err(Error::InvalidArgument(format!(
            "deformed vertex count {} differs from source {}",
            deformed.len(),
            src.vertices.len()
        )));
    }
    Ok(())
}

/// Metrics for a deformed copy of `src` sharing its connectivity.
pub fn mesh_pair_errors(src: &TriangleMesh, deformed: &TriangleMesh) -> Result<DeformationReport> {
    let start = Instant::now();
    if src.faces != deformed.faces {
        return Err(Error::InvalidArgument("source and deformed meshes differ in connectivity".into()));
    }
    let (s, d) = (mesh_volume_area(src), mesh_volume_area(deformed));
    Ok(DeformationReport {
        e_vol: relative_change(s.volume, d.volume)?,
        e_area: relative_change(s.area, d.area)?,
        el: edge_length_error(src, &deformed.vertices)?,
        fa_deg: face_angle_error(src, &deformed.vertices)?,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Metrics for `src` moved vertex-wise by `d`.
pub fn deformation_errors(src: &TriangleMesh, d: &DeformationField) -> Result<DeformationReport> {
    let start = Instant::now();
    let deformed = TriangleMesh {
        vertices: d.apply_batch(&src.vertices),
        faces: src.faces.clone(),
        normals: None,
    };
    let mut report = mesh_pair_errors(src, &deformed)?;
    report.wall_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Metrics for a deformed field `g = f o d^-1`. Volume and area come from the
/// level sets of `f` and `g` extracted on `grid`; edge and angle errors from
/// the extracted source mesh with its vertices moved by `d`.
pub fn field_deformation_errors<F: ScalarField>(
    f: &F,
    d: &DeformationField,
    grid: &GridSpec,
) -> Result<DeformationReport> {
    let start = Instant::now();
    let g = DeformedField::new(f, d.clone())?;
    let src = marching_cubes(f, grid)?;
    let dst = marching_cubes(&g, grid)?;
    if src.is_empty() || dst.is_empty() {
        return Err(Error::DegenerateMesh(format!("no level {} surface on the grid", grid.level)));
    }
    let (s, t) = (mesh_volume_area(&src), mesh_volume_area(&dst));
    let moved = d.apply_batch(&src.vertices);
    Ok(DeformationReport {
        e_vol: relative_change(s.volume, t.volume)?,
        e_area: relative_change(s.area, t.area)?,
        el: edge_length_error(&src, &moved)?,
        fa_deg: face_angle_error(&src, &moved)?,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{cube, icosphere};
    use crate::Mat3;
    use std::f64::consts::PI;

    fn mapped(m: &TriangleMesh, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: m.vertices.iter().map(f).collect(),
            faces: m.faces.clone(),
            normals: None,
        }
    }

    #[test]
    fn cube_volume_area() {
        let va = mesh_volume_area(&cube(1.0));
        assert!(va.closed);
        assert!((va.volume - 8.0).abs() < 1e-12);
        assert!((va.area - 24.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_volume_area() {
        let va = mesh_volume_area(&icosphere(1.0, 4));
        assert!((va.volume / (4.0 * PI / 3.0) - 1.0).abs() < 0.01);
        assert!((va.area / (4.0 * PI) - 1.0).abs() < 0.01);
    }

    #[test]
    fn translation_invariance() {
        let m = icosphere(1.0, 2);
        let a = mesh_volume_area(&m);
        let b = mesh_volume_area(&m.translated(Vec3::new(5.0, 5.0, 5.0)));
        assert!((a.volume - b.volume).abs() < 1e-10);
        assert!((a.area - b.area).abs() < 1e-10);
    }

    #[test]
    fn open_mesh_flagged() {
        let mut m = cube(1.0);
        m.faces.pop();
        assert!(!mesh_volume_area(&m).closed);
    }

    #[test]
    fn identity_and_rigid_are_zero() {
        let m = icosphere(0.5, 2);
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1).into_inner();
        let t = Vec3::new(0.2, -0.1, 0.4);
        for rep in [mesh_pair_errors(&m, &m).unwrap(), mesh_pair_errors(&m, &mapped(&m, |v| r * v + t)).unwrap()] {
            assert!(rep.e_vol < 1e-9 && rep.e_area < 1e-9 && rep.el < 1e-9 && rep.fa_deg < 1e-9, "{rep:?}");
        }
    }

    #[test]
    fn uniform_scale() {
        let m = icosphere(0.5, 2);
        let rep = mesh_pair_errors(&m, &mapped(&m, |v| v * 1.1)).unwrap();
        assert!((rep.e_vol - 0.331).abs() < 1e-9);
        assert!((rep.e_area - 0.21).abs() < 1e-9);
        assert!(rep.fa_deg < 1e-6);
        // every edge grows by a tenth of its length
        let lengths: Vec<f64> = m.edges().iter().map(|&(i, j)| (m.vertices[i] - m.vertices[j]).norm()).collect();
        let longest = lengths.iter().cloned().fold(0.0, f64::max);
        let expect = 0.1 * lengths.iter().sum::<f64>() / lengths.len() as f64 / longest;
        assert!((rep.el - expect).abs() < 1e-12);
    }

    #[test]
    fn shear_changes_angles() {
        let m = cube(1.0);
        let s = Mat3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let rep = mesh_pair_errors(&m, &mapped(&m, |v| s * v)).unwrap();
        assert!(rep.fa_deg > 1.0);
        // shear preserves volume
        assert!(rep.e_vol < 1e-12);
    }

    #[test]
    fn mismatched_connectivity_rejected() {
        let a = cube(1.0);
        let mut b = a.clone();
        b.faces.swap(0, 1);
        assert!(mesh_pair_errors(&a, &b).is_err());
    }
}
