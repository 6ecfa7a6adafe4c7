//! Marching cubes over `[-1, 1]^3`.

mod tables;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::sdf::ScalarField;
use crate::Vec3;

use tables::{CORNERS, EDGES, EDGE_FLAGS, TRIANGLES};

/// A cubic grid of `resolution^3` cells over `[-1, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub level: f64,
}

impl GridSpec {
    pub fn new(resolution: usize, level: f64) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(Self { resolution, level })
    }

    pub fn cell_size(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    fn samples(&self) -> usize {
        self.resolution + 1
    }

    fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.cell_size();
        Vec3::new(-1.0 + h * i as f64, -1.0 + h * j as f64, -1.0 + h * k as f64)
    }
}

/// Field values at every grid node, x fastest.
fn sample_grid(field: &(impl ScalarField + ?Sized), grid: &GridSpec) -> Vec<f64> {
    let n = grid.samples();
    let mut values = Vec::with_capacity(n * n * n);
    // one z slab per field call
    for k in 0..n {
        let slab: Vec<Vec3> = (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .map(|(i, j)| grid.point(i, j, k))
            .collect();
        values.extend(field.values(&slab));
    }
    values
}

/// Triangulate the `grid.level` set of `field`. Vertices are welded along
/// shared cell edges and faces are wound so normals follow `+grad f`. An
/// empty surface gives an empty mesh.
pub fn marching_cubes(field: &(impl ScalarField + ?Sized), grid: &GridSpec) -> Result<TriangleMesh> {
    GridSpec::new(grid.resolution, grid.level)?;
    let values = sample_grid(field, grid);
    Ok(polygonize(&values, grid))
}

fn polygonize(values: &[f64], grid: &GridSpec) -> TriangleMesh {
    let n = grid.samples();
    let idx = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    let level = grid.level;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    let r = grid.resolution;
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let nodes: [usize; 8] =
                    std::array::from_fn(|c| idx(i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]));
                let vals: [f64; 8] = std::array::from_fn(|c| values[nodes[c]]);
                let mut case = 0usize;
                for (c, v) in vals.iter().enumerate() {
                    if *v < level {
                        case |= 1 << c;
                    }
                }
                let flags = EDGE_FLAGS[case];
                if flags == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if flags & (1 << e) == 0 {
                        continue;
                    }
                    let key = (nodes[a].min(nodes[b]), nodes[a].max(nodes[b]));
                    edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                        let pa = grid.point(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = grid.point(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let (va, vb) = (vals[a], vals[b]);
                        let t = if va == vb { 0.5 } else { (level - va) / (vb - va) };
                        vertices.push(pa + (pb - pa) * t);
                        vertices.len() - 1
                    });
                }
                for tri in TRIANGLES[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let [a, b, c] = [tri[0], tri[1], tri[2]].map(|e| edge_vertex[e as usize]);
                    // the case table winds faces towards the low side
                    faces.push([a, c, b]);
                }
            }
        }
    }
    TriangleMesh {
        vertices,
        faces,
        normals: None,
    }
}
