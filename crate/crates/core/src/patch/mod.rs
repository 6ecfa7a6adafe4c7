//! Local patch meshes: a triangulated disk template placed in the tangent
//! plane of level-set points and projected onto the level set.

pub mod delaunay;
pub mod disk;

use rand::Rng as _;

pub use delaunay::{incircle, orient, perturb_duplicates, triangulate, Point2};
pub use disk::{sample_disk, DiskDistribution};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::rng::Rng;
use crate::sampling::{project_points, reject_project_sample, uniform_in_domain, ProjectionConfig};
use crate::sdf::{ScalarField, DEGENERATE_GRADIENT};
use crate::{Mat3, Vec3};

/// Placed patches whose longest edge exceeds this multiple of the radius
/// are treated as torn and resampled.
pub const MAX_EDGE_FACTOR: f64 = 4.0;

/// A triangulated disk shared by every patch of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTemplate {
    pub points: Vec<Point2>,
    pub faces: Vec<[usize; 3]>,
    pub radius: f64,
    pub distribution: DiskDistribution,
}

impl PatchTemplate {
    /// Sample `k` disk points and triangulate them.
    pub fn new(k: usize, radius: f64, distribution: DiskDistribution, rng: &mut Rng) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidArgument(format!("patch density must be at least 3, got {k}")));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("patch radius must be positive, got {radius}")));
        }
        let points = sample_disk(k, radius, distribution, rng);
        Self::from_points(points, radius, distribution)
    }

    pub fn from_points(mut points: Vec<Point2>, radius: f64, distribution: DiskDistribution) -> Result<Self> {
        perturb_duplicates(&mut points, radius);
        let faces = triangulate(&points)?;
        Ok(Self {
            points,
            faces,
            radius,
            distribution,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        face_edges(&self.faces)
    }
}

pub(crate) fn face_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    e.sort_unstable();
    e.dedup();
    e
}

/// Projected patches sharing one face array. Handle patches come first,
/// then the remaining zero-level patches, then volume patches.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub origins: Vec<Vec3>,
    pub levels: Vec<f64>,
    /// `len() * k` vertices, patch-major.
    pub vertices: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
    pub faces: Vec<[usize; 3]>,
    pub k: usize,
    pub handle_count: usize,
    /// Number of zero-level patches, handles included.
    pub surface_count: usize,
}

impl PatchBatch {
    /// A whole mesh viewed as a single patch on `level`.
    pub fn from_mesh(mesh: &TriangleMesh, level: f64) -> Self {
        let n = mesh.vertices.len().max(1) as f64;
        let centroid = mesh.vertices.iter().fold(Vec3::zeros(), |a, v| a + v) / n;
        Self {
            origins: vec![centroid],
            levels: vec![level],
            vertices: mesh.vertices.clone(),
            rotations: vec![Mat3::identity()],
            faces: mesh.faces.clone(),
            k: mesh.vertices.len(),
            handle_count: 0,
            surface_count: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[Vec3] {
        &self.vertices[i * self.k..(i + 1) * self.k]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        face_edges(&self.faces)
    }
}

/// The rotation taking `(0, 0, 1)` to the unit vector `n` along the shortest
/// arc; a half turn about the x axis when `n` points straight down.
pub fn shortest_arc_rotation(n: &Vec3) -> Mat3 {
    let c = n.z;
    let s2 = n.x * n.x + n.y * n.y;
    if s2 == 0.0 {
        return if c >= 0.0 {
            Mat3::identity()
        } else {
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
        };
    }
    // axis u = e_z x n / |e_z x n|, sin = sqrt(s2), cos = c
    let s = s2.sqrt();
    let u = Vec3::new(-n.y / s, n.x / s, 0.0);
    let k = Mat3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Mat3::identity() * c + (u * u.transpose()) * (1.0 - c) + k * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Audit {
    /// Any projection or level residual failure rejects the patch.
    Full,
    /// Only a degenerate origin normal rejects the patch.
    Lenient,
}

/// Place many patches at once; one result per origin.
fn place_many(
    field: &(impl ScalarField + ?Sized),
    origins: &[Vec3],
    levels: &[f64],
    tmpl: &PatchTemplate,
    cfg: &ProjectionConfig,
    audit: Audit,
) -> Vec<Result<(Vec<Vec3>, Mat3)>> {
    let k = tmpl.len();
    let (_, grads) = field.values_and_gradients(origins);
    let mut rotations: Vec<Result<Mat3>> = Vec::with_capacity(origins.len());
    let mut raw = Vec::new();
    let mut raw_levels = Vec::new();
    for ((o, g), &l) in origins.iter().zip(&grads).zip(levels) {
        let norm = g.norm();
        if !(norm >= DEGENERATE_GRADIENT) || !norm.is_finite() {
            rotations.push(Err(Error::DegenerateGradient(*o)));
            continue;
        }
        let r = shortest_arc_rotation(&(g / norm));
        for p in &tmpl.points {
            raw.push(o + r * Vec3::new(p[0], p[1], 0.0));
            raw_levels.push(l);
        }
        rotations.push(Ok(r));
    }
    let projected = project_points(field, &raw, &raw_levels, cfg.iterations);
    let residuals = if audit == Audit::Full {
        let pts: Vec<Vec3> = projected.iter().map(|r| *r.as_ref().unwrap_or(&Vec3::zeros())).collect();
        field.values(&pts)
    } else {
        Vec::new()
    };
    let max_edge = MAX_EDGE_FACTOR * tmpl.radius;
    let edges = tmpl.edges();
    let mut cursor = 0;
    rotations
        .into_iter()
        .zip(levels)
        .map(|(rot, &l)| {
            let r = rot?;
            let span = cursor..cursor + k;
            cursor += k;
            let mut verts = Vec::with_capacity(k);
            for (j, res) in projected[span.clone()].iter().enumerate() {
                match res {
                    Ok(v) => verts.push(*v),
                    Err(Error::ProjectionFailure(at)) if audit == Audit::Full => {
                        return Err(Error::ProjectionFailure(*at))
                    }
                    // lenient: keep the unprojected template point
                    Err(_) if audit == Audit::Lenient => verts.push(raw[span.start + j]),
                    Err(_) => return Err(Error::ProjectionFailure(raw[span.start + j])),
                }
            }
            if audit == Audit::Full {
                if let Some(j) = residuals[span.clone()]
                    .iter()
                    .position(|f| !((f - l).abs() <= cfg.residual_tol))
                {
                    return Err(Error::ProjectionFailure(verts[j]));
                }
                if edges.iter().any(|&(a, b)| (verts[a] - verts[b]).norm() > max_edge) {
                    return Err(Error::ProjectionFailure(verts[0]));
                }
            }
            Ok((verts, r))
        })
        .collect()
}

/// Align the template with the tangent plane at `origin` and project each
/// vertex onto the `level` set. Rejects patches with a degenerate normal, a
/// failed or inaccurate projection, or an edge longer than
/// [`MAX_EDGE_FACTOR`] times the radius.
pub fn place_patch(
    field: &(impl ScalarField + ?Sized),
    origin: Vec3,
    tmpl: &PatchTemplate,
    level: f64,
    cfg: &ProjectionConfig,
) -> Result<(Vec<Vec3>, Mat3)> {
    place_many(field, &[origin], &[level], tmpl, cfg, Audit::Full)
        .pop()
        .expect("one origin")
}

/// Build `n` patches: `round(surface_fraction * n)` on the zero level set,
/// starting with one per handle source, and the rest at uniform volume
/// points on their own level `f(origin)`. If there are more handles than
/// surface slots, every handle still gets a patch. Rejected patches are
/// replaced by fresh samples.
pub fn build_patch_batch(
    field: &(impl ScalarField + ?Sized),
    tmpl: &PatchTemplate,
    n: usize,
    surface_fraction: f64,
    handle_sources: &[Vec3],
    cfg: &ProjectionConfig,
    rng: &mut Rng,
) -> Result<PatchBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("patch count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&surface_fraction) {
        return Err(Error::InvalidArgument(format!(
            "surface fraction must be in [0, 1], got {surface_fraction}"
        )));
    }
    cfg.validate()?;
    let requested_surface = (surface_fraction * n as f64).round() as usize;
    let h = handle_sources.len();
    let m = requested_surface.max(h);
    let volume = n - requested_surface;

    let mut batch = PatchBatch {
        origins: Vec::with_capacity(m + volume),
        levels: Vec::with_capacity(m + volume),
        vertices: Vec::with_capacity((m + volume) * tmpl.len()),
        rotations: Vec::with_capacity(m + volume),
        faces: tmpl.faces.clone(),
        k: tmpl.len(),
        handle_count: h,
        surface_count: m,
    };
    let push = |b: &mut PatchBatch, o: Vec3, l: f64, verts: Vec<Vec3>, r: Mat3| {
        b.origins.push(o);
        b.levels.push(l);
        b.vertices.extend(verts);
        b.rotations.push(r);
    };

    if h > 0 {
        let placed = place_many(field, handle_sources, &vec![0.0; h], tmpl, cfg, Audit::Lenient);
        for (o, res) in handle_sources.iter().zip(placed) {
            let (v, r) = res?;
            push(&mut batch, *o, 0.0, v, r);
        }
    }

    let mut rounds = 0;
    while batch.len() < m {
        if rounds == cfg.max_rounds {
            return Err(Error::EmptyLevelSet {
                level: 0.0,
                rounds,
            });
        }
        rounds += 1;
        let want = m - batch.len();
        let origins = reject_project_sample(field, want, 0.0, cfg, rng)?;
        let placed = place_many(field, &origins, &vec![0.0; want], tmpl, cfg, Audit::Full);
        for (o, res) in origins.into_iter().zip(placed) {
            if let Ok((v, r)) = res {
                push(&mut batch, o, 0.0, v, r);
            }
        }
    }

    let target = m + volume;
    rounds = 0;
    while batch.len() < target {
        if rounds == cfg.max_rounds {
            return Err(Error::InvalidArgument(format!(
                "could not place {volume} volume patches in {rounds} rounds"
            )));
        }
        rounds += 1;
        let want = target - batch.len();
        let origins: Vec<Vec3> = (0..want).map(|_| uniform_in_domain(rng)).collect();
        let levels = field.values(&origins);
        let placed = place_many(field, &origins, &levels, tmpl, cfg, Audit::Full);
        for ((o, l), res) in origins.into_iter().zip(levels).zip(placed) {
            if let Ok((v, r)) = res {
                push(&mut batch, o, l, v, r);
            }
        }
    }
    Ok(batch)
}

/// `(E_patch, mean error)`: the maximum and the per-patch-mean of `|f(p) - l_i|`
/// over `samples_per_triangle` uniform points on every triangle of every patch.
pub fn patch_errors(
    field: &(impl ScalarField + ?Sized),
    batch: &PatchBatch,
    samples_per_triangle: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if samples_per_triangle == 0 {
        return Err(Error::InvalidArgument("need at least one sample per triangle".into()));
    }
    if batch.is_empty() || batch.faces.is_empty() {
        return Err(Error::InvalidArgument("patch batch has no triangles".into()));
    }
    let per_patch = batch.faces.len() * samples_per_triangle;
    let mut e_max = 0.0f64;
    let mut means = Vec::with_capacity(batch.len());
    // bounded chunk of points per field call
    let patches_per_call = (1 << 16) / per_patch + 1;
    for start in (0..batch.len()).step_by(patches_per_call) {
        let end = (start + patches_per_call).min(batch.len());
        let mut pts = Vec::with_capacity((end - start) * per_patch);
        for i in start..end {
            let v = batch.patch(i);
            for f in &batch.faces {
                for _ in 0..samples_per_triangle {
                    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                    let s = r1.sqrt();
                    let (a, b, c) = (1.0 - s, s * (1.0 - r2), s * r2);
                    pts.push(v[f[0]] * a + v[f[1]] * b + v[f[2]] * c);
                }
            }
        }
        let vals = field.values(&pts);
        for (i, chunk) in (start..end).zip(vals.chunks(per_patch)) {
            let errs: Vec<f64> = chunk.iter().map(|f| (f - batch.levels[i]).abs()).collect();
            e_max = errs.iter().copied().fold(e_max, f64::max);
            means.push(crate::pairwise_sum(&errs) / per_patch as f64);
        }
    }
    Ok((e_max, crate::pairwise_sum(&means) / means.len() as f64))
}
