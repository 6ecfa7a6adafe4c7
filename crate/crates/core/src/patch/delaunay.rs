//! Incremental Bowyer-Watson triangulation for small planar point sets.

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Twice the signed area of `abc`; positive when counter-clockwise.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `abc`.
pub fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

fn check_not_collinear(points: &[Point2]) -> Result<()> {
    let a = points[0];
    let d2 = |p: &Point2| (p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2);
    let b = *points
        .iter()
        .max_by(|p, q| d2(p).total_cmp(&d2(q)))
        .expect("non-empty");
    let len2 = d2(&b);
    if len2 == 0.0 {
        return Err(Error::Collinear);
    }
    let spread = points
        .iter()
        .map(|&p| orient(a, b, p).abs())
        .fold(0.0, f64::max);
    if spread <= 1e-12 * len2 {
        return Err(Error::Collinear);
    }
    Ok(())
}

/// Delaunay triangulation with counter-clockwise faces.
///
/// Points exactly on a circumcircle are treated as outside it, which
/// resolves cocircular configurations consistently. Input must be free of
/// exact duplicates (see [`perturb_duplicates`]).
pub fn triangulate(points: &[Point2]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }
    check_not_collinear(points)?;
    let n = points.len();
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    // A very large enclosing triangle behaves like vertices at infinity.
    let big = 1e5 * extent;
    let mut verts: Vec<Point2> = points.to_vec();
    verts.push([mid[0] - big, mid[1] - big]);
    verts.push([mid[0] + big, mid[1] - big]);
    verts.push([mid[0], mid[1] + big]);
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];

    for i in 0..n {
        let p = verts[i];
        let (bad, good): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris
            .into_iter()
            .partition(|t| incircle(verts[t[0]], verts[t[1]], verts[t[2]], p) > 0.0);
        tris = good;
        // cavity boundary: directed edges of bad triangles whose twin is not bad
        let mut boundary = Vec::new();
        for t in &bad {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let shared = bad
                    .iter()
                    .any(|u| (0..3).any(|m| u[m] == b && u[(m + 1) % 3] == a));
                if !shared {
                    boundary.push((a, b));
                }
            }
        }
        for (a, b) in boundary {
            tris.push([a, b, i]);
        }
    }
    tris.retain(|t| t.iter().all(|&v| v < n));
    Ok(tris)
}

/// Moves later copies of (near-)identical points by `1e-9 * scale` so the
/// set can be triangulated. Returns the number of points moved.
pub fn perturb_duplicates(points: &mut [Point2], scale: f64) -> usize {
    let tol = 1e-12 * scale;
    let eps = 1e-9 * scale;
    let mut moved = 0;
    for i in 1..points.len() {
        let mut attempt = 0u32;
        while points[..i]
            .iter()
            .any(|q| (q[0] - points[i][0]).abs() <= tol && (q[1] - points[i][1]).abs() <= tol)
        {
            let ang = 2.399_963_229_728_653 * (i as f64 + attempt as f64);
            points[i][0] += eps * ang.cos();
            points[i][1] += eps * ang.sin();
            attempt += 1;
            if attempt == 1 {
                moved += 1;
            }
        }
    }
    moved
}
