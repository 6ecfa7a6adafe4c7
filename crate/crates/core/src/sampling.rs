//! Closest-point projection onto level sets and rejection/projection
//! sampling of level sets.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sdf::{ScalarField, DEGENERATE_GRADIENT};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Projection steps per point (`t_max`).
    pub iterations: usize,
    /// Rejection band: candidates with `|f - l| > band` are discarded.
    pub band: f64,
    pub max_rounds: usize,
    /// Points whose final residual `|f - l|` exceeds this are discarded.
    pub residual_tol: f64,
    /// Candidates drawn per rejection round.
    pub candidates_per_round: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            band: 0.05,
            max_rounds: 1000,
            residual_tol: 1e-3,
            candidates_per_round: 16384,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("projection needs at least one iteration".into()));
        }
        if !(self.band > 0.0) || !(self.residual_tol > 0.0) {
            return Err(Error::InvalidArgument("band and residual tolerance must be positive".into()));
        }
        if self.max_rounds == 0 || self.candidates_per_round == 0 {
            return Err(Error::InvalidArgument("sampler needs rounds and candidates".into()));
        }
        Ok(())
    }
}

/// `p - (f(p) - l) grad f(p) / |grad f(p)|`, applied `cfg.iterations` times.
pub fn project_to_level_set(
    field: &(impl ScalarField + ?Sized),
    p: Vec3,
    level: f64,
    cfg: &ProjectionConfig,
) -> Result<Vec3> {
    project_points(field, &[p], &[level], cfg.iterations)
        .pop()
        .expect("one point in, one out")
}

/// Vectorized projection of many points, each onto its own level.
/// A point whose gradient degenerates fails with the offending iterate.
pub fn project_points(
    field: &(impl ScalarField + ?Sized),
    points: &[Vec3],
    levels: &[f64],
    iterations: usize,
) -> Vec<Result<Vec3>> {
    assert_eq!(points.len(), levels.len(), "one level per point");
    let mut current: Vec<Vec3> = points.to_vec();
    let mut failed: Vec<Option<Vec3>> = vec![None; points.len()];
    // indices still being iterated
    let mut active: Vec<usize> = (0..points.len()).collect();
    for _ in 0..iterations {
        if active.is_empty() {
            break;
        }
        let pts: Vec<Vec3> = active.iter().map(|&i| current[i]).collect();
        let (vals, grads) = field.values_and_gradients(&pts);
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let g = grads[k];
            let n = g.norm();
            if !(n >= DEGENERATE_GRADIENT) || !vals[k].is_finite() {
                failed[i] = Some(current[i]);
                continue;
            }
            current[i] -= (vals[k] - levels[i]) * g / n;
            still.push(i);
        }
        active = still;
    }
    current
        .into_iter()
        .zip(failed)
        .map(|(p, f)| match f {
            Some(at) => Err(Error::ProjectionFailure(at)),
            None => Ok(p),
        })
        .collect()
}

pub fn uniform_in_domain(rng: &mut Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
        rng.random_range(-1.0..=1.0),
    )
}

/// Exactly `n` points on the `level` set inside `[-1, 1]^3`: uniform
/// candidates are kept when within the band, projected, and kept again when
/// the final residual is below `cfg.residual_tol`. Candidates whose gradient
/// degenerates are discarded.
pub fn reject_project_sample(
    field: &(impl ScalarField + ?Sized),
    n: usize,
    level: f64,
    cfg: &ProjectionConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec3>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(n);
    let mut rounds = 0;
    while out.len() < n {
        if rounds == cfg.max_rounds {
            return Err(Error::EmptyLevelSet {
                level,
                rounds: cfg.max_rounds,
            });
        }
        rounds += 1;
        let candidates: Vec<Vec3> = (0..cfg.candidates_per_round)
            .map(|_| uniform_in_domain(rng))
            .collect();
        let vals = field.values(&candidates);
        let kept: Vec<Vec3> = candidates
            .into_iter()
            .zip(vals)
            .filter(|(_, v)| (v - level).abs() <= cfg.band)
            .map(|(p, _)| p)
            .collect();
        if kept.is_empty() {
            continue;
        }
        let projected: Vec<Vec3> = project_points(field, &kept, &vec![level; kept.len()], cfg.iterations)
            .into_iter()
            .filter_map(|r| r.ok())
            .collect();
        let residuals = field.values(&projected);
        for (p, v) in projected.into_iter().zip(residuals) {
            if out.len() == n {
                break;
            }
            if (v - level).abs() <= cfg.residual_tol {
                out.push(p);
            }
        }
    }
    Ok(out)
}
