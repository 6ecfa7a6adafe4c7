//! Point distributions on a 2D disk. Point 0 is always the origin.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiskDistribution {
    /// Radius and angle each uniform.
    #[default]
    UniformRandom,
    /// Standard 3D normal samples scaled by the largest norm, dropped onto the plane.
    Normal3d,
    /// Deterministic spiral: radius grows linearly, angle by a constant step.
    Linear,
    /// `|N(0,1)|` radius scaled by the largest sample, uniform angle.
    NormalRadiusUniformAngle,
}

impl DiskDistribution {
    pub const ALL: [DiskDistribution; 4] = [
        DiskDistribution::UniformRandom,
        DiskDistribution::Normal3d,
        DiskDistribution::Linear,
        DiskDistribution::NormalRadiusUniformAngle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DiskDistribution::UniformRandom => "uniform-random",
            DiskDistribution::Normal3d => "normal3d",
            DiskDistribution::Linear => "linear",
            DiskDistribution::NormalRadiusUniformAngle => "normal-radius-uniform-angle",
        }
    }
}

impl fmt::Display for DiskDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiskDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown disk distribution {s:?}")))
    }
}

/// `k` points in the disk of radius `radius`, the first being the origin.
pub fn sample_disk(k: usize, radius: f64, dist: DiskDistribution, rng: &mut Rng) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(k);
    pts.push([0.0, 0.0]);
    let rest = k.saturating_sub(1);
    let polar = |r: f64, a: f64| [r * a.cos(), r * a.sin()];
    match dist {
        DiskDistribution::UniformRandom => {
            for _ in 0..rest {
                let r = rng.random_range(0.0..radius);
                let a = rng.random_range(0.0..2.0 * PI);
                pts.push(polar(r, a));
            }
        }
        DiskDistribution::Normal3d => {
            let raw: Vec<[f64; 3]> = (0..rest)
                .map(|_| {
                    [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ]
                })
                .collect();
            let max = raw
                .iter()
                .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
                .fold(0.0, f64::max);
            let s = if max > 0.0 { radius / max } else { 0.0 };
            pts.extend(raw.iter().map(|v| [v[0] * s, v[1] * s]));
        }
        DiskDistribution::Linear => {
            for j in 1..=rest {
                let r = radius * j as f64 / rest as f64;
                pts.push(polar(r, GOLDEN_ANGLE * j as f64));
            }
        }
        DiskDistribution::NormalRadiusUniformAngle => {
            let raw: Vec<(f64, f64)> = (0..rest)
                .map(|_| {
                    let r: f64 = rng.sample(StandardNormal);
                    (r.abs(), rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            let max = raw.iter().map(|v| v.0).fold(0.0, f64::max);
            let s = if max > 0.0 { radius / max } else { 0.0 };
            pts.extend(raw.iter().map(|&(r, a)| polar(r * s, a)));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn three_points_inside_with_origin() {
        for d in DiskDistribution::ALL {
            let p = sample_disk(3, 0.5, d, &mut SeedStream::new(1).rng("d"));
            assert_eq!(p.len(), 3);
            assert_eq!(p[0], [0.0, 0.0]);
            assert!(p.iter().all(|q| (q[0] * q[0] + q[1] * q[1]).sqrt() <= 0.5 + 1e-15));
        }
    }

    #[test]
    fn uniform_radius_mean_is_half() {
        let p = sample_disk(10_000, 1.0, DiskDistribution::UniformRandom, &mut SeedStream::new(2).rng("d"));
        let mean = p.iter().map(|q| (q[0] * q[0] + q[1] * q[1]).sqrt()).sum::<f64>() / p.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn linear_is_deterministic() {
        let a = sample_disk(30, 0.03, DiskDistribution::Linear, &mut SeedStream::new(1).rng("a"));
        let b = sample_disk(30, 0.03, DiskDistribution::Linear, &mut SeedStream::new(2).rng("b"));
        assert_eq!(a, b);
    }

    #[test]
    fn names_round_trip() {
        for d in DiskDistribution::ALL {
            assert_eq!(d.name().parse::<DiskDistribution>().unwrap(), d);
        }
        assert!("bogus".parse::<DiskDistribution>().is_err());
    }
}
