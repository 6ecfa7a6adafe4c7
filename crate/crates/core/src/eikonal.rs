//! Fitting a neural SDF to a triangle mesh.
//!
//! The loss is `l_zero * L_zero + l_eikonal * L_eikonal + l_normals * L_normals
//! + l_penalty * L_penalty` with
//!
//! * `L_zero = mean |f(x)|` over surface samples,
//! * `L_eikonal = mean | |grad f(x)| - 1 |` over surface and volume samples,
//! * `L_normals = mean (1 - cos(grad f(x), n(x)))` over surface samples,
//! * `L_penalty = mean exp(-alpha |f(x)|)` over volume samples.

use log::{debug, warn};
use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::nn::{Activation, Adam, AdamConfig, StepOutcome, Tape, Var};
use crate::rng::{Rng, SeedStream};
use crate::sampling::uniform_in_domain;
use crate::sdf::{points_to_array, NeuralSdf, ScalarField, SDF_SOFTPLUS_BETA};
use crate::{pairwise_sum, Vec3};

/// Consecutive non-finite steps that abort a fit.
pub const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Vec3,
    /// Unit face normal of the sampled triangle.
    pub normal: Vec3,
    pub face: usize,
    pub barycentric: [f64; 3],
}

/// Area-uniform samples on the mesh surface with flat normals.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, rng: &mut Rng) -> Result<Vec<SurfaceSample>> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(Error::DegenerateMesh("mesh has no triangle with positive area".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random::<f64>() * acc;
        let mut f = cdf.partition_point(|&c| c <= t).min(cdf.len() - 1);
        while areas[f] == 0.0 {
            f = (f + 1) % areas.len();
        }
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.corners(f);
        let point = a * bary[0] + b * bary[1] + c * bary[2];
        out.push(SurfaceSample {
            point,
            normal: mesh.face_cross(f).normalize(),
            face: f,
            barycentric: bary,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EikonalConfig {
    pub lambda_zero: f64,
    pub lambda_eikonal: f64,
    pub lambda_normals: f64,
    pub lambda_penalty: f64,
    pub alpha: f64,
    pub steps: usize,
    pub lr: f64,
    /// Steps at which the learning rate halves.
    pub lr_halving: Vec<usize>,
    pub surface_batch: usize,
    pub volume_batch: usize,
    pub hidden: usize,
    pub depth: usize,
    /// Skip into this layer; `None` disables it.
    pub skip_layer: Option<usize>,
    pub num_freqs: usize,
    pub softplus_beta: f64,
}

impl Default for EikonalConfig {
    fn default() -> Self {
        Self {
            lambda_zero: 3000.0,
            lambda_eikonal: 100.0,
            lambda_normals: 50.0,
            lambda_penalty: 3000.0,
            alpha: 100.0,
            steps: 10_000,
            lr: 1e-4,
            lr_halving: vec![1000, 2000, 5000],
            surface_batch: 4096,
            volume_batch: 4096,
            hidden: 256,
            depth: 8,
            skip_layer: Some(4),
            num_freqs: 6,
            softplus_beta: SDF_SOFTPLUS_BETA,
        }
    }
}

impl EikonalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.surface_batch == 0 || self.volume_batch == 0 {
            return Err(Error::Config("eikonal batches must be non-empty".into()));
        }
        if !(self.lr > 0.0) || !(self.alpha > 0.0) || !(self.softplus_beta > 0.0) {
            return Err(Error::Config("lr, alpha and softplus_beta must be positive".into()));
        }
        for l in [self.lambda_zero, self.lambda_eikonal, self.lambda_normals, self.lambda_penalty] {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::Config("loss weights must be finite and non-negative".into()));
            }
        }
        self.network_spec().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn network_spec(&self) -> crate::nn::MlpSpec {
        crate::nn::MlpSpec {
            activation: Activation::Softplus {
                beta: self.softplus_beta,
            },
            num_freqs: self.num_freqs,
            ..NeuralSdf::spec(self.hidden, self.depth, self.skip_layer)
        }
    }

    /// Learning rate at `step` (0-based) after the halving schedule.
    pub fn lr_at(&self, step: usize) -> f64 {
        let halvings = self.lr_halving.iter().filter(|&&s| s <= step).count();
        self.lr * 0.5f64.powi(halvings as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EikonalLosses {
    pub zero: f64,
    pub eikonal: f64,
    pub normals: f64,
    pub penalty: f64,
}

impl EikonalLosses {
    pub fn total(&self, cfg: &EikonalConfig) -> f64 {
        cfg.lambda_zero * self.zero
            + cfg.lambda_eikonal * self.eikonal
            + cfg.lambda_normals * self.normals
            + cfg.lambda_penalty * self.penalty
    }
}

fn check_batches(surf: &[SurfaceSample], vol: &[Vec3]) -> Result<()> {
    if surf.is_empty() || vol.is_empty() {
        return Err(Error::InvalidArgument("eikonal losses need surface and volume samples".into()));
    }
    Ok(())
}

/// The four loss terms for any field, evaluated point by point.
pub fn eikonal_losses(
    field: &(impl ScalarField + ?Sized),
    surf: &[SurfaceSample],
    vol: &[Vec3],
    cfg: &EikonalConfig,
) -> Result<EikonalLosses> {
    check_batches(surf, vol)?;
    let sp: Vec<Vec3> = surf.iter().map(|s| s.point).collect();
    let (fs, gs) = field.values_and_gradients(&sp);
    let (fv, gv) = field.values_and_gradients(vol);
    let mean = |v: Vec<f64>| pairwise_sum(&v) / v.len() as f64;
    let zero = mean(fs.iter().map(|f| f.abs()).collect());
    let eikonal = mean(gs.iter().chain(&gv).map(|g| (g.norm() - 1.0).abs()).collect());
    let normals = mean(
        gs.iter()
            .zip(surf)
            .map(|(g, s)| 1.0 - g.dot(&s.normal) / g.norm())
            .collect(),
    );
    let penalty = mean(fv.iter().map(|f| (-cfg.alpha * f.abs()).exp()).collect());
    Ok(EikonalLosses {
        zero,
        eikonal,
        normals,
        penalty,
    })
}

/// Loss terms recorded on a tape, in the order zero, eikonal, normals, penalty.
pub fn record_eikonal_losses<'p>(
    tape: &mut Tape<'p>,
    sdf: &'p NeuralSdf,
    surf: &[SurfaceSample],
    vol: &[Vec3],
    alpha: f64,
) -> Result<[Var; 4]> {
    check_batches(surf, vol)?;
    let (s, v) = (surf.len(), vol.len());
    let mut pts: Vec<Vec3> = surf.iter().map(|x| x.point).collect();
    pts.extend_from_slice(vol);
    let x = tape.constant(points_to_array(&pts));
    let (f, g) = sdf.record_with_gradient(tape, x);

    let fs = tape.gather_rows(f, (0..s).collect());
    let fv = tape.gather_rows(f, (s..s + v).collect());
    let afs = tape.abs(fs);
    let zero = tape.mean(afs);

    let g2 = tape.square(g);
    let g2 = tape.sum_cols(g2);
    let gn = tape.sqrt(g2);
    let dev = tape.offset(gn, -1.0);
    let dev = tape.abs(dev);
    let eikonal = tape.mean(dev);

    let normals = Array2::from_shape_fn((s, 3), |(i, k)| surf[i].normal[k]);
    let nrm = tape.constant(normals);
    let gs = tape.gather_rows(g, (0..s).collect());
    let gns = tape.gather_rows(gn, (0..s).collect());
    let dot = tape.mul(gs, nrm);
    let dot = tape.sum_cols(dot);
    let cos = tape.div(dot, gns);
    let one_minus = tape.neg(cos);
    let one_minus = tape.offset(one_minus, 1.0);
    let normals = tape.mean(one_minus);

    let afv = tape.abs(fv);
    let e = tape.scale(afv, -alpha);
    let e = tape.exp(e);
    let penalty = tape.mean(e);
    Ok([zero, eikonal, normals, penalty])
}

/// One logged optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: usize,
    pub total: f64,
    pub losses: EikonalLosses,
    pub lr: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub sdf: NeuralSdf,
    pub history: Vec<FitRecord>,
}

/// Train a neural SDF on `mesh` (already inside `[-1, 1]^3`).
pub fn fit_sdf(mesh: &TriangleMesh, cfg: &EikonalConfig, seeds: &SeedStream) -> Result<FitResult> {
    fit_sdf_with(mesh, cfg, seeds, |_, _| {})
}

/// [`fit_sdf`] with a callback after every step.
pub fn fit_sdf_with(
    mesh: &TriangleMesh,
    cfg: &EikonalConfig,
    seeds: &SeedStream,
    mut on_step: impl FnMut(&FitRecord, &NeuralSdf),
) -> Result<FitResult> {
    cfg.validate()?;
    let mut sdf = NeuralSdf::new(cfg.network_spec(), &mut seeds.rng("eikonal/init"))?;
    let mut batch_rng = seeds.rng("eikonal/batches");
    let mut adam = Adam::new(sdf.params().len(), AdamConfig::default());
    let mut history = Vec::with_capacity(cfg.steps);
    let mut bad_run = 0;
    for step in 0..cfg.steps {
        let surf = sample_mesh_surface(mesh, cfg.surface_batch, &mut batch_rng)?;
        let vol: Vec<Vec3> = (0..cfg.volume_batch).map(|_| uniform_in_domain(&mut batch_rng)).collect();
        let (losses, total, grads) = {
            let mut tape = Tape::new();
            let [z, e, n, p] = record_eikonal_losses(&mut tape, &sdf, &surf, &vol, cfg.alpha)?;
            let terms = [
                tape.scale(z, cfg.lambda_zero),
                tape.scale(e, cfg.lambda_eikonal),
                tape.scale(n, cfg.lambda_normals),
                tape.scale(p, cfg.lambda_penalty),
            ];
            let a = tape.add(terms[0], terms[1]);
            let b = tape.add(terms[2], terms[3]);
            let root = tape.add(a, b);
            let losses = EikonalLosses {
                zero: tape.scalar(z),
                eikonal: tape.scalar(e),
                normals: tape.scalar(n),
                penalty: tape.scalar(p),
            };
            let g = tape.backward(root)?;
            (losses, tape.scalar(root), g.params(sdf.params()))
        };
        let lr = cfg.lr_at(step);
        let outcome = if total.is_finite() {
            adam.step(sdf.params_mut().values_mut(), &grads, lr)?
        } else {
            StepOutcome::Skipped
        };
        let skipped = outcome == StepOutcome::Skipped;
        if skipped {
            bad_run += 1;
            let term = [
                ("zero", losses.zero),
                ("eikonal", losses.eikonal),
                ("normals", losses.normals),
                ("penalty", losses.penalty),
            ]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
            .unwrap_or("gradient");
            warn!("step {step}: non-finite {term}, step skipped");
            if bad_run >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    step,
                    reason: format!("{bad_run} consecutive non-finite steps (last: {term})"),
                });
            }
        } else {
            bad_run = 0;
        }
        let rec = FitRecord {
            step,
            total,
            losses,
            lr,
            skipped,
        };
        if step % 100 == 0 {
            debug!("fit step {step}: total {total:.6e}");
        }
        on_step(&rec, &sdf);
        history.push(rec);
    }
    Ok(FitResult { sdf, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use crate::sdf::AnalyticSdf;

    fn triangle() -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_centroid() {
        let s = sample_mesh_surface(&triangle(), 1000, &mut SeedStream::new(1).rng("s")).unwrap();
        let c = s.iter().fold(Vec3::zeros(), |a, x| a + x.point) / 1000.0;
        assert!((c - Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 0.02);
        let m = triangle();
        for x in &s {
            assert!((x.normal.norm() - 1.0).abs() < 1e-9);
            let [a, b, cc] = m.corners(x.face);
            let re = a * x.barycentric[0] + b * x.barycentric[1] + cc * x.barycentric[2];
            assert!((re - x.point).norm() < 1e-9);
            assert!(x.barycentric.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn area_ratio_three_to_one() {
        let m = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(1.0, 0.0, 1.0),
                Vec3::new(0.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let s = sample_mesh_surface(&m, 10_000, &mut SeedStream::new(2).rng("s")).unwrap();
        let big = s.iter().filter(|x| x.face == 0).count() as f64;
        // expected share of the larger triangle is 3/4
        assert!((big / 10_000.0 - 0.75).abs() < 0.02, "{big}");
    }

    #[test]
    fn degenerate_mesh_is_rejected() {
        let m = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            sample_mesh_surface(&m, 10, &mut SeedStream::new(1).rng("s")),
            Err(Error::DegenerateMesh(_))
        ));
    }

    #[test]
    fn exact_sphere_has_zero_losses() {
        let sphere = AnalyticSdf::sphere(1.0);
        let mut rng = SeedStream::new(3).rng("s");
        let surf: Vec<SurfaceSample> = (0..200)
            .map(|_| {
                let p = uniform_in_domain(&mut rng).normalize();
                SurfaceSample {
                    point: p,
                    normal: p,
                    face: 0,
                    barycentric: [1.0, 0.0, 0.0],
                }
            })
            .collect();
        let far: Vec<Vec3> = (0..200)
            .map(|_| uniform_in_domain(&mut rng).normalize() * 1.6)
            .collect();
        let l = eikonal_losses(&sphere, &surf, &far, &EikonalConfig::default()).unwrap();
        assert!(l.zero < 1e-15 && l.eikonal < 1e-15 && l.normals < 1e-15);
        assert!(l.penalty <= (-50.0f64).exp());
    }

    fn small_sdf(seed: u64) -> NeuralSdf {
        NeuralSdf::new(NeuralSdf::spec(16, 3, Some(1)), &mut SeedStream::new(seed).rng("i")).unwrap()
    }

    fn batch(seed: u64) -> (Vec<SurfaceSample>, Vec<Vec3>) {
        let mesh = primitives::icosphere(0.6, 2);
        let mut rng = SeedStream::new(seed).rng("b");
        let surf = sample_mesh_surface(&mesh, 64, &mut rng).unwrap();
        let vol = (0..64).map(|_| uniform_in_domain(&mut rng)).collect();
        (surf, vol)
    }

    #[test]
    fn tape_losses_match_pointwise_oracle() {
        let sdf = small_sdf(4);
        let (surf, vol) = batch(5);
        let cfg = EikonalConfig {
            alpha: 3.0,
            ..EikonalConfig::default()
        };
        let oracle = eikonal_losses(&sdf, &surf, &vol, &cfg).unwrap();
        let mut tape = Tape::new();
        let v = record_eikonal_losses(&mut tape, &sdf, &surf, &vol, cfg.alpha).unwrap();
        let got = [oracle.zero, oracle.eikonal, oracle.normals, oracle.penalty];
        for (var, want) in v.iter().zip(got) {
            let have = tape.scalar(*var);
            assert!((have - want).abs() <= 1e-12 * want.abs().max(1.0), "{have} vs {want}");
        }
    }

    #[test]
    fn lr_schedule_halves() {
        let cfg = EikonalConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(999), 1e-4);
        assert_eq!(cfg.lr_at(1000), 5e-5);
        assert_eq!(cfg.lr_at(2500), 2.5e-5);
        assert_eq!(cfg.lr_at(9999), 1.25e-5);
    }

    #[test]
    fn short_fit_is_deterministic_and_decreasing() {
        let mesh = primitives::icosphere(0.6, 2);
        let cfg = EikonalConfig {
            steps: 60,
            lr: 1e-3,
            surface_batch: 128,
            volume_batch: 128,
            hidden: 32,
            depth: 3,
            skip_layer: None,
            ..EikonalConfig::default()
        };
        let a = fit_sdf(&mesh, &cfg, &SeedStream::new(9)).unwrap();
        let b = fit_sdf(&mesh, &cfg, &SeedStream::new(9)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.sdf.params(), b.sdf.params());
        let first: f64 = a.history[..10].iter().map(|r| r.total).sum();
        let last: f64 = a.history[50..].iter().map(|r| r.total).sum();
        assert!(last < first, "{first} -> {last}");
    }
}
