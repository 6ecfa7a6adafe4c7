//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use iarap_core::arap::{DeformConfig, HandleSet};
use iarap_core::deform::{DeformerSpec, Variant};
use iarap_core::sdf::AnalyticSdf;
use iarap_core::{Mat3, Vec3};

pub const SPHERE_RADIUS: f64 = 0.5;

pub fn sphere() -> AnalyticSdf {
    AnalyticSdf::sphere(SPHERE_RADIUS)
}

pub fn rotation(axis: Vec3, degrees: f64) -> Mat3 {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), degrees.to_radians()).into_inner()
}

/// Axis of the rigid-recovery fixture.
pub fn fixture_axis() -> Vec3 {
    Vec3::new(0.3, 0.2, 1.0)
}

/// Eight moving handles at the cube-corner directions of the sphere, each
/// driven by a rotation of `degrees` about [`fixture_axis`].
pub fn rotation_handles(degrees: f64) -> (HandleSet, Mat3) {
    let r = rotation(fixture_axis(), degrees);
    let mut h = HandleSet::new();
    for i in 0..8 {
        let s = |b: usize| if i & (1 << b) == 0 { -1.0 } else { 1.0 };
        let p = Vec3::new(s(0), s(1), s(2)).normalize() * SPHERE_RADIUS;
        h.push_moving(p, r * p);
    }
    (h, r)
}

/// North cap pulled up, south cap held.
pub fn stretch_handles(pull: f64) -> HandleSet {
    let mut h = HandleSet::new();
    let cap = |z: f64| {
        let mut pts = vec![Vec3::new(0.0, 0.0, z)];
        for k in 0..3 {
            let a = k as f64 * std::f64::consts::TAU / 3.0;
            let polar = 0.35f64;
            pts.push(Vec3::new(polar.sin() * a.cos(), polar.sin() * a.sin(), z.signum() * polar.cos()) * SPHERE_RADIUS);
        }
        pts
    };
    for p in cap(SPHERE_RADIUS) {
        h.push_moving(p, p + Vec3::new(0.0, 0.0, pull));
    }
    for p in cap(-SPHERE_RADIUS) {
        h.push_static(p);
    }
    h
}

/// Two caps on opposite sides of the sphere driven onto the same targets.
pub fn fold_handles() -> (HandleSet, Vec<(Vec3, Vec3)>) {
    let mut h = HandleSet::new();
    let mut pairs = Vec::new();
    let offsets = [Vec3::zeros(), Vec3::new(0.0, 0.08, 0.0), Vec3::new(0.0, 0.0, 0.08)];
    for o in offsets {
        let a = (Vec3::new(1.0, 0.0, 0.0) * SPHERE_RADIUS + o).normalize() * SPHERE_RADIUS;
        let b = (Vec3::new(-1.0, 0.0, 0.0) * SPHERE_RADIUS + o).normalize() * SPHERE_RADIUS;
        let target = Vec3::new(0.0, 0.0, 0.0) + o;
        h.push_moving(a, target);
        h.push_moving(b, target);
        pairs.push((a, b));
    }
    (h, pairs)
}

/// Reduced-width deformer for single-core runs.
pub fn desk_deformer(variant: Variant) -> DeformerSpec {
    match variant {
        Variant::Mlp => DeformerSpec {
            hidden: 64,
            depth: 4,
            skip_layer: None,
            ..DeformerSpec::mlp()
        },
        Variant::Invertible => DeformerSpec {
            hidden: 32,
            depth: 3,
            ..DeformerSpec::invertible()
        },
    }
}

/// Paper optimization defaults with a reduced deformer and patch count.
pub fn desk_deform_config(variant: Variant) -> DeformConfig {
    DeformConfig {
        patches: 128,
        deformer: desk_deformer(variant),
        ..DeformConfig::for_variant(variant)
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub worst_rel: f64,
    pub coords: usize,
    /// Coordinates whose gradient magnitude exceeds [`GRAD_FLOOR`].
    pub significant: usize,
}

/// Denominator floor of the relative gradient error.
pub const GRAD_FLOOR: f64 = 1e-7;
pub const FD_STEP: f64 = 1e-5;

/// `|a - fd| / max(|a|, |fd|, GRAD_FLOOR)` over `count` random coordinates.
pub fn grad_check(
    theta: &[f64],
    analytic: &[f64],
    count: usize,
    seed: u64,
    loss: impl Fn(&[f64]) -> f64,
) -> GradCheck {
    let mut rng = iarap_core::SeedStream::new(seed).rng("gradcheck/coords");
    let coords = rand::seq::index::sample(&mut rng, theta.len(), count.min(theta.len()));
    let mut worst = 0.0f64;
    let mut significant = 0;
    let mut work = theta.to_vec();
    for i in coords.iter() {
        let h = FD_STEP * theta[i].abs().max(1.0);
        work[i] = theta[i] + h;
        let up = loss(&work);
        work[i] = theta[i] - h;
        let down = loss(&work);
        work[i] = theta[i];
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_FLOOR);
        worst = worst.max(rel);
        if a.abs() > GRAD_FLOOR {
            significant += 1;
        }
    }
    GradCheck {
        worst_rel: worst,
        coords: coords.len(),
        significant,
    }
}

/// Perturb every parameter by `scale * U(-1, 1)`.
pub fn jitter(values: &mut [f64], scale: f64, seed: u64) {
    use rand::Rng;
    let mut rng = iarap_core::SeedStream::new(seed).rng("gradcheck/jitter");
    for v in values {
        *v += scale * rng.random_range(-1.0..1.0);
    }
}

pub mod losses {
    //! Analytic and finite-difference gradients of the six training losses.

    use super::*;
    use iarap_core::arap::{arap_energy, batch_weights, handle_energy, record_losses};
    use iarap_core::deform::DeformationField;
    use iarap_core::eikonal::{eikonal_losses, record_eikonal_losses, sample_mesh_surface, EikonalConfig, SurfaceSample};
    use iarap_core::mesh::primitives::icosphere;
    use iarap_core::nn::Tape;
    use iarap_core::patch::{build_patch_batch, PatchBatch, PatchTemplate};
    use iarap_core::sampling::{uniform_in_domain, ProjectionConfig};
    use iarap_core::sdf::NeuralSdf;
    use iarap_core::{ScalarField, SeedStream};

    pub const EIKONAL_NAMES: [&str; 4] = ["L_zero", "L_eikonal", "L_normals", "L_penalty"];

    pub struct EikonalFixture {
        pub sdf: NeuralSdf,
        pub surf: Vec<SurfaceSample>,
        pub vol: Vec<Vec3>,
        pub cfg: EikonalConfig,
    }

    /// A small random SDF shifted so its zero set crosses the volume batch.
    pub fn eikonal_fixture(seed: u64) -> EikonalFixture {
        let seeds = SeedStream::new(seed);
        let mut sdf = NeuralSdf::new(NeuralSdf::spec(32, 4, Some(2)), &mut seeds.rng("fixture/sdf")).unwrap();
        let surf = sample_mesh_surface(&icosphere(0.6, 2), 128, &mut seeds.rng("fixture/surf")).unwrap();
        let mut rng = seeds.rng("fixture/vol");
        let vol: Vec<Vec3> = (0..128).map(|_| uniform_in_domain(&mut rng)).collect();
        let f = sdf.values(&vol);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let out = sdf.params().layer_index(0, 3);
        sdf.params_mut().bias_mut(out)[0] -= mean;
        let cfg = EikonalConfig {
            alpha: 10.0,
            ..EikonalConfig::default()
        };
        EikonalFixture { sdf, surf, vol, cfg }
    }

    fn eikonal_term(l: &iarap_core::eikonal::EikonalLosses, k: usize) -> f64 {
        [l.zero, l.eikonal, l.normals, l.penalty][k]
    }

    /// Gradient checks of the four SDF losses.
    pub fn check_eikonal(fx: &EikonalFixture, count: usize) -> Vec<(&'static str, GradCheck)> {
        let mut out = Vec::new();
        for (k, name) in EIKONAL_NAMES.iter().enumerate() {
            let analytic = {
                let mut tape = Tape::new();
                let vars = record_eikonal_losses(&mut tape, &fx.sdf, &fx.surf, &fx.vol, fx.cfg.alpha).unwrap();
                tape.backward(vars[k]).unwrap().params(fx.sdf.params())
            };
            let theta = fx.sdf.params().values().to_vec();
            let check = grad_check(&theta, &analytic, count, 11 + k as u64, |p| {
                let mut s = fx.sdf.clone();
                s.params_mut().values_mut().copy_from_slice(p);
                eikonal_term(&eikonal_losses(&s, &fx.surf, &fx.vol, &fx.cfg).unwrap(), k)
            });
            out.push((*name, check));
        }
        out
    }

    pub struct ArapFixture {
        pub d: DeformationField,
        pub batch: PatchBatch,
        pub handles: HandleSet,
    }

    /// A jittered deformer with a patch batch and handles on the sphere.
    pub fn arap_fixture(variant: Variant, seed: u64) -> ArapFixture {
        let seeds = SeedStream::new(seed);
        let mut d = DeformationField::new(desk_deformer(variant), &mut seeds.rng("fixture/deformer")).unwrap();
        jitter(d.params_mut().values_mut(), 0.05, seed);
        let (mut handles, _) = rotation_handles(30.0);
        handles.push_static(Vec3::new(0.0, 0.0, -SPHERE_RADIUS));
        let mut rng = seeds.rng("fixture/batch");
        let tmpl = PatchTemplate::new(30, 0.05, Default::default(), &mut rng).unwrap();
        let batch = build_patch_batch(
            &sphere(),
            &tmpl,
            16,
            0.8,
            &handles.sources(),
            &ProjectionConfig::default(),
            &mut rng,
        )
        .unwrap();
        ArapFixture { d, batch, handles }
    }

    /// Gradient checks of `L_arap` and `L_handle`.
    pub fn check_arap(fx: &ArapFixture, count: usize) -> Vec<(&'static str, GradCheck)> {
        let (_, w, _) = batch_weights(&fx.batch);
        let (ga, gh) = {
            let mut tape = Tape::new();
            let v = record_losses(&mut tape, &fx.d, &fx.batch, &w, &fx.handles).unwrap();
            let ga = tape.backward(v.arap).unwrap().params(fx.d.params());
            let gh = tape.backward(v.handle.unwrap()).unwrap().params(fx.d.params());
            (ga, gh)
        };
        let theta = fx.d.params().values().to_vec();
        let with = |p: &[f64]| {
            let mut d = fx.d.clone();
            d.params_mut().values_mut().copy_from_slice(p);
            d
        };
        vec![
            (
                "L_arap",
                grad_check(&theta, &ga, count, 21, |p| arap_energy(&with(p), &fx.batch).unwrap()),
            ),
            (
                "L_handle",
                grad_check(&theta, &gh, count, 22, |p| handle_energy(&with(p), &fx.handles).unwrap()),
            ),
        ]
    }
}
