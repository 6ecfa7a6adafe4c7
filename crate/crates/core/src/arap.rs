//! As-rigid-as-possible deformation of a level set through local patches.
//!
//! Each step samples a fresh [`PatchBatch`] (handle sources first) and
//! minimizes `lambda_handle * L_handle + lambda_arap * L_arap` with Adam,
//! where
//!
//! * `L_handle = (1/h) sum |d(s_i) - t_i|^2`,
//! * `L_arap = (1/n) sum_patches sum_{i<j} w_ij |(d(v_i) - d(v_j)) - R(v_i)(v_i - v_j)|^2`
//!   with cotangent weights `w_ij` of the projected source patch.

use log::{debug, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::deform::{DeformationField, DeformedField, DeformerSpec, Variant};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::nn::{Adam, AdamConfig, StepOutcome, Tape, Var};
use crate::patch::{build_patch_batch, face_edges, DiskDistribution, PatchBatch, PatchTemplate};
use crate::rng::SeedStream;
use crate::sampling::ProjectionConfig;
use crate::sdf::{points_to_array, ScalarField};
use crate::{pairwise_sum, Vec3};

/// Cotangents are clamped to `[-COT_CLAMP, COT_CLAMP]`.
pub const COT_CLAMP: f64 = 20.0;
/// Negative edge weights are replaced by this value.
pub const MIN_WEIGHT: f64 = 1e-6;
pub const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handle {
    pub source: Vec3,
    pub target: Vec3,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandleSet {
    pub handles: Vec<Handle>,
}

impl HandleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_static(&mut self, p: Vec3) {
        self.handles.push(Handle {
            source: p,
            target: p,
            is_static: true,
        });
    }

    pub fn push_moving(&mut self, source: Vec3, target: Vec3) {
        self.handles.push(Handle {
            source,
            target,
            is_static: false,
        });
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn sources(&self) -> Vec<Vec3> {
        self.handles.iter().map(|h| h.source).collect()
    }

    pub fn targets(&self) -> Vec<Vec3> {
        self.handles.iter().map(|h| h.target).collect()
    }

    pub fn static_count(&self) -> usize {
        self.handles.iter().filter(|h| h.is_static).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformConfig {
    pub lambda_handle: f64,
    pub lambda_arap: f64,
    pub lr: f64,
    pub steps: usize,
    /// Patch origins per step.
    pub patches: usize,
    pub surface_fraction: f64,
    /// Template points per patch.
    pub density: usize,
    pub radius: f64,
    pub distribution: DiskDistribution,
    /// Draw a new disk template every step instead of once per run.
    pub resample_template: bool,
    pub projection: ProjectionConfig,
    pub deformer: DeformerSpec,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Mlp)
    }
}

impl DeformConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            lambda_handle: 1000.0,
            lambda_arap: 10.0,
            lr: 1e-3,
            steps: 1000,
            patches: 512,
            surface_fraction: 0.8,
            density: 30,
            radius: 0.03,
            distribution: DiskDistribution::UniformRandom,
            resample_template: false,
            projection: ProjectionConfig::default(),
            deformer: DeformerSpec::for_variant(variant),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lambda_handle >= 0.0 && self.lambda_arap >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.patches == 0 || self.density < 3 || !(self.radius > 0.0) {
            return Err(Error::Config("need patches >= 1, density >= 3, radius > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.surface_fraction) {
            return Err(Error::Config("surface_fraction must be in [0, 1]".into()));
        }
        self.projection.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.deformer.nets().and_then(|n| n.iter().try_for_each(|s| s.validate()))
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Cotangent weights of the undirected edges `(i, j)`, `i < j`, of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CotWeights {
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    /// Cotangents that hit the clamp.
    pub clamped: usize,
}

impl CotWeights {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok().map(|k| self.weights[k])
    }
}

fn clamped_cot(a: Vec3, b: Vec3, clamped: &mut usize) -> f64 {
    let c = a.dot(&b) / a.cross(&b).norm();
    if c.is_nan() {
        *clamped += 1;
        return COT_CLAMP;
    }
    if c.abs() > COT_CLAMP {
        *clamped += 1;
    }
    c.clamp(-COT_CLAMP, COT_CLAMP)
}

/// Weights for a given sorted edge list of `faces`.
fn weights_for_edges(vertices: &[Vec3], faces: &[[usize; 3]], edges: &[(usize, usize)]) -> (Vec<f64>, usize) {
    let mut w = vec![0.0; edges.len()];
    let mut clamped = 0;
    for f in faces {
        for c in 0..3 {
            let (o, i, j) = (f[c], f[(c + 1) % 3], f[(c + 2) % 3]);
            let cot = clamped_cot(vertices[i] - vertices[o], vertices[j] - vertices[o], &mut clamped);
            let key = (i.min(j), i.max(j));
            let k = edges.binary_search(&key).expect("edge of a face");
            w[k] += 0.5 * cot;
        }
    }
    for x in &mut w {
        if *x < 0.0 {
            *x = MIN_WEIGHT;
        }
    }
    (w, clamped)
}

/// `w_ij = 1/2 sum cot(opposite angle)` over the faces incident to each edge.
pub fn cotangent_weights(vertices: &[Vec3], faces: &[[usize; 3]]) -> CotWeights {
    let edges = face_edges(faces);
    let (weights, clamped) = weights_for_edges(vertices, faces, &edges);
    CotWeights {
        edges,
        weights,
        clamped,
    }
}

/// Per-patch weights over the batch's shared edge list, patch-major.
pub fn batch_weights(batch: &PatchBatch) -> (Vec<(usize, usize)>, Vec<f64>, usize) {
    let edges = batch.edges();
    let mut all = Vec::with_capacity(edges.len() * batch.len());
    let mut clamped = 0;
    for p in 0..batch.len() {
        let (w, c) = weights_for_edges(batch.patch(p), &batch.faces, &edges);
        all.extend(w);
        clamped += c;
    }
    (edges, all, clamped)
}

/// Tape nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub arap: Var,
    pub handle: Option<Var>,
    /// `h x 1` squared handle residuals.
    pub handle_sq: Option<Var>,
}

/// Record `L_arap` over `batch` and, if `handles` is non-empty, `L_handle`,
/// sharing one deformer evaluation.
pub fn record_losses<'p>(
    tape: &mut Tape<'p>,
    d: &'p DeformationField,
    batch: &PatchBatch,
    weights: &[f64],
    handles: &HandleSet,
) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("ARAP energy needs at least one patch".into()));
    }
    let edges = batch.edges();
    if weights.len() != edges.len() * batch.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} patch edges",
            weights.len(),
            edges.len() * batch.len()
        )));
    }
    let nv = batch.vertices.len();
    let mut pts = batch.vertices.clone();
    pts.extend(handles.sources());
    let x = tape.constant(points_to_array(&pts));
    let dv = d.record(tape, x);

    let k = batch.k;
    let (mut gi, mut gj) = (Vec::with_capacity(weights.len()), Vec::with_capacity(weights.len()));
    for p in 0..batch.len() {
        for &(i, j) in &edges {
            gi.push(p * k + i);
            gj.push(p * k + j);
        }
    }
    let src = Array2::from_shape_fn((gi.len(), 3), |(e, c)| batch.vertices[gi[e]][c] - batch.vertices[gj[e]][c]);
    let yi = tape.gather_rows(dv.y, gi.clone());
    let yj = tape.gather_rows(dv.y, gj);
    let dy = tape.sub(yi, yj);
    let r = dv.r;
    let rflat = tape.concat(&[r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]]);
    let ri = tape.gather_rows(rflat, gi);
    let src_cols: Vec<Var> = (0..3).map(|c| tape.constant(src.column(c).to_owned().insert_axis(ndarray::Axis(1)))).collect();
    let mut rows = Vec::with_capacity(3);
    for a in 0..3 {
        let mut acc: Option<Var> = None;
        for (b, &sc) in src_cols.iter().enumerate() {
            let rab = tape.column(ri, 3 * a + b);
            let t = tape.mul(rab, sc);
            acc = Some(match acc {
                None => t,
                Some(s) => tape.add(s, t),
            });
        }
        rows.push(acc.expect("three terms"));
    }
    let re = tape.concat(&rows);
    let res = tape.sub(dy, re);
    let sq = tape.square(res);
    let sq = tape.sum_cols(sq);
    let w = tape.constant(Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("column"));
    let wsq = tape.mul(sq, w);
    let total = tape.sum(wsq);
    let arap = tape.scale(total, 1.0 / batch.len() as f64);

    let (handle, handle_sq) = if handles.is_empty() {
        (None, None)
    } else {
        let h = handles.len();
        let yh = tape.gather_rows(dv.y, (nv..nv + h).collect());
        let t = tape.constant(points_to_array(&handles.targets()));
        let r = tape.sub(yh, t);
        let r = tape.square(r);
        let r = tape.sum_cols(r);
        (Some(tape.mean(r)), Some(r))
    };
    Ok(LossVars {
        arap,
        handle,
        handle_sq,
    })
}

/// `L_arap` with source cotangent weights.
pub fn arap_energy(d: &DeformationField, batch: &PatchBatch) -> Result<f64> {
    let (_, w, _) = batch_weights(batch);
    let mut tape = Tape::new();
    let v = record_losses(&mut tape, d, batch, &w, &HandleSet::new())?;
    Ok(tape.scalar(v.arap))
}

/// Mean squared handle residual, static and moving pooled.
pub fn handle_energy(d: &DeformationField, handles: &HandleSet) -> Result<f64> {
    if handles.is_empty() {
        return Err(Error::InvalidArgument("handle energy needs at least one handle".into()));
    }
    let ys = d.apply_batch(&handles.sources());
    let sq: Vec<f64> = ys
        .iter()
        .zip(&handles.handles)
        .map(|(y, h)| (y - h.target).norm_squared())
        .collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub arap: f64,
    /// Pooled `L_handle`.
    pub handle: f64,
    /// Mean squared residual over static handles (0 if none).
    pub handle_static: f64,
    /// Mean squared residual over moving handles (0 if none).
    pub handle_moving: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct DeformResult {
    pub deformer: DeformationField,
    pub history: Vec<LossRecord>,
}

/// Train a deformer from `cfg.deformer` (identity initialized).
pub fn optimize_deformation(
    field: &(impl ScalarField + ?Sized),
    handles: &HandleSet,
    cfg: &DeformConfig,
    seeds: &SeedStream,
) -> Result<DeformResult> {
    let d = DeformationField::new(cfg.deformer.clone(), &mut seeds.rng("deform/init"))?;
    optimize_deformation_from(field, d, handles, cfg, seeds, |_, _| {})
}

/// Train `d` in place of a fresh deformer; `on_step` sees every record and
/// the current deformer.
pub fn optimize_deformation_from(
    field: &(impl ScalarField + ?Sized),
    mut d: DeformationField,
    handles: &HandleSet,
    cfg: &DeformConfig,
    seeds: &SeedStream,
    mut on_step: impl FnMut(&LossRecord, &DeformationField),
) -> Result<DeformResult> {
    cfg.validate()?;
    if handles.is_empty() {
        return Err(Error::InvalidArgument("deformation needs at least one handle".into()));
    }
    let mut tmpl_rng = seeds.rng("deform/template");
    let mut batch_rng = seeds.rng("deform/batches");
    let mut tmpl = PatchTemplate::new(cfg.density, cfg.radius, cfg.distribution, &mut tmpl_rng)?;
    let sources = handles.sources();
    let statics: Vec<bool> = handles.handles.iter().map(|h| h.is_static).collect();
    let mut adam = Adam::new(d.params().len(), AdamConfig::default());
    let mut history = Vec::with_capacity(cfg.steps);
    let mut bad_run = 0;
    for step in 0..cfg.steps {
        if cfg.resample_template && step > 0 {
            tmpl = PatchTemplate::new(cfg.density, cfg.radius, cfg.distribution, &mut tmpl_rng)?;
        }
        let batch = build_patch_batch(
            field,
            &tmpl,
            cfg.patches,
            cfg.surface_fraction,
            &sources,
            &cfg.projection,
            &mut batch_rng,
        )?;
        let (_, weights, clamped) = batch_weights(&batch);
        if clamped > 0 {
            debug!("step {step}: {clamped} cotangents clamped");
        }
        let (rec, grads) = {
            let mut tape = Tape::new();
            let v = record_losses(&mut tape, &d, &batch, &weights, handles)?;
            let handle = v.handle.expect("handles present");
            let a = tape.scale(handle, cfg.lambda_handle);
            let b = tape.scale(v.arap, cfg.lambda_arap);
            let root = tape.add(a, b);
            let sq = tape.value(v.handle_sq.expect("handles present"));
            let split = |want: bool| {
                let vals: Vec<f64> = sq
                    .iter()
                    .zip(&statics)
                    .filter(|(_, &s)| s == want)
                    .map(|(v, _)| *v)
                    .collect();
                if vals.is_empty() {
                    0.0
                } else {
                    pairwise_sum(&vals) / vals.len() as f64
                }
            };
            let rec = LossRecord {
                step,
                total: tape.scalar(root),
                arap: tape.scalar(v.arap),
                handle: tape.scalar(handle),
                handle_static: split(true),
                handle_moving: split(false),
                skipped: false,
            };
            let g = tape.backward(root)?;
            (rec, g.params(d.params()))
        };
        let outcome = if rec.total.is_finite() {
            adam.step(d.params_mut().values_mut(), &grads, cfg.lr)?
        } else {
            StepOutcome::Skipped
        };
        let skipped = outcome == StepOutcome::Skipped;
        let rec = LossRecord { skipped, ..rec };
        if skipped {
            bad_run += 1;
            let term = if !rec.arap.is_finite() {
                "arap"
            } else if !rec.handle.is_finite() {
                "handle"
            } else {
                "gradient"
            };
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
        if step % 100 == 0 {
            debug!("deform step {step}: total {:.6e}", rec.total);
        }
        on_step(&rec, &d);
        history.push(rec);
    }
    Ok(DeformResult { deformer: d, history })
}

/// Map every vertex through `d`; faces are kept.
pub fn deform_mesh(mesh: &TriangleMesh, d: &DeformationField) -> TriangleMesh {
    TriangleMesh {
        vertices: d.apply_batch(&mesh.vertices),
        faces: mesh.faces.clone(),
        normals: None,
    }
}

/// `g = f o d^{-1}`; requires the invertible deformer.
pub fn deformed_field<F: ScalarField>(field: F, d: DeformationField) -> Result<DeformedField<F>> {
    DeformedField::new(field, d)
}
