//! Deformation fields `d(x) = R(x) x + t(x)`.
//!
//! Two variants share one interface:
//!
//! * [`Variant::Mlp`]: a coordinate network whose six outputs are Euler
//!   angles `(alpha, beta, gamma)` and a translation. The rotation is
//!   `R = Rz(gamma) Ry(beta) Rx(alpha)` (intrinsic XYZ).
//! * [`Variant::Invertible`]: a stack of coupling layers. Layer `i` picks the
//!   focus coordinate `w = x[i % 3]` and the remaining pair `(u, v)` in
//!   increasing axis order, then applies
//!   `w' = w + t_w(u, v)` and `(u', v') = Rot(theta(w')) (u, v) + t_uv(w')`.
//!   `R(x)` is the ordered product of the per-layer plane rotations and
//!   `t(x) = d(x) - R(x) x`. The inverse is analytic and the Jacobian
//!   determinant is one.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Checkpoint, MlpSpec, ParameterBlock, Tape, Var};
use crate::rng::Rng;
use crate::sdf::{array_to_points, points_to_array, ScalarField, EVAL_CHUNK};
use crate::{Mat3, Vec3};

pub const DEFORMER_CHECKPOINT_KIND: &str = "deformer";
pub const EULER_CONVENTION: &str = "intrinsic-xyz";

/// `Rz(gamma) Ry(beta) Rx(alpha)` for `angles = [alpha, beta, gamma]`.
pub fn euler_to_rotation(angles: [f64; 3]) -> Mat3 {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sg, cg) = angles[2].sin_cos();
    Mat3::new(
        cg * cb,
        cg * sb * sa - sg * ca,
        cg * sb * ca + sg * sa,
        sg * cb,
        sg * sb * sa + cg * ca,
        sg * sb * ca - cg * sa,
        -sb,
        cb * sa,
        cb * ca,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mlp,
    Invertible,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Mlp => "mlp",
            Variant::Invertible => "invertible",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Variant::Mlp),
            "invertible" => Ok(Variant::Invertible),
            _ => Err(Error::Config(format!("unknown deformer variant {s:?}"))),
        }
    }
}

/// Architecture of a deformation field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformerSpec {
    pub variant: Variant,
    /// Hidden width of every network.
    pub hidden: usize,
    /// Linear layers of the coordinate network, or of each coupling block.
    pub depth: usize,
    /// Skip into this layer (coordinate network only).
    pub skip_layer: Option<usize>,
    pub num_freqs: usize,
    /// Coupling layers (invertible only).
    pub coupling_layers: usize,
    pub activation: Activation,
}

impl DeformerSpec {
    /// 8 layers of width 256, skip into layer 4.
    pub fn mlp() -> Self {
        Self {
            variant: Variant::Mlp,
            hidden: 256,
            depth: 8,
            skip_layer: Some(4),
            num_freqs: 6,
            coupling_layers: 0,
            activation: Activation::default(),
        }
    }

    /// 6 coupling layers of 3-layer blocks with width 256.
    pub fn invertible() -> Self {
        Self {
            variant: Variant::Invertible,
            hidden: 256,
            depth: 3,
            skip_layer: None,
            num_freqs: 6,
            coupling_layers: 6,
            activation: Activation::default(),
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Mlp => Self::mlp(),
            Variant::Invertible => Self::invertible(),
        }
    }

    fn net(&self, input_dim: usize, output_dim: usize, skip_layer: Option<usize>) -> MlpSpec {
        MlpSpec {
            input_dim,
            num_freqs: self.num_freqs,
            hidden: self.hidden,
            depth: self.depth,
            output_dim,
            skip_layer,
            activation: self.activation,
        }
    }

    /// Network specs in block order. For the invertible variant, nets `2i`
    /// and `2i + 1` are the two blocks of coupling layer `i`.
    pub fn nets(&self) -> Result<Vec<MlpSpec>> {
        match self.variant {
            Variant::Mlp => Ok(vec![self.net(3, 6, self.skip_layer)]),
            Variant::Invertible => {
                if self.coupling_layers == 0 {
                    return Err(Error::Shape("invertible field needs coupling layers".into()));
                }
                Ok((0..self.coupling_layers)
                    .flat_map(|_| [self.net(2, 1, None), self.net(1, 3, None)])
                    .collect())
            }
        }
    }
}

/// `d(x) = R x + t` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotoTranslation {
    pub r: Mat3,
    pub t: Vec3,
}

/// Tape output of a deformation: `y` is `B x 3`, `r[i][j]` is the `B x 1`
/// column of rotation entry `(i, j)`.
#[derive(Debug, Clone, Copy)]
pub struct DeformVars {
    pub y: Var,
    pub r: [[Var; 3]; 3],
}

fn split_axes(layer: usize) -> (usize, usize, usize) {
    match layer % 3 {
        0 => (0, 1, 2),
        1 => (1, 0, 2),
        _ => (2, 0, 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    spec: DeformerSpec,
    params: ParameterBlock,
}

impl DeformationField {
    /// Random hidden layers, zero output layers: the identity map.
    pub fn new(spec: DeformerSpec, rng: &mut Rng) -> Result<Self> {
        let mut params = ParameterBlock::new(spec.nets()?)?;
        params.init_uniform(rng);
        let mut d = Self { spec, params };
        d.init_identity();
        Ok(d)
    }

    pub fn from_params(spec: DeformerSpec, params: ParameterBlock) -> Result<Self> {
        if params.nets() != spec.nets()?.as_slice() {
            return Err(Error::Shape("parameters do not match the deformer spec".into()));
        }
        Ok(Self { spec, params })
    }

    /// Zero the weights and bias of every output layer.
    pub fn init_identity(&mut self) {
        for net in 0..self.params.nets().len() {
            self.params.zero_output_layer(net);
        }
    }

    pub fn spec(&self) -> &DeformerSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn params(&self) -> &ParameterBlock {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterBlock {
        &mut self.params
    }

    /// Record `d` and `R` on a `B x 3` batch.
    pub fn record<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> DeformVars {
        match self.spec.variant {
            Variant::Mlp => self.record_mlp(tape, x),
            Variant::Invertible => self.record_coupling(tape, x, false),
        }
    }

    fn record_mlp<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> DeformVars {
        let out = nn::forward(tape, &self.params, 0, x);
        let a = tape.column(out, 0);
        let b = tape.column(out, 1);
        let g = tape.column(out, 2);
        let (sa, ca) = (tape.sin(a), tape.cos(a));
        let (sb, cb) = (tape.sin(b), tape.cos(b));
        let (sg, cg) = (tape.sin(g), tape.cos(g));
        let sbsa = tape.mul(sb, sa);
        let sbca = tape.mul(sb, ca);
        let r00 = tape.mul(cg, cb);
        let t = tape.mul(cg, sbsa);
        let u = tape.mul(sg, ca);
        let r01 = tape.sub(t, u);
        let t = tape.mul(cg, sbca);
        let u = tape.mul(sg, sa);
        let r02 = tape.add(t, u);
        let r10 = tape.mul(sg, cb);
        let t = tape.mul(sg, sbsa);
        let u = tape.mul(cg, ca);
        let r11 = tape.add(t, u);
        let t = tape.mul(sg, sbca);
        let u = tape.mul(cg, sa);
        let r12 = tape.sub(t, u);
        let r20 = tape.neg(sb);
        let r21 = tape.mul(cb, sa);
        let r22 = tape.mul(cb, ca);
        let r = [[r00, r01, r02], [r10, r11, r12], [r20, r21, r22]];
        let xs = [tape.column(x, 0), tape.column(x, 1), tape.column(x, 2)];
        let mut ys = [x; 3];
        for (i, yi) in ys.iter_mut().enumerate() {
            let mut acc = tape.column(out, 3 + i);
            for (j, &xj) in xs.iter().enumerate() {
                let p = tape.mul(r[i][j], xj);
                acc = tape.add(acc, p);
            }
            *yi = acc;
        }
        let y = tape.concat(&ys);
        DeformVars { y, r }
    }

    /// Forward pass through the coupling stack, or with `inverse` the
    /// inverse pass (whose rotation entries are then left at identity).
    fn record_coupling<'p>(&'p self, tape: &mut Tape<'p>, x: Var, inverse: bool) -> DeformVars {
        let rows = tape.value(x).nrows();
        let zero = tape.constant(Array2::zeros((rows, 1)));
        let one = tape.constant(Array2::ones((rows, 1)));
        let mut r = [[zero; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = one;
        }
        let mut p = [tape.column(x, 0), tape.column(x, 1), tape.column(x, 2)];
        let layers = self.spec.coupling_layers;
        let order: Vec<usize> = if inverse {
            (0..layers).rev().collect()
        } else {
            (0..layers).collect()
        };
        for i in order {
            let (w, a, b) = split_axes(i);
            if !inverse {
                let uv = tape.concat(&[p[a], p[b]]);
                let tw = nn::forward(tape, &self.params, 2 * i, uv);
                p[w] = tape.add(p[w], tw);
                let head = nn::forward(tape, &self.params, 2 * i + 1, p[w]);
                let theta = tape.column(head, 0);
                let (s, c) = (tape.sin(theta), tape.cos(theta));
                let (ta, tb) = (tape.column(head, 1), tape.column(head, 2));
                let (u, v) = (p[a], p[b]);
                let cu = tape.mul(c, u);
                let sv = tape.mul(s, v);
                let su = tape.mul(s, u);
                let cv = tape.mul(c, v);
                let nu = tape.sub(cu, sv);
                let nv = tape.add(su, cv);
                p[a] = tape.add(nu, ta);
                p[b] = tape.add(nv, tb);
                // rows a and b of the accumulated rotation turn by theta
                for j in 0..3 {
                    let (ra, rb) = (r[a][j], r[b][j]);
                    let cra = tape.mul(c, ra);
                    let srb = tape.mul(s, rb);
                    let sra = tape.mul(s, ra);
                    let crb = tape.mul(c, rb);
                    r[a][j] = tape.sub(cra, srb);
                    r[b][j] = tape.add(sra, crb);
                }
            } else {
                let head = nn::forward(tape, &self.params, 2 * i + 1, p[w]);
                let theta = tape.column(head, 0);
                let (s, c) = (tape.sin(theta), tape.cos(theta));
                let (ta, tb) = (tape.column(head, 1), tape.column(head, 2));
                let u = tape.sub(p[a], ta);
                let v = tape.sub(p[b], tb);
                let cu = tape.mul(c, u);
                let sv = tape.mul(s, v);
                let su = tape.mul(s, u);
                let cv = tape.mul(c, v);
                p[a] = tape.add(cu, sv);
                let nsu = tape.neg(su);
                p[b] = tape.add(nsu, cv);
                let uv = tape.concat(&[p[a], p[b]]);
                let tw = nn::forward(tape, &self.params, 2 * i, uv);
                p[w] = tape.sub(p[w], tw);
            }
        }
        let y = tape.concat(&p);
        DeformVars { y, r }
    }

    /// Record `d^{-1}` on a `B x 3` batch (invertible variant only).
    pub fn record_inverse<'p>(&'p self, tape: &mut Tape<'p>, y: Var) -> Result<Var> {
        match self.spec.variant {
            Variant::Mlp => Err(Error::Unsupported("the coordinate-network deformer has no inverse")),
            Variant::Invertible => Ok(self.record_coupling(tape, y, true).y),
        }
    }

    /// `d(x)` and the roto-translation at every point.
    pub fn transforms(&self, points: &[Vec3]) -> Vec<(Vec3, RotoTranslation)> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let x = tape.constant(points_to_array(chunk));
            let dv = self.record(&mut tape, x);
            let ys = array_to_points(tape.value(dv.y));
            for (k, (p, y)) in chunk.iter().zip(ys).enumerate() {
                let r = Mat3::from_fn(|i, j| tape.value(dv.r[i][j])[[k, 0]]);
                let t = y - r * p;
                out.push((y, RotoTranslation { r, t }));
            }
        }
        out
    }

    pub fn apply(&self, x: &Vec3) -> (Vec3, RotoTranslation) {
        self.transforms(std::slice::from_ref(x))[0]
    }

    pub fn apply_batch(&self, points: &[Vec3]) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let x = tape.constant(points_to_array(chunk));
            let dv = self.record(&mut tape, x);
            out.extend(array_to_points(tape.value(dv.y)));
        }
        out
    }

    pub fn inverse_batch(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let y = tape.constant(points_to_array(chunk));
            let x = self.record_inverse(&mut tape, y)?;
            out.extend(array_to_points(tape.value(x)));
        }
        Ok(out)
    }

    pub fn inverse(&self, y: &Vec3) -> Result<Vec3> {
        Ok(self.inverse_batch(std::slice::from_ref(y))?[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: DEFORMER_CHECKPOINT_KIND.into(),
            meta: serde_json::json!({
                "variant": self.spec.variant.name(),
                "euler_convention": EULER_CONVENTION,
                "spec": self.spec,
            }),
            block: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != DEFORMER_CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a deformer checkpoint, found {:?}",
                ck.kind
            )));
        }
        let spec: DeformerSpec = ck
            .meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("deformer checkpoint without spec".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("spec: {e}"))))?;
        let convention = ck.meta.get("euler_convention").and_then(|v| v.as_str());
        if spec.variant == Variant::Mlp && convention != Some(EULER_CONVENTION) {
            return Err(Error::Checkpoint(format!(
                "unsupported Euler convention {convention:?}"
            )));
        }
        Self::from_params(spec, ck.block).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// `g(x) = f(d^{-1}(x))` for an invertible deformer.
#[derive(Debug, Clone)]
pub struct DeformedField<F> {
    source: F,
    deformer: DeformationField,
}

impl<F: ScalarField> DeformedField<F> {
    pub fn new(source: F, deformer: DeformationField) -> Result<Self> {
        if deformer.variant() != Variant::Invertible {
            return Err(Error::Unsupported(
                "a deformed field needs the invertible deformer",
            ));
        }
        Ok(Self { source, deformer })
    }

    pub fn source(&self) -> &F {
        &self.source
    }

    pub fn deformer(&self) -> &DeformationField {
        &self.deformer
    }
}

impl<F: ScalarField> ScalarField for DeformedField<F> {
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        let pre = self.deformer.inverse_batch(points).expect("invertible deformer");
        self.source.values(&pre)
    }

    fn values_and_gradients(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        let mut vals = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let y = tape.input(points_to_array(chunk));
            let x = self.deformer.record_inverse(&mut tape, y).expect("invertible deformer");
            let pre = array_to_points(tape.value(x));
            let (f, gf) = self.source.values_and_gradients(&pre);
            // grad g = J_{d^-1}^T grad f, one vector-Jacobian product per row
            let seed = points_to_array(&gf);
            let g = tape.backward_seeded(x, seed).expect("seed matches");
            vals.extend(f);
            grads.extend(array_to_points(g.wrt(y).expect("input adjoint")));
        }
        (vals, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use crate::sampling::uniform_in_domain;
    use crate::sdf::AnalyticSdf;
    use std::f64::consts::PI;

    fn small(variant: Variant) -> DeformerSpec {
        DeformerSpec {
            hidden: 16,
            depth: if variant == Variant::Mlp { 4 } else { 3 },
            skip_layer: if variant == Variant::Mlp { Some(2) } else { None },
            ..DeformerSpec::for_variant(variant)
        }
    }

    /// Random hidden layers; output layers random and scaled by `scale`.
    fn randomized(variant: Variant, seed: u64, scale: f64) -> DeformationField {
        let mut d = DeformationField::new(small(variant), &mut SeedStream::new(seed).rng("d")).unwrap();
        let mut fresh = d.params().clone();
        fresh.init_uniform(&mut SeedStream::new(seed).rng("p"));
        let nets = d.params().nets().len();
        for net in 0..nets {
            let last = d.params().layer_index(net, d.params().spec(net).depth - 1);
            let w = fresh.weight(last).mapv(|v| v * scale);
            let b = fresh.bias(last).mapv(|v| v * scale);
            d.params_mut().weight_mut(last).assign(&w);
            d.params_mut().bias_mut(last).assign(&b);
        }
        d
    }

    fn points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = SeedStream::new(seed).rng("x");
        (0..n).map(|_| uniform_in_domain(&mut rng)).collect()
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_to_rotation([0.0; 3]), Mat3::identity());
        let r = euler_to_rotation([PI / 2.0, 0.0, 0.0]);
        assert!((r * Vec3::y() - Vec3::z()).norm() < 1e-15);
        let mut rng = SeedStream::new(1).rng("a");
        for _ in 0..100 {
            let a = uniform_in_domain(&mut rng) * PI;
            let r = euler_to_rotation([a.x, a.y, a.z]);
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let oracle = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), a.z).into_inner()
                * nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), a.y).into_inner()
                * nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), a.x).into_inner();
            assert!((r - oracle).abs().max() < 1e-12);
        }
    }

    #[test]
    fn identity_at_initialization() {
        for v in [Variant::Mlp, Variant::Invertible] {
            let d = DeformationField::new(small(v), &mut SeedStream::new(2).rng("d")).unwrap();
            let xs = points(10_000, 3);
            for (x, (y, rt)) in xs.iter().zip(d.transforms(&xs)) {
                assert_eq!(*x, y);
                assert_eq!(rt.r, Mat3::identity());
                assert_eq!(rt.t, Vec3::zeros());
            }
            if v == Variant::Invertible {
                assert_eq!(d.inverse_batch(&xs).unwrap(), xs);
            }
        }
    }

    #[test]
    fn frozen_mlp_outputs_give_closed_form_motion() {
        let mut d = DeformationField::new(small(Variant::Mlp), &mut SeedStream::new(2).rng("d")).unwrap();
        let last = d.params().layer_index(0, 3);
        let out = [0.3, -0.7, 1.1, 0.05, -0.2, 0.4];
        d.params_mut().bias_mut(last).iter_mut().zip(out).for_each(|(b, o)| *b = o);
        let r = euler_to_rotation([out[0], out[1], out[2]]);
        let t = Vec3::new(out[3], out[4], out[5]);
        for x in points(100, 4) {
            let (y, rt) = d.apply(&x);
            assert!((y - (r * x + t)).norm() < 1e-14);
            assert!((rt.r - r).abs().max() < 1e-15);
        }
    }

    #[test]
    fn invertible_round_trip_and_rotations() {
        let d = randomized(Variant::Invertible, 7, 0.3);
        let xs = points(10_000, 8);
        let tr = d.transforms(&xs);
        let ys: Vec<Vec3> = tr.iter().map(|t| t.0).collect();
        assert!(xs.iter().zip(&ys).any(|(x, y)| (x - y).norm() > 1e-2));
        let back = d.inverse_batch(&ys).unwrap();
        let err = xs
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        for (_, rt) in &tr {
            assert!((rt.r.transpose() * rt.r - Mat3::identity()).abs().max() < 1e-10);
            assert!((rt.r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn invertible_jacobian_determinant_is_one() {
        let d = randomized(Variant::Invertible, 9, 0.3);
        let h = 1e-6;
        let xs = points(200, 10);
        let mut probe = Vec::new();
        for x in &xs {
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                probe.push(x + e);
                probe.push(x - e);
            }
        }
        let ys = d.apply_batch(&probe);
        for c in ys.chunks(6) {
            let j = Mat3::from_columns(&[
                (c[0] - c[1]) / (2.0 * h),
                (c[2] - c[3]) / (2.0 * h),
                (c[4] - c[5]) / (2.0 * h),
            ]);
            assert!((j.determinant() - 1.0).abs() < 1e-6, "{}", j.determinant());
        }
    }

    #[test]
    fn mlp_has_no_inverse() {
        let d = DeformationField::new(small(Variant::Mlp), &mut SeedStream::new(2).rng("d")).unwrap();
        assert!(matches!(d.inverse(&Vec3::zeros()), Err(Error::Unsupported(_))));
        assert!(matches!(
            DeformedField::new(AnalyticSdf::sphere(0.5), d),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn deformed_field_gradient_matches_differences() {
        let d = randomized(Variant::Invertible, 11, 0.3);
        let g = DeformedField::new(AnalyticSdf::sphere(0.5), d).unwrap();
        let h = 1e-6;
        for p in points(50, 12) {
            let grad = g.gradient(&p);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                let fd = (g.value(&(p + e)) - g.value(&(p - e))) / (2.0 * h);
                assert!((grad[k] - fd).abs() <= 1e-4 * grad.norm().max(1e-8), "{} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn identity_deformed_field_equals_source() {
        let d = DeformationField::new(small(Variant::Invertible), &mut SeedStream::new(2).rng("d")).unwrap();
        let s = AnalyticSdf::sphere(0.5);
        let g = DeformedField::new(s, d).unwrap();
        let xs = points(10_000, 13);
        assert_eq!(g.values(&xs), s.values(&xs));
    }

    #[test]
    fn checkpoint_round_trip() {
        for v in [Variant::Mlp, Variant::Invertible] {
            let d = randomized(v, 14, 1.0);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.ckpt");
            d.save(&path).unwrap();
            let e = DeformationField::load(&path).unwrap();
            assert_eq!(d, e);
            let xs = points(100, 15);
            assert_eq!(d.apply_batch(&xs), e.apply_batch(&xs));
        }
    }
}
