//! Signed distance fields: analytic primitives and the neural field.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::nn::{self, Activation, Checkpoint, MlpSpec, ParameterBlock, Tape, Var};
use crate::rng::Rng;
use crate::Vec3;

/// Gradients shorter than this are treated as degenerate.
pub const DEGENERATE_GRADIENT: f64 = 1e-9;

/// Rows per tape when evaluating neural fields in bulk.
pub(crate) const EVAL_CHUNK: usize = 4096;

/// A scalar field over R^3 with spatial gradient. Negative inside.
pub trait ScalarField: Send + Sync {
    fn values(&self, points: &[Vec3]) -> Vec<f64>;

    fn values_and_gradients(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>);

    fn value(&self, p: &Vec3) -> f64 {
        self.values(std::slice::from_ref(p))[0]
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        self.values_and_gradients(std::slice::from_ref(p)).1[0]
    }
}

impl<T: ScalarField + ?Sized> ScalarField for &T {
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        (**self).values(points)
    }
    fn values_and_gradients(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        (**self).values_and_gradients(points)
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Box<T> {
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        (**self).values(points)
    }
    fn values_and_gradients(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        (**self).values_and_gradients(points)
    }
}

/// Unit normal from a gradient, or an error if the gradient is degenerate.
pub fn unit_normal(p: &Vec3, g: &Vec3) -> Result<Vec3> {
    let n = g.norm();
    if n < DEGENERATE_GRADIENT || !n.is_finite() {
        Err(Error::DegenerateGradient(*p))
    } else {
        Ok(g / n)
    }
}

/// Exact signed distance primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticSdf {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box with the given half extents.
    Box { center: Vec3, half: Vec3 },
    /// Torus around the z axis.
    Torus { center: Vec3, major: f64, minor: f64 },
    /// `normal . p - offset`; `normal` must be unit length.
    Plane { normal: Vec3, offset: f64 },
}

impl AnalyticSdf {
    pub fn sphere(radius: f64) -> Self {
        AnalyticSdf::Sphere {
            center: Vec3::zeros(),
            radius,
        }
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        match *self {
            AnalyticSdf::Sphere { center, radius } => (p - center).norm() - radius,
            AnalyticSdf::Box { center, half } => {
                let q = (p - center).abs() - half;
                let outside = q.sup(&Vec3::zeros()).norm();
                outside + q.max().min(0.0)
            }
            AnalyticSdf::Torus {
                center,
                major,
                minor,
            } => {
                let d = p - center;
                let rho = (d.x * d.x + d.y * d.y).sqrt() - major;
                (rho * rho + d.z * d.z).sqrt() - minor
            }
            AnalyticSdf::Plane { normal, offset } => normal.dot(p) - offset,
        }
    }

    /// Exact gradient; zero on medial points where it is undefined.
    pub fn grad(&self, p: &Vec3) -> Vec3 {
        match *self {
            AnalyticSdf::Sphere { center, .. } => {
                let d = p - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec3::zeros()
                }
            }
            AnalyticSdf::Box { center, half } => {
                let d = p - center;
                let q = d.abs() - half;
                let sign = d.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                if q.max() > 0.0 {
                    let o = q.sup(&Vec3::zeros());
                    o.component_mul(&sign) / o.norm()
                } else {
                    let k = q.imax();
                    let mut g = Vec3::zeros();
                    g[k] = sign[k];
                    g
                }
            }
            AnalyticSdf::Torus { center, major, .. } => {
                let d = p - center;
                let r = (d.x * d.x + d.y * d.y).sqrt();
                if r == 0.0 {
                    return Vec3::zeros();
                }
                let rho = r - major;
                let len = (rho * rho + d.z * d.z).sqrt();
                if len == 0.0 {
                    return Vec3::zeros();
                }
                Vec3::new(rho * d.x / r, rho * d.y / r, d.z) / len
            }
            AnalyticSdf::Plane { normal, .. } => normal,
        }
    }
}

impl ScalarField for AnalyticSdf {
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|p| self.eval(p)).collect()
    }

    fn values_and_gradients(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        points.iter().map(|p| (self.eval(p), self.grad(p))).unzip()
    }

    fn value(&self, p: &Vec3) -> f64 {
        self.eval(p)
    }

    fn gradient(&self, p: &Vec3) -> Vec3 {
        self.grad(p)
    }
}

/// Maps raw mesh coordinates into the `[-1, 1]^3` working domain:
/// `normalized = scale * raw + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self::identity()
    }
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: [0.0; 3],
        }
    }

    /// Center the bounding box and scale its largest half extent to `1 - margin`.
    pub fn fit(mesh: &TriangleMesh, margin: f64) -> Result<Self> {
        let (lo, hi) = mesh
            .bounding_box()
            .ok_or_else(|| Error::DegenerateMesh("mesh has no vertices".into()))?;
        let center = (lo + hi) * 0.5;
        let half = ((hi - lo) * 0.5).max();
        if !(half > 0.0) {
            return Err(Error::DegenerateMesh("mesh has zero extent".into()));
        }
        let scale = (1.0 - margin) / half;
        let off = -center * scale;
        Ok(Self {
            scale,
            offset: [off.x, off.y, off.z],
        })
    }

    fn offset_vec(&self) -> Vec3 {
        Vec3::from(self.offset)
    }

    pub fn apply(&self, raw: &Vec3) -> Vec3 {
        raw * self.scale + self.offset_vec()
    }

    pub fn invert(&self, normalized: &Vec3) -> Vec3 {
        (normalized - self.offset_vec()) / self.scale
    }

    pub fn apply_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        let mut out = mesh.clone();
        out.vertices.iter_mut().for_each(|v| *v = self.apply(v));
        out
    }

    pub fn invert_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        let mut out = mesh.clone();
        out.vertices.iter_mut().for_each(|v| *v = self.invert(v));
        out
    }

    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        let mut name = checkpoint.as_os_str().to_owned();
        name.push(".norm.json");
        PathBuf::from(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("normalization serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

/// Neural signed distance field `f: R^3 -> R`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSdf {
    params: ParameterBlock,
    pub normalization: Normalization,
}

pub const SDF_CHECKPOINT_KIND: &str = "sdf";

/// Softplus sharpness of SDF networks.
pub const SDF_SOFTPLUS_BETA: f64 = 30.0;

impl NeuralSdf {
    /// 8 layers of width 256, skip into layer 4, 6 Fourier frequencies, Softplus with
    /// [`SDF_SOFTPLUS_BETA`].
    pub fn default_spec() -> MlpSpec {
        Self::spec(256, 8, Some(4))
    }

    pub fn spec(hidden: usize, depth: usize, skip_layer: Option<usize>) -> MlpSpec {
        MlpSpec {
            input_dim: 3,
            num_freqs: 6,
            hidden,
            depth,
            output_dim: 1,
            skip_layer,
            activation: Activation::Softplus {
                beta: SDF_SOFTPLUS_BETA,
            },
        }
    }

    /// Randomly initialized field.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        let mut params = ParameterBlock::new(vec![spec])?;
        params.init_uniform(rng);
        Self::from_params(params)
    }

    pub fn from_params(params: ParameterBlock) -> Result<Self> {
        match params.nets() {
            [s] if s.input_dim == 3 && s.output_dim == 1 => Ok(Self {
                params,
                normalization: Normalization::identity(),
            }),
            _ => Err(Error::Shape("a neural SDF is one network R^3 -> R".into())),
        }
    }

    pub fn params(&self) -> &ParameterBlock {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterBlock {
        &mut self.params
    }

    /// Values (`B x 1`) for a `B x 3` batch.
    pub fn record<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> Var {
        nn::forward(tape, &self.params, 0, x)
    }

    /// Values (`B x 1`) and spatial gradients (`B x 3`), both differentiable
    /// with respect to the parameters.
    pub fn record_with_gradient<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> (Var, Var) {
        let rows = tape.value(x).nrows();
        let dirs: Vec<Var> = (0..3)
            .map(|k| {
                let mut e = Array2::zeros((rows, 3));
                e.column_mut(k).fill(1.0);
                tape.constant(e)
            })
            .collect();
        let (f, t) = nn::forward_with_tangents(tape, &self.params, 0, x, &dirs);
        let g = tape.concat(&t);
        (f, g)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: SDF_CHECKPOINT_KIND.into(),
            meta: serde_json::json!({ "normalization": self.normalization }),
            block: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != SDF_CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected an sdf checkpoint, found {:?}", ck.kind)));
        }
        let mut sdf = Self::from_params(ck.block)?;
        if let Some(n) = ck.meta.get("normalization") {
            sdf.normalization = serde_json::from_value(n.clone())
                .map_err(|e| Error::Checkpoint(format!("normalization: {e}")))?;
        }
        Ok(sdf)
    }

    /// Writes the checkpoint and the normalization sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)?;
        self.normalization.save(&Normalization::sidecar_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut sdf = Self::from_checkpoint(Checkpoint::load(path)?)?;
        let side = Normalization::sidecar_path(path);
        if side.exists() {
            sdf.normalization = Normalization::load(&side)?;
        }
        Ok(sdf)
    }
}

pub(crate) fn points_to_array(points: &[Vec3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, k)| points[i][k])
}

pub(crate) fn array_to_points(a: &Array2<f64>) -> Vec<Vec3> {
    a.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

impl ScalarField for NeuralSdf {
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let x = tape.constant(points_to_array(chunk));
            let f = self.record(&mut tape, x);
            out.extend(tape.value(f).iter());
        }
        out
    }

    fn values_and_gradients(&self, points: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
        let mut vals = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let x = tape.input(points_to_array(chunk));
            let f = self.record(&mut tape, x);
            // rows are independent, so the gradient of the sum is the per-row gradient
            let total = tape.sum(f);
            let g = tape.backward(total).expect("scalar root");
            vals.extend(tape.value(f).iter());
            grads.extend(array_to_points(g.wrt(x).expect("input adjoint")));
        }
        (vals, grads)
    }
}
