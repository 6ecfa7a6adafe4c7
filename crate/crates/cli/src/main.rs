//! `iarap`: fit neural SDFs, deform meshes and fields, extract and evaluate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use iarap_core::arap::{deform_mesh, optimize_deformation_from, DeformConfig, LossRecord};
use iarap_core::deform::{DeformationField, DeformedField, Variant};
use iarap_core::eikonal::{fit_sdf_with, EikonalConfig, FitRecord};
use iarap_core::io::{
    load_deform_config, load_eikonal_config, load_handles, load_mesh, save_mesh, RunManifest,
};
use iarap_core::mc::{marching_cubes, GridSpec};
use iarap_core::metrics::{deformation_errors, field_deformation_errors, mesh_pair_errors};
use iarap_core::patch::{build_patch_batch, patch_errors, DiskDistribution, PatchTemplate};
use iarap_core::sampling::ProjectionConfig;
use iarap_core::sdf::{Normalization, NeuralSdf};
use iarap_core::{Error, ErrorKind, Result, SeedStream};

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "IARAP_THREADS";

#[derive(Parser)]
#[command(name = "iarap", version, about = "Implicit ARAP deformation of meshes and neural fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a neural SDF to a mesh.
    FitSdf(FitSdfArgs),
    /// Deform a mesh with handles on its neural SDF.
    DeformMesh(DeformMeshArgs),
    /// Train an invertible deformer for a neural SDF.
    DeformField(DeformFieldArgs),
    /// Extract a level set with marching cubes.
    Extract(ExtractArgs),
    /// Patch reconstruction errors per template configuration.
    EvalPatches(EvalPatchesArgs),
    /// Volume, area, edge and angle errors of a deformation.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct FitSdfArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Fraction of the domain left free around the mesh.
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
}

#[derive(Args)]
struct DeformMeshArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    handles: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also save the trained deformer.
    #[arg(long)]
    deformer_out: Option<PathBuf>,
}

#[derive(Args)]
struct DeformFieldArgs {
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    handles: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    field: PathBuf,
    /// Extract `f o d^-1` for an invertible deformer.
    #[arg(long)]
    deformer: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    res: usize,
    #[arg(long, default_value_t = 0.0)]
    level: f64,
    /// Keep the mesh in the field's normalized domain.
    #[arg(long)]
    normalized: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalPatchesArgs {
    #[arg(long)]
    field: PathBuf,
    /// Template points per patch; comma separated for a sweep.
    #[arg(long, value_delimiter = ',', default_value = "30")]
    density: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.03")]
    radius: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "uniform-random")]
    dist: Vec<DiskDistribution>,
    /// Patches per configuration.
    #[arg(long, default_value_t = 256)]
    count: usize,
    /// Error samples per patch triangle.
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Source mesh; not needed for the field pipeline (`--field` with `--res`).
    #[arg(long, required_unless_present_all = ["field", "res"])]
    src: Option<PathBuf>,
    #[arg(long, conflicts_with = "deformed", required_unless_present = "deformed")]
    deformer: Option<PathBuf>,
    /// Deformed mesh with the connectivity of `--src`.
    #[arg(long)]
    deformed: Option<PathBuf>,
    /// Field whose normalization maps `--src` into the deformer's domain.
    #[arg(long, requires = "deformer")]
    field: Option<PathBuf>,
    /// Compare level sets of `f` and `f o d^-1` extracted at this resolution.
    #[arg(long, requires = "field")]
    res: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

fn fit_log_header() -> String {
    "step,total,zero,eikonal,normals,penalty,lr,skipped\n".into()
}

fn fit_log_row(out: &mut String, r: &FitRecord) {
    let l = &r.losses;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        r.step, r.total, l.zero, l.eikonal, l.normals, l.penalty, r.lr, r.skipped
    );
}

fn deform_log_header() -> String {
    "step,total,arap,handle,handle_static,handle_moving,skipped\n".into()
}

fn deform_log_row(out: &mut String, r: &LossRecord) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        r.step, r.total, r.arap, r.handle, r.handle_static, r.handle_moving, r.skipped
    );
}

fn fit_sdf(a: &FitSdfArgs, m: &mut RunManifest) -> Result<()> {
    if !(0.0..1.0).contains(&a.margin) {
        return Err(Error::InvalidArgument(format!("margin must be in [0, 1), got {}", a.margin)));
    }
    let cfg = match &a.config {
        Some(p) => {
            m.input("config", p);
            load_eikonal_config(p)?
        }
        None => EikonalConfig::default(),
    };
    m.set_config(&cfg);
    m.input("mesh", &a.mesh);
    let raw = load_mesh(&a.mesh)?;
    let norm = Normalization::fit(&raw, a.margin)?;
    let mesh = norm.apply_mesh(&raw);
    let mut log = fit_log_header();
    let start = Instant::now();
    let fit = fit_sdf_with(&mesh, &cfg, &SeedStream::new(a.seed), |r, _| fit_log_row(&mut log, r))?;
    m.time("fit", start.elapsed().as_secs_f64());
    if let Some(last) = fit.history.last() {
        info!("fit: final loss {:.6e}", last.total);
    }
    let mut sdf = fit.sdf;
    sdf.normalization = norm;
    sdf.save(&a.out)?;
    m.output("field", &a.out);
    m.output("normalization", &Normalization::sidecar_path(&a.out));
    if let Some(p) = &a.loss_log {
        write_file(p, &log)?;
        m.output("loss_log", p);
    }
    Ok(())
}

fn train_deformer(
    field: &NeuralSdf,
    handles_path: &Path,
    cfg: &DeformConfig,
    seed: u64,
    m: &mut RunManifest,
) -> Result<(DeformationField, String)> {
    let loaded = load_handles(handles_path, field, &field.normalization, &cfg.projection)?;
    let worst = loaded.residuals.iter().cloned().fold(0.0, f64::max);
    info!("{} handles, worst projection residual {worst:.3e}", loaded.handles.len());
    let seeds = SeedStream::new(seed);
    let init = DeformationField::new(cfg.deformer.clone(), &mut seeds.rng("deform/init"))?;
    let mut log = deform_log_header();
    let start = Instant::now();
    let res = optimize_deformation_from(field, init, &loaded.handles, cfg, &seeds, |r, _| {
        deform_log_row(&mut log, r)
    })?;
    m.time("optimize", start.elapsed().as_secs_f64());
    if let Some(last) = res.history.last() {
        info!("deform: final loss {:.6e}", last.total);
    }
    Ok((res.deformer, log))
}

fn deform_config(path: Option<&PathBuf>, default: Variant, m: &mut RunManifest) -> Result<DeformConfig> {
    let cfg = match path {
        Some(p) => {
            m.input("config", p);
            load_deform_config(p, default)?
        }
        None => DeformConfig::for_variant(default),
    };
    m.set_config(&cfg);
    Ok(cfg)
}

fn deform_mesh_cmd(a: &DeformMeshArgs, m: &mut RunManifest) -> Result<()> {
    let cfg = deform_config(a.config.as_ref(), Variant::Mlp, m)?;
    m.input("mesh", &a.mesh);
    m.input("field", &a.field);
    m.input("handles", &a.handles);
    let field = NeuralSdf::load(&a.field)?;
    let raw = load_mesh(&a.mesh)?;
    let (d, log) = train_deformer(&field, &a.handles, &cfg, a.seed, m)?;
    let norm = field.normalization;
    let out = norm.invert_mesh(&deform_mesh(&norm.apply_mesh(&raw), &d));
    save_mesh(&out, &a.out)?;
    m.output("mesh", &a.out);
    if let Some(p) = &a.deformer_out {
        d.save(p)?;
        m.output("deformer", p);
    }
    if let Some(p) = &a.loss_log {
        write_file(p, &log)?;
        m.output("loss_log", p);
    }
    Ok(())
}

fn deform_field_cmd(a: &DeformFieldArgs, m: &mut RunManifest) -> Result<()> {
    let cfg = deform_config(a.config.as_ref(), Variant::Invertible, m)?;
    if cfg.deformer.variant != Variant::Invertible {
        return Err(Error::Unsupported("deform-field needs the invertible deformer"));
    }
    m.input("field", &a.field);
    m.input("handles", &a.handles);
    let field = NeuralSdf::load(&a.field)?;
    let (d, log) = train_deformer(&field, &a.handles, &cfg, a.seed, m)?;
    d.save(&a.out)?;
    m.output("deformer", &a.out);
    if let Some(p) = &a.loss_log {
        write_file(p, &log)?;
        m.output("loss_log", p);
    }
    Ok(())
}

fn extract(a: &ExtractArgs, m: &mut RunManifest) -> Result<()> {
    let grid = GridSpec::new(a.res, a.level)?;
    m.set_config(&grid);
    m.input("field", &a.field);
    let field = NeuralSdf::load(&a.field)?;
    let norm = field.normalization;
    let start = Instant::now();
    let mesh = match &a.deformer {
        Some(p) => {
            m.input("deformer", p);
            let g = DeformedField::new(field, DeformationField::load(p)?)?;
            marching_cubes(&g, &grid)?
        }
        None => marching_cubes(&field, &grid)?,
    };
    m.time("extract", start.elapsed().as_secs_f64());
    info!("extracted {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    let mesh = if a.normalized { mesh } else { norm.invert_mesh(&mesh) };
    save_mesh(&mesh, &a.out)?;
    m.output("mesh", &a.out);
    Ok(())
}

fn eval_patches(a: &EvalPatchesArgs, m: &mut RunManifest) -> Result<()> {
    if a.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    m.set_config(&serde_json::json!({
        "density": a.density,
        "radius": a.radius,
        "dist": a.dist,
        "count": a.count,
        "samples": a.samples,
    }));
    m.input("field", &a.field);
    let field = NeuralSdf::load(&a.field)?;
    let proj = ProjectionConfig::default();
    let seeds = SeedStream::new(a.seed);
    let mut csv = String::from("density,radius,dist,n,e_max,e_mean\n");
    let start = Instant::now();
    let mut index = 0;
    for &k in &a.density {
        for &r in &a.radius {
            for &dist in &a.dist {
                let s = seeds.child("eval-patches", index);
                index += 1;
                let tmpl = PatchTemplate::new(k, r, dist, &mut s.rng("template"))?;
                let batch = build_patch_batch(&field, &tmpl, a.count, 1.0, &[], &proj, &mut s.rng("origins"))?;
                let (e_max, e_mean) = patch_errors(&field, &batch, a.samples, &mut s.rng("errors"))?;
                let _ = writeln!(csv, "{k},{r},{dist},{},{e_max},{e_mean}", batch.len());
            }
        }
    }
    m.time("eval", start.elapsed().as_secs_f64());
    write_file(&a.out, &csv)?;
    m.output("report", &a.out);
    Ok(())
}

fn metrics(a: &MetricsArgs, m: &mut RunManifest) -> Result<()> {
    let report = match (&a.deformed, &a.deformer) {
        (Some(dst), _) => {
            let src = a.src.as_ref().expect("clap requires --src");
            m.input("src", src);
            m.input("deformed", dst);
            mesh_pair_errors(&load_mesh(src)?, &load_mesh(dst)?)?
        }
        (None, Some(dp)) => {
            m.input("deformer", dp);
            let d = DeformationField::load(dp)?;
            let field = match &a.field {
                Some(p) => {
                    m.input("field", p);
                    Some(NeuralSdf::load(p)?)
                }
                None => None,
            };
            match (field, a.res) {
                (Some(f), Some(res)) => {
                    let grid = GridSpec::new(res, 0.0)?;
                    m.set_config(&grid);
                    field_deformation_errors(&f, &d, &grid)?
                }
                (field, _) => {
                    let src = a.src.as_ref().expect("clap requires --src");
                    m.input("src", src);
                    let mesh = load_mesh(src)?;
                    let mesh = match field {
                        Some(f) => f.normalization.apply_mesh(&mesh),
                        None => mesh,
                    };
                    deformation_errors(&mesh, &d)?
                }
            }
        }
        (None, None) => unreachable!("clap requires --deformer or --deformed"),
    };
    info!(
        "e_vol {:.4e} e_area {:.4e} el {:.4e} fa {:.4}deg",
        report.e_vol, report.e_area, report.el, report.fa_deg
    );
    m.time("metrics", report.wall_s);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out, &text)?;
    m.output("report", &a.out);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Numeric => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, out, seed) = match &cli.command {
        Command::FitSdf(a) => ("fit-sdf", &a.out, Some(a.seed)),
        Command::DeformMesh(a) => ("deform-mesh", &a.out, Some(a.seed)),
        Command::DeformField(a) => ("deform-field", &a.out, Some(a.seed)),
        Command::Extract(a) => ("extract", &a.out, None),
        Command::EvalPatches(a) => ("eval-patches", &a.out, Some(a.seed)),
        Command::Metrics(a) => ("metrics", &a.out, None),
    };
    let mut manifest = RunManifest::new(name, seed);
    let start = Instant::now();
    let result = thread_count().and_then(|threads| {
        manifest.environment.insert(THREADS_VAR.into(), threads.to_string());
        match &cli.command {
            Command::FitSdf(a) => fit_sdf(a, &mut manifest),
            Command::DeformMesh(a) => deform_mesh_cmd(a, &mut manifest),
            Command::DeformField(a) => deform_field_cmd(a, &mut manifest),
            Command::Extract(a) => extract(a, &mut manifest),
            Command::EvalPatches(a) => eval_patches(a, &mut manifest),
            Command::Metrics(a) => metrics(a, &mut manifest),
        }
    });
    manifest.time("total", start.elapsed().as_secs_f64());
    manifest.status = match &result {
        Ok(()) => "ok".into(),
        Err(e) => format!("error: {e}"),
    };
    let saved = manifest.save(&RunManifest::path_for(out));
    match (result, saved) {
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
        (Err(e), _) => {
            error!("{name}: {e}");
            ExitCode::from(exit_code(&e))
        }
        (Ok(()), Err(e)) => {
            error!("{name}: writing manifest: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
