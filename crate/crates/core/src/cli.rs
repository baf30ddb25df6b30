//! Command-line surface.
//!
//! Exit codes: 0 on success, 1 when a run fails or does not converge,
//! 2 for usage errors (which print to standard error).

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{RunConfig, RunMode};
use crate::error::Error;
use crate::geometry::SimilarityTransform;
use crate::io::{
    self, read_intrinsics, read_mesh, read_pgm_mask, read_pointset, read_transform,
    write_pointset, write_sweep_csv, write_transform, MeshFormat, PointFormat, TransformDoc,
};
use crate::metrics::{
    cloud_to_mesh_distance, icp_registrar, mean_vertex_distance, rotation_sweep, Axis, SweepSpec,
};
use crate::solver::{register, register_rays};
use crate::voxel::mesh_to_pointset;
use crate::{camera, PointSet};

#[derive(Parser)]
#[command(
    name = "fuzzyreg",
    version,
    about = "Registers point clouds, meshes, and camera rays by fuzzy correspondences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align a source point cloud to a target point cloud.
    Register(RegisterArgs),
    /// Align a point cloud to the sight lines of masked camera pixels.
    RegisterRays(RegisterRaysArgs),
    /// Turn a triangle mesh into a surface point cloud on a voxel lattice.
    Voxelize(VoxelizeArgs),
    /// Measure an alignment against ground truth, or a cloud against a mesh.
    Evaluate(EvaluateArgs),
    /// Sweep ground-truth rotations and report recovery per angle.
    Sweep(SweepArgs),
}

/// Tuning knobs shared by everything that runs the solver. Values given
/// here override the config file.
#[derive(Args)]
struct Tuning {
    /// Parameter file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Coarsest kernel width, in units of the normalized (unit cube) frame.
    #[arg(long)]
    sigma0: Option<f64>,
    /// Finest kernel width.
    #[arg(long)]
    sigma_final: Option<f64>,
    /// Proximity weight in [0, 1]; coverage gets the rest.
    #[arg(long)]
    alpha: Option<f64>,
    /// Logistic steepness of the per-point score.
    #[arg(long)]
    k: Option<f64>,
    /// Seed for the coarse-level subsampling draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration budget per ladder level.
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args)]
struct RegisterArgs {
    /// Point cloud to move (xyz, ply, or obj).
    source: PathBuf,
    /// Point cloud to match.
    target: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Transform document to start from instead of the identity.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Write the transform document here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct RegisterRaysArgs {
    /// Point cloud to move (xyz, ply, or obj).
    points: PathBuf,
    /// Camera description (`fx = ...` and friends).
    #[arg(long, value_name = "FILE")]
    intrinsics: PathBuf,
    /// pgm mask; rays are cast through its nonzero pixels.
    #[arg(long, value_name = "FILE")]
    mask: PathBuf,
    /// Keep every n-th masked pixel in each direction.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Transform document to start from instead of the identity.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Write the transform document here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct VoxelizeArgs {
    /// Triangle mesh (obj or ply).
    mesh: PathBuf,
    /// Cells along the longest bounding-box edge.
    #[arg(long)]
    resolution: usize,
    /// Output point cloud (xyz, ply, or obj).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated transform document; needs --gt and --model.
    #[arg(long, value_name = "FILE")]
    est: Option<PathBuf>,
    /// Ground-truth transform document.
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Model points the transforms act on.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Point cloud to compare against --mesh.
    #[arg(long, value_name = "FILE")]
    cloud: Option<PathBuf>,
    /// Mesh the cloud is measured against.
    #[arg(long, value_name = "FILE")]
    mesh: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Model point cloud.
    model: PathBuf,
    /// Scene the rotated model is registered against.
    scene: PathBuf,
    /// Ground-truth transform document mapping model onto scene.
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Degrees between sampled angles.
    #[arg(long, default_value_t = 5.0)]
    step: f64,
    /// Swept angle interval in degrees, as lo:hi.
    #[arg(long, value_parser = parse_range, default_value = "0:120")]
    range: (f64, f64),
    #[arg(long, value_enum, default_value_t = RegistrarArg::Fuzzy)]
    registrar: RegistrarArg,
    /// Seeded trials per angle.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Gaussian noise sigma as a fraction of the scene diagonal.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Outliers appended per trial, as a fraction of the scene size.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    /// Success bound on mean vertex error; default is 1% of the model
    /// diagonal.
    #[arg(long)]
    threshold: Option<f64>,
    /// Write the per-trial CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rigid,
    Similarity,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Axis {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum RegistrarArg {
    Fuzzy,
    Icp,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("invalid angle '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("invalid angle '{hi}'"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("range must be finite with lo <= hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Failures split by whose fault they are: bad invocations exit 2,
/// everything that goes wrong while running exits 1.
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn point_format(path: &Path) -> CliResult<PointFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") | Some("txt") => Ok(PointFormat::Xyz),
        Some("ply") => Ok(PointFormat::Ply),
        Some("obj") => Ok(PointFormat::ObjVertices),
        _ => Err(usage(format!(
            "cannot tell the point format of '{}'; use a .xyz, .ply, or .obj name",
            path.display()
        ))),
    }
}

fn mesh_format(path: &Path) -> CliResult<MeshFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => Ok(MeshFormat::Obj),
        Some("ply") => Ok(MeshFormat::Ply),
        _ => Err(usage(format!(
            "cannot tell the mesh format of '{}'; use a .obj or .ply name",
            path.display()
        ))),
    }
}

fn read_points(path: &Path) -> CliResult<PointSet> {
    Ok(read_pointset(path, point_format(path)?)?)
}

impl Tuning {
    /// Config file first, explicit flags on top.
    fn build(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path).map_err(|e| match e {
                // A malformed parameter bundle is a usage problem; a missing
                // file is an I/O failure like any other.
                Error::Parse { .. } | Error::InvalidParameter(_) => usage(e.to_string()),
                other => CliError::Runtime(other),
            })?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.sigma0 {
            cfg.sigma0 = v;
        }
        if let Some(v) = self.sigma_final {
            cfg.sigma_final = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn read_init(path: &Option<PathBuf>) -> CliResult<Option<SimilarityTransform>> {
    Ok(match path {
        Some(p) => Some(read_transform(p)?.transform),
        None => None,
    })
}

/// Writes or prints the result document; the exit code reflects convergence.
fn emit_result(
    doc: &TransformDoc,
    out: &Option<PathBuf>,
) -> CliResult<u8> {
    match out {
        Some(path) => {
            write_transform(path, doc)?;
            println!("converged = {}", doc.converged);
            println!("final_energy = {}", doc.final_energy);
            println!("out = {}", path.display());
        }
        None => print!("{}", io::format_transform_doc(doc)),
    }
    Ok(if doc.converged { 0 } else { 1 })
}

fn run_register(args: &RegisterArgs) -> CliResult<u8> {
    let mut cfg = args.tuning.build()?;
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Rigid => RunMode::Rigid,
            ModeArg::Similarity => RunMode::Similarity,
        };
    }
    if cfg.mode == RunMode::Rays {
        return Err(usage(
            "mode 'rays' needs the register-rays subcommand with camera inputs",
        ));
    }
    let source = read_points(&args.source)?;
    let target = read_points(&args.target)?;
    let init = read_init(&args.init)?;
    let result = register(
        &source,
        &target,
        init.as_ref(),
        cfg.mode.transform_mode(),
        &cfg.schedule(),
        &cfg.kernel().map_err(|e| usage(e.to_string()))?,
        &cfg.lm().map_err(|e| usage(e.to_string()))?,
    )?;
    let doc = TransformDoc {
        transform: result.transform,
        converged: result.converged,
        final_energy: result.final_energy,
        levels: result.levels,
        config: cfg.echo(),
    };
    emit_result(&doc, &args.out)
}

fn run_register_rays(args: &RegisterRaysArgs) -> CliResult<u8> {
    let mut cfg = args.tuning.build()?;
    cfg.mode = RunMode::Rays;
    let points = read_points(&args.points)?;
    let intrinsics = read_intrinsics(&args.intrinsics)?;
    let mask = read_pgm_mask(&args.mask)?;
    let rays = camera::mask_to_rays(&intrinsics, &mask, args.stride)
        .map_err(|e| match e {
            Error::InvalidParameter(_) => usage(e.to_string()),
            other => CliError::Runtime(other),
        })?;
    let init = read_init(&args.init)?;
    let result = register_rays(
        &points,
        &rays,
        init.as_ref(),
        &cfg.schedule(),
        &cfg.kernel().map_err(|e| usage(e.to_string()))?,
        &cfg.lm().map_err(|e| usage(e.to_string()))?,
    )?;
    let doc = TransformDoc {
        transform: result.transform,
        converged: result.converged,
        final_energy: result.final_energy,
        levels: result.levels,
        config: cfg.echo(),
    };
    emit_result(&doc, &args.out)
}

fn run_voxelize(args: &VoxelizeArgs) -> CliResult<u8> {
    let format = point_format(&args.out)?;
    let mesh = read_mesh(&args.mesh, mesh_format(&args.mesh)?)?;
    if args.resolution < 2 {
        return Err(usage("resolution must be at least 2"));
    }
    let points = mesh_to_pointset(&mesh, args.resolution)?;
    write_pointset(&args.out, &points, format)?;
    println!("points = {}", points.len());
    println!("out = {}", args.out.display());
    Ok(0)
}

fn run_evaluate(args: &EvaluateArgs) -> CliResult<u8> {
    match (&args.est, &args.cloud) {
        (Some(est), None) => {
            let (Some(gt), Some(model)) = (&args.gt, &args.model) else {
                return Err(usage("--est needs both --gt and --model"));
            };
            let est = read_transform(est)?;
            let gt = read_transform(gt)?;
            let model = read_points(model)?;
            let mean = mean_vertex_distance(&est.transform, &gt.transform, &model)?;
            let diagonal = model.aabb()?.diagonal();
            println!("mean_vertex_distance = {mean}");
            println!("model_diagonal = {diagonal}");
            println!("relative_error = {}", mean / diagonal);
            Ok(0)
        }
        (None, Some(cloud)) => {
            let Some(mesh) = &args.mesh else {
                return Err(usage("--cloud needs --mesh"));
            };
            let cloud = read_points(cloud)?;
            let mesh = read_mesh(mesh, mesh_format(mesh)?)?;
            let (mean, max) = cloud_to_mesh_distance(&cloud, &mesh)?;
            println!("mean_distance = {mean}");
            println!("max_distance = {max}");
            Ok(0)
        }
        _ => Err(usage(
            "evaluate needs either --est/--gt/--model or --cloud/--mesh",
        )),
    }
}

fn run_sweep(args: &SweepArgs) -> CliResult<u8> {
    let cfg = args.tuning.build()?;
    let model = read_points(&args.model)?;
    let scene = read_points(&args.scene)?;
    let gt = read_transform(&args.gt)?.transform;
    let mut spec = SweepSpec::new(args.axis.into(), args.step, args.range);
    spec.trials = args.trials;
    spec.noise_sigma = args.noise;
    spec.outlier_fraction = args.outliers;
    spec.seed = cfg.seed;
    spec.success_threshold = args.threshold;
    spec.validate().map_err(|e| usage(e.to_string()))?;

    let report = if args.registrar == RegistrarArg::Icp {
        let mut registrar = icp_registrar(cfg.max_iterations, 1e-9);
        rotation_sweep(&model, &scene, &gt, &spec, &mut registrar)?
    } else {
        let schedule = cfg.schedule();
        let kernel = cfg.kernel().map_err(|e| usage(e.to_string()))?;
        let lm = cfg.lm().map_err(|e| usage(e.to_string()))?;
        let mode = cfg.mode.transform_mode();
        let mut registrar = |model: &PointSet,
                             scene: &PointSet,
                             theta0: &SimilarityTransform|
         -> crate::Result<SimilarityTransform> {
            register(model, scene, Some(theta0), mode, &schedule, &kernel, &lm)
                .map(|r| r.transform)
        };
        rotation_sweep(&model, &scene, &gt, &spec, &mut registrar)?
    };

    match &args.out {
        Some(path) => {
            write_sweep_csv(path, &report)?;
            println!("trials = {}", report.trials.len());
            println!("threshold = {}", report.threshold);
            println!("success_rate = {}", report.success_rate);
            println!("out = {}", path.display());
        }
        None => print!("{}", io::format_sweep_csv(&report)),
    }
    Ok(0)
}

fn dispatch(cli: &Cli) -> CliResult<u8> {
    match &cli.command {
        Command::Register(args) => run_register(args),
        Command::RegisterRays(args) => run_register_rays(args),
        Command::Voxelize(args) => run_voxelize(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
    }
}

/// Runs the tool; returns the process exit code.
pub fn run(args: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap routes help and version to standard output and genuine
            // usage errors (with the usage text) to standard error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run 'fuzzyreg --help' for usage");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
