//! Command-line front door: dataset generation, field training, mesh
//! extraction, policy training, evaluation, cross-environment comparison,
//! embedding interpolation, and one-off renders.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use crate::camera::CameraIntrinsics;
use crate::dataset::{generate_dataset, CaptureConfig, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    compare_envs, evaluate, interpolate_embeddings, luminance_csv, Agent, PolicyAgent,
    ScriptedDriver,
};
use crate::field::{load_field, save_field, vehicle_camera_pose, FieldArchitecture};
use crate::geom::v3;
use crate::mesh::{
    marching_cubes, read_obj, sample_density_grid, write_obj, CollisionMesh, FieldDensity,
    SceneDensity,
};
use crate::render::{render_image, RenderConfig};
use crate::rng::RngStream;
use crate::sac::{load_policy, save_policy, train_policy, SACConfig};
use crate::scene::{build_geometry, oracle_render, SceneSpec, D_WALL};
use crate::sim::{
    AlignmentTransform, Appearance, AppearanceSource, DriveEnv, EnvConfig, FieldBackend,
    OracleBackend, RasterBackend,
};
use crate::train::TrainConfig;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "fieldsim",
    about = "Radiance-field driving simulator: capture, train, extract, drive, compare",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a posed multi-condition training dataset from the analytic scene
    GenData(GenDataArgs),
    /// Train the radiance field on a dataset directory
    TrainField(TrainFieldArgs),
    /// Extract a triangle mesh from a trained field or the analytic scene
    ExtractMesh(ExtractMeshArgs),
    /// Train a SAC driving policy in a chosen environment
    TrainPolicy(TrainPolicyArgs),
    /// Evaluate a policy (or the scripted driver) over seeded episodes
    Evaluate(EvaluateArgs),
    /// Cross-environment forecasting comparison of two policies
    Compare(CompareArgs),
    /// Interpolate between two trained appearance embeddings
    Interpolate(InterpolateArgs),
    /// Render a single view from a backend
    Render(RenderArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Scene layout: "straight" or "turn"
    #[arg(long)]
    scene: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Views rendered per lighting condition
    #[arg(long, default_value_t = 150)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    /// Horizontal field of view in radians
    #[arg(long, default_value_t = 1.4)]
    hfov: f64,
    #[arg(long, default_value_t = 96)]
    samples: usize,
}

#[derive(Args)]
struct TrainFieldArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with training hyperparameters (defaults when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Force the single-worker gradient path (always on in this build)
    #[arg(long)]
    deterministic: bool,
    /// Training-log CSV path
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractMeshArgs {
    /// Field checkpoint; omit to mesh the analytic scene instead
    #[arg(long)]
    field: Option<PathBuf>,
    /// Scene layout, used for default bounds (and the analytic source)
    #[arg(long)]
    scene: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    voxel: f64,
    /// Iso level; defaults to half the wall density
    #[arg(long)]
    iso: Option<f64>,
    /// Default bounds to mesh: "collision" (walls band) or "eval" (interior
    /// tube extended into the solids)
    #[arg(long, default_value = "collision")]
    band: String,
}

#[derive(Args, Clone)]
pub struct EnvArgs {
    /// Scene layout: "straight" or "turn"
    #[arg(long)]
    pub scene: String,
    /// Environment config file (key=value); scene defaults when omitted
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// Observation backend: "field", "oracle", or "raster"
    #[arg(long)]
    pub backend: String,
    /// Field checkpoint (field backend)
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Collision mesh OBJ (defaults to meshing the analytic scene)
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Fixed lighting condition for oracle backends; all conditions cycle
    /// when omitted
    #[arg(long)]
    pub cond: Option<u32>,
    /// Simulator-to-field alignment: yaw radians
    #[arg(long, default_value_t = 0.0)]
    pub align_yaw: f64,
    /// Simulator-to-field alignment: translation "x,y,z"
    #[arg(long, default_value = "0,0,0")]
    pub align_t: String,
    /// Simulator-to-field alignment: scale
    #[arg(long, default_value_t = 1.0)]
    pub align_scale: f64,
    /// Occupancy cell size for field-backend empty-space skipping
    #[arg(long, default_value_t = 0.2)]
    pub occupancy_cell: f64,
}

#[derive(Args)]
struct TrainPolicyArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total environment steps (default from the SAC config)
    #[arg(long)]
    steps: Option<usize>,
    /// JSON file with SAC hyperparameters
    #[arg(long)]
    sac_config: Option<PathBuf>,
    /// Episode-log CSV path
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Policy checkpoint, or "scripted" for the centerline driver
    #[arg(long)]
    policy: String,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Report CSV path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-episode traces
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// First policy checkpoint or "scripted"
    #[arg(long)]
    policy_a: String,
    /// Second policy checkpoint or "scripted"
    #[arg(long)]
    policy_b: String,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    field: PathBuf,
    /// Lighting-condition id of the start embedding
    #[arg(long, default_value_t = 0)]
    from_cond: u32,
    /// Lighting-condition id of the end embedding
    #[arg(long, default_value_t = 2)]
    to_cond: u32,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    /// Camera pose "x,y,heading" on the ground plane
    #[arg(long, default_value = "1.0,0.0,0.0")]
    pose: String,
    #[arg(long, default_value_t = 160)]
    width: u32,
    #[arg(long, default_value_t = 90)]
    height: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// "field", "oracle", or "raster"
    #[arg(long)]
    backend: String,
    #[arg(long)]
    scene: String,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Lighting condition (oracle) or embedding row (field)
    #[arg(long, default_value_t = 0)]
    cond: u32,
    /// Camera pose "x,y,heading"
    #[arg(long, default_value = "1.0,0.0,0.0")]
    pose: String,
    #[arg(long, default_value_t = 160)]
    width: u32,
    #[arg(long, default_value_t = 90)]
    height: u32,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn dispatch(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            // Help/version are successful outputs, not usage errors.
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return 0;
            }
            eprint!("{err}");
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn parse_scene(name: &str) -> Result<SceneSpec> {
    match name {
        "straight" => Ok(SceneSpec::straight_desk()),
        "turn" => Ok(SceneSpec::turn_desk()),
        other => Err(Error::InvalidConfig(format!(
            "unknown scene '{other}' (expected straight|turn)"
        ))),
    }
}

fn parse_vec3(text: &str) -> Result<crate::geom::Vec3> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("bad vector '{text}'")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!("bad vector '{text}'")));
    }
    Ok(v3(parts[0], parts[1], parts[2]))
}

fn parse_pose(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("bad pose '{text}'")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidConfig("pose must be x,y,heading".into()));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn default_env_config(spec: &SceneSpec) -> EnvConfig {
    match spec.layout {
        crate::scene::Layout::StraightRoad => EnvConfig::straight_desk(spec),
        crate::scene::Layout::SingleRightTurn => EnvConfig::turn_desk(spec),
    }
}

fn load_env_config(spec: &SceneSpec, path: &Option<PathBuf>) -> Result<EnvConfig> {
    match path {
        Some(p) => EnvConfig::from_key_values(&std::fs::read_to_string(p)?),
        None => Ok(default_env_config(spec)),
    }
}

/// Builds the collision mesh: from an OBJ (transformed into the simulator
/// frame), or by meshing the analytic scene's walls band.
fn build_collision(
    spec: &SceneSpec,
    mesh_path: &Option<PathBuf>,
    align: &AlignmentTransform,
) -> Result<Arc<CollisionMesh>> {
    let mesh = match mesh_path {
        Some(path) => {
            let mut mesh = read_obj(path)?;
            // Meshes are stored in the field frame; import applies the
            // inverse alignment once.
            let inv = align.inverse();
            for v in &mut mesh.vertices {
                *v = inv.apply_point(*v);
            }
            mesh
        }
        None => {
            let geo = build_geometry(spec);
            let grid =
                sample_density_grid(&SceneDensity(&geo), &geo.collision_band_bounds(), 0.1)?;
            marching_cubes(&grid, D_WALL / 2.0)?
        }
    };
    Ok(Arc::new(CollisionMesh::new(mesh)))
}

/// Assembles a driving environment from CLI arguments.
pub fn build_env(args: &EnvArgs) -> Result<DriveEnv> {
    let spec = parse_scene(&args.scene)?;
    let cfg = load_env_config(&spec, &args.env_config)?;
    let align =
        AlignmentTransform::yaw(args.align_yaw, parse_vec3(&args.align_t)?, args.align_scale)?;
    let collision = build_collision(&spec, &args.mesh, &align)?;
    let (backend, appearance): (Box<dyn crate::sim::ObsBackend>, AppearanceSource) =
        match args.backend.as_str() {
            "field" => {
                let path = args.field.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("field backend requires --field".into())
                })?;
                let params = Arc::new(load_field::<f32>(path)?);
                let rows: Vec<_> = (0..params.arch.n_conditions)
                    .map(|i| params.embedding_row(i))
                    .collect();
                let backend = FieldBackend::new(params, cfg.obs_samples_per_ray)
                    .with_occupancy(args.occupancy_cell, 0.5)?;
                (
                    Box::new(backend),
                    AppearanceSource::EmbeddingMixture {
                        rows,
                        jitter_sigma: 0.1,
                    },
                )
            }
            "oracle" => {
                let source = match args.cond {
                    Some(id) => AppearanceSource::FixedLighting(id),
                    None => AppearanceSource::LightingSet(
                        spec.lighting_conditions.iter().map(|c| c.id).collect(),
                    ),
                };
                (Box::new(OracleBackend::new(spec.clone())), source)
            }
            "raster" => (
                Box::new(RasterBackend::new(collision.clone())),
                AppearanceSource::Flat,
            ),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown backend '{other}' (expected field|oracle|raster)"
                )))
            }
        };
    Ok(DriveEnv::new(cfg, &spec, backend, appearance, collision, align))
}

fn build_agent(policy: &str, spec: &SceneSpec) -> Result<Box<dyn Agent>> {
    if policy == "scripted" {
        Ok(Box::new(ScriptedDriver::new(spec)))
    } else {
        let net = load_policy::<f32>(std::path::Path::new(policy))?;
        Ok(Box::new(PolicyAgent::new(net, policy.to_string())))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let spec = parse_scene(&a.scene)?;
            let intr = CameraIntrinsics::with_hfov(a.width, a.height, a.hfov);
            let capture = CaptureConfig {
                samples_per_ray: a.samples,
                ..CaptureConfig::default()
            };
            let ds = generate_dataset(&spec, a.views, &intr, &capture, a.seed)?;
            ds.save_dir(&a.out)?;
            println!(
                "wrote {} frames ({} conditions) to {}",
                ds.frames.len(),
                spec.lighting_conditions.len(),
                a.out.display()
            );
            Ok(())
        }
        Command::TrainField(a) => {
            let dataset = Dataset::load_dir(&a.dataset)?;
            let cfg: TrainConfig = match &a.config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            let _ = a.deterministic; // the gradient path is always single-worker
            let arch = FieldArchitecture::desk_default(dataset.lighting_ids().len());
            let mut last_print = std::time::Instant::now();
            let (params, log) = crate::train::train_field_filtered::<f32>(
                &dataset,
                &arch,
                &cfg,
                None,
                Some(&mut |row| {
                    if last_print.elapsed().as_secs() >= 10 || !row.psnr.is_empty() {
                        let psnr: Vec<String> =
                            row.psnr.iter().map(|p| format!("{p:.2}")).collect();
                        println!(
                            "iter {:>7}  loss {:.5}  psnr [{}]",
                            row.iteration,
                            row.loss,
                            psnr.join(", ")
                        );
                        last_print = std::time::Instant::now();
                    }
                }),
            )?;
            save_field(&a.out, &params)?;
            if let Some(log_path) = &a.log {
                std::fs::write(log_path, log.to_csv())?;
            }
            if let Some(last) = log.rows.last() {
                let psnr: Vec<String> = last.psnr.iter().map(|p| format!("{p:.2}")).collect();
                println!("final holdout psnr per condition: [{}]", psnr.join(", "));
            }
            println!("checkpoint written to {}", a.out.display());
            Ok(())
        }
        Command::ExtractMesh(a) => {
            let spec = parse_scene(&a.scene)?;
            let geo = build_geometry(&spec);
            let bounds = match a.band.as_str() {
                "collision" => geo.collision_band_bounds(),
                "eval" => geo.mesh_eval_bounds(),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown band '{other}' (expected collision|eval)"
                    )))
                }
            };
            let iso = a.iso.unwrap_or(D_WALL / 2.0);
            let grid = match &a.field {
                Some(path) => {
                    let params = load_field::<f32>(path)?;
                    sample_density_grid(&FieldDensity::new(&params), &bounds, a.voxel)?
                }
                None => sample_density_grid(&SceneDensity(&geo), &bounds, a.voxel)?,
            };
            let mesh = marching_cubes(&grid, iso)?;
            let stats = crate::mesh::mesh_stats(&mesh);
            write_obj(&mesh, &a.out)?;
            println!(
                "wrote {} vertices / {} triangles to {} (boundary edges: {})",
                stats.n_vertices,
                stats.n_triangles,
                a.out.display(),
                stats.boundary_edge_count
            );
            Ok(())
        }
        Command::TrainPolicy(a) => {
            let mut env = build_env(&a.env)?;
            let mut cfg: SACConfig = match &a.sac_config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => SACConfig::default(),
            };
            cfg.seed = a.seed;
            if let Some(steps) = a.steps {
                cfg.total_env_steps = steps;
            }
            let t0 = std::time::Instant::now();
            let (nets, log) = train_policy::<f32>(
                &mut env,
                &cfg,
                Some(&mut |step, rec| {
                    println!(
                        "step {:>7}  ep {:>4}  return {:>7.2}  len {:>4}  {}",
                        step, rec.episode, rec.ret, rec.length, rec.tag
                    );
                }),
            )?;
            save_policy(&a.out, &nets.policy, &cfg.arch)?;
            if let Some(log_path) = &a.log {
                std::fs::write(log_path, log.to_csv())?;
            }
            println!(
                "trained {} env steps in {:.1} min; policy written to {}",
                cfg.total_env_steps,
                t0.elapsed().as_secs_f64() / 60.0,
                a.out.display()
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let spec = parse_scene(&a.env.scene)?;
            let mut env = build_env(&a.env)?;
            let mut agent = build_agent(&a.policy, &spec)?;
            let report = evaluate(
                agent.as_mut(),
                &mut env,
                a.episodes,
                a.seed_base,
                a.traces.as_deref(),
            )?;
            println!("{}", report.summary_line(agent.name()));
            if let Some(out) = &a.out {
                std::fs::write(out, report.to_csv())?;
            }
            Ok(())
        }
        Command::Compare(a) => {
            let spec = parse_scene(&a.env.scene)?;
            // The two evaluation environments share EnvConfig and collision
            // mesh; only the rendering backend differs.
            let mut field_args = a.env.clone();
            field_args.backend = "field".into();
            let mut field_env = build_env(&field_args)?;
            let mut oracle_args = a.env.clone();
            oracle_args.backend = "oracle".into();
            let mut oracle_env = build_env(&oracle_args)?;

            let mut agent_a = build_agent(&a.policy_a, &spec)?;
            let mut agent_b = build_agent(&a.policy_b, &spec)?;
            let mut policies: Vec<&mut dyn Agent> = vec![agent_a.as_mut(), agent_b.as_mut()];
            let mut envs: Vec<(&str, &mut DriveEnv)> = vec![
                ("validation(field)", &mut field_env),
                ("oracle(real)", &mut oracle_env),
            ];
            let report =
                compare_envs(&mut policies, &mut envs, a.episodes, a.seed_base, a.margin)?;
            print!("{}", report.table());
            for (i, j, verdict) in report.rank_agreement(0, 1) {
                let text = match verdict {
                    Some(true) => "agree",
                    Some(false) => "DISAGREE",
                    None => "within margin (undefined)",
                };
                println!(
                    "rank {} vs {}: {}",
                    report.policy_names[i], report.policy_names[j], text
                );
            }
            if let Some(out) = &a.out {
                std::fs::write(out, report.to_csv())?;
            }
            Ok(())
        }
        Command::Interpolate(a) => {
            let field = load_field::<f32>(&a.field)?;
            let row = |id: u32| {
                field
                    .condition_row(id)
                    .ok_or_else(|| Error::InvalidConfig(format!("field has no condition {id}")))
            };
            let e0 = field.embedding_row(row(a.from_cond)?);
            let e1 = field.embedding_row(row(a.to_cond)?);
            let (x, y, heading) = parse_pose(&a.pose)?;
            let pose = vehicle_camera_pose(v3(x, y, 0.6), heading, -5.0_f64.to_radians());
            let intr = CameraIntrinsics::with_hfov(a.width, a.height, 1.5);
            let cfg = RenderConfig::default();
            let (frames, luminance) =
                interpolate_embeddings(&e0, &e1, a.steps, &field, &pose, &intr, &cfg)?;
            std::fs::create_dir_all(&a.out)?;
            for (i, f) in frames.iter().enumerate() {
                f.write_ppm(&a.out.join(format!("interp_{i:03}.ppm")))?;
            }
            std::fs::write(a.out.join("luminance.csv"), luminance_csv(&luminance))?;
            println!(
                "wrote {} frames and luminance.csv to {}",
                frames.len(),
                a.out.display()
            );
            Ok(())
        }
        Command::Render(a) => {
            let spec = parse_scene(&a.scene)?;
            let (x, y, heading) = parse_pose(&a.pose)?;
            let pose = vehicle_camera_pose(v3(x, y, 0.6), heading, -5.0_f64.to_radians());
            let intr = CameraIntrinsics::with_hfov(a.width, a.height, 1.5);
            let img = match a.backend.as_str() {
                "oracle" => {
                    let geo = build_geometry(&spec);
                    let cond = spec
                        .condition(a.cond)
                        .ok_or_else(|| Error::InvalidConfig(format!("no condition {}", a.cond)))?;
                    let cfg = RenderConfig {
                        samples_per_ray: a.samples,
                        ..RenderConfig::default()
                    };
                    oracle_render(&spec, &geo, cond, &pose, &intr, &cfg)?
                }
                "field" => {
                    let path = a.field.as_ref().ok_or_else(|| {
                        Error::InvalidConfig("field render requires --field".into())
                    })?;
                    let field = load_field::<f32>(path)?;
                    let row = field.condition_row(a.cond).ok_or_else(|| {
                        Error::InvalidConfig(format!("field has no condition {}", a.cond))
                    })?;
                    let emb = field.embedding_row(row);
                    let cfg = RenderConfig {
                        samples_per_ray: a.samples,
                        ..RenderConfig::default()
                    };
                    render_image(&field, &emb, &pose, &intr, &cfg, &RngStream::seed(0))?
                }
                "raster" => {
                    let align = AlignmentTransform::IDENTITY;
                    let collision = build_collision(&spec, &a.mesh, &align)?;
                    let backend = RasterBackend::new(collision);
                    use crate::sim::ObsBackend;
                    backend.render(&pose, &intr, &Appearance::Flat)?
                }
                other => {
                    return Err(Error::InvalidConfig(format!("unknown backend '{other}'")))
                }
            };
            img.write_ppm(&a.out)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
    }
}
