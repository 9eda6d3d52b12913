//! Driving environment: differential-drive kinematics with exact arc
//! integration, mesh collision, simulator-to-field frame alignment, and the
//! RL interface (stacked rendered observations, rewards, termination).

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::field::{vehicle_camera_pose, AppearanceEmbedding, RadianceFieldParams};
use crate::geom::{is_rotation, mat_mul_mat, mat_mul_vec, mat_transpose, rot_z, v3, Vec3};
use crate::image::Image;
use crate::mesh::{CollisionMesh, OccupancyGrid};
use crate::num::Real;
use crate::render::RenderConfig;
use crate::rng::RngStream;
use crate::scene::{oracle_render, LightingCondition, SceneGeometry, SceneSpec};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: [f64; 2],
    pub heading: f64,
    pub linear_velocity: f64,
    pub angular_velocity: f64,
    pub elapsed_steps: u32,
}

impl VehicleState {
    pub fn at(x: f64, y: f64, heading: f64) -> Self {
        VehicleState {
            position: [x, y],
            heading: wrap_angle(heading),
            linear_velocity: 0.0,
            angular_velocity: 0.0,
            elapsed_steps: 0,
        }
    }
}

/// Wraps to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI);
    if x == 0.0 {
        x = 2.0 * PI;
    }
    x - PI
}

/// Similarity transform between simulator and field frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
    pub scale: f64,
}

impl AlignmentTransform {
    pub const IDENTITY: AlignmentTransform = AlignmentTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: Vec3::ZERO,
        scale: 1.0,
    };

    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3, scale: f64) -> Result<Self> {
        if !is_rotation(&rotation, 1e-6) {
            return Err(Error::InvalidConfig("alignment rotation not orthonormal".into()));
        }
        if scale <= 0.0 {
            return Err(Error::InvalidConfig("alignment scale must be positive".into()));
        }
        Ok(AlignmentTransform {
            rotation,
            translation,
            scale,
        })
    }

    pub fn yaw(yaw: f64, translation: Vec3, scale: f64) -> Result<Self> {
        AlignmentTransform::new(rot_z(yaw), translation, scale)
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        mat_mul_vec(&self.rotation, p) * self.scale + self.translation
    }

    pub fn apply_dir(&self, d: Vec3) -> Vec3 {
        mat_mul_vec(&self.rotation, d)
    }

    /// Closed-form inverse.
    pub fn inverse(&self) -> AlignmentTransform {
        let rt = mat_transpose(&self.rotation);
        AlignmentTransform {
            rotation: rt,
            translation: mat_mul_vec(&rt, -self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    pub fn apply_pose(&self, pose: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: mat_mul_mat(&self.rotation, &pose.rotation),
            translation: self.apply_point(pose.translation),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub dt: f64,
    pub max_linear: f64,
    pub max_angular: f64,
    pub camera_height: f64,
    pub camera_pitch: f64,
    pub frame_stack: usize,
    pub obs_height: u32,
    pub obs_width: u32,
    /// Horizontal field of view of the observation camera, radians.
    pub obs_hfov: f64,
    /// Volume-rendering samples per ray for field observations.
    pub obs_samples_per_ray: usize,
    pub time_limit_steps: u32,
    /// (xmin, xmax, ymin, ymax) in the simulator ground plane.
    pub goal_region: [f64; 4],
    pub start_x: f64,
    pub start_y: f64,
    pub start_heading: f64,
    pub start_pos_jitter: f64,
    pub start_heading_jitter: f64,
    pub vehicle_radius: f64,
    pub reward_survive: f64,
    pub reward_collision: f64,
    pub reward_fail: f64,
    pub randomize_embedding: bool,
    /// Replay done-mask policy: timeouts bootstrap (mask 1) when true.
    pub timeout_bootstrap: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.1,
            max_linear: 1.0,
            max_angular: 1.0,
            camera_height: 0.6,
            camera_pitch: -5.0_f64.to_radians(),
            frame_stack: 4,
            obs_height: 90,
            obs_width: 160,
            obs_hfov: 1.5,
            obs_samples_per_ray: 24,
            time_limit_steps: 400,
            goal_region: [11.0, 13.0, -2.0, 2.0],
            start_x: 1.0,
            start_y: 0.0,
            start_heading: 0.0,
            start_pos_jitter: 0.5,
            start_heading_jitter: 0.15,
            vehicle_radius: 0.5,
            reward_survive: 0.1,
            reward_collision: -4.0,
            reward_fail: -5.0,
            randomize_embedding: true,
            timeout_bootstrap: true,
        }
    }
}

impl EnvConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::with_hfov(self.obs_width, self.obs_height, self.obs_hfov)
    }

    pub fn in_goal(&self, x: f64, y: f64) -> bool {
        let [x0, x1, y0, y1] = self.goal_region;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// `key=value` lines, `#` comments, keys matching the field names.
    pub fn to_key_values(&self) -> String {
        let g = self.goal_region;
        format!(
            "dt={}\nmax_linear={}\nmax_angular={}\ncamera_height={}\ncamera_pitch={}\n\
             frame_stack={}\nobs_height={}\nobs_width={}\nobs_hfov={}\nobs_samples_per_ray={}\n\
             time_limit_steps={}\ngoal_region={},{},{},{}\nstart_x={}\nstart_y={}\n\
             start_heading={}\nstart_pos_jitter={}\nstart_heading_jitter={}\nvehicle_radius={}\n\
             reward_survive={}\nreward_collision={}\nreward_fail={}\nrandomize_embedding={}\n\
             timeout_bootstrap={}\n",
            self.dt,
            self.max_linear,
            self.max_angular,
            self.camera_height,
            self.camera_pitch,
            self.frame_stack,
            self.obs_height,
            self.obs_width,
            self.obs_hfov,
            self.obs_samples_per_ray,
            self.time_limit_steps,
            g[0],
            g[1],
            g[2],
            g[3],
            self.start_x,
            self.start_y,
            self.start_heading,
            self.start_pos_jitter,
            self.start_heading_jitter,
            self.vehicle_radius,
            self.reward_survive,
            self.reward_collision,
            self.reward_fail,
            self.randomize_embedding,
            self.timeout_bootstrap,
        )
    }

    pub fn from_key_values(text: &str) -> Result<EnvConfig> {
        let mut cfg = EnvConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |k: &str| Error::InvalidConfig(format!("bad value for {k}"));
            macro_rules! parse {
                ($field:ident) => {
                    cfg.$field = value.parse().map_err(|_| bad(key))?
                };
            }
            match key {
                "dt" => parse!(dt),
                "max_linear" => parse!(max_linear),
                "max_angular" => parse!(max_angular),
                "camera_height" => parse!(camera_height),
                "camera_pitch" => parse!(camera_pitch),
                "frame_stack" => parse!(frame_stack),
                "obs_height" => parse!(obs_height),
                "obs_width" => parse!(obs_width),
                "obs_hfov" => parse!(obs_hfov),
                "obs_samples_per_ray" => parse!(obs_samples_per_ray),
                "time_limit_steps" => parse!(time_limit_steps),
                "goal_region" => {
                    let parts: Vec<f64> = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(key))?;
                    if parts.len() != 4 {
                        return Err(bad(key));
                    }
                    cfg.goal_region = [parts[0], parts[1], parts[2], parts[3]];
                }
                "start_x" => parse!(start_x),
                "start_y" => parse!(start_y),
                "start_heading" => parse!(start_heading),
                "start_pos_jitter" => parse!(start_pos_jitter),
                "start_heading_jitter" => parse!(start_heading_jitter),
                "vehicle_radius" => parse!(vehicle_radius),
                "reward_survive" => parse!(reward_survive),
                "reward_collision" => parse!(reward_collision),
                "reward_fail" => parse!(reward_fail),
                "randomize_embedding" => parse!(randomize_embedding),
                "timeout_bootstrap" => parse!(timeout_bootstrap),
                other => {
                    return Err(Error::InvalidConfig(format!("unknown key '{other}'")));
                }
            }
        }
        Ok(cfg)
    }

    /// Defaults tuned for the desk-scale straight corridor: the goal sits
    /// near the end wall and the time limit is tight enough that driving to
    /// the goal beats idling to a timeout in discounted return.
    pub fn straight_desk(spec: &SceneSpec) -> EnvConfig {
        let l = spec.road_length;
        let w2 = spec.road_width * 0.5;
        EnvConfig {
            time_limit_steps: 160,
            goal_region: [l - 3.0, l - 1.0, -w2, w2],
            ..EnvConfig::default()
        }
    }

    /// Defaults for the right-turn scene: the goal sits near the end of the
    /// second leg.
    pub fn turn_desk(spec: &SceneSpec) -> EnvConfig {
        let l1 = spec.leg1();
        let l2 = spec.road_length - l1;
        let w2 = spec.road_width * 0.5;
        EnvConfig {
            time_limit_steps: 280,
            goal_region: [l1 - w2, l1 + w2, -(l2 - 1.0), -(l2 - 3.0)],
            ..EnvConfig::default()
        }
    }
}

/// Exact arc integration of clamped (v, omega) commands.
pub fn step_vehicle(state: &VehicleState, action: [f64; 2], cfg: &EnvConfig) -> VehicleState {
    let v = action[0].clamp(-1.0, 1.0) * cfg.max_linear;
    let w = action[1].clamp(-1.0, 1.0) * cfg.max_angular;
    let [x, y] = state.position;
    let h = state.heading;
    let (nx, ny) = if w.abs() < 1e-6 {
        (x + v * cfg.dt * h.cos(), y + v * cfg.dt * h.sin())
    } else {
        let r = v / w;
        let h2 = h + w * cfg.dt;
        (x + r * (h2.sin() - h.sin()), y - r * (h2.cos() - h.cos()))
    };
    VehicleState {
        position: [nx, ny],
        heading: wrap_angle(h + w * cfg.dt),
        linear_velocity: v,
        angular_velocity: w,
        elapsed_steps: state.elapsed_steps + 1,
    }
}

/// Camera pose in the field frame for the current vehicle state.
pub fn sim_to_field_pose(
    state: &VehicleState,
    cfg: &EnvConfig,
    align: &AlignmentTransform,
) -> CameraPose {
    let eye = v3(state.position[0], state.position[1], cfg.camera_height);
    let pose = vehicle_camera_pose(eye, state.heading, cfg.camera_pitch);
    align.apply_pose(&pose)
}

/// Episode appearance drawn at reset time.
#[derive(Debug, Clone, PartialEq)]
pub enum Appearance {
    Embedding(AppearanceEmbedding),
    Lighting(u32),
    Flat,
}

/// Where episode appearances come from.
#[derive(Debug, Clone)]
pub enum AppearanceSource {
    FixedEmbedding(AppearanceEmbedding),
    /// Uniform choice over the trained rows plus Gaussian jitter.
    EmbeddingMixture {
        rows: Vec<AppearanceEmbedding>,
        jitter_sigma: f64,
    },
    /// Oracle lighting conditions, drawn uniformly per episode.
    LightingSet(Vec<u32>),
    FixedLighting(u32),
    Flat,
}

impl AppearanceSource {
    fn draw(&self, rng: &mut RngStream) -> Appearance {
        match self {
            AppearanceSource::FixedEmbedding(e) => Appearance::Embedding(e.clone()),
            AppearanceSource::EmbeddingMixture { rows, jitter_sigma } => {
                let row = &rows[rng.below(rows.len() as u64) as usize];
                let jittered = row
                    .0
                    .iter()
                    .map(|v| (*v as f64 + rng.normal() * jitter_sigma) as f32)
                    .collect();
                Appearance::Embedding(AppearanceEmbedding(jittered))
            }
            AppearanceSource::LightingSet(ids) => {
                Appearance::Lighting(ids[rng.below(ids.len() as u64) as usize])
            }
            AppearanceSource::FixedLighting(id) => Appearance::Lighting(*id),
            AppearanceSource::Flat => Appearance::Flat,
        }
    }
}

/// Observation renderer behind the environment.
pub trait ObsBackend: Send + Sync {
    fn render(
        &self,
        pose: &CameraPose,
        intr: &CameraIntrinsics,
        appearance: &Appearance,
    ) -> Result<Image>;
    fn name(&self) -> &'static str;
}

/// Learned-field renderer with occupancy-based empty-space skipping: sample
/// positions are the same uniform midpoints as the exact renderer, but
/// samples in cells the trained field marks empty are treated as vacuum
/// without evaluating the MLP.
pub struct FieldBackend<R: Real> {
    pub params: Arc<RadianceFieldParams<R>>,
    pub occupancy: Option<OccupancyGrid>,
    pub background: [f64; 3],
    pub samples_per_ray: usize,
    pub term_transmittance: f64,
}

impl<R: Real> FieldBackend<R> {
    pub fn new(params: Arc<RadianceFieldParams<R>>, samples_per_ray: usize) -> Self {
        FieldBackend {
            params,
            occupancy: None,
            background: [1.0, 1.0, 1.0],
            samples_per_ray,
            term_transmittance: 1e-3,
        }
    }

    /// Builds the skip structure by sampling the field's own density.
    pub fn with_occupancy(mut self, cell: f64, threshold: f64) -> Result<Self> {
        let grid = crate::mesh::sample_density_grid(
            &crate::mesh::FieldDensity::new(&self.params),
            &self.params.scene_bounds,
            cell,
        )?;
        self.occupancy = Some(OccupancyGrid::from_density_grid(&grid, threshold, 1));
        Ok(self)
    }
}

impl<R: Real> ObsBackend for FieldBackend<R> {
    fn render(
        &self,
        pose: &CameraPose,
        intr: &CameraIntrinsics,
        appearance: &Appearance,
    ) -> Result<Image> {
        let Appearance::Embedding(embedding) = appearance else {
            return Err(Error::RendererFailure(
                "field backend needs an embedding appearance".into(),
            ));
        };
        let bounds = self.params.padded_bounds();
        let t_near = crate::render::cfg_t_near();
        let t_far = self.params.scene_bounds.diagonal().max(1.0);
        let bg = self.background;
        let bg_f32 = [bg[0] as f32, bg[1] as f32, bg[2] as f32];
        let mut img = Image::new(intr.width, intr.height);
        let mut scratch = crate::field::FieldScratch::<R>::default();
        let term = self.term_transmittance;
        for v in 0..intr.height {
            for u in 0..intr.width {
                let dir = pose.pixel_direction(intr, u as f64, v as f64);
                let Some((t0, t1)) = bounds.clip_ray(pose.translation, dir, t_near, t_far)
                else {
                    img.set_pixel(u, v, bg_f32);
                    continue;
                };
                let n = self.samples_per_ray;
                let binw = (t1 - t0) / n as f64;
                let mut transmittance = 1.0f64;
                let mut acc = [0.0f64; 3];
                for i in 0..n {
                    let t = t0 + (i as f64 + 0.5) * binw;
                    let p = pose.translation + dir * t;
                    if let Some(occ) = &self.occupancy {
                        if !occ.occupied_at(p) {
                            continue;
                        }
                    }
                    let out = crate::field::field_forward(
                        &self.params,
                        p,
                        dir,
                        embedding,
                        &mut scratch,
                    )?;
                    let alpha = 1.0 - (-out.sigma.f64() * binw).exp();
                    let w = transmittance * alpha;
                    for c in 0..3 {
                        acc[c] += w * out.rgb[c].f64();
                    }
                    transmittance *= 1.0 - alpha;
                    if transmittance < term {
                        break;
                    }
                }
                for c in 0..3 {
                    acc[c] += transmittance * bg[c];
                }
                img.set_pixel(u, v, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
            }
        }
        Ok(img)
    }

    fn name(&self) -> &'static str {
        "field"
    }
}

/// Analytic-scene renderer: the stand-in for real-world camera footage.
pub struct OracleBackend {
    pub spec: SceneSpec,
    pub geo: SceneGeometry,
    pub samples_per_ray: usize,
}

impl OracleBackend {
    pub fn new(spec: SceneSpec) -> Self {
        let geo = crate::scene::build_geometry(&spec);
        OracleBackend {
            spec,
            geo,
            samples_per_ray: 48,
        }
    }

    fn condition(&self, id: u32) -> Result<&LightingCondition> {
        self.spec
            .condition(id)
            .ok_or_else(|| Error::RendererFailure(format!("unknown lighting id {id}")))
    }
}

impl ObsBackend for OracleBackend {
    fn render(
        &self,
        pose: &CameraPose,
        intr: &CameraIntrinsics,
        appearance: &Appearance,
    ) -> Result<Image> {
        let Appearance::Lighting(id) = appearance else {
            return Err(Error::RendererFailure(
                "oracle backend needs a lighting-condition appearance".into(),
            ));
        };
        let cond = self.condition(*id)?;
        let cfg = RenderConfig {
            samples_per_ray: self.samples_per_ray,
            stratified: false,
            background: [1.0, 1.0, 1.0],
            white_bkgd_scale: 1.0,
            term_transmittance: 1e-3,
        };
        oracle_render(&self.spec, &self.geo, cond, pose, intr, &cfg)
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Flat-shaded rendering of the collision mesh: the desk-scale analog of a
/// plain simulator rendering pipeline.
pub struct RasterBackend {
    pub mesh: Arc<CollisionMesh>,
    pub albedo: [f64; 3],
    pub light_dir: Vec3,
    pub ambient: f64,
    pub diffuse: f64,
    pub background: [f64; 3],
}

impl RasterBackend {
    pub fn new(mesh: Arc<CollisionMesh>) -> Self {
        RasterBackend {
            mesh,
            albedo: [0.55, 0.55, 0.58],
            light_dir: v3(0.4, 0.2, 0.85).normalized(),
            ambient: 0.35,
            diffuse: 0.65,
            background: [0.70, 0.75, 0.85],
        }
    }
}

impl ObsBackend for RasterBackend {
    fn render(
        &self,
        pose: &CameraPose,
        intr: &CameraIntrinsics,
        _appearance: &Appearance,
    ) -> Result<Image> {
        let mut img = Image::new(intr.width, intr.height);
        let bg = [
            self.background[0] as f32,
            self.background[1] as f32,
            self.background[2] as f32,
        ];
        for v in 0..intr.height {
            for u in 0..intr.width {
                let dir = pose.pixel_direction(intr, u as f64, v as f64);
                match self.mesh.closest_hit(pose.translation, dir, 200.0) {
                    Some((_t, tri)) => {
                        let n = self.mesh.mesh.normals[tri as usize];
                        let shade =
                            self.ambient + self.diffuse * n.dot(self.light_dir).abs();
                        img.set_pixel(
                            u,
                            v,
                            [
                                (self.albedo[0] * shade) as f32,
                                (self.albedo[1] * shade) as f32,
                                (self.albedo[2] * shade) as f32,
                            ],
                        );
                    }
                    None => img.set_pixel(u, v, bg),
                }
            }
        }
        Ok(img)
    }

    fn name(&self) -> &'static str {
        "raster"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeTag {
    Running,
    Success,
    Collision,
    OutOfBounds,
    Timeout,
}

impl OutcomeTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeTag::Running => "running",
            OutcomeTag::Success => "success",
            OutcomeTag::Collision => "collision",
            OutcomeTag::OutOfBounds => "out_of_bounds",
            OutcomeTag::Timeout => "timeout",
        }
    }
}

/// Stack of the most recent rendered frames, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frames: Vec<Image>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub tag: OutcomeTag,
}

pub struct DriveEnv {
    pub cfg: EnvConfig,
    pub backend: Box<dyn ObsBackend>,
    pub appearance_source: AppearanceSource,
    pub collision: Arc<CollisionMesh>,
    pub geo: SceneGeometry,
    pub align: AlignmentTransform,
    intr: CameraIntrinsics,
    state: VehicleState,
    frames: Vec<Image>,
    episode_appearance: Appearance,
    done: bool,
    started: bool,
}

impl DriveEnv {
    pub fn new(
        cfg: EnvConfig,
        spec: &SceneSpec,
        backend: Box<dyn ObsBackend>,
        appearance_source: AppearanceSource,
        collision: Arc<CollisionMesh>,
        align: AlignmentTransform,
    ) -> Self {
        let intr = cfg.intrinsics();
        DriveEnv {
            cfg,
            backend,
            appearance_source,
            collision,
            geo: crate::scene::build_geometry(spec),
            align,
            intr,
            state: VehicleState::at(0.0, 0.0, 0.0),
            frames: Vec::new(),
            episode_appearance: Appearance::Flat,
            done: true,
            started: false,
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn episode_appearance(&self) -> &Appearance {
        &self.episode_appearance
    }

    fn render_state(&self) -> Result<Image> {
        let pose = sim_to_field_pose(&self.state, &self.cfg, &self.align);
        self.backend.render(&pose, &self.intr, &self.episode_appearance)
    }

    fn camera_base(&self, state: &VehicleState) -> Vec3 {
        v3(state.position[0], state.position[1], self.cfg.camera_height)
    }

    /// Samples a start pose and episode appearance, renders the first frame
    /// and replicates it across the stack.
    pub fn reset(&mut self, rng: &mut RngStream) -> Result<Observation> {
        let j = self.cfg.start_pos_jitter;
        self.state = VehicleState::at(
            self.cfg.start_x + rng.uniform_in(-j, j),
            self.cfg.start_y + rng.uniform_in(-j, j),
            self.cfg.start_heading
                + rng.uniform_in(-self.cfg.start_heading_jitter, self.cfg.start_heading_jitter),
        );
        self.episode_appearance = if self.cfg.randomize_embedding {
            self.appearance_source.draw(rng)
        } else {
            // Fixed appearance: the source's deterministic value.
            match &self.appearance_source {
                AppearanceSource::EmbeddingMixture { rows, .. } => {
                    Appearance::Embedding(rows[0].clone())
                }
                AppearanceSource::LightingSet(ids) => Appearance::Lighting(ids[0]),
                other => other.clone().draw(&mut RngStream::seed(0)),
            }
        };
        self.done = false;
        self.started = true;
        let frame = self.render_state()?;
        self.frames = vec![frame; self.cfg.frame_stack];
        Ok(Observation {
            frames: self.frames.clone(),
        })
    }

    /// Advances one control step. Collision is a capsule sweep of the
    /// camera-base point against the collision mesh; boundary deviation is
    /// tested against the analytic road polygon; the goal is a box on the
    /// ground plane.
    pub fn step(&mut self, action: [f64; 2]) -> Result<StepOutcome> {
        if self.done || !self.started {
            return Err(Error::EpisodeFinished);
        }
        let prev = self.state;
        self.state = step_vehicle(&prev, action, &self.cfg);
        let p0 = self.camera_base(&prev);
        let p1 = self.camera_base(&self.state);
        let [x, y] = self.state.position;

        let collided = self
            .collision
            .segment_intersect(p0, p1, self.cfg.vehicle_radius)
            .is_some();
        let tag = if collided {
            OutcomeTag::Collision
        } else if !self.geo.on_road(x, y) {
            OutcomeTag::OutOfBounds
        } else if self.cfg.in_goal(x, y) {
            OutcomeTag::Success
        } else if self.state.elapsed_steps >= self.cfg.time_limit_steps {
            OutcomeTag::Timeout
        } else {
            OutcomeTag::Running
        };
        let reward = match tag {
            OutcomeTag::Running | OutcomeTag::Success => self.cfg.reward_survive,
            OutcomeTag::Collision => self.cfg.reward_collision,
            OutcomeTag::OutOfBounds | OutcomeTag::Timeout => self.cfg.reward_fail,
        };
        self.done = tag != OutcomeTag::Running;

        let frame = self.render_state()?;
        self.frames.remove(0);
        self.frames.push(frame);
        Ok(StepOutcome {
            observation: Observation {
                frames: self.frames.clone(),
            },
            reward,
            done: self.done,
            tag,
        })
    }
}
