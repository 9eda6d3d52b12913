//! Evaluation harness: success-rate measurement, cross-environment
//! forecasting comparison, and appearance-embedding interpolation renders.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::field::{AppearanceEmbedding, RadianceFieldParams};
use crate::image::Image;
use crate::num::Real;
use crate::render::{render_image, RenderConfig};
use crate::rng::RngStream;
use crate::sac::{observation_input, policy_sample, PolicyCache, PolicyNet};
use crate::scene::{centerline, SceneSpec};
use crate::sim::{DriveEnv, Observation, RasterBackend, VehicleState};
use crate::mesh::CollisionMesh;
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

/// Anything that can drive the environment.
pub trait Agent {
    fn begin_episode(&mut self) {}
    fn act(&mut self, obs: &Observation, state: &VehicleState) -> [f64; 2];
    fn name(&self) -> &str;
}

/// Trained SAC policy in deterministic mode.
pub struct PolicyAgent<R: Real> {
    pub policy: PolicyNet<R>,
    label: String,
    cache: PolicyCache<R>,
    input: Vec<R>,
    rng: RngStream,
}

impl<R: Real> PolicyAgent<R> {
    pub fn new(policy: PolicyNet<R>, label: impl Into<String>) -> Self {
        PolicyAgent {
            policy,
            label: label.into(),
            cache: PolicyCache::default(),
            input: Vec::new(),
            rng: RngStream::seed(0),
        }
    }
}

impl<R: Real> Agent for PolicyAgent<R> {
    fn act(&mut self, obs: &Observation, _state: &VehicleState) -> [f64; 2] {
        observation_input(obs, &mut self.input);
        match policy_sample(&self.policy, &self.input, &mut self.rng, true, &mut self.cache) {
            Ok((a, _)) => a,
            Err(_) => [0.0, 0.0],
        }
    }

    fn name(&self) -> &str {
        &self.label
    }
}

/// Reference centerline follower: a state-reading sanity anchor that is
/// independent of any learned policy.
pub struct ScriptedDriver {
    line: Vec<[f64; 2]>,
    pub speed: f64,
    pub lookahead: f64,
    pub gain: f64,
}

impl ScriptedDriver {
    pub fn new(spec: &SceneSpec) -> Self {
        ScriptedDriver {
            line: centerline(spec),
            speed: 0.9,
            lookahead: 1.5,
            gain: 2.0,
        }
    }

    /// Arc-length of the closest centerline point to (x, y).
    fn project(&self, x: f64, y: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut s0 = 0.0;
        for seg in self.line.windows(2) {
            let (ax, ay) = (seg[0][0], seg[0][1]);
            let (dx, dy) = (seg[1][0] - ax, seg[1][1] - ay);
            let len2 = dx * dx + dy * dy;
            let t = (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0);
            let (px, py) = (ax + dx * t, ay + dy * t);
            let d2 = (x - px) * (x - px) + (y - py) * (y - py);
            if d2 < best.0 {
                best = (d2, s0 + t * len2.sqrt());
            }
            s0 += len2.sqrt();
        }
        best.1
    }

    fn point_at(&self, s: f64) -> [f64; 2] {
        let mut remaining = s.max(0.0);
        for seg in self.line.windows(2) {
            let (dx, dy) = (seg[1][0] - seg[0][0], seg[1][1] - seg[0][1]);
            let len = (dx * dx + dy * dy).sqrt();
            if remaining <= len {
                let t = remaining / len;
                return [seg[0][0] + dx * t, seg[0][1] + dy * t];
            }
            remaining -= len;
        }
        *self.line.last().unwrap()
    }
}

impl Agent for ScriptedDriver {
    fn act(&mut self, _obs: &Observation, state: &VehicleState) -> [f64; 2] {
        let [x, y] = state.position;
        let s = self.project(x, y);
        let target = self.point_at(s + self.lookahead);
        let desired = (target[1] - y).atan2(target[0] - x);
        let err = crate::sim::wrap_angle(desired - state.heading);
        [self.speed, (self.gain * err).clamp(-1.0, 1.0)]
    }

    fn name(&self) -> &str {
        "scripted-centerline"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub steps: u32,
    pub ret: f64,
    pub tag: String,
    pub end_x: f64,
    pub end_y: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OutcomeHistogram {
    pub success: usize,
    pub collision: usize,
    pub out_of_bounds: usize,
    pub timeout: usize,
    pub crashed: usize,
}

impl OutcomeHistogram {
    pub fn total(&self) -> usize {
        self.success + self.collision + self.out_of_bounds + self.timeout + self.crashed
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub histogram: OutcomeHistogram,
    pub mean_return: f64,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,steps,return,tag,end_x,end_y\n");
        for e in &self.episodes {
            s.push_str(&format!(
                "{},{},{:.3},{},{:.3},{:.3}\n",
                e.seed, e.steps, e.ret, e.tag, e.end_x, e.end_y
            ));
        }
        s
    }

    pub fn summary_line(&self, label: &str) -> String {
        format!(
            "{label}: success {}/{} ({:.2}); collision {}, oob {}, timeout {}, crashed {}; mean return {:.2}",
            self.successes,
            self.n_episodes,
            self.success_rate,
            self.histogram.collision,
            self.histogram.out_of_bounds,
            self.histogram.timeout,
            self.histogram.crashed,
            self.mean_return
        )
    }
}

/// Deterministic rollouts with seeds `seed_base .. seed_base + n`. A crashed
/// episode counts as a failure with its tag recorded.
pub fn evaluate(
    agent: &mut dyn Agent,
    env: &mut DriveEnv,
    n_episodes: usize,
    seed_base: u64,
    trace_dir: Option<&Path>,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be >= 1".into()));
    }
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut histogram = OutcomeHistogram::default();
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut total_return = 0.0;
    for i in 0..n_episodes {
        let seed = seed_base + i as u64;
        let mut rng = RngStream::seed(seed);
        agent.begin_episode();
        let mut run = || -> Result<(EpisodeResult, Vec<String>)> {
            let mut obs = env.reset(&mut rng)?;
            let mut trace = vec!["step,x,y,heading,reward,tag".to_string()];
            let mut ret = 0.0;
            let mut steps = 0u32;
            loop {
                let action = agent.act(&obs, env.state());
                let out = env.step(action)?;
                ret += out.reward;
                steps += 1;
                let st = env.state();
                trace.push(format!(
                    "{},{:.4},{:.4},{:.4},{:.2},{}",
                    steps,
                    st.position[0],
                    st.position[1],
                    st.heading,
                    out.reward,
                    out.tag.as_str()
                ));
                if out.done {
                    let st = *env.state();
                    return Ok((
                        EpisodeResult {
                            seed,
                            steps,
                            ret,
                            tag: out.tag.as_str().to_string(),
                            end_x: st.position[0],
                            end_y: st.position[1],
                        },
                        trace,
                    ));
                }
                obs = out.observation;
            }
        };
        let episode = match run() {
            Ok((episode, trace)) => {
                if let Some(dir) = trace_dir {
                    std::fs::write(
                        dir.join(format!("episode_{i:03}.csv")),
                        trace.join("\n") + "\n",
                    )?;
                }
                episode
            }
            Err(err) => EpisodeResult {
                seed,
                steps: 0,
                ret: 0.0,
                tag: format!("crashed: {err}"),
                end_x: f64::NAN,
                end_y: f64::NAN,
            },
        };
        match episode.tag.as_str() {
            "success" => histogram.success += 1,
            "collision" => histogram.collision += 1,
            "out_of_bounds" => histogram.out_of_bounds += 1,
            "timeout" => histogram.timeout += 1,
            _ => histogram.crashed += 1,
        }
        total_return += episode.ret;
        episodes.push(episode);
    }
    Ok(EvalReport {
        n_episodes,
        successes: histogram.success,
        success_rate: histogram.success as f64 / n_episodes as f64,
        histogram,
        mean_return: total_return / n_episodes as f64,
        episodes,
    })
}

/// Success-rate grid over policies and environments, plus pairwise rank
/// agreement between two designated environments.
#[derive(Debug, Clone, Serialize)]
pub struct ForecastReport {
    pub policy_names: Vec<String>,
    pub env_names: Vec<String>,
    /// `rates[policy][env]`.
    pub rates: Vec<Vec<f64>>,
    pub margin: f64,
}

/// Ranking of a vs b with a noise margin: None when too close to call.
pub fn rank_with_margin(a: f64, b: f64, margin: f64) -> Option<std::cmp::Ordering> {
    if (a - b).abs() <= margin {
        None
    } else {
        a.partial_cmp(&b)
    }
}

impl ForecastReport {
    pub fn env_index(&self, name: &str) -> Option<usize> {
        self.env_names.iter().position(|n| n == name)
    }

    /// For every policy pair: Some(true/false) when both environments rank
    /// the pair decisively, None when either is within the margin.
    pub fn rank_agreement(&self, env_a: usize, env_b: usize) -> Vec<(usize, usize, Option<bool>)> {
        let mut out = Vec::new();
        for i in 0..self.rates.len() {
            for j in i + 1..self.rates.len() {
                let ra = rank_with_margin(self.rates[i][env_a], self.rates[j][env_a], self.margin);
                let rb = rank_with_margin(self.rates[i][env_b], self.rates[j][env_b], self.margin);
                let verdict = match (ra, rb) {
                    (Some(x), Some(y)) => Some(x == y),
                    _ => None,
                };
                out.push((i, j, verdict));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("policy");
        for e in &self.env_names {
            s.push_str(&format!(",{e}"));
        }
        s.push('\n');
        for (p, row) in self.policy_names.iter().zip(&self.rates) {
            s.push_str(p);
            for r in row {
                s.push_str(&format!(",{r:.3}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<24}", "policy \\ env");
        for e in &self.env_names {
            s.push_str(&format!("{e:>12}"));
        }
        s.push('\n');
        for (p, row) in self.policy_names.iter().zip(&self.rates) {
            s.push_str(&format!("{p:<24}"));
            for r in row {
                s.push_str(&format!("{r:>12.3}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Full evaluate grid of every policy in every environment.
pub fn compare_envs(
    policies: &mut [&mut dyn Agent],
    envs: &mut [(&str, &mut DriveEnv)],
    n_episodes: usize,
    seed_base: u64,
    margin: f64,
) -> Result<ForecastReport> {
    if policies.len() < 2 || envs.len() < 2 {
        return Err(Error::InvalidConfig(
            "compare_envs needs at least 2 policies and 2 environments".into(),
        ));
    }
    let mut rates = vec![vec![0.0; envs.len()]; policies.len()];
    let mut policy_names = Vec::new();
    for (pi, agent) in policies.iter_mut().enumerate() {
        policy_names.push(agent.name().to_string());
        for (ei, (_, env)) in envs.iter_mut().enumerate() {
            let report = evaluate(*agent, env, n_episodes, seed_base, None)?;
            rates[pi][ei] = report.success_rate;
        }
    }
    Ok(ForecastReport {
        policy_names,
        env_names: envs.iter().map(|(n, _)| n.to_string()).collect(),
        rates,
        margin,
    })
}

/// The mesh-preview renderer used by the baseline-simulator setup.
pub fn rasterized_backend(mesh: Arc<CollisionMesh>) -> RasterBackend {
    RasterBackend::new(mesh)
}

/// Linear interpolation between two embeddings, rendered from a fixed pose;
/// returns the frames and their mean-luminance series.
#[allow(clippy::too_many_arguments)]
pub fn interpolate_embeddings<R: Real>(
    e_day: &AppearanceEmbedding,
    e_night: &AppearanceEmbedding,
    steps: usize,
    field: &RadianceFieldParams<R>,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<(Vec<Image>, Vec<f64>)> {
    if steps < 2 {
        return Err(Error::InvalidConfig("interpolation needs >= 2 steps".into()));
    }
    if e_day.0.len() != e_night.0.len() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings {} vs {}",
            e_day.0.len(),
            e_night.0.len()
        )));
    }
    let rng = RngStream::seed(0);
    let mut frames = Vec::with_capacity(steps);
    let mut luminance = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let emb = e_day.lerp(e_night, t)?;
        let img = render_image(field, &emb, pose, intr, cfg, &rng)?;
        luminance.push(img.mean_luminance());
        frames.push(img);
    }
    Ok((frames, luminance))
}

/// Monotone up to at most one adjacent swap: the tolerance the day-to-night
/// luminance series is held to.
pub fn monotone_with_one_swap(series: &[f64], decreasing: bool) -> bool {
    let violations = series
        .windows(2)
        .filter(|w| if decreasing { w[0] < w[1] } else { w[0] > w[1] })
        .count();
    violations <= 1
}

pub fn luminance_csv(series: &[f64]) -> String {
    let mut s = String::from("step,mean_luminance\n");
    for (i, l) in series.iter().enumerate() {
        s.push_str(&format!("{i},{l:.6}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_params, FieldArchitecture};
    use crate::geom::v3;
    use crate::mesh::{marching_cubes, sample_density_grid, SceneDensity};
    use crate::scene::{build_geometry, D_WALL};
    use crate::sim::{AlignmentTransform, AppearanceSource, EnvConfig, OracleBackend};

    fn small_oracle_env(spec: &SceneSpec, cfg_mut: impl FnOnce(&mut EnvConfig)) -> DriveEnv {
        let mut cfg = match spec.layout {
            crate::scene::Layout::StraightRoad => EnvConfig::straight_desk(spec),
            crate::scene::Layout::SingleRightTurn => EnvConfig::turn_desk(spec),
        };
        cfg.obs_width = 16;
        cfg.obs_height = 10;
        cfg.obs_samples_per_ray = 12;
        cfg_mut(&mut cfg);
        let geo = build_geometry(spec);
        let b = geo.interior;
        let bounds = crate::geom::Aabb::new(
            v3(b.min.x, b.min.y - 0.3, 0.3),
            v3(b.max.x + 0.3, b.max.y + 0.3, b.max.z - 0.1),
        );
        let grid = sample_density_grid(&SceneDensity(&geo), &bounds, 0.1).unwrap();
        let mesh = Arc::new(CollisionMesh::new(
            marching_cubes(&grid, D_WALL / 2.0).unwrap(),
        ));
        DriveEnv::new(
            cfg,
            spec,
            Box::new(OracleBackend::new(spec.clone())),
            AppearanceSource::LightingSet(vec![0, 1, 2]),
            mesh,
            AlignmentTransform::IDENTITY,
        )
    }

    #[test]
    fn scripted_driver_full_success_on_straight() {
        let spec = SceneSpec::straight_desk();
        let mut env = small_oracle_env(&spec, |_| {});
        let mut driver = ScriptedDriver::new(&spec);
        let report = evaluate(&mut driver, &mut env, 10, 42, None).unwrap();
        assert_eq!(report.success_rate, 1.0, "{:?}", report.histogram);
        assert_eq!(report.histogram.total(), report.n_episodes);
    }

    #[test]
    fn scripted_driver_handles_the_turn() {
        let spec = SceneSpec::turn_desk();
        let mut env = small_oracle_env(&spec, |_| {});
        let mut driver = ScriptedDriver::new(&spec);
        let report = evaluate(&mut driver, &mut env, 5, 7, None).unwrap();
        assert!(report.success_rate >= 0.8, "{:?}", report.histogram);
    }

    #[test]
    fn untrained_policy_fails_the_turn() {
        use crate::sac::{NetArch, SACConfig, SacNets, ObsShape};
        let spec = SceneSpec::turn_desk();
        let mut env = small_oracle_env(&spec, |c| c.time_limit_steps = 120);
        let shape = ObsShape::for_env(env.cfg.frame_stack, env.cfg.obs_height, env.cfg.obs_width);
        let cfg = SACConfig {
            arch: NetArch {
                conv_channels: [4, 4, 4],
                dense_width: 16,
            },
            ..SACConfig::default()
        };
        let nets = SacNets::<f32>::init(shape, &cfg);
        let mut agent = PolicyAgent::new(nets.policy, "untrained");
        let report = evaluate(&mut agent, &mut env, 10, 3, None).unwrap();
        assert!(report.success_rate <= 0.2, "{}", report.success_rate);
    }

    #[test]
    fn evaluate_is_deterministic_and_writes_traces() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::straight_desk();
        let mut env = small_oracle_env(&spec, |_| {});
        let mut driver = ScriptedDriver::new(&spec);
        let a = evaluate(&mut driver, &mut env, 4, 9, Some(dir.path())).unwrap();
        let b = evaluate(&mut driver, &mut env, 4, 9, None).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let trace = std::fs::read_to_string(dir.path().join("episode_000.csv")).unwrap();
        assert!(trace.starts_with("step,x,y,heading,reward,tag"));
    }

    #[test]
    fn compare_envs_grid_and_self_comparison() {
        let spec = SceneSpec::straight_desk();
        let mut env1 = small_oracle_env(&spec, |_| {});
        let mut env2 = small_oracle_env(&spec, |_| {});
        let mut d1 = ScriptedDriver::new(&spec);
        let mut d2 = ScriptedDriver::new(&spec);
        let mut policies: Vec<&mut dyn Agent> = vec![&mut d1, &mut d2];
        let mut envs: Vec<(&str, &mut DriveEnv)> =
            vec![("oracle-a", &mut env1), ("oracle-b", &mut env2)];
        let report = compare_envs(&mut policies, &mut envs, 3, 5, 0.05).unwrap();
        assert_eq!(report.rates.len(), 2);
        assert_eq!(report.rates[0].len(), 2);
        // Identical policy against itself: zero gap, agreement undefined.
        assert_eq!(report.rates[0], report.rates[1]);
        let agreement = report.rank_agreement(0, 1);
        assert_eq!(agreement.len(), 1);
        assert_eq!(agreement[0].2, None);
        assert!(report.table().contains("oracle-a"));
    }

    #[test]
    fn rank_margin_logic() {
        use std::cmp::Ordering;
        assert_eq!(rank_with_margin(0.9, 0.2, 0.05), Some(Ordering::Greater));
        assert_eq!(rank_with_margin(0.5, 0.52, 0.05), None);
        assert_eq!(rank_with_margin(0.1, 0.9, 0.05), Some(Ordering::Less));
    }

    #[test]
    fn interpolation_endpoints_and_identical_embeddings() {
        let arch = FieldArchitecture {
            pe_levels_pos: 2,
            pe_levels_dir: 1,
            trunk_layers: 1,
            trunk_width: 8,
            color_head_width: 8,
            embed_dim: 4,
            n_conditions: 2,
        };
        let bounds = crate::geom::Aabb::new(v3(-2.0, -2.0, -2.0), v3(2.0, 2.0, 2.0));
        let field = init_params::<f32>(&arch, bounds, 4).unwrap();
        let pose = CameraPose::looking(v3(0.0, 0.0, 0.5), v3(1.0, 0.0, 0.0));
        let intr = CameraIntrinsics::with_hfov(8, 6, 1.2);
        let cfg = RenderConfig {
            samples_per_ray: 8,
            ..RenderConfig::default()
        };
        let e0 = field.embedding_row(0);
        let e1 = field.embedding_row(1);
        let (frames, lum) =
            interpolate_embeddings(&e0, &e1, 2, &field, &pose, &intr, &cfg).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(lum.len(), 2);
        let rng = RngStream::seed(0);
        let direct0 = render_image(&field, &e0, &pose, &intr, &cfg, &rng).unwrap();
        let direct1 = render_image(&field, &e1, &pose, &intr, &cfg, &rng).unwrap();
        assert_eq!(frames[0], direct0);
        assert_eq!(frames[1], direct1);

        let (same, _) = interpolate_embeddings(&e0, &e0, 5, &field, &pose, &intr, &cfg).unwrap();
        for f in &same[1..] {
            assert_eq!(*f, same[0]);
        }
        // Mismatched dimensions are rejected.
        let short = AppearanceEmbedding(vec![0.0; 3]);
        assert!(interpolate_embeddings(&e0, &short, 4, &field, &pose, &intr, &cfg).is_err());
    }

    #[test]
    fn monotone_tolerance() {
        assert!(monotone_with_one_swap(&[5.0, 4.0, 3.0, 2.0], true));
        assert!(monotone_with_one_swap(&[5.0, 4.0, 4.2, 2.0], true));
        assert!(!monotone_with_one_swap(&[5.0, 4.0, 4.2, 2.0, 2.5], true));
        assert!(monotone_with_one_swap(&[1.0, 2.0, 3.0], false));
    }
}
