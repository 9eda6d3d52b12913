//! Soft Actor-Critic for continuous (v, omega) control from stacked image
//! observations: twin critics with target copies, a tanh-Gaussian policy,
//! and a learned entropy temperature.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Activation, Conv2d, Dense, ParamSet};
use crate::num::{Real, Tensor};
use crate::opt::{adam_step, AdamHyper, AdamState};
use crate::rng::RngStream;
use crate::sim::{DriveEnv, Observation, OutcomeTag};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

pub const ACTION_DIM: usize = 2;

/// Network input geometry: stacked frames are downsampled 2x before the
/// encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ObsShape {
    pub fn for_env(frame_stack: usize, obs_height: u32, obs_width: u32) -> Self {
        ObsShape {
            channels: 3 * frame_stack,
            height: obs_height as usize / 2,
            width: obs_width as usize / 2,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetArch {
    pub conv_channels: [usize; 3],
    pub dense_width: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        NetArch {
            conv_channels: [16, 32, 32],
            dense_width: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SACConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub start_steps: usize,
    pub update_every: usize,
    pub target_entropy: f64,
    pub total_env_steps: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub arch: NetArch,
    pub seed: u64,
}

impl Default for SACConfig {
    fn default() -> Self {
        SACConfig {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 64,
            replay_capacity: 50_000,
            start_steps: 1_000,
            update_every: 1,
            target_entropy: -(ACTION_DIM as f64),
            total_env_steps: 60_000,
            log_std_min: -5.0,
            log_std_max: 2.0,
            arch: NetArch::default(),
            seed: 0,
        }
    }
}

impl SACConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must be in (0,1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Conv encoder shared in shape (not weights) by actor and critics.
#[derive(Debug, Clone)]
pub struct Encoder<R> {
    pub convs: Vec<Conv2d<R>>,
    pub shape: ObsShape,
}

impl<R: Real> Encoder<R> {
    fn init(shape: ObsShape, arch: &NetArch, rng: &mut RngStream) -> Self {
        let mut convs = Vec::new();
        let mut in_c = shape.channels;
        for out_c in arch.conv_channels {
            convs.push(Conv2d::init(in_c, out_c, 3, 2, 1, Activation::Relu, rng));
            in_c = out_c;
        }
        Encoder { convs, shape }
    }

    pub fn out_len(&self) -> usize {
        let (mut h, mut w) = (self.shape.height, self.shape.width);
        for c in &self.convs {
            let (oh, ow) = c.out_hw(h, w);
            h = oh;
            w = ow;
        }
        self.convs.last().map(|c| c.out_c).unwrap_or(0) * h * w
    }
}

/// Per-layer forward state of one encoder pass.
#[derive(Debug, Clone, Default)]
pub struct EncoderCache<R> {
    cols: Vec<Vec<R>>,
    pre: Vec<Vec<R>>,
    out: Vec<Vec<R>>,
    hw: Vec<(usize, usize)>,
}

impl<R: Real> Encoder<R> {
    fn forward(&self, x: &[R], cache: &mut EncoderCache<R>) -> Vec<R> {
        let n = self.convs.len();
        cache.cols.resize(n, Vec::new());
        cache.pre.resize(n, Vec::new());
        cache.out.resize(n, Vec::new());
        cache.hw.clear();
        let (mut h, mut w) = (self.shape.height, self.shape.width);
        let mut cur: Vec<R> = x.to_vec();
        for (i, conv) in self.convs.iter().enumerate() {
            cache.hw.push((h, w));
            let mut cols = std::mem::take(&mut cache.cols[i]);
            let mut pre = std::mem::take(&mut cache.pre[i]);
            let mut out = std::mem::take(&mut cache.out[i]);
            conv.forward(&cur, h, w, &mut cols, &mut pre, &mut out);
            cur = out.clone();
            cache.cols[i] = cols;
            cache.pre[i] = pre;
            cache.out[i] = out;
            let (oh, ow) = conv.out_hw(h, w);
            h = oh;
            w = ow;
        }
        cur
    }

    /// Backward through the conv stack; input gradients are not needed.
    fn backward(&self, dout: &[R], cache: &EncoderCache<R>, tapes: &mut [Conv2d<R>]) {
        let mut grad = dout.to_vec();
        for i in (0..self.convs.len()).rev() {
            let (h, w) = cache.hw[i];
            let need_dx = i > 0;
            let mut dx = if need_dx {
                vec![R::zero(); self.convs[i].in_c * h * w]
            } else {
                Vec::new()
            };
            let tape = &mut tapes[i];
            self.convs[i].backward(
                &cache.cols[i],
                &cache.pre[i],
                &cache.out[i],
                &grad,
                h,
                w,
                &mut tape.w,
                &mut tape.b,
                if need_dx { Some(&mut dx) } else { None },
            );
            grad = dx;
        }
    }
}

/// Tanh-Gaussian policy head over the encoder.
#[derive(Debug, Clone)]
pub struct PolicyNet<R> {
    pub encoder: Encoder<R>,
    pub fc1: Dense<R>,
    pub fc2: Dense<R>,
    pub mean_head: Dense<R>,
    pub log_std_head: Dense<R>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl<R: Real> PolicyNet<R> {
    pub fn init(shape: ObsShape, cfg: &SACConfig, rng: &mut RngStream) -> Self {
        let encoder = Encoder::init(shape, &cfg.arch, rng);
        let flat = encoder.out_len();
        let w = cfg.arch.dense_width;
        PolicyNet {
            encoder,
            fc1: Dense::init(flat, w, Activation::Relu, rng),
            fc2: Dense::init(w, w, Activation::Relu, rng),
            mean_head: Dense::init(w, ACTION_DIM, Activation::Linear, rng),
            log_std_head: Dense::init(w, ACTION_DIM, Activation::Linear, rng),
            log_std_min: cfg.log_std_min,
            log_std_max: cfg.log_std_max,
        }
    }
}

macro_rules! impl_paramset_policy {
    () => {
        fn named(&self) -> Vec<(String, &Tensor<R>)> {
            let mut out = Vec::new();
            for (i, c) in self.encoder.convs.iter().enumerate() {
                out.push((format!("conv.{i}.w"), &c.w));
                out.push((format!("conv.{i}.b"), &c.b));
            }
            out.push(("fc1.w".into(), &self.fc1.w));
            out.push(("fc1.b".into(), &self.fc1.b));
            out.push(("fc2.w".into(), &self.fc2.w));
            out.push(("fc2.b".into(), &self.fc2.b));
            out.push(("mean.w".into(), &self.mean_head.w));
            out.push(("mean.b".into(), &self.mean_head.b));
            out.push(("log_std.w".into(), &self.log_std_head.w));
            out.push(("log_std.b".into(), &self.log_std_head.b));
            out
        }

        fn named_mut(&mut self) -> Vec<(String, &mut Tensor<R>)> {
            let mut out: Vec<(String, &mut Tensor<R>)> = Vec::new();
            for (i, c) in self.encoder.convs.iter_mut().enumerate() {
                out.push((format!("conv.{i}.w"), &mut c.w));
                out.push((format!("conv.{i}.b"), &mut c.b));
            }
            out.push(("fc1.w".into(), &mut self.fc1.w));
            out.push(("fc1.b".into(), &mut self.fc1.b));
            out.push(("fc2.w".into(), &mut self.fc2.w));
            out.push(("fc2.b".into(), &mut self.fc2.b));
            out.push(("mean.w".into(), &mut self.mean_head.w));
            out.push(("mean.b".into(), &mut self.mean_head.b));
            out.push(("log_std.w".into(), &mut self.log_std_head.w));
            out.push(("log_std.b".into(), &mut self.log_std_head.b));
            out
        }

        fn zeros_like(&self) -> Self {
            let mut z = self.clone();
            for (_, t) in z.named_mut() {
                t.fill(R::zero());
            }
            z
        }
    };
}

impl<R: Real> ParamSet<R> for PolicyNet<R> {
    impl_paramset_policy!();
}

/// Q(s, a): encoder features concatenated with the action.
#[derive(Debug, Clone)]
pub struct CriticNet<R> {
    pub encoder: Encoder<R>,
    pub fc1: Dense<R>,
    pub fc2: Dense<R>,
    pub q_head: Dense<R>,
}

impl<R: Real> CriticNet<R> {
    pub fn init(shape: ObsShape, cfg: &SACConfig, rng: &mut RngStream) -> Self {
        let encoder = Encoder::init(shape, &cfg.arch, rng);
        let flat = encoder.out_len() + ACTION_DIM;
        let w = cfg.arch.dense_width;
        CriticNet {
            encoder,
            fc1: Dense::init(flat, w, Activation::Relu, rng),
            fc2: Dense::init(w, w, Activation::Relu, rng),
            q_head: Dense::init(w, 1, Activation::Linear, rng),
        }
    }
}

impl<R: Real> ParamSet<R> for CriticNet<R> {
    fn named(&self) -> Vec<(String, &Tensor<R>)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.convs.iter().enumerate() {
            out.push((format!("conv.{i}.w"), &c.w));
            out.push((format!("conv.{i}.b"), &c.b));
        }
        out.push(("fc1.w".into(), &self.fc1.w));
        out.push(("fc1.b".into(), &self.fc1.b));
        out.push(("fc2.w".into(), &self.fc2.w));
        out.push(("fc2.b".into(), &self.fc2.b));
        out.push(("q.w".into(), &self.q_head.w));
        out.push(("q.b".into(), &self.q_head.b));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<R>)> {
        let mut out: Vec<(String, &mut Tensor<R>)> = Vec::new();
        for (i, c) in self.encoder.convs.iter_mut().enumerate() {
            out.push((format!("conv.{i}.w"), &mut c.w));
            out.push((format!("conv.{i}.b"), &mut c.b));
        }
        out.push(("fc1.w".into(), &mut self.fc1.w));
        out.push(("fc1.b".into(), &mut self.fc1.b));
        out.push(("fc2.w".into(), &mut self.fc2.w));
        out.push(("fc2.b".into(), &mut self.fc2.b));
        out.push(("q.w".into(), &mut self.q_head.w));
        out.push(("q.b".into(), &mut self.q_head.b));
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.fill(R::zero());
        }
        z
    }
}

/// Forward state of one policy evaluation.
#[derive(Debug, Clone, Default)]
pub struct PolicyCache<R> {
    pub enc: EncoderCache<R>,
    pub enc_out: Vec<R>,
    pub fc1_pre: Vec<R>,
    pub fc1_out: Vec<R>,
    pub fc2_pre: Vec<R>,
    pub fc2_out: Vec<R>,
    pub mean_pre: Vec<R>,
    pub mean: Vec<R>,
    pub log_std_pre: Vec<R>,
    pub log_std_raw: Vec<R>,
    /// Clamped log-std actually used.
    pub log_std: [R; ACTION_DIM],
}

impl<R: Real> PolicyNet<R> {
    pub fn forward(&self, obs: &[R], cache: &mut PolicyCache<R>) -> ([R; ACTION_DIM], [R; ACTION_DIM]) {
        cache.enc_out = self.encoder.forward(obs, &mut cache.enc);
        self.fc1
            .forward(&cache.enc_out, 1, &mut cache.fc1_pre, &mut cache.fc1_out);
        self.fc2
            .forward(&cache.fc1_out, 1, &mut cache.fc2_pre, &mut cache.fc2_out);
        self.mean_head
            .forward(&cache.fc2_out, 1, &mut cache.mean_pre, &mut cache.mean);
        self.log_std_head.forward(
            &cache.fc2_out,
            1,
            &mut cache.log_std_pre,
            &mut cache.log_std_raw,
        );
        let mut mean = [R::zero(); ACTION_DIM];
        let mut log_std = [R::zero(); ACTION_DIM];
        for i in 0..ACTION_DIM {
            mean[i] = cache.mean[i];
            log_std[i] = cache.log_std_raw[i]
                .max(R::of(self.log_std_min))
                .min(R::of(self.log_std_max));
            cache.log_std[i] = log_std[i];
        }
        (mean, log_std)
    }

    /// Backward given gradients w.r.t. mean and (clamped) log-std.
    pub fn backward(
        &self,
        d_mean: [R; ACTION_DIM],
        d_log_std: [R; ACTION_DIM],
        cache: &PolicyCache<R>,
        tape: &mut PolicyNet<R>,
    ) {
        // Clamp is a gate: no gradient outside the bounds.
        let mut d_ls = [R::zero(); ACTION_DIM];
        for i in 0..ACTION_DIM {
            let raw = cache.log_std_raw[i];
            if raw > R::of(self.log_std_min) && raw < R::of(self.log_std_max) {
                d_ls[i] = d_log_std[i];
            }
        }
        let mut d_fc2 = vec![R::zero(); cache.fc2_out.len()];
        self.mean_head.backward(
            &cache.fc2_out,
            &cache.mean_pre,
            &cache.mean,
            &d_mean,
            1,
            &mut tape.mean_head.w,
            &mut tape.mean_head.b,
            &mut d_fc2,
        );
        self.log_std_head.backward(
            &cache.fc2_out,
            &cache.log_std_pre,
            &cache.log_std_raw,
            &d_ls,
            1,
            &mut tape.log_std_head.w,
            &mut tape.log_std_head.b,
            &mut d_fc2,
        );
        let mut d_fc1 = vec![R::zero(); cache.fc1_out.len()];
        self.fc2.backward(
            &cache.fc1_out,
            &cache.fc2_pre,
            &cache.fc2_out,
            &d_fc2,
            1,
            &mut tape.fc2.w,
            &mut tape.fc2.b,
            &mut d_fc1,
        );
        let mut d_enc = vec![R::zero(); cache.enc_out.len()];
        self.fc1.backward(
            &cache.enc_out,
            &cache.fc1_pre,
            &cache.fc1_out,
            &d_fc1,
            1,
            &mut tape.fc1.w,
            &mut tape.fc1.b,
            &mut d_enc,
        );
        self.encoder.backward(&d_enc, &cache.enc, &mut tape.encoder.convs);
    }
}

/// Forward state of one critic evaluation.
#[derive(Debug, Clone, Default)]
pub struct CriticCache<R> {
    pub enc: EncoderCache<R>,
    pub input: Vec<R>,
    pub fc1_pre: Vec<R>,
    pub fc1_out: Vec<R>,
    pub fc2_pre: Vec<R>,
    pub fc2_out: Vec<R>,
    pub q_pre: Vec<R>,
    pub q: Vec<R>,
}

impl<R: Real> CriticNet<R> {
    pub fn forward(&self, obs: &[R], action: [R; ACTION_DIM], cache: &mut CriticCache<R>) -> R {
        let feats = self.encoder.forward(obs, &mut cache.enc);
        cache.input.clear();
        cache.input.extend_from_slice(&feats);
        cache.input.extend_from_slice(&action);
        self.fc1
            .forward(&cache.input, 1, &mut cache.fc1_pre, &mut cache.fc1_out);
        self.fc2
            .forward(&cache.fc1_out, 1, &mut cache.fc2_pre, &mut cache.fc2_out);
        self.q_head
            .forward(&cache.fc2_out, 1, &mut cache.q_pre, &mut cache.q);
        cache.q[0]
    }

    /// Gradient of Q w.r.t. the action input only; no parameter gradients.
    pub fn action_gradient(&self, d_q: R, cache: &CriticCache<R>) -> [R; ACTION_DIM] {
        let dq = [d_q];
        let mut d_fc2 = vec![R::zero(); cache.fc2_out.len()];
        self.q_head
            .input_gradient(&cache.q_pre, &cache.q, &dq, 1, &mut d_fc2);
        let mut d_fc1 = vec![R::zero(); cache.fc1_out.len()];
        self.fc2
            .input_gradient(&cache.fc2_pre, &cache.fc2_out, &d_fc2, 1, &mut d_fc1);
        let mut d_input = vec![R::zero(); cache.input.len()];
        self.fc1
            .input_gradient(&cache.fc1_pre, &cache.fc1_out, &d_fc1, 1, &mut d_input);
        let feat_len = cache.input.len() - ACTION_DIM;
        let mut d_a = [R::zero(); ACTION_DIM];
        d_a.copy_from_slice(&d_input[feat_len..]);
        d_a
    }

    /// Backward from dQ. When `with_encoder` is false only the dense part
    /// runs (enough for action gradients); returns dQ/d_action.
    pub fn backward(
        &self,
        d_q: R,
        cache: &CriticCache<R>,
        tape: &mut CriticNet<R>,
        with_encoder: bool,
    ) -> [R; ACTION_DIM] {
        let dq = [d_q];
        let mut d_fc2 = vec![R::zero(); cache.fc2_out.len()];
        self.q_head.backward(
            &cache.fc2_out,
            &cache.q_pre,
            &cache.q,
            &dq,
            1,
            &mut tape.q_head.w,
            &mut tape.q_head.b,
            &mut d_fc2,
        );
        let mut d_fc1 = vec![R::zero(); cache.fc1_out.len()];
        self.fc2.backward(
            &cache.fc1_out,
            &cache.fc2_pre,
            &cache.fc2_out,
            &d_fc2,
            1,
            &mut tape.fc2.w,
            &mut tape.fc2.b,
            &mut d_fc1,
        );
        let mut d_input = vec![R::zero(); cache.input.len()];
        self.fc1.backward(
            &cache.input,
            &cache.fc1_pre,
            &cache.fc1_out,
            &d_fc1,
            1,
            &mut tape.fc1.w,
            &mut tape.fc1.b,
            &mut d_input,
        );
        let feat_len = cache.input.len() - ACTION_DIM;
        if with_encoder {
            self.encoder
                .backward(&d_input[..feat_len], &cache.enc, &mut tape.encoder.convs);
        }
        let mut d_a = [R::zero(); ACTION_DIM];
        d_a.copy_from_slice(&d_input[feat_len..]);
        d_a
    }
}

pub const LOG_PROB_EPS: f64 = 1e-6;

/// Tanh-Gaussian reparameterized sample for one action dimension:
/// `a = tanh(mu + sigma z)` with the Jacobian-corrected log-density.
pub fn tanh_gaussian_dim(mu: f64, log_std: f64, z: f64) -> (f64, f64) {
    let sigma = log_std.exp();
    let u = mu + sigma * z;
    let a = u.tanh();
    let log_norm = -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_prob = log_norm - (1.0 - a * a + LOG_PROB_EPS).ln();
    (a, log_prob)
}

/// Samples an action from the policy. Deterministic mode returns tanh(mu)
/// with no log-probability correction applied downstream.
pub fn policy_sample<R: Real>(
    policy: &PolicyNet<R>,
    obs: &[R],
    rng: &mut RngStream,
    deterministic: bool,
    cache: &mut PolicyCache<R>,
) -> Result<([f64; ACTION_DIM], f64)> {
    let (mean, log_std) = policy.forward(obs, cache);
    let mut action = [0.0f64; ACTION_DIM];
    let mut log_prob = 0.0f64;
    for i in 0..ACTION_DIM {
        let (mu, ls) = (mean[i].f64(), log_std[i].f64());
        if !mu.is_finite() || !ls.is_finite() {
            return Err(Error::NonFiniteOutput("policy heads".into()));
        }
        let z = if deterministic { 0.0 } else { rng.normal() };
        let (a, lp) = tanh_gaussian_dim(mu, ls, z);
        action[i] = a;
        log_prob += lp;
    }
    Ok((action, log_prob))
}

/// Replay buffer over deduplicated frames: each stored frame is shared by
/// every transition whose stack contains it.
pub type FrameRef = Arc<Vec<u8>>;

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<FrameRef>,
    pub action: [f32; ACTION_DIM],
    pub reward: f32,
    /// Newest frame of the next observation; the rest of the next stack is
    /// `obs[1..]`.
    pub next_frame: FrameRef,
    pub done_mask: f32,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    pub shape: ObsShape,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, shape: ObsShape) -> Self {
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample_indices(&self, n: usize, rng: &mut RngStream) -> Vec<usize> {
        (0..n)
            .map(|_| rng.below(self.data.len() as u64) as usize)
            .collect()
    }

    /// Materializes the CHW float stack for obs (or next-obs) of an entry.
    pub fn fill_obs<R: Real>(&self, t: &Transition, next: bool, out: &mut Vec<R>) {
        out.clear();
        out.reserve(self.shape.len());
        let frames: Vec<&FrameRef> = if next {
            t.obs.iter().skip(1).chain(std::iter::once(&t.next_frame)).collect()
        } else {
            t.obs.iter().collect()
        };
        for f in frames {
            for v in f.iter() {
                out.push(R::of(*v as f64 / 255.0));
            }
        }
    }
}

/// Downsamples an environment frame 2x and packs it as planar CHW u8.
pub fn encode_frame(img: &Image) -> FrameRef {
    let small = img.downsample2();
    let plane = (small.width * small.height) as usize;
    let mut out = vec![0u8; 3 * plane];
    for (i, px) in small.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (px[c].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Arc::new(out)
}

pub fn encode_observation(obs: &Observation) -> Vec<FrameRef> {
    obs.frames.iter().map(encode_frame).collect()
}

/// Builds the policy input directly from an environment observation.
pub fn observation_input<R: Real>(obs: &Observation, out: &mut Vec<R>) {
    out.clear();
    for f in &obs.frames {
        let small = f.downsample2();
        let plane = (small.width * small.height) as usize;
        let mut planes = vec![R::zero(); 3 * plane];
        for (i, px) in small.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                // Match the replay's u8 quantization so acting and learning
                // see identical inputs.
                planes[c * plane + i] =
                    R::of(((px[c].clamp(0.0, 1.0) * 255.0).round() as u8) as f64 / 255.0);
            }
        }
        out.extend_from_slice(&planes);
    }
}

/// All SAC networks plus the learned temperature.
pub struct SacNets<R> {
    pub policy: PolicyNet<R>,
    pub q1: CriticNet<R>,
    pub q2: CriticNet<R>,
    pub q1_target: CriticNet<R>,
    pub q2_target: CriticNet<R>,
    pub log_alpha: f64,
}

impl<R: Real> SacNets<R> {
    pub fn init(shape: ObsShape, cfg: &SACConfig) -> Self {
        let root = RngStream::seed(cfg.seed ^ 0x5ac0_0001);
        let policy = PolicyNet::init(shape, cfg, &mut root.substream(0));
        let q1 = CriticNet::init(shape, cfg, &mut root.substream(1));
        let q2 = CriticNet::init(shape, cfg, &mut root.substream(2));
        SacNets {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha: 0.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// Polyak-averages target weights toward the online weights.
pub fn polyak_update<R: Real, P: ParamSet<R>>(target: &mut P, online: &P, tau: f64) {
    let t = R::of(tau);
    let one_m = R::of(1.0 - tau);
    let mut dst = target.named_mut();
    let src = online.named();
    for ((_, d), (_, s)) in dst.iter_mut().zip(src.iter()) {
        for (dv, sv) in d.data_mut().iter_mut().zip(s.data().iter()) {
            *dv = one_m * *dv + t * *sv;
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

/// Optimizer state for the whole agent.
pub struct SacOptim<R: Real> {
    pub policy: AdamState<PolicyNet<R>>,
    pub q1: AdamState<CriticNet<R>>,
    pub q2: AdamState<CriticNet<R>>,
    pub policy_tape: PolicyNet<R>,
    pub q1_tape: CriticNet<R>,
    pub q2_tape: CriticNet<R>,
    pub alpha_m: f64,
    pub alpha_v: f64,
    pub alpha_step: u64,
}

impl<R: Real> SacOptim<R> {
    pub fn new(nets: &SacNets<R>) -> Self {
        let h = AdamHyper::default();
        SacOptim {
            policy: AdamState::new(&nets.policy, h),
            q1: AdamState::new(&nets.q1, h),
            q2: AdamState::new(&nets.q2, h),
            policy_tape: nets.policy.zeros_like(),
            q1_tape: nets.q1.zeros_like(),
            q2_tape: nets.q2.zeros_like(),
            alpha_m: 0.0,
            alpha_v: 0.0,
            alpha_step: 0,
        }
    }
}

/// One SAC gradient update over a sampled batch.
pub fn sac_update<R: Real>(
    nets: &mut SacNets<R>,
    optim: &mut SacOptim<R>,
    buffer: &ReplayBuffer,
    indices: &[usize],
    cfg: &SACConfig,
    rng: &mut RngStream,
) -> Result<SacLosses> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let n = indices.len();
    let inv_n = 1.0 / n as f64;
    let alpha = nets.alpha();
    let mut losses = SacLosses::default();

    let mut obs = Vec::new();
    let mut next_obs = Vec::new();
    let mut pcache = PolicyCache::default();
    let mut c1 = CriticCache::default();
    let mut c2 = CriticCache::default();

    // Targets: y = r + gamma * mask * (min Q_t(s', a') - alpha log pi(a'|s')).
    let mut targets = Vec::with_capacity(n);
    for &i in indices {
        let t = buffer.get(i);
        buffer.fill_obs(t, true, &mut next_obs);
        let (mean, log_std) = nets.policy.forward(&next_obs, &mut pcache);
        let mut a_next = [R::zero(); ACTION_DIM];
        let mut log_pi = 0.0;
        for d in 0..ACTION_DIM {
            let z = rng.normal();
            let (a, lp) = tanh_gaussian_dim(mean[d].f64(), log_std[d].f64(), z);
            a_next[d] = R::of(a);
            log_pi += lp;
        }
        let q1t = nets.q1_target.forward(&next_obs, a_next, &mut c1).f64();
        let q2t = nets.q2_target.forward(&next_obs, a_next, &mut c2).f64();
        let soft_q = q1t.min(q2t) - alpha * log_pi;
        let y = t.reward as f64 + cfg.gamma * t.done_mask as f64 * soft_q;
        if !y.is_finite() {
            return Err(Error::NonFiniteLoss(format!("critic target {y}")));
        }
        targets.push(y);
    }

    // Critic regression.
    let mut critic_loss = 0.0;
    for (k, &i) in indices.iter().enumerate() {
        let t = buffer.get(i);
        buffer.fill_obs(t, false, &mut obs);
        let action = [R::of(t.action[0] as f64), R::of(t.action[1] as f64)];
        let y = targets[k];
        let q1 = nets.q1.forward(&obs, action, &mut c1).f64();
        let q2 = nets.q2.forward(&obs, action, &mut c2).f64();
        critic_loss += ((q1 - y) * (q1 - y) + (q2 - y) * (q2 - y)) * inv_n;
        nets.q1
            .backward(R::of(2.0 * (q1 - y) * inv_n), &c1, &mut optim.q1_tape, true);
        nets.q2
            .backward(R::of(2.0 * (q2 - y) * inv_n), &c2, &mut optim.q2_tape, true);
        losses.mean_q += 0.5 * (q1 + q2) * inv_n;
    }
    if !critic_loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("critic loss {critic_loss}")));
    }
    adam_step(&mut nets.q1, &mut optim.q1_tape, &mut optim.q1, cfg.lr)?;
    adam_step(&mut nets.q2, &mut optim.q2_tape, &mut optim.q2, cfg.lr)?;

    // Actor: maximize min Q(s, a~) - alpha log pi, reparameterized.
    let mut actor_loss = 0.0;
    let mut mean_log_prob = 0.0;
    for &i in indices {
        let t = buffer.get(i);
        buffer.fill_obs(t, false, &mut obs);
        let (mean, log_std) = nets.policy.forward(&obs, &mut pcache);
        let mut a = [R::zero(); ACTION_DIM];
        let mut zs = [0.0f64; ACTION_DIM];
        let mut log_pi = 0.0;
        for d in 0..ACTION_DIM {
            let z = rng.normal();
            zs[d] = z;
            let (ad, lp) = tanh_gaussian_dim(mean[d].f64(), log_std[d].f64(), z);
            a[d] = R::of(ad);
            log_pi += lp;
        }
        let q1 = nets.q1.forward(&obs, a, &mut c1).f64();
        let q2 = nets.q2.forward(&obs, a, &mut c2).f64();
        let (q_min, min_cache, min_net) = if q1 <= q2 {
            (q1, &c1, &nets.q1)
        } else {
            (q2, &c2, &nets.q2)
        };
        actor_loss += (alpha * log_pi - q_min) * inv_n;
        mean_log_prob += log_pi * inv_n;

        // dL/da through the chosen critic (dense part only).
        let d_a = min_net.action_gradient(R::of(-inv_n), min_cache);
        // Analytic gradients of log pi and a w.r.t. mu and log-std.
        let mut d_mean = [R::zero(); ACTION_DIM];
        let mut d_log_std = [R::zero(); ACTION_DIM];
        for d in 0..ACTION_DIM {
            let sigma = log_std[d].f64().exp();
            let u = mean[d].f64() + sigma * zs[d];
            let a_d = u.tanh();
            let sech2 = 1.0 - a_d * a_d;
            // d log pi / du = 2 a sech2 / (sech2 + eps).
            let dlp_du = 2.0 * a_d * sech2 / (sech2 + LOG_PROB_EPS);
            let da_du = sech2;
            let dl_da = d_a[d].f64();
            // du/dmu = 1, du/dlog_std = sigma z; d log pi/d log_std has the
            // extra -1 from the normalization term.
            let g_mu = alpha * inv_n * dlp_du + dl_da * da_du;
            let g_ls =
                alpha * inv_n * (dlp_du * sigma * zs[d] - 1.0) + dl_da * da_du * sigma * zs[d];
            d_mean[d] = R::of(g_mu);
            d_log_std[d] = R::of(g_ls);
        }
        nets.policy
            .backward(d_mean, d_log_std, &pcache, &mut optim.policy_tape);
    }
    if !actor_loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("actor loss {actor_loss}")));
    }
    adam_step(
        &mut nets.policy,
        &mut optim.policy_tape,
        &mut optim.policy,
        cfg.lr,
    )?;

    // Temperature: d/dlog_alpha of -log_alpha * (log_pi + target_entropy).
    let g = -(mean_log_prob + cfg.target_entropy);
    let h = AdamHyper::default();
    optim.alpha_step += 1;
    optim.alpha_m = h.beta1 * optim.alpha_m + (1.0 - h.beta1) * g;
    optim.alpha_v = h.beta2 * optim.alpha_v + (1.0 - h.beta2) * g * g;
    let mh = optim.alpha_m / (1.0 - h.beta1.powi(optim.alpha_step as i32));
    let vh = optim.alpha_v / (1.0 - h.beta2.powi(optim.alpha_step as i32));
    nets.log_alpha -= cfg.lr * mh / (vh.sqrt() + h.eps);
    let alpha_loss = -nets.log_alpha * (mean_log_prob + cfg.target_entropy);

    polyak_update(&mut nets.q1_target, &nets.q1, cfg.tau);
    polyak_update(&mut nets.q2_target, &nets.q2, cfg.tau);

    losses.critic = critic_loss;
    losses.actor = actor_loss;
    losses.alpha = alpha_loss;
    losses.mean_log_prob = mean_log_prob;
    Ok(losses)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub env_step: usize,
    pub ret: f64,
    pub length: u32,
    pub tag: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyTrainLog {
    pub episodes: Vec<EpisodeRecord>,
    pub final_alpha: f64,
}

impl PolicyTrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,env_step,return,length,tag\n");
        for e in &self.episodes {
            s.push_str(&format!(
                "{},{},{:.3},{},{}\n",
                e.episode, e.env_step, e.ret, e.length, e.tag
            ));
        }
        s
    }
}

/// Off-policy training loop: uniform-random warmup, then policy actions
/// with one gradient update every `update_every` env steps.
pub fn train_policy<R: Real>(
    env: &mut DriveEnv,
    cfg: &SACConfig,
    mut progress: Option<&mut dyn FnMut(usize, &EpisodeRecord)>,
) -> Result<(SacNets<R>, PolicyTrainLog)> {
    cfg.validate()?;
    let shape = ObsShape::for_env(env.cfg.frame_stack, env.cfg.obs_height, env.cfg.obs_width);
    let mut nets = SacNets::<R>::init(shape, cfg);
    let mut optim = SacOptim::new(&nets);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, shape);

    let root = RngStream::seed(cfg.seed ^ 0x5ac0_7ea1);
    let mut env_rng = root.substream(0);
    let mut act_rng = root.substream(1);
    let mut update_rng = root.substream(2);

    let mut log = PolicyTrainLog {
        episodes: Vec::new(),
        final_alpha: 1.0,
    };
    let mut obs = env.reset(&mut env_rng)?;
    let mut obs_frames = encode_observation(&obs);
    let mut obs_input: Vec<R> = Vec::new();
    let mut cache = PolicyCache::default();
    let mut ep_return = 0.0;
    let mut ep_len = 0u32;
    let mut episode = 0usize;

    for step in 0..cfg.total_env_steps {
        let action = if step < cfg.start_steps {
            [
                act_rng.uniform_in(-1.0, 1.0),
                act_rng.uniform_in(-1.0, 1.0),
            ]
        } else {
            observation_input(&obs, &mut obs_input);
            policy_sample(&nets.policy, &obs_input, &mut act_rng, false, &mut cache)?.0
        };
        let out = env.step(action)?;
        ep_return += out.reward;
        ep_len += 1;

        let next_frame = encode_frame(out.observation.frames.last().unwrap());
        let done_mask = match out.tag {
            OutcomeTag::Running => 1.0,
            OutcomeTag::Timeout if env.cfg.timeout_bootstrap => 1.0,
            _ => 0.0,
        };
        buffer.push(Transition {
            obs: obs_frames.clone(),
            action: [action[0] as f32, action[1] as f32],
            reward: out.reward as f32,
            next_frame: next_frame.clone(),
            done_mask,
        });

        if out.done {
            let record = EpisodeRecord {
                episode,
                env_step: step + 1,
                ret: ep_return,
                length: ep_len,
                tag: out.tag.as_str().to_string(),
            };
            if let Some(cb) = progress.as_deref_mut() {
                cb(step + 1, &record);
            }
            log.episodes.push(record);
            episode += 1;
            ep_return = 0.0;
            ep_len = 0;
            obs = env.reset(&mut env_rng)?;
            obs_frames = encode_observation(&obs);
        } else {
            obs = out.observation;
            let mut frames = obs_frames.clone();
            frames.remove(0);
            frames.push(next_frame);
            obs_frames = frames;
        }

        if step >= cfg.start_steps
            && buffer.len() >= cfg.batch_size
            && (step + 1) % cfg.update_every == 0
        {
            let indices = buffer.sample_indices(cfg.batch_size, &mut update_rng);
            sac_update(&mut nets, &mut optim, &buffer, &indices, cfg, &mut update_rng)?;
        }
    }
    log.final_alpha = nets.alpha();
    Ok((nets, log))
}

const CKPT_KIND: &str = "policy";

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    shape: ObsShape,
    arch: NetArch,
    log_std_min: f64,
    log_std_max: f64,
}

pub fn save_policy<R: Real>(path: &Path, policy: &PolicyNet<R>, arch: &NetArch) -> Result<()> {
    let meta = PolicyMeta {
        shape: policy.encoder.shape,
        arch: *arch,
        log_std_min: policy.log_std_min,
        log_std_max: policy.log_std_max,
    };
    crate::checkpoint::save(path, CKPT_KIND, serde_json::to_value(&meta)?, policy)
}

pub fn load_policy<R: Real>(path: &Path) -> Result<PolicyNet<R>> {
    let (header, values) = crate::checkpoint::read(path)?;
    if header.kind != CKPT_KIND {
        return Err(Error::Checkpoint(format!(
            "expected a policy checkpoint, found kind '{}'",
            header.kind
        )));
    }
    let meta: PolicyMeta = serde_json::from_value(header.meta.clone())?;
    let cfg = SACConfig {
        arch: meta.arch,
        log_std_min: meta.log_std_min,
        log_std_max: meta.log_std_max,
        ..SACConfig::default()
    };
    let mut policy = PolicyNet::init(meta.shape, &cfg, &mut RngStream::seed(0));
    crate::checkpoint::load_into(&header, &values, &mut policy)?;
    Ok(policy)
}
