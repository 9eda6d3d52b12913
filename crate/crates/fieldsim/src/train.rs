//! Field training: random ray batches over the multi-condition dataset,
//! photometric MSE loss, Adam, held-out PSNR evaluation.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field::{
    accumulate_embedding_grad, init_params, FieldArchitecture,
    RadianceFieldParams,
};
use crate::image::Image;
use crate::nn::ParamSet;
use crate::num::Real;
use crate::opt::{adam_step, lr_schedule, AdamHyper, AdamState};
use crate::render::{cfg_t_near, render_backward, render_image, render_pixel, Ray, RayWork, RenderConfig};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub holdout_fraction: f64,
    pub eval_every: u64,
    /// Holdout frames rendered per condition at periodic evals; the final
    /// eval always uses every holdout frame.
    pub eval_frames_per_condition: usize,
    pub samples_per_ray: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            batch_size: 1024,
            lr: 5e-4,
            lr_final: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            holdout_fraction: 0.1,
            eval_every: 2000,
            eval_frames_per_condition: 2,
            samples_per_ray: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 && self.iterations != 0 {
            return Err(Error::InvalidConfig("iterations must be >= 0".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "holdout_fraction must be in (0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            samples_per_ray: self.samples_per_ray,
            stratified: true,
            background: [1.0, 1.0, 1.0],
            white_bkgd_scale: 1.0,
            term_transmittance: 1e-4,
        }
    }
}

/// Stratified train/holdout split: every lighting condition contributes at
/// least one holdout frame. Returns frame indices.
pub fn split_dataset(
    dataset: &Dataset,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let ids = dataset.lighting_ids();
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    let root = RngStream::seed(seed);
    for (ci, id) in ids.iter().enumerate() {
        let mut idx: Vec<usize> = dataset
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.lighting_id == *id)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::TooFewFrames(format!(
                "condition {id} has {} frames, need at least 2",
                idx.len()
            )));
        }
        let mut rng = root.substream(ci as u64);
        // Fisher-Yates.
        for i in (1..idx.len()).rev() {
            let j = rng.below(i as u64 + 1) as usize;
            idx.swap(i, j);
        }
        let n_hold = ((idx.len() as f64 * holdout_fraction).round() as usize)
            .clamp(1, idx.len() - 1);
        holdout.extend_from_slice(&idx[..n_hold]);
        train.extend_from_slice(&idx[n_hold..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// One training ray with its target color and source condition.
#[derive(Debug, Clone)]
pub struct RayTarget {
    pub ray: Ray,
    pub target: [f32; 3],
    pub lighting_id: u32,
}

/// Uniformly random (frame, pixel) pairs from the training frames.
pub fn sample_ray_batch(
    dataset: &Dataset,
    train_frames: &[usize],
    batch_size: usize,
    rng: &mut RngStream,
) -> Vec<RayTarget> {
    let intr = &dataset.intrinsics;
    let t_far = dataset.scene_bounds.diagonal().max(1.0);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let fi = train_frames[rng.below(train_frames.len() as u64) as usize];
        let frame = &dataset.frames[fi];
        let u = rng.below(intr.width as u64) as u32;
        let v = rng.below(intr.height as u64) as u32;
        batch.push(RayTarget {
            ray: Ray {
                origin: frame.pose.translation,
                direction: frame.pose.pixel_direction(intr, u as f64, v as f64),
                t_near: cfg_t_near(),
                t_far,
            },
            target: frame.image.pixel(u, v),
            lighting_id: frame.lighting_id,
        });
    }
    batch
}

/// Peak signal-to-noise ratio in dB for [0,1] images; identical images cap
/// at 99.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub loss: f64,
    /// Holdout PSNR per condition id, in `condition_ids` order.
    pub psnr: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    pub condition_ids: Vec<u32>,
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss");
        for id in &self.condition_ids {
            s.push_str(&format!(",psnr_cond_{id}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{:.6}", r.iteration, r.loss));
            for p in &r.psnr {
                if p.is_nan() {
                    s.push_str(",");
                } else {
                    s.push_str(&format!(",{p:.3}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Mean holdout PSNR per condition.
pub fn eval_holdout<R: Real>(
    params: &RadianceFieldParams<R>,
    dataset: &Dataset,
    holdout: &[usize],
    frames_per_condition: usize,
    samples_per_ray: usize,
) -> Result<Vec<f64>> {
    let ids = dataset.lighting_ids();
    let cfg = RenderConfig {
        samples_per_ray,
        stratified: false,
        background: [1.0, 1.0, 1.0],
        white_bkgd_scale: 1.0,
        term_transmittance: 1e-4,
    };
    let rng = RngStream::seed(0);
    let mut out = Vec::with_capacity(ids.len());
    for id in &ids {
        let row = params
            .condition_row(*id)
            .ok_or_else(|| Error::InvalidConfig(format!("no embedding row for condition {id}")))?;
        let emb = params.embedding_row(row);
        let mut sum = 0.0;
        let mut count = 0usize;
        for &fi in holdout.iter() {
            let frame = &dataset.frames[fi];
            if frame.lighting_id != *id {
                continue;
            }
            if frames_per_condition > 0 && count >= frames_per_condition {
                break;
            }
            let render = render_image(params, &emb, &frame.pose, &dataset.intrinsics, &cfg, &rng)?;
            sum += psnr(&render, &frame.image)?;
            count += 1;
        }
        out.push(if count > 0 { sum / count as f64 } else { f64::NAN });
    }
    Ok(out)
}

/// Trains the field on a dataset. `condition_filter`, when set, drops rays
/// whose lighting id fails the predicate (used to verify embedding
/// isolation).
pub fn train_field_filtered<R: Real>(
    dataset: &Dataset,
    arch: &FieldArchitecture,
    cfg: &TrainConfig,
    condition_filter: Option<&dyn Fn(u32) -> bool>,
    mut progress: Option<&mut dyn FnMut(&TrainLogRow)>,
) -> Result<(RadianceFieldParams<R>, TrainLog)> {
    cfg.validate()?;
    if dataset.frames.is_empty() {
        return Err(Error::TooFewFrames("dataset is empty".into()));
    }
    let ids = dataset.lighting_ids();
    if ids.len() != arch.n_conditions {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} conditions, architecture expects {}",
            ids.len(),
            arch.n_conditions
        )));
    }
    let mut params = init_params::<R>(arch, dataset.scene_bounds, cfg.seed)?;
    params.condition_ids = ids.clone();
    let (train_frames, holdout_frames) = split_dataset(dataset, cfg.holdout_fraction, cfg.seed)?;
    let render_cfg = cfg.render_config();

    let mut tape = params.zeros_like();
    let mut adam = AdamState::new(&params, cfg.adam());
    let root = RngStream::seed(cfg.seed ^ 0x5eed_ba7c_0000_0001);
    let mut work = RayWork::<R>::default();
    let mut d_emb = vec![R::zero(); arch.embed_dim];
    let mut log = TrainLog {
        condition_ids: ids.clone(),
        rows: Vec::new(),
    };
    let row_of: std::collections::HashMap<u32, usize> =
        ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut last_loss = f64::NAN;

    for iter in 0..cfg.iterations {
        let mut batch_rng = root.substream(iter);
        let batch = sample_ray_batch(dataset, &train_frames, cfg.batch_size, &mut batch_rng);
        let mut loss_acc = 0.0f64;
        let mut n_used = 0usize;
        let inv = 1.0 / (cfg.batch_size as f64 * 3.0);
        for (ri, rt) in batch.iter().enumerate() {
            if let Some(filter) = condition_filter {
                if !filter(rt.lighting_id) {
                    continue;
                }
            }
            let row = row_of[&rt.lighting_id];
            let emb = params.embedding_row(row);
            let mut ray_rng = batch_rng.substream(ri as u64);
            let px = render_pixel(
                &params,
                &emb,
                &rt.ray,
                &render_cfg,
                Some(&mut ray_rng),
                &mut work,
            )?;
            let mut d_pixel = [R::zero(); 3];
            for c in 0..3 {
                let diff = px[c].f64() - rt.target[c] as f64;
                loss_acc += diff * diff;
                d_pixel[c] = R::of(2.0 * diff * inv);
            }
            for g in d_emb.iter_mut() {
                *g = R::zero();
            }
            render_backward(&params, &render_cfg, d_pixel, &mut work, &mut tape, &mut d_emb)?;
            accumulate_embedding_grad(&mut tape, row, &d_emb);
            n_used += 1;
        }
        let loss = loss_acc * inv;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("iteration {iter}: {loss}")));
        }
        last_loss = loss;
        if n_used > 0 {
            let lr = lr_schedule(cfg.lr, cfg.lr_final, iter, cfg.iterations);
            adam_step(&mut params, &mut tape, &mut adam, lr)?;
        }
        let do_eval = cfg.eval_every > 0
            && (iter + 1) % cfg.eval_every == 0
            && (iter + 1) != cfg.iterations;
        if do_eval {
            let psnrs = eval_holdout(
                &params,
                dataset,
                &holdout_frames,
                cfg.eval_frames_per_condition,
                cfg.samples_per_ray,
            )?;
            let row = TrainLogRow {
                iteration: iter + 1,
                loss,
                psnr: psnrs,
            };
            if let Some(cb) = progress.as_deref_mut() {
                cb(&row);
            }
            log.rows.push(row);
        } else if let Some(cb) = progress.as_deref_mut() {
            if (iter + 1) % 100 == 0 || iter == 0 {
                cb(&TrainLogRow {
                    iteration: iter + 1,
                    loss,
                    psnr: Vec::new(),
                });
            }
        }
    }

    // Final evaluation over the full holdout.
    let psnrs = eval_holdout(&params, dataset, &holdout_frames, 0, cfg.samples_per_ray)?;
    let row = TrainLogRow {
        iteration: cfg.iterations,
        loss: last_loss,
        psnr: psnrs,
    };
    if let Some(cb) = progress.as_deref_mut() {
        cb(&row);
    }
    log.rows.push(row);
    Ok((params, log))
}

pub fn train_field<R: Real>(
    dataset: &Dataset,
    arch: &FieldArchitecture,
    cfg: &TrainConfig,
) -> Result<(RadianceFieldParams<R>, TrainLog)> {
    train_field_filtered(dataset, arch, cfg, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::dataset::{generate_dataset, CaptureConfig};
    use crate::scene::SceneSpec;

    fn tiny_dataset(n_per: usize) -> Dataset {
        let spec = SceneSpec::straight_desk();
        let intr = CameraIntrinsics::with_hfov(16, 12, 1.4);
        let cap = CaptureConfig {
            samples_per_ray: 24,
            ..CaptureConfig::default()
        };
        generate_dataset(&spec, n_per, &intr, &cap, 31).unwrap()
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let ds = tiny_dataset(10);
        let (train, hold) = split_dataset(&ds, 0.1, 4).unwrap();
        assert_eq!(train.len() + hold.len(), ds.frames.len());
        let mut all: Vec<usize> = train.iter().chain(hold.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ds.frames.len(), "splits overlap");
        for id in ds.lighting_ids() {
            let n_hold = hold
                .iter()
                .filter(|i| ds.frames[**i].lighting_id == id)
                .count();
            assert_eq!(n_hold, 1, "condition {id}");
        }
        let (train2, hold2) = split_dataset(&ds, 0.1, 4).unwrap();
        assert_eq!(train, train2);
        assert_eq!(hold, hold2);
    }

    #[test]
    fn split_rejects_single_frame_condition() {
        let ds = tiny_dataset(1);
        assert!(matches!(
            split_dataset(&ds, 0.1, 0),
            Err(Error::TooFewFrames(_))
        ));
    }

    #[test]
    fn batch_targets_match_pixels() {
        let ds = tiny_dataset(3);
        let idx: Vec<usize> = (0..ds.frames.len()).collect();
        let mut rng = RngStream::seed(8);
        let batch = sample_ray_batch(&ds, &idx, 1, &mut rng);
        assert_eq!(batch.len(), 1);
        assert!((batch[0].ray.direction.norm() - 1.0).abs() < 1e-9);
        let mut rng2 = RngStream::seed(8);
        let batch2 = sample_ray_batch(&ds, &idx, 1, &mut rng2);
        assert_eq!(batch[0].target, batch2[0].target);
    }

    #[test]
    fn batch_frame_frequency_uniform() {
        // Chi-square against uniform over frames, 3-sigma equivalent bound.
        let ds = tiny_dataset(4);
        let idx: Vec<usize> = (0..ds.frames.len()).collect();
        let mut rng = RngStream::seed(3);
        let draws = 100_000usize;
        let mut counts = vec![0f64; idx.len()];
        let batch = sample_ray_batch(&ds, &idx, draws, &mut rng);
        for rt in &batch {
            // Recover the frame by matching origin; frames have unique poses.
            let fi = ds
                .frames
                .iter()
                .position(|f| (f.pose.translation - rt.ray.origin).norm() < 1e-12)
                .unwrap();
            counts[fi] += 1.0;
        }
        let expected = draws as f64 / idx.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected) * (c - expected) / expected)
            .sum();
        // dof = 11; mean 11, sd sqrt(22); 11 + 3*4.69 ~ 25.
        assert!(chi2 < 25.0, "chi2 {chi2}");
    }

    #[test]
    fn psnr_values() {
        let a = Image::new(4, 4);
        let mut b = Image::new(4, 4);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        b.data.iter_mut().for_each(|v| *v = 1.0);
        assert!((psnr(&a, &b).unwrap() - 0.0).abs() < 1e-12);
        let mut c = Image::new(4, 4);
        c.data.iter_mut().for_each(|v| *v = 0.5);
        assert!((psnr(&a, &c).unwrap() - 6.0206).abs() < 1e-3);
        let d = Image::new(2, 2);
        assert!(psnr(&a, &d).is_err());
    }

    #[test]
    fn zero_iterations_returns_init() {
        let ds = tiny_dataset(2);
        let arch = FieldArchitecture {
            pe_levels_pos: 2,
            pe_levels_dir: 1,
            trunk_layers: 1,
            trunk_width: 8,
            color_head_width: 8,
            embed_dim: 4,
            n_conditions: 3,
        };
        let cfg = TrainConfig {
            iterations: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (params, _) = train_field::<f32>(&ds, &arch, &cfg).unwrap();
        let mut init = init_params::<f32>(&arch, ds.scene_bounds, cfg.seed).unwrap();
        init.condition_ids = ds.lighting_ids();
        for ((_, a), (_, b)) in params.named().iter().zip(init.named().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn short_training_reduces_loss_and_is_reproducible() {
        let ds = tiny_dataset(3);
        let arch = FieldArchitecture {
            pe_levels_pos: 4,
            pe_levels_dir: 1,
            trunk_layers: 2,
            trunk_width: 16,
            color_head_width: 8,
            embed_dim: 4,
            n_conditions: 3,
        };
        let cfg = TrainConfig {
            iterations: 200,
            batch_size: 32,
            samples_per_ray: 24,
            eval_every: 0,
            ..TrainConfig::default()
        };
        let mut first_loss = None;
        let mut last_loss = None;
        let (params_a, _) = train_field_filtered::<f32>(
            &ds,
            &arch,
            &cfg,
            None,
            Some(&mut |row: &TrainLogRow| {
                if first_loss.is_none() {
                    first_loss = Some(row.loss);
                }
                last_loss = Some(row.loss);
            }),
        )
        .unwrap();
        assert!(
            last_loss.unwrap() < first_loss.unwrap(),
            "loss did not decrease: {first_loss:?} -> {last_loss:?}"
        );
        let (params_b, _) = train_field::<f32>(&ds, &arch, &cfg).unwrap();
        for ((_, a), (_, b)) in params_a.named().iter().zip(params_b.named().iter()) {
            assert_eq!(a.data(), b.data(), "training not reproducible");
        }
    }

    #[test]
    fn embedding_isolation() {
        let ds = tiny_dataset(2);
        let arch = FieldArchitecture {
            pe_levels_pos: 2,
            pe_levels_dir: 1,
            trunk_layers: 1,
            trunk_width: 8,
            color_head_width: 8,
            embed_dim: 4,
            n_conditions: 3,
        };
        let cfg = TrainConfig {
            iterations: 10,
            batch_size: 16,
            samples_per_ray: 16,
            eval_every: 0,
            ..TrainConfig::default()
        };
        let ids = ds.lighting_ids();
        let blocked = ids[1];
        let (params, _) = train_field_filtered::<f32>(
            &ds,
            &arch,
            &cfg,
            Some(&|id| id != blocked),
            None,
        )
        .unwrap();
        let mut init = init_params::<f32>(&arch, ds.scene_bounds, cfg.seed).unwrap();
        init.condition_ids = ids.clone();
        let d = arch.embed_dim;
        let row = 1;
        assert_eq!(
            &params.embedding_table.data()[row * d..(row + 1) * d],
            &init.embedding_table.data()[row * d..(row + 1) * d],
            "blocked condition's embedding row moved"
        );
        // Other rows did move.
        assert_ne!(
            &params.embedding_table.data()[..d],
            &init.embedding_table.data()[..d]
        );
    }
}
