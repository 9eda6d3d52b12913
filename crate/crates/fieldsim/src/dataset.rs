//! Posed multi-condition training datasets rendered by the oracle, plus the
//! on-disk layout: `meta.json` and binary PPM frames.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::field::vehicle_camera_pose;
use crate::geom::{v3, Aabb};
use crate::image::Image;
use crate::render::RenderConfig;
use crate::rng::RngStream;
use crate::scene::{build_geometry, centerline_at, oracle_render, SceneGeometry, SceneSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub pose: CameraPose,
    pub lighting_id: u32,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub scene_bounds: Aabb,
}

/// Camera-trajectory parameters for dataset capture.
#[derive(Debug, Clone, Copy)]
pub struct CaptureConfig {
    pub camera_height: f64,
    pub camera_pitch: f64,
    /// Lateral jitter as a fraction of the road width (each side).
    pub lateral_fraction: f64,
    pub yaw_jitter: f64,
    pub samples_per_ray: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        CaptureConfig {
            camera_height: 0.6,
            camera_pitch: -5.0_f64.to_radians(),
            lateral_fraction: 0.25,
            yaw_jitter: 20.0_f64.to_radians(),
            samples_per_ray: 96,
        }
    }
}

/// Renders `n_views_per_condition` oracle frames per lighting condition from
/// poses spread along the road centerline. Deterministic given the seed;
/// images are quantized to the 8-bit grid so in-memory and on-disk datasets
/// are identical.
pub fn generate_dataset(
    spec: &SceneSpec,
    n_views_per_condition: usize,
    intr: &CameraIntrinsics,
    capture: &CaptureConfig,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    intr.validate()?;
    if n_views_per_condition == 0 {
        return Err(Error::InvalidConfig(
            "n_views_per_condition must be >= 1".into(),
        ));
    }
    let geo = build_geometry(spec);
    let bounds = geo.bounds();
    let root = RngStream::seed(seed);
    let cfg = RenderConfig {
        samples_per_ray: capture.samples_per_ray,
        stratified: false,
        background: [1.0, 1.0, 1.0],
        white_bkgd_scale: 1.0,
        term_transmittance: 1e-4,
    };
    // Poses span the drivable centerline, keeping a margin from both ends.
    let s_min = 0.3;
    let s_max = (spec.road_length - 1.0).max(s_min + 0.1);
    let mut frames = Vec::with_capacity(n_views_per_condition * spec.lighting_conditions.len());
    for (ci, cond) in spec.lighting_conditions.iter().enumerate() {
        let mut rng = root.substream(ci as u64);
        for k in 0..n_views_per_condition {
            // Stratify along the centerline so coverage is even.
            let s = s_min
                + (k as f64 + rng.uniform()) / n_views_per_condition as f64 * (s_max - s_min);
            let (center, forward) = centerline_at(spec, s);
            let lateral = rng.uniform_in(-1.0, 1.0) * capture.lateral_fraction * spec.road_width;
            // Left-normal of the travel direction.
            let normal = [-forward[1], forward[0]];
            let eye = v3(
                center[0] + normal[0] * lateral,
                center[1] + normal[1] * lateral,
                capture.camera_height,
            );
            let yaw = forward[1].atan2(forward[0])
                + rng.uniform_in(-capture.yaw_jitter, capture.yaw_jitter);
            let pose = vehicle_camera_pose(eye, yaw, capture.camera_pitch);
            let mut image = oracle_render(spec, &geo, cond, &pose, intr, &cfg)?;
            image.quantize();
            frames.push(Frame {
                image,
                pose,
                lighting_id: cond.id,
            });
        }
    }
    Ok(Dataset {
        intrinsics: *intr,
        frames,
        scene_bounds: bounds,
    })
}

#[derive(Serialize, Deserialize)]
struct MetaFrame {
    file: String,
    transform: Vec<f64>,
    lighting_id: u32,
}

#[derive(Serialize, Deserialize)]
struct MetaBounds {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct Meta {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    scene_bounds: MetaBounds,
    frames: Vec<MetaFrame>,
}

impl Dataset {
    pub fn lighting_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.frames.iter().map(|f| f.lighting_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut frames = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let file = format!("frame_{i:05}.ppm");
            f.image.write_ppm(&dir.join(&file))?;
            frames.push(MetaFrame {
                file,
                transform: f.pose.to_mat4().to_vec(),
                lighting_id: f.lighting_id,
            });
        }
        let meta = Meta {
            fx: self.intrinsics.fx,
            fy: self.intrinsics.fy,
            cx: self.intrinsics.cx,
            cy: self.intrinsics.cy,
            width: self.intrinsics.width,
            height: self.intrinsics.height,
            scene_bounds: MetaBounds {
                min: self.scene_bounds.min.as_array(),
                max: self.scene_bounds.max.as_array(),
            },
            frames,
        };
        let json = serde_json::to_string_pretty(&meta)?;
        std::fs::write(dir.join("meta.json"), json)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let intrinsics = CameraIntrinsics {
            fx: meta.fx,
            fy: meta.fy,
            cx: meta.cx,
            cy: meta.cy,
            width: meta.width,
            height: meta.height,
        };
        intrinsics.validate()?;
        let mut frames = Vec::with_capacity(meta.frames.len());
        for mf in &meta.frames {
            let image = Image::read_ppm(&dir.join(&mf.file))?;
            if image.width != meta.width || image.height != meta.height {
                return Err(Error::DimensionMismatch(format!(
                    "frame {} is {}x{}, dataset is {}x{}",
                    mf.file, image.width, image.height, meta.width, meta.height
                )));
            }
            let transform: [f64; 16] = mf
                .transform
                .as_slice()
                .try_into()
                .map_err(|_| Error::InvalidConfig("transform must have 16 floats".into()))?;
            frames.push(Frame {
                image,
                pose: CameraPose::from_mat4(&transform)?,
                lighting_id: mf.lighting_id,
            });
        }
        Ok(Dataset {
            intrinsics,
            frames,
            scene_bounds: Aabb::new(
                v3(
                    meta.scene_bounds.min[0],
                    meta.scene_bounds.min[1],
                    meta.scene_bounds.min[2],
                ),
                v3(
                    meta.scene_bounds.max[0],
                    meta.scene_bounds.max[1],
                    meta.scene_bounds.max[2],
                ),
            ),
        })
    }
}

/// Geometry accessor shared by callers that only have a dataset directory.
pub fn scene_geometry(spec: &SceneSpec) -> SceneGeometry {
    build_geometry(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_intr() -> CameraIntrinsics {
        CameraIntrinsics::with_hfov(16, 12, 1.4)
    }

    fn fast_capture() -> CaptureConfig {
        CaptureConfig {
            samples_per_ray: 24,
            ..CaptureConfig::default()
        }
    }

    #[test]
    fn counts_per_condition() {
        let spec = SceneSpec::straight_desk();
        let ds = generate_dataset(&spec, 2, &tiny_intr(), &fast_capture(), 5).unwrap();
        assert_eq!(ds.frames.len(), 6);
        for cond in &spec.lighting_conditions {
            let n = ds.frames.iter().filter(|f| f.lighting_id == cond.id).count();
            assert_eq!(n, 2);
        }
        let mut one_cond = spec.clone();
        one_cond.lighting_conditions.truncate(1);
        let ds1 = generate_dataset(&one_cond, 1, &tiny_intr(), &fast_capture(), 5).unwrap();
        assert_eq!(ds1.frames.len(), 1);
    }

    #[test]
    fn deterministic_and_pixel_range() {
        let spec = SceneSpec::straight_desk();
        let a = generate_dataset(&spec, 2, &tiny_intr(), &fast_capture(), 9).unwrap();
        let b = generate_dataset(&spec, 2, &tiny_intr(), &fast_capture(), 9).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.image, fb.image);
            assert_eq!(fa.pose.to_mat4(), fb.pose.to_mat4());
        }
        for f in &a.frames {
            assert!(f.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::straight_desk();
        let ds = generate_dataset(&spec, 1, &tiny_intr(), &fast_capture(), 2).unwrap();
        ds.save_dir(dir.path()).unwrap();
        assert!(dir.path().join("meta.json").exists());
        assert!(dir.path().join("frame_00000.ppm").exists());
        let back = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(back.frames.len(), ds.frames.len());
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!(a.image, b.image, "quantized images survive the roundtrip");
            assert_eq!(a.lighting_id, b.lighting_id);
            let (ma, mb) = (a.pose.to_mat4(), b.pose.to_mat4());
            for (x, y) in ma.iter().zip(mb.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(back.scene_bounds, ds.scene_bounds);
    }
}
