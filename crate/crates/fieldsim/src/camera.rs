//! Pinhole camera model shared by the oracle renderer, the learned-field
//! renderer, and the driving simulator.
//!
//! Convention: camera looks down -Z with +Y up in a right-handed frame;
//! pixel (u, v) has its center at (u+0.5, v+0.5) with v growing downward.

use crate::error::{Error, Result};
use crate::geom::{is_rotation, mat_mul_vec, mat_transpose, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidConfig("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidConfig(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Symmetric pinhole with the given horizontal field of view.
    pub fn with_hfov(width: u32, height: u32, hfov_rad: f64) -> Self {
        let fx = width as f64 * 0.5 / (hfov_rad * 0.5).tan();
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        if !is_rotation(&rotation, 1e-6) {
            return Err(Error::InvalidConfig(
                "camera rotation is not orthonormal with det +1".into(),
            ));
        }
        Ok(CameraPose {
            rotation,
            translation,
        })
    }

    pub const IDENTITY: CameraPose = CameraPose {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: Vec3::ZERO,
    };

    /// Camera placed at `eye`, viewing along `forward` (world frame) with
    /// world +Z as the up reference.
    pub fn looking(eye: Vec3, forward: Vec3) -> Self {
        let f = forward.normalized();
        let right = {
            let r = f.cross(crate::geom::v3(0.0, 0.0, 1.0));
            if r.norm() < 1e-9 {
                crate::geom::v3(0.0, -f.z.signum(), 0.0)
            } else {
                r.normalized()
            }
        };
        let up = right.cross(f);
        // Columns are the camera axes in world coordinates: +X right, +Y up,
        // +Z backward.
        CameraPose {
            rotation: [
                [right.x, up.x, -f.x],
                [right.y, up.y, -f.y],
                [right.z, up.z, -f.z],
            ],
            translation: eye,
        }
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        mat_mul_vec(&self.rotation, v)
    }

    /// World-space view direction through the center of pixel (u, v).
    pub fn pixel_direction(&self, intr: &CameraIntrinsics, u: f64, v: f64) -> Vec3 {
        let cam = crate::geom::v3(
            (u + 0.5 - intr.cx) / intr.fx,
            -(v + 0.5 - intr.cy) / intr.fy,
            -1.0,
        );
        self.rotate(cam).normalized()
    }

    /// Row-major 4x4 camera-to-world matrix, as stored in dataset metadata.
    pub fn to_mat4(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_mat4(m: &[f64; 16]) -> Result<Self> {
        let rotation = [
            [m[0], m[1], m[2]],
            [m[4], m[5], m[6]],
            [m[8], m[9], m[10]],
        ];
        CameraPose::new(rotation, crate::geom::v3(m[3], m[7], m[11]))
    }

    pub fn inverse_rotate(&self, v: Vec3) -> Vec3 {
        mat_mul_vec(&mat_transpose(&self.rotation), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v3;

    #[test]
    fn principal_ray_is_minus_z() {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 100.0,
            cy: 100.0,
            width: 200,
            height: 200,
        };
        let d = CameraPose::IDENTITY.pixel_direction(&intr, 99.5, 99.5);
        assert!((d.x).abs() < 1e-12 && (d.y).abs() < 1e-12);
        assert!((d.z + 1.0).abs() < 1e-12);
    }

    #[test]
    fn corner_pixel_direction_hand_computed() {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 100.0,
            cy: 100.0,
            width: 200,
            height: 200,
        };
        // u = v = 0: camera-frame direction (-0.995, 0.995, -1) normalized.
        let d = CameraPose::IDENTITY.pixel_direction(&intr, 0.0, 0.0);
        let n = (0.995f64 * 0.995 * 2.0 + 1.0).sqrt();
        assert!((d.x - (-0.995 / n)).abs() < 1e-12);
        assert!((d.y - (0.995 / n)).abs() < 1e-12);
        assert!((d.z - (-1.0 / n)).abs() < 1e-12);
    }

    #[test]
    fn looking_preserves_handedness() {
        for (fx, fy) in [(1.0, 0.0), (0.3, -0.8), (-1.0, 0.2)] {
            let pose = CameraPose::looking(v3(1.0, 2.0, 3.0), v3(fx, fy, -0.2));
            assert!(is_rotation(&pose.rotation, 1e-9));
            // -Z camera axis maps to the forward direction.
            let f = pose.rotate(v3(0.0, 0.0, -1.0));
            let want = v3(fx, fy, -0.2).normalized();
            assert!((f - want).norm() < 1e-9);
        }
    }

    #[test]
    fn mat4_roundtrip() {
        let pose = CameraPose::looking(v3(0.5, -1.0, 2.0), v3(0.2, 0.9, -0.1));
        let again = CameraPose::from_mat4(&pose.to_mat4()).unwrap();
        assert!((again.translation - pose.translation).norm() < 1e-12);
    }
}
