//! Small f64 geometry kit: vectors, axis-aligned boxes, rotations.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn v3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = v3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        v3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        debug_assert!(n > 0.0);
        self / n
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        v3(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        v3(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn abs(self) -> Vec3 {
        v3(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        v3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        v3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        v3(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        v3(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        v3(self.x / s, self.y / s, self.z / s)
    }
}

/// Axis-aligned box, `min <= max` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extent(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Grows the box by `frac` of its extent on every side.
    pub fn padded(&self, frac: f64) -> Aabb {
        let pad = (self.max - self.min) * frac;
        Aabb {
            min: self.min - pad,
            max: self.max + pad,
        }
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    /// Signed distance of a point to the box surface (negative inside).
    pub fn sdf(&self, p: Vec3) -> f64 {
        let c = self.center();
        let h = self.half_extent();
        let q = (p - c).abs() - h;
        let outside = q.max(Vec3::ZERO).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    /// Outward surface normal at (or nearest to) `p`; exact on faces.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        let c = self.center();
        let h = self.half_extent();
        let d = p - c;
        let q = d.abs() - h;
        if q.x > 0.0 || q.y > 0.0 || q.z > 0.0 {
            let n = v3(
                q.x.max(0.0) * d.x.signum(),
                q.y.max(0.0) * d.y.signum(),
                q.z.max(0.0) * d.z.signum(),
            );
            n.normalized()
        } else {
            // Inside: face of least penetration.
            let (mut best, mut axis) = (q.x, 0usize);
            if q.y > best {
                best = q.y;
                axis = 1;
            }
            if q.z > best {
                axis = 2;
            }
            match axis {
                0 => v3(d.x.signum(), 0.0, 0.0),
                1 => v3(0.0, d.y.signum(), 0.0),
                _ => v3(0.0, 0.0, d.z.signum()),
            }
        }
    }

    /// Intersects the ray `o + t d` with the box; returns the `t` interval
    /// clipped to `[t0, t1]`, or None when the ray misses it.
    pub fn clip_ray(&self, o: Vec3, d: Vec3, t0: f64, t1: f64) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (t0, t1);
        for a in 0..3 {
            let (oa, da) = (o.axis(a), d.axis(a));
            let (mna, mxa) = (self.min.axis(a), self.max.axis(a));
            if da.abs() < 1e-12 {
                if oa < mna || oa > mxa {
                    return None;
                }
            } else {
                let inv = 1.0 / da;
                let (mut ta, mut tb) = ((mna - oa) * inv, (mxa - oa) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                lo = lo.max(ta);
                hi = hi.min(tb);
                if lo >= hi {
                    return None;
                }
            }
        }
        Some((lo, hi))
    }
}

/// Rotation about +Z by `angle` radians, returned as a row-major 3x3 matrix.
pub fn rot_z(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    v3(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
        m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
    )
}

pub fn mat_mul_mat(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

/// Checks `R^T R = I` and `det R = +1` within `tol`.
pub fn is_rotation(m: &[[f64; 3]; 3], tol: f64) -> bool {
    let t = mat_transpose(m);
    let id = mat_mul_mat(&t, m);
    for (i, row) in id.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            if (v - want).abs() > tol {
                return false;
            }
        }
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    (det - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sdf_signs() {
        let b = Aabb::new(v3(-1.0, -1.0, -1.0), v3(1.0, 1.0, 1.0));
        assert!((b.sdf(v3(0.0, 0.0, 0.0)) - (-1.0)).abs() < 1e-12);
        assert!((b.sdf(v3(3.0, 0.0, 0.0)) - 2.0).abs() < 1e-12);
        assert!(b.sdf(v3(1.0, 0.0, 0.0)).abs() < 1e-12);
        // Corner distance.
        let d = b.sdf(v3(2.0, 2.0, 1.0));
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn box_normal_on_faces() {
        let b = Aabb::new(v3(0.0, 0.0, 0.0), v3(2.0, 4.0, 6.0));
        assert_eq!(b.normal(v3(2.5, 2.0, 3.0)), v3(1.0, 0.0, 0.0));
        assert_eq!(b.normal(v3(1.0, 2.0, 5.9)), v3(0.0, 0.0, 1.0));
    }

    #[test]
    fn ray_clip() {
        let b = Aabb::new(v3(0.0, 0.0, 0.0), v3(1.0, 1.0, 1.0));
        let hit = b
            .clip_ray(v3(-1.0, 0.5, 0.5), v3(1.0, 0.0, 0.0), 0.0, 10.0)
            .unwrap();
        assert!((hit.0 - 1.0).abs() < 1e-12 && (hit.1 - 2.0).abs() < 1e-12);
        assert!(b
            .clip_ray(v3(-1.0, 2.0, 0.5), v3(1.0, 0.0, 0.0), 0.0, 10.0)
            .is_none());
    }

    #[test]
    fn rotation_checks() {
        assert!(is_rotation(&rot_z(0.7), 1e-12));
        let mut m = rot_z(0.3);
        m[0][0] += 0.01;
        assert!(!is_rotation(&m, 1e-6));
    }
}
