//! Analytic ground-truth scenes: box-composed corridor geometry with exact
//! signed distances, Lambertian shading under named lighting conditions, and
//! an oracle volume renderer that shares `composite` with the learned field.
//!
//! Scenes are closed tubes (ground, side walls, ceiling, end wall) with a
//! short open mouth behind the start pose, so nearly every camera ray
//! terminates on geometry.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::geom::{v3, Aabb, Vec3};
use crate::image::Image;
use crate::render::{composite, sample_ts, CompositeCache, RenderConfig};
use serde::{Deserialize, Serialize};

/// Density of solid interiors; the ramp midpoint sits on the exact surface.
pub const D_WALL: f64 = 50.0;
/// Width of the linear density ramp around surfaces.
pub const EPS_RAMP: f64 = 0.05;
/// How far the corridor extends behind the start line (the open mouth).
pub const MOUTH_LENGTH: f64 = 2.0;
const SLAB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    StraightRoad,
    SingleRightTurn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingCondition {
    pub id: u32,
    pub ambient: [f64; 3],
    pub sun_direction: Vec3,
    pub sun_intensity: f64,
}

impl LightingCondition {
    pub fn mean_ambient(&self) -> f64 {
        (self.ambient[0] + self.ambient[1] + self.ambient[2]) / 3.0
    }
}

/// Day / Dawn / Night presets.
pub fn lighting_presets() -> Vec<LightingCondition> {
    vec![
        LightingCondition {
            id: 0,
            ambient: [0.9, 0.9, 0.9],
            sun_direction: v3(0.35, -0.25, 0.9).normalized(),
            sun_intensity: 0.45,
        },
        LightingCondition {
            id: 1,
            ambient: [0.6, 0.45, 0.35],
            sun_direction: v3(0.9, 0.1, 0.42).normalized(),
            sun_intensity: 0.65,
        },
        LightingCondition {
            id: 2,
            ambient: [0.15, 0.15, 0.25],
            sun_direction: v3(0.0, 0.0, 1.0),
            sun_intensity: 0.05,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: Layout,
    pub road_width: f64,
    pub road_length: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub lighting_conditions: Vec<LightingCondition>,
}

impl SceneSpec {
    pub fn straight_desk() -> Self {
        SceneSpec {
            layout: Layout::StraightRoad,
            road_width: 4.0,
            road_length: 14.0,
            wall_height: 2.0,
            wall_thickness: 0.8,
            lighting_conditions: lighting_presets(),
        }
    }

    pub fn turn_desk() -> Self {
        SceneSpec {
            layout: Layout::SingleRightTurn,
            road_width: 4.0,
            road_length: 20.0,
            wall_height: 2.0,
            wall_thickness: 0.8,
            lighting_conditions: lighting_presets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.road_width <= 0.0
            || self.road_length <= 0.0
            || self.wall_height <= 0.0
            || self.wall_thickness <= 0.0
        {
            return Err(Error::InvalidConfig("scene extents must be positive".into()));
        }
        if self.lighting_conditions.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one lighting condition required".into(),
            ));
        }
        let mut ids: Vec<u32> = self.lighting_conditions.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.lighting_conditions.len() {
            return Err(Error::InvalidConfig("lighting ids must be unique".into()));
        }
        for c in &self.lighting_conditions {
            if (c.sun_direction.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig("sun_direction must be unit".into()));
            }
            if c.sun_intensity < 0.0 {
                return Err(Error::InvalidConfig("sun_intensity must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn condition(&self, id: u32) -> Option<&LightingCondition> {
        self.lighting_conditions.iter().find(|c| c.id == id)
    }

    /// First-leg length: the whole corridor for straight scenes, half the
    /// centerline length for the turn.
    pub fn leg1(&self) -> f64 {
        match self.layout {
            Layout::StraightRoad => self.road_length,
            Layout::SingleRightTurn => self.road_length * 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Road,
    WallLeft,
    WallRight,
    Ceiling,
    EndMarker,
}

#[derive(Debug, Clone, Copy)]
pub struct SolidBox {
    pub aabb: Aabb,
    pub material: Material,
}

/// Derived box list plus drivable-footprint rectangles.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub boxes: Vec<SolidBox>,
    /// Drivable footprint, axis-aligned rectangles (xmin, xmax, ymin, ymax).
    pub road_rects: Vec<[f64; 4]>,
    /// Interior air volume of the tube.
    pub interior: Aabb,
}

pub fn build_geometry(spec: &SceneSpec) -> SceneGeometry {
    let w2 = spec.road_width * 0.5;
    let wt = spec.wall_thickness;
    let h = spec.wall_height;
    let x0 = -MOUTH_LENGTH;
    let mut boxes = Vec::new();
    match spec.layout {
        Layout::StraightRoad => {
            let l = spec.road_length;
            let xe = l + wt;
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, -w2 - wt, -SLAB), v3(xe, w2 + wt, 0.0)),
                material: Material::Road,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, w2, 0.0), v3(xe, w2 + wt, h)),
                material: Material::WallLeft,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, -w2 - wt, 0.0), v3(xe, -w2, h)),
                material: Material::WallRight,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, -w2 - wt, h), v3(xe, w2 + wt, h + SLAB)),
                material: Material::Ceiling,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(l, -w2, 0.0), v3(l + wt, w2, h)),
                material: Material::EndMarker,
            });
            SceneGeometry {
                boxes,
                road_rects: vec![[x0, l, -w2, w2]],
                interior: Aabb::new(v3(x0, -w2, 0.0), v3(l, w2, h)),
            }
        }
        Layout::SingleRightTurn => {
            // Bend center at (l1, 0); leg 2 heads -Y. Boxes abut without
            // overlapping so min-of-SDFs stays exact everywhere.
            let l1 = spec.leg1();
            let l2 = spec.road_length - l1;
            let xe = l1 + w2 + wt;
            let ye = -l2;
            // Leg 1 slab and ceiling.
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, -w2 - wt, -SLAB), v3(xe, w2 + wt, 0.0)),
                material: Material::Road,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, -w2 - wt, h), v3(xe, w2 + wt, h + SLAB)),
                material: Material::Ceiling,
            });
            // Leg 2 slab and ceiling, abutting the leg 1 slabs at y=-w2-wt.
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(l1 - w2 - wt, ye - wt, -SLAB), v3(xe, -w2 - wt, 0.0)),
                material: Material::Road,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(l1 - w2 - wt, ye - wt, h), v3(xe, -w2 - wt, h + SLAB)),
                material: Material::Ceiling,
            });
            // Outer boundary: left wall of leg 1, then far wall of leg 2.
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, w2, 0.0), v3(xe, w2 + wt, h)),
                material: Material::WallLeft,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(l1 + w2, ye, 0.0), v3(xe, w2, h)),
                material: Material::WallLeft,
            });
            // Inner boundary: right wall of leg 1 through the corner, then
            // the near wall of leg 2 below it.
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(x0, -w2 - wt, 0.0), v3(l1 - w2, -w2, h)),
                material: Material::WallRight,
            });
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(l1 - w2 - wt, ye, 0.0), v3(l1 - w2, -w2 - wt, h)),
                material: Material::WallRight,
            });
            // End wall of leg 2 with the checker marker.
            boxes.push(SolidBox {
                aabb: Aabb::new(v3(l1 - w2 - wt, ye - wt, 0.0), v3(xe, ye, h)),
                material: Material::EndMarker,
            });
            SceneGeometry {
                boxes,
                road_rects: vec![
                    [x0, l1 + w2, -w2, w2],
                    [l1 - w2, l1 + w2, ye, w2],
                ],
                interior: Aabb::new(v3(x0, ye, 0.0), v3(l1 + w2, w2, h)),
            }
        }
    }
}

impl SceneGeometry {
    /// Walls-only band for the vehicle collision mesh: from above wheel
    /// height to just under the ceiling, extended a little into the walls.
    pub fn collision_band_bounds(&self) -> Aabb {
        let b = self.interior;
        Aabb::new(
            v3(b.min.x, b.min.y - 0.3, 0.3),
            v3(b.max.x + 0.3, b.max.y + 0.3, b.max.z - 0.1),
        )
    }

    /// Interior tube extended 0.25 m into every solid; the trained field is
    /// well supervised in this region.
    pub fn mesh_eval_bounds(&self) -> Aabb {
        let b = self.interior;
        Aabb::new(
            v3(b.min.x + 0.5, b.min.y - 0.25, b.min.z - 0.25),
            v3(b.max.x + 0.25, b.max.y + 0.25, b.max.z + 0.25),
        )
    }

    /// Full geometry bounding box (all solids).
    pub fn bounds(&self) -> Aabb {
        let mut b = self.boxes[0].aabb;
        for sb in &self.boxes[1..] {
            b = b.union(&sb.aabb);
        }
        b
    }

    pub fn on_road(&self, x: f64, y: f64) -> bool {
        self.road_rects
            .iter()
            .any(|r| x >= r[0] && x <= r[1] && y >= r[2] && y <= r[3])
    }

    fn nearest_box(&self, p: Vec3) -> (&SolidBox, f64) {
        let mut best = &self.boxes[0];
        let mut best_d = best.aabb.sdf(p);
        for sb in &self.boxes[1..] {
            let d = sb.aabb.sdf(p);
            if d < best_d {
                best = sb;
                best_d = d;
            }
        }
        (best, best_d)
    }
}

/// Signed distance to the union of scene solids (min over per-box SDFs);
/// negative inside.
pub fn scene_sdf(p: Vec3, geo: &SceneGeometry) -> f64 {
    geo.nearest_box(p).1
}

/// Volume density: `D_WALL` deep inside solids, 0 in free space, linear ramp
/// of width `EPS_RAMP` across surfaces.
pub fn scene_density(p: Vec3, geo: &SceneGeometry) -> f64 {
    let sdf = scene_sdf(p, geo);
    D_WALL * (0.5 - sdf / EPS_RAMP).clamp(0.0, 1.0)
}

fn checker(a: f64, b: f64) -> f64 {
    let cell = 0.5;
    let parity = ((a / cell).floor() as i64 + (b / cell).floor() as i64).rem_euclid(2);
    if parity == 0 {
        0.92
    } else {
        0.08
    }
}

/// Surface albedo at (or nearest to) a point.
pub fn scene_albedo(p: Vec3, geo: &SceneGeometry) -> [f64; 3] {
    let (sb, _) = geo.nearest_box(p);
    match sb.material {
        Material::Road => [0.45, 0.45, 0.45],
        Material::WallLeft => [0.30, 0.42, 0.62],
        Material::WallRight => [0.62, 0.45, 0.30],
        Material::Ceiling => [0.78, 0.78, 0.78],
        Material::EndMarker => {
            // Checker pattern across the marker face.
            let c = checker(p.x + p.y, p.z);
            [c, c, c]
        }
    }
}

/// Lambertian shading:
/// `albedo * clamp(ambient + I * max(0, n . sun), 0, 1)` per channel.
pub fn scene_radiance(
    p: Vec3,
    view_dir: Vec3,
    cond: &LightingCondition,
    geo: &SceneGeometry,
) -> [f64; 3] {
    debug_assert!((view_dir.norm() - 1.0).abs() < 1e-6);
    let _ = view_dir; // Lambertian: view-independent by construction.
    let (sb, _) = geo.nearest_box(p);
    let n = sb.aabb.normal(p);
    let diffuse = cond.sun_intensity * n.dot(cond.sun_direction).max(0.0);
    let albedo = scene_albedo(p, geo);
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = albedo[c] * (cond.ambient[c] + diffuse).clamp(0.0, 1.0);
    }
    out
}

/// Oracle volume rendering of the analytic scene. Fixed (midpoint) sampling
/// regardless of `cfg.stratified`, so outputs are bit-reproducible; shares
/// `composite` with the learned-field renderer. Background is white scaled
/// by the condition's mean ambient.
pub fn oracle_render(
    spec: &SceneSpec,
    geo: &SceneGeometry,
    cond: &LightingCondition,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
) -> Result<Image> {
    spec.validate()?;
    cfg.validate()?;
    let bounds = geo.bounds().padded(0.02);
    let t_near = 0.05;
    let t_far = bounds.diagonal().max(1.0);
    if t_near >= t_far {
        return Err(Error::InvalidConfig("near plane beyond far plane".into()));
    }
    let bg_scale = cond.mean_ambient();
    let background = [bg_scale, bg_scale, bg_scale];

    let mut img = Image::new(intr.width, intr.height);
    let mut cache = CompositeCache::default();
    let mut sigmas: Vec<f64> = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let dir = pose.pixel_direction(intr, u as f64, v as f64);
            let px = match bounds.clip_ray(pose.translation, dir, t_near, t_far) {
                None => background,
                Some((t0, t1)) => {
                    let ts = sample_ts(t0, t1, cfg.samples_per_ray, false, None);
                    sigmas.clear();
                    colors.clear();
                    let mut transmittance = 1.0f64;
                    let n = ts.len();
                    let mut t_far_used = t1;
                    for (i, &t) in ts.iter().enumerate() {
                        let p = pose.translation + dir * t;
                        let sigma = scene_density(p, geo);
                        sigmas.push(sigma);
                        if sigma > 0.0 {
                            colors.push(scene_radiance(p, dir, cond, geo));
                        } else {
                            colors.push([0.0; 3]);
                        }
                        let delta = if i + 1 < n { ts[i + 1] - t } else { t1 - t };
                        transmittance *= (-sigma * delta).exp();
                        if cfg.term_transmittance > 0.0 && transmittance < cfg.term_transmittance
                        {
                            t_far_used = if i + 1 < n { ts[i + 1] } else { t1 };
                            sigmas.truncate(i + 1);
                            colors.truncate(i + 1);
                            break;
                        }
                    }
                    let px = composite(
                        &sigmas,
                        &colors,
                        &ts[..sigmas.len()],
                        t_far_used,
                        background,
                        &mut cache,
                    );
                    [px[0], px[1], px[2]]
                }
            };
            img.set_pixel(u, v, [px[0] as f32, px[1] as f32, px[2] as f32]);
        }
    }
    Ok(img)
}

/// Centerline of the drivable path as a polyline in the ground plane.
pub fn centerline(spec: &SceneSpec) -> Vec<[f64; 2]> {
    match spec.layout {
        Layout::StraightRoad => vec![[0.0, 0.0], [spec.road_length, 0.0]],
        Layout::SingleRightTurn => {
            let l1 = spec.leg1();
            let l2 = spec.road_length - l1;
            vec![[0.0, 0.0], [l1, 0.0], [l1, -l2]]
        }
    }
}

/// Point and forward direction at arc-length `s` along the centerline.
pub fn centerline_at(spec: &SceneSpec, s: f64) -> ([f64; 2], [f64; 2]) {
    let line = centerline(spec);
    let mut remaining = s.max(0.0);
    let n_segs = line.len() - 1;
    for i in 0..n_segs {
        let (a, b) = (line[i], line[i + 1]);
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let len = (dx * dx + dy * dy).sqrt();
        if remaining <= len || i == n_segs - 1 {
            let t = (remaining / len).min(1.0);
            return ([a[0] + dx * t, a[1] + dy * t], [dx / len, dy / len]);
        }
        remaining -= len;
    }
    unreachable!("centerline always has at least one segment");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn spec_validation() {
        let mut spec = SceneSpec::straight_desk();
        assert!(spec.validate().is_ok());
        spec.lighting_conditions[1].id = 0;
        assert!(spec.validate().is_err());
        let mut spec2 = SceneSpec::straight_desk();
        spec2.road_width = 0.0;
        assert!(spec2.validate().is_err());
    }

    #[test]
    fn density_free_space_and_interior() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        // 10 m above the road center: free space.
        assert_eq!(scene_density(v3(7.0, 0.0, 10.0), &geo), 0.0);
        // Centroid of the left wall slab: deep interior.
        let wall = geo.boxes[1].aabb;
        assert_eq!(scene_density(wall.center(), &geo), D_WALL);
        // Exact surface: ramp midpoint.
        let surf = v3(7.0, spec.road_width / 2.0, 1.0);
        assert!((scene_density(surf, &geo) - D_WALL / 2.0).abs() < 1e-6);
    }

    #[test]
    fn sdf_trivial_values() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        // Center of the 0.8 m left wall: -0.4 m.
        let wall = geo.boxes[1].aabb;
        assert!((scene_sdf(wall.center(), &geo) + spec.wall_thickness / 2.0).abs() < 1e-9);
        // Interior air point: walls 2 m away, ground and ceiling 1 m away.
        let q = v3(7.0, 0.0, 1.0);
        assert!((scene_sdf(q, &geo) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sdf_corner_is_min_of_boxes() {
        let spec = SceneSpec::turn_desk();
        let geo = build_geometry(&spec);
        let p = v3(spec.leg1() - 3.0, -1.0, 1.0);
        let by_hand = geo
            .boxes
            .iter()
            .map(|b| b.aabb.sdf(p))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(scene_sdf(p, &geo), by_hand);
    }

    /// Brute-force oracle: exact nearest point on every box face.
    fn face_projection_distance(p: Vec3, geo: &SceneGeometry) -> f64 {
        let mut best = f64::INFINITY;
        for sb in &geo.boxes {
            let (mn, mx) = (sb.aabb.min, sb.aabb.max);
            for axis in 0..3 {
                for side in [mn.axis(axis), mx.axis(axis)] {
                    // Project p onto the face plane, clamp to the face rect.
                    let mut q = [
                        p.x.clamp(mn.x, mx.x),
                        p.y.clamp(mn.y, mx.y),
                        p.z.clamp(mn.z, mx.z),
                    ];
                    q[axis] = side;
                    let d = (v3(q[0], q[1], q[2]) - p).norm();
                    best = best.min(d);
                }
            }
        }
        best
    }

    #[test]
    fn sdf_matches_face_projection_brute_force() {
        for spec in [SceneSpec::straight_desk(), SceneSpec::turn_desk()] {
            let geo = build_geometry(&spec);
            let bounds = geo.bounds().padded(0.3);
            let mut rng = RngStream::seed(99);
            for _ in 0..20_000 {
                let p = v3(
                    rng.uniform_in(bounds.min.x, bounds.max.x),
                    rng.uniform_in(bounds.min.y, bounds.max.y),
                    rng.uniform_in(bounds.min.z, bounds.max.z),
                );
                let sdf = scene_sdf(p, &geo);
                let brute = face_projection_distance(p, &geo);
                assert!(
                    (sdf.abs() - brute).abs() <= 1e-3,
                    "|sdf|={} vs brute={} at {p:?}",
                    sdf.abs(),
                    brute
                );
            }
        }
    }

    #[test]
    fn density_ramp_localization() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let bounds = geo.bounds().padded(0.2);
        let mut rng = RngStream::seed(3);
        for _ in 0..20_000 {
            let p = v3(
                rng.uniform_in(bounds.min.x, bounds.max.x),
                rng.uniform_in(bounds.min.y, bounds.max.y),
                rng.uniform_in(bounds.min.z, bounds.max.z),
            );
            let sdf = scene_sdf(p, &geo);
            let density = scene_density(p, &geo);
            if sdf >= EPS_RAMP / 2.0 {
                assert_eq!(density, 0.0);
            } else {
                assert!(density > 0.0);
            }
        }
    }

    #[test]
    fn radiance_ambient_only() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let cond = LightingCondition {
            id: 9,
            ambient: [1.0, 1.0, 1.0],
            sun_direction: v3(0.0, 0.0, 1.0),
            sun_intensity: 0.0,
        };
        // Road surface point: albedo (0.45) * ambient.
        let p = v3(5.0, 0.0, 0.0);
        let rgb = scene_radiance(p, v3(0.0, 0.0, -1.0), &cond, &geo);
        assert_eq!(rgb, [0.45, 0.45, 0.45]);
    }

    #[test]
    fn radiance_wall_shading_hand_computed() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let cond = LightingCondition {
            id: 9,
            ambient: [0.2, 0.2, 0.2],
            sun_direction: v3(0.0, -1.0, 0.0),
            sun_intensity: 0.5,
        };
        // Inner face of the left wall: outward (into the corridor) normal is
        // -Y, so n.sun = 1.
        let p = v3(5.0, spec.road_width / 2.0 - 1e-4, 1.0);
        let rgb = scene_radiance(p, v3(0.0, 1.0, 0.0), &cond, &geo);
        let albedo = [0.30, 0.42, 0.62];
        for c in 0..3 {
            assert!((rgb[c] - albedo[c] * 0.7).abs() < 1e-9, "channel {c}");
        }
    }

    #[test]
    fn oracle_render_sky_and_determinism() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let cond = spec.lighting_conditions[0];
        // Camera far above the scene looking up: every ray misses.
        let pose = CameraPose::looking(v3(5.0, 0.0, 50.0), v3(0.0, 0.0, 1.0));
        let intr = CameraIntrinsics::with_hfov(6, 4, 1.0);
        let cfg = RenderConfig {
            samples_per_ray: 16,
            ..RenderConfig::default()
        };
        let img = oracle_render(&spec, &geo, &cond, &pose, &intr, &cfg).unwrap();
        let bg = cond.mean_ambient() as f32;
        for px in img.data.chunks(3) {
            assert!((px[0] - bg).abs() < 1e-6);
        }
        let img2 = oracle_render(&spec, &geo, &cond, &pose, &intr, &cfg).unwrap();
        assert_eq!(img, img2);
    }

    #[test]
    fn oracle_render_wall_fill_matches_radiance() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let cond = spec.lighting_conditions[0];
        // 1 m in front of the left wall, looking straight at it.
        let eye = v3(7.0, spec.road_width / 2.0 - 1.0, 1.0);
        let pose = CameraPose::looking(eye, v3(0.0, 1.0, 0.0));
        let intr = CameraIntrinsics::with_hfov(8, 8, 0.5);
        let cfg = RenderConfig {
            samples_per_ray: 256,
            ..RenderConfig::default()
        };
        let img = oracle_render(&spec, &geo, &cond, &pose, &intr, &cfg).unwrap();
        let hit = v3(7.0, spec.road_width / 2.0, 1.0);
        let want = scene_radiance(hit, v3(0.0, 1.0, 0.0), &cond, &geo);
        for px in img.data.chunks(3) {
            for c in 0..3 {
                assert!(
                    (px[c] as f64 - want[c]).abs() <= 1.5 / 255.0,
                    "pixel {:?} vs {:?}",
                    px,
                    want
                );
            }
        }
    }

    #[test]
    fn ambient_increase_does_not_darken() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let pose = crate::field::vehicle_camera_pose(v3(1.0, 0.0, 0.6), 0.0, -0.087);
        let intr = CameraIntrinsics::with_hfov(24, 16, 1.4);
        let cfg = RenderConfig {
            samples_per_ray: 48,
            ..RenderConfig::default()
        };
        let mut prev = -1.0;
        for amb in [0.2, 0.5, 0.8] {
            let cond = LightingCondition {
                id: 5,
                ambient: [amb, amb, amb],
                sun_direction: v3(0.0, 0.0, 1.0),
                sun_intensity: 0.3,
            };
            let img = oracle_render(&spec, &geo, &cond, &pose, &intr, &cfg).unwrap();
            let lum = img.mean_luminance();
            assert!(lum >= prev, "luminance decreased: {lum} < {prev}");
            prev = lum;
        }
    }

    #[test]
    fn centerline_turn_geometry() {
        let spec = SceneSpec::turn_desk();
        let (p, d) = centerline_at(&spec, 2.0);
        assert_eq!(p, [2.0, 0.0]);
        assert_eq!(d, [1.0, 0.0]);
        let (p2, d2) = centerline_at(&spec, spec.leg1() + 3.0);
        assert!((p2[0] - spec.leg1()).abs() < 1e-12);
        assert!((p2[1] + 3.0).abs() < 1e-12);
        assert_eq!(d2, [0.0, -1.0]);
    }

    #[test]
    fn road_polygon_membership() {
        let spec = SceneSpec::turn_desk();
        let geo = build_geometry(&spec);
        assert!(geo.on_road(1.0, 0.0));
        assert!(geo.on_road(spec.leg1(), -(spec.road_length - spec.leg1()) + 0.5));
        assert!(!geo.on_road(1.0, spec.road_width)); // beyond the left wall face
        assert!(!geo.on_road(-MOUTH_LENGTH - 0.5, 0.0)); // behind the mouth
    }
}
