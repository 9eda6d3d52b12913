//! Uniform spatial hash over mesh triangles plus the capsule/segment
//! queries used for vehicle collision and mesh-preview ray casting.

use super::{DensityGrid, TriangleMesh};
use crate::geom::{v3, Aabb, Vec3};

/// Closest point on triangle (a, b, c) to point p. Ericson, Real-Time
/// Collision Detection, 5.1.5.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Squared distance between a segment and a triangle plus the segment
/// parameter of the closest approach.
pub fn segment_triangle_dist2(p0: Vec3, p1: Vec3, tri: &[Vec3; 3]) -> (f64, f64) {
    // A proper plane crossing inside the triangle is distance zero.
    if let Some(t) = segment_triangle_crossing(p0, p1, tri) {
        return (0.0, t);
    }
    let mut best = f64::INFINITY;
    let mut best_t = 0.0;
    // Sample candidates: endpoints against the face, and the segment against
    // each triangle edge (closed form).
    for (t, point) in [(0.0, p0), (1.0, p1)] {
        let q = closest_point_on_triangle(point, tri[0], tri[1], tri[2]);
        let d2 = (point - q).dot(point - q);
        if d2 < best {
            best = d2;
            best_t = t;
        }
    }
    // Without a proper crossing, the minimum is attained either between the
    // segment and a triangle edge or between an endpoint and the face.
    for i in 0..3 {
        let (e0, e1) = (tri[i], tri[(i + 1) % 3]);
        let (d2, t, _) = segment_segment_dist2(p0, p1, e0, e1);
        if d2 < best {
            best = d2;
            best_t = t;
        }
    }
    (best, best_t)
}

/// Squared distance between two segments with both parameters.
/// Ericson 5.1.9.
pub fn segment_segment_dist2(
    p1: Vec3,
    q1: Vec3,
    p2: Vec3,
    q2: Vec3,
) -> (f64, f64, f64) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let f = d2.dot(r);
    let (mut s, mut t);
    if a <= 1e-18 && e <= 1e-18 {
        s = 0.0;
        t = 0.0;
    } else if a <= 1e-18 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(r);
        if e <= 1e-18 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(d2);
            let denom = a * e - b * b;
            s = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    ((c1 - c2).dot(c1 - c2), s, t)
}

/// Moller-Trumbore segment/triangle crossing; returns the segment parameter
/// when the segment pierces the triangle.
pub fn segment_triangle_crossing(p0: Vec3, p1: Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let dir = p1 - p0;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let h = dir.cross(e2);
    let det = e1.dot(h);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = p0 - tri[0];
    let u = s.dot(h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    if (0.0..=1.0).contains(&t) {
        Some(t)
    } else {
        None
    }
}

/// Uniform spatial hash: a flat cell grid over the mesh bounds, each cell
/// listing the triangles whose AABB overlaps it.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    origin: Vec3,
    cell: f64,
    dims: (usize, usize, usize),
    cells: Vec<Vec<u32>>,
}

impl SpatialHash {
    /// Cell size defaults to twice the largest triangle extent.
    pub fn build(mesh: &TriangleMesh) -> SpatialHash {
        let bbox = mesh.bbox().unwrap_or(Aabb::new(Vec3::ZERO, v3(1.0, 1.0, 1.0)));
        let mut max_extent = 1e-3f64;
        for i in 0..mesh.triangles.len() {
            let t = mesh.triangle(i);
            let lo = t[0].min(t[1]).min(t[2]);
            let hi = t[0].max(t[1]).max(t[2]);
            let e = hi - lo;
            max_extent = max_extent.max(e.x).max(e.y).max(e.z);
        }
        let cell = (2.0 * max_extent).max(1e-3);
        let extent = bbox.max - bbox.min;
        let dims = (
            ((extent.x / cell).ceil() as usize).max(1),
            ((extent.y / cell).ceil() as usize).max(1),
            ((extent.z / cell).ceil() as usize).max(1),
        );
        let mut hash = SpatialHash {
            origin: bbox.min,
            cell,
            dims,
            cells: vec![Vec::new(); dims.0 * dims.1 * dims.2],
        };
        for i in 0..mesh.triangles.len() {
            let t = mesh.triangle(i);
            let lo = t[0].min(t[1]).min(t[2]);
            let hi = t[0].max(t[1]).max(t[2]);
            let (r0, r1) = (hash.cell_of(lo), hash.cell_of(hi));
            for iz in r0.2..=r1.2 {
                for iy in r0.1..=r1.1 {
                    for ix in r0.0..=r1.0 {
                        let idx = hash.idx(ix, iy, iz);
                        hash.cells[idx].push(i as u32);
                    }
                }
            }
        }
        hash
    }

    fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims.1 + iy) * self.dims.0 + ix
    }

    fn cell_of(&self, p: Vec3) -> (usize, usize, usize) {
        let q = (p - self.origin) / self.cell;
        (
            (q.x.floor().max(0.0) as usize).min(self.dims.0 - 1),
            (q.y.floor().max(0.0) as usize).min(self.dims.1 - 1),
            (q.z.floor().max(0.0) as usize).min(self.dims.2 - 1),
        )
    }

    /// Triangle candidates whose cells overlap the AABB; sorted + deduped so
    /// query results cannot depend on insertion order.
    pub fn candidates(&self, lo: Vec3, hi: Vec3, out: &mut Vec<u32>) {
        out.clear();
        let (r0, r1) = (self.cell_of(lo), self.cell_of(hi));
        for iz in r0.2..=r1.2 {
            for iy in r0.1..=r1.1 {
                for ix in r0.0..=r1.0 {
                    out.extend_from_slice(&self.cells[self.idx(ix, iy, iz)]);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

/// Collision mesh bundled with its acceleration structure.
#[derive(Debug, Clone)]
pub struct CollisionMesh {
    pub mesh: TriangleMesh,
    pub hash: SpatialHash,
}

impl CollisionMesh {
    pub fn new(mesh: TriangleMesh) -> Self {
        let hash = SpatialHash::build(&mesh);
        CollisionMesh { mesh, hash }
    }

    /// True (with the segment parameter of first contact) iff any point
    /// within `inflate` of the segment touches the mesh. `inflate == 0`
    /// degenerates to the exact segment/triangle crossing test.
    pub fn segment_intersect(&self, p0: Vec3, p1: Vec3, inflate: f64) -> Option<f64> {
        let mut cand = Vec::new();
        let pad = v3(inflate, inflate, inflate);
        self.hash
            .candidates(p0.min(p1) - pad, p0.max(p1) + pad, &mut cand);
        segment_hits_triangles(&self.mesh, &cand, p0, p1, inflate)
    }

    /// Brute-force variant over every triangle; the oracle the hash is
    /// checked against.
    pub fn segment_intersect_brute(&self, p0: Vec3, p1: Vec3, inflate: f64) -> Option<f64> {
        let all: Vec<u32> = (0..self.mesh.triangles.len() as u32).collect();
        segment_hits_triangles(&self.mesh, &all, p0, p1, inflate)
    }

    /// Nearest ray hit (exact triangle crossing), for mesh-preview
    /// rendering. Walks hash cells in ray order.
    pub fn closest_hit(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<(f64, u32)> {
        let bounds = Aabb::new(
            self.hash.origin,
            self.hash.origin
                + v3(
                    self.hash.dims.0 as f64 * self.hash.cell,
                    self.hash.dims.1 as f64 * self.hash.cell,
                    self.hash.dims.2 as f64 * self.hash.cell,
                ),
        );
        let (t0, t1) = bounds.clip_ray(origin, dir, 0.0, t_max)?;
        // 3D DDA over hash cells.
        let start = origin + dir * (t0 + 1e-9);
        let mut cell = self.hash.cell_of(start);
        let step = (
            if dir.x > 0.0 { 1isize } else { -1 },
            if dir.y > 0.0 { 1isize } else { -1 },
            if dir.z > 0.0 { 1isize } else { -1 },
        );
        let next_boundary = |i: usize, s: isize| -> f64 {
            if s > 0 {
                (i + 1) as f64
            } else {
                i as f64
            }
        };
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let dirs = [dir.x, dir.y, dir.z];
        let origins = [origin.x, origin.y, origin.z];
        let org = [self.hash.origin.x, self.hash.origin.y, self.hash.origin.z];
        let cells = [cell.0, cell.1, cell.2];
        let steps = [step.0, step.1, step.2];
        for a in 0..3 {
            if dirs[a].abs() > 1e-12 {
                let boundary = org[a] + next_boundary(cells[a], steps[a]) * self.hash.cell;
                t_next[a] = (boundary - origins[a]) / dirs[a];
                t_delta[a] = self.hash.cell / dirs[a].abs();
            }
        }
        let mut best: Option<(f64, u32)> = None;
        let mut cand = Vec::new();
        let mut cell_exit;
        loop {
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            cell_exit = t_next[axis];
            let idx = self.hash.idx(cell.0, cell.1, cell.2);
            cand.clear();
            cand.extend_from_slice(&self.hash.cells[idx]);
            for &ti in &cand {
                let tri = self.mesh.triangle(ti as usize);
                if let Some(t) =
                    segment_triangle_crossing(origin, origin + dir * t1, &tri)
                {
                    let t_abs = t * t1;
                    if t_abs >= t0 - 1e-9 && best.map(|(bt, _)| t_abs < bt).unwrap_or(true) {
                        best = Some((t_abs, ti));
                    }
                }
            }
            if let Some((bt, _)) = best {
                if bt <= cell_exit + 1e-9 {
                    return best;
                }
            }
            if cell_exit >= t1 {
                return best;
            }
            // Advance to the next cell.
            match axis {
                0 => {
                    let n = cell.0 as isize + step.0;
                    if n < 0 || n >= self.hash.dims.0 as isize {
                        return best;
                    }
                    cell.0 = n as usize;
                    t_next[0] += t_delta[0];
                }
                1 => {
                    let n = cell.1 as isize + step.1;
                    if n < 0 || n >= self.hash.dims.1 as isize {
                        return best;
                    }
                    cell.1 = n as usize;
                    t_next[1] += t_delta[1];
                }
                _ => {
                    let n = cell.2 as isize + step.2;
                    if n < 0 || n >= self.hash.dims.2 as isize {
                        return best;
                    }
                    cell.2 = n as usize;
                    t_next[2] += t_delta[2];
                }
            }
        }
    }
}

fn segment_hits_triangles(
    mesh: &TriangleMesh,
    candidates: &[u32],
    p0: Vec3,
    p1: Vec3,
    inflate: f64,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &ti in candidates {
        let tri = mesh.triangle(ti as usize);
        let hit_t = if inflate == 0.0 {
            segment_triangle_crossing(p0, p1, &tri)
        } else {
            let (d2, t) = segment_triangle_dist2(p0, p1, &tri);
            if d2 <= inflate * inflate {
                Some(t)
            } else {
                None
            }
        };
        if let Some(t) = hit_t {
            if best.map(|b| t < b).unwrap_or(true) {
                best = Some(t);
            }
        }
    }
    best
}

/// Coarse occupancy over a density grid, used for empty-space skipping in
/// the environment's observation renderer.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    origin: Vec3,
    cell: f64,
    dims: (usize, usize, usize),
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    /// A cell is occupied when any of its corners exceeds `threshold`;
    /// `dilate` grows occupancy by that many cells in every direction.
    pub fn from_density_grid(grid: &DensityGrid, threshold: f64, dilate: usize) -> Self {
        let (nx, ny, nz) = grid.dims;
        let dims = (nx - 1, ny - 1, nz - 1);
        let mut occupied = vec![false; dims.0 * dims.1 * dims.2];
        let idx = |ix: usize, iy: usize, iz: usize| (iz * dims.1 + iy) * dims.0 + ix;
        for iz in 0..dims.2 {
            for iy in 0..dims.1 {
                for ix in 0..dims.0 {
                    let mut occ = false;
                    for (dx, dy, dz) in super::mc_tables::CUBE_CORNERS {
                        if grid.values[grid.idx(ix + dx, iy + dy, iz + dz)] > threshold {
                            occ = true;
                            break;
                        }
                    }
                    occupied[idx(ix, iy, iz)] = occ;
                }
            }
        }
        for _ in 0..dilate {
            let prev = occupied.clone();
            for iz in 0..dims.2 {
                for iy in 0..dims.1 {
                    for ix in 0..dims.0 {
                        if prev[idx(ix, iy, iz)] {
                            continue;
                        }
                        'scan: for dz in -1isize..=1 {
                            for dy in -1isize..=1 {
                                for dx in -1isize..=1 {
                                    let (jx, jy, jz) = (
                                        ix as isize + dx,
                                        iy as isize + dy,
                                        iz as isize + dz,
                                    );
                                    if jx < 0
                                        || jy < 0
                                        || jz < 0
                                        || jx >= dims.0 as isize
                                        || jy >= dims.1 as isize
                                        || jz >= dims.2 as isize
                                    {
                                        continue;
                                    }
                                    if prev[idx(jx as usize, jy as usize, jz as usize)] {
                                        occupied[idx(ix, iy, iz)] = true;
                                        break 'scan;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        OccupancyGrid {
            origin: grid.origin,
            cell: grid.voxel_size,
            dims,
            occupied,
        }
    }

    /// Points outside the lattice count as empty.
    #[inline]
    pub fn occupied_at(&self, p: Vec3) -> bool {
        let q = (p - self.origin) / self.cell;
        if q.x < 0.0 || q.y < 0.0 || q.z < 0.0 {
            return false;
        }
        let (ix, iy, iz) = (q.x as usize, q.y as usize, q.z as usize);
        if ix >= self.dims.0 || iy >= self.dims.1 || iz >= self.dims.2 {
            return false;
        }
        self.occupied[(iz * self.dims.1 + iy) * self.dims.0 + ix]
    }
}
