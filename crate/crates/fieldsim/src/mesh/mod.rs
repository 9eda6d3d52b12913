//! Density-grid sampling, marching-cubes extraction, and the collision
//! queries the driving simulator relies on.

mod mc_tables;

use crate::error::{Error, Result};
use crate::field::{AppearanceEmbedding, FieldScratch, RadianceFieldParams};
use crate::geom::{v3, Aabb, Vec3};
use crate::num::Real;
use mc_tables::{CUBE_CORNERS, CUBE_EDGES, TRI_TABLE};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// Anything that can be sampled for volume density.
pub trait DensitySource {
    fn density_at(&self, p: Vec3) -> f64;
}

impl<F: Fn(Vec3) -> f64> DensitySource for F {
    fn density_at(&self, p: Vec3) -> f64 {
        self(p)
    }
}

/// The analytic scene as a density source.
pub struct SceneDensity<'a>(pub &'a crate::scene::SceneGeometry);

impl DensitySource for SceneDensity<'_> {
    fn density_at(&self, p: Vec3) -> f64 {
        crate::scene::scene_density(p, self.0)
    }
}

/// The learned field as a density source. Sigma is independent of the
/// embedding by construction, so any embedding gives the same grid.
pub struct FieldDensity<'a, R: Real> {
    pub params: &'a RadianceFieldParams<R>,
    pub embedding: AppearanceEmbedding,
}

impl<'a, R: Real> FieldDensity<'a, R> {
    pub fn new(params: &'a RadianceFieldParams<R>) -> Self {
        FieldDensity {
            embedding: params.embedding_row(0),
            params,
        }
    }
}

impl<R: Real> DensitySource for FieldDensity<'_, R> {
    fn density_at(&self, p: Vec3) -> f64 {
        let mut scratch = FieldScratch::default();
        let b = self.params.padded_bounds();
        let q = v3(
            p.x.clamp(b.min.x, b.max.x),
            p.y.clamp(b.min.y, b.max.y),
            p.z.clamp(b.min.z, b.max.z),
        );
        let out = crate::field::field_forward(
            self.params,
            q,
            v3(1.0, 0.0, 0.0),
            &self.embedding,
            &mut scratch,
        )
        .expect("clamped point is inside padded bounds");
        out.sigma.f64()
    }
}

/// Scalar field sampled at the corners of a regular lattice.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    /// Corner counts per axis (>= 2 each).
    pub dims: (usize, usize, usize),
    /// Corner values, index `(iz * ny + iy) * nx + ix`.
    pub values: Vec<f64>,
}

impl DensityGrid {
    #[inline]
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims.1 + iy) * self.dims.0 + ix
    }

    pub fn corner_pos(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        self.origin
            + v3(
                ix as f64 * self.voxel_size,
                iy as f64 * self.voxel_size,
                iz as f64 * self.voxel_size,
            )
    }

    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.values {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (lo, hi)
    }

    /// Central-difference gradient of the trilinear field, used to orient
    /// triangles toward decreasing density.
    fn gradient(&self, p: Vec3) -> Vec3 {
        let h = self.voxel_size * 0.5;
        v3(
            self.trilinear(p + v3(h, 0.0, 0.0)) - self.trilinear(p - v3(h, 0.0, 0.0)),
            self.trilinear(p + v3(0.0, h, 0.0)) - self.trilinear(p - v3(0.0, h, 0.0)),
            self.trilinear(p + v3(0.0, 0.0, h)) - self.trilinear(p - v3(0.0, 0.0, h)),
        )
    }

    pub fn trilinear(&self, p: Vec3) -> f64 {
        let (nx, ny, nz) = self.dims;
        let q = (p - self.origin) / self.voxel_size;
        let cx = q.x.clamp(0.0, (nx - 1) as f64 - 1e-9);
        let cy = q.y.clamp(0.0, (ny - 1) as f64 - 1e-9);
        let cz = q.z.clamp(0.0, (nz - 1) as f64 - 1e-9);
        let (ix, iy, iz) = (cx as usize, cy as usize, cz as usize);
        let (fx, fy, fz) = (cx - ix as f64, cy - iy as f64, cz - iz as f64);
        let mut acc = 0.0;
        for (dx, dy, dz) in CUBE_CORNERS {
            let w = (if dx == 1 { fx } else { 1.0 - fx })
                * (if dy == 1 { fy } else { 1.0 - fy })
                * (if dz == 1 { fz } else { 1.0 - fz });
            acc += w * self.values[self.idx(ix + dx, iy + dy, iz + dz)];
        }
        acc
    }
}

/// Evaluates a density source at the corners of a lattice with the given
/// voxel size; bounds are expanded to a whole number of voxels.
pub fn sample_density_grid<S: DensitySource>(
    source: &S,
    bounds: &Aabb,
    voxel_size: f64,
) -> Result<DensityGrid> {
    if voxel_size <= 0.0 {
        return Err(Error::InvalidConfig("voxel_size must be positive".into()));
    }
    let extent = bounds.max - bounds.min;
    let nx = (extent.x / voxel_size).ceil() as usize + 1;
    let ny = (extent.y / voxel_size).ceil() as usize + 1;
    let nz = (extent.z / voxel_size).ceil() as usize + 1;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::InvalidConfig(
            "grid needs at least 2 corners per axis".into(),
        ));
    }
    let mut grid = DensityGrid {
        origin: bounds.min,
        voxel_size,
        dims: (nx, ny, nz),
        values: vec![0.0; nx * ny * nz],
    };
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let p = grid.corner_pos(ix, iy, iz);
                let idx = grid.idx(ix, iy, iz);
                grid.values[idx] = source.density_at(p);
            }
        }
    }
    Ok(grid)
}

/// Indexed triangle mesh with per-triangle normals oriented toward
/// decreasing density.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn bbox(&self) -> Option<Aabb> {
        let first = *self.vertices.first()?;
        let mut b = Aabb::new(first, first);
        for v in &self.vertices[1..] {
            b.min = b.min.min(*v);
            b.max = b.max.max(*v);
        }
        Some(b)
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }
}

/// Standard 256-case marching cubes with linear edge interpolation.
/// Vertices on shared cube edges are deduplicated so surfaces are
/// watertight away from the grid boundary.
pub fn marching_cubes(grid: &DensityGrid, iso: f64) -> Result<TriangleMesh> {
    let (lo, hi) = grid.value_range();
    if !(lo < iso && iso < hi) {
        return Err(Error::EmptyMesh(iso, lo, hi));
    }
    // Corners within float noise of the iso level spawn vanishing "tip"
    // triangles that fail the area cleanup and open micro-seams. Snap such
    // values far enough above the level that every crossing stays strictly
    // interior to its edge and tip triangles keep measurable area.
    let nudge = (hi - lo).max(1e-9) * 1e-4;
    let (nx, ny, nz) = grid.dims;
    let mut mesh = TriangleMesh::default();
    // Edge key: lattice coords of the lower corner plus axis (0=x,1=y,2=z).
    let mut edge_vertex: HashMap<(u32, u32, u32, u8), u32> = HashMap::new();
    let mut corner_vals = [0.0f64; 8];
    let mut corner_idx = [(0usize, 0usize, 0usize); 8];

    for iz in 0..nz - 1 {
        for iy in 0..ny - 1 {
            for ix in 0..nx - 1 {
                let mut case = 0usize;
                for (ci, (dx, dy, dz)) in CUBE_CORNERS.iter().enumerate() {
                    let c = (ix + dx, iy + dy, iz + dz);
                    corner_idx[ci] = c;
                    let v = grid.values[grid.idx(c.0, c.1, c.2)];
                    corner_vals[ci] = if (v - iso).abs() < nudge { iso + nudge } else { v };
                    if corner_vals[ci] > iso {
                        case |= 1 << ci;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let tris = &TRI_TABLE[case];
                let mut k = 0;
                while tris[k] >= 0 {
                    let mut vert_ids = [0u32; 3];
                    for (slot, &e) in tris[k..k + 3].iter().enumerate() {
                        let (a, b) = CUBE_EDGES[e as usize];
                        let (ca, cb) = (corner_idx[a], corner_idx[b]);
                        // Lower corner + axis uniquely identify the edge.
                        let (low, axis) = if ca.0 != cb.0 {
                            (if ca.0 < cb.0 { ca } else { cb }, 0u8)
                        } else if ca.1 != cb.1 {
                            (if ca.1 < cb.1 { ca } else { cb }, 1u8)
                        } else {
                            (if ca.2 < cb.2 { ca } else { cb }, 2u8)
                        };
                        let key = (low.0 as u32, low.1 as u32, low.2 as u32, axis);
                        let id = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (corner_vals[a], corner_vals[b]);
                            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                            let pa = grid.corner_pos(ca.0, ca.1, ca.2);
                            let pb = grid.corner_pos(cb.0, cb.1, cb.2);
                            let p = pa + (pb - pa) * t;
                            mesh.vertices.push(p);
                            (mesh.vertices.len() - 1) as u32
                        });
                        vert_ids[slot] = id;
                    }
                    k += 3;
                    let [i0, i1, i2] = vert_ids;
                    if i0 == i1 || i1 == i2 || i0 == i2 {
                        continue;
                    }
                    let [p0, p1, p2] = [
                        mesh.vertices[i0 as usize],
                        mesh.vertices[i1 as usize],
                        mesh.vertices[i2 as usize],
                    ];
                    let cross = (p1 - p0).cross(p2 - p0);
                    let area2 = cross.norm();
                    if area2 * 0.5 <= 1e-12 {
                        continue;
                    }
                    // Orient the normal toward decreasing density.
                    let centroid = (p0 + p1 + p2) / 3.0;
                    let grad = grid.gradient(centroid);
                    let mut normal = cross / area2;
                    let mut tri = [i0, i1, i2];
                    if normal.dot(grad) > 0.0 {
                        tri = [i0, i2, i1];
                        normal = -normal;
                    }
                    mesh.triangles.push(tri);
                    mesh.normals.push(normal);
                }
            }
        }
    }
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStats {
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub bbox: Option<Aabb>,
    /// Edges used by exactly one triangle; 0 means a closed surface.
    pub boundary_edge_count: usize,
}

pub fn mesh_stats(mesh: &TriangleMesh) -> MeshStats {
    let mut edge_use: HashMap<(u32, u32), u32> = HashMap::new();
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (a.min(b), a.max(b));
            *edge_use.entry(key).or_insert(0) += 1;
        }
    }
    MeshStats {
        n_vertices: mesh.vertices.len(),
        n_triangles: mesh.triangles.len(),
        bbox: mesh.bbox(),
        boundary_edge_count: edge_use.values().filter(|c| **c == 1).count(),
    }
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(f, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(f, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path)?;
    let mut mesh = TriangleMesh::default();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in coord.iter_mut() {
                    *c = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::InvalidConfig("bad OBJ vertex".into()))?;
                }
                mesh.vertices.push(v3(coord[0], coord[1], coord[2]));
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for i in idx.iter_mut() {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::InvalidConfig("bad OBJ face".into()))?;
                    // Accept `v`, `v/vt`, `v//vn` forms; indices are 1-based.
                    let first = tok.split('/').next().unwrap_or(tok);
                    let one_based: i64 = first
                        .parse()
                        .map_err(|_| Error::InvalidConfig("bad OBJ face index".into()))?;
                    if one_based < 1 {
                        return Err(Error::InvalidConfig("OBJ indices must be 1-based".into()));
                    }
                    *i = (one_based - 1) as u32;
                }
                mesh.triangles.push(idx);
            }
            _ => {}
        }
    }
    for t in &mesh.triangles {
        for i in t {
            if *i as usize >= mesh.vertices.len() {
                return Err(Error::InvalidConfig("OBJ face index out of range".into()));
            }
        }
    }
    // Normals from winding; orientation data is not stored in this subset.
    mesh.normals = mesh
        .triangles
        .iter()
        .map(|t| {
            let [p0, p1, p2] = [
                mesh.vertices[t[0] as usize],
                mesh.vertices[t[1] as usize],
                mesh.vertices[t[2] as usize],
            ];
            let c = (p1 - p0).cross(p2 - p0);
            let n = c.norm();
            if n > 0.0 {
                c / n
            } else {
                v3(0.0, 0.0, 1.0)
            }
        })
        .collect();
    Ok(mesh)
}

mod collide;
pub use collide::{
    closest_point_on_triangle, segment_segment_dist2, segment_triangle_crossing,
    segment_triangle_dist2, CollisionMesh, OccupancyGrid, SpatialHash,
};

/// Capsule-versus-mesh query: true iff the segment, or any point within
/// `inflate` of it, intersects a triangle; returns the segment parameter of
/// the first contact.
pub fn segment_mesh_intersect(
    mesh: &CollisionMesh,
    p0: Vec3,
    p1: Vec3,
    inflate: f64,
) -> Option<f64> {
    mesh.segment_intersect(p0, p1, inflate)
}

#[cfg(test)]
mod tests {
    use super::mc_tables::{CUBE_CORNERS, CUBE_EDGES, TRI_TABLE};
    use super::*;
    use crate::rng::RngStream;
    use crate::scene::{build_geometry, scene_sdf, SceneSpec, D_WALL, EPS_RAMP};

    fn sphere_density(radius: f64) -> impl Fn(Vec3) -> f64 {
        move |p: Vec3| {
            let sdf = p.norm() - radius;
            D_WALL * (0.5 - sdf / EPS_RAMP).clamp(0.0, 1.0)
        }
    }

    fn sphere_grid(radius: f64, voxel: f64) -> DensityGrid {
        let pad = radius + 4.0 * voxel;
        let bounds = Aabb::new(v3(-pad, -pad, -pad), v3(pad, pad, pad));
        sample_density_grid(&sphere_density(radius), &bounds, voxel).unwrap()
    }

    /// Every edge listed in a case's triangles must actually cross the iso
    /// surface for that corner configuration, and complementary cases must
    /// use the same edge set.
    #[test]
    fn tri_table_edges_are_crossing_edges() {
        for case in 0..256usize {
            let inside = |c: usize| case & (1 << c) != 0;
            let mut edges_used = [false; 12];
            let row = &TRI_TABLE[case];
            let mut k = 0;
            while k < 16 && row[k] >= 0 {
                let e = row[k] as usize;
                let (a, b) = CUBE_EDGES[e];
                assert_ne!(
                    inside(a),
                    inside(b),
                    "case {case}: edge {e} does not cross the surface"
                );
                edges_used[e] = true;
                k += 1;
            }
            assert_eq!(k % 3, 0, "case {case}: triangle list length not a multiple of 3");
            // Complement symmetry: same edge set for case and !case.
            let comp = &TRI_TABLE[255 - case];
            let mut comp_edges = [false; 12];
            let mut j = 0;
            while j < 16 && comp[j] >= 0 {
                comp_edges[comp[j] as usize] = true;
                j += 1;
            }
            assert_eq!(
                edges_used, comp_edges,
                "case {case} and its complement use different edges"
            );
        }
    }

    #[test]
    fn corner_and_edge_tables_consistent() {
        // Each edge must connect corners differing in exactly one axis.
        for (a, b) in CUBE_EDGES {
            let ca = CUBE_CORNERS[a];
            let cb = CUBE_CORNERS[b];
            let diff = (ca.0 != cb.0) as u8 + (ca.1 != cb.1) as u8 + (ca.2 != cb.2) as u8;
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn empty_mesh_when_iso_outside_range() {
        let grid = DensityGrid {
            origin: Vec3::ZERO,
            voxel_size: 1.0,
            dims: (2, 2, 2),
            values: vec![1.0; 8],
        };
        assert!(matches!(
            marching_cubes(&grid, 5.0),
            Err(Error::EmptyMesh(..))
        ));
    }

    #[test]
    fn single_hot_corner_gives_one_triangle() {
        let mut grid = DensityGrid {
            origin: Vec3::ZERO,
            voxel_size: 1.0,
            dims: (2, 2, 2),
            values: vec![0.0; 8],
        };
        let idx = grid.idx(0, 0, 0);
        grid.values[idx] = 10.0;
        let mesh = marching_cubes(&grid, 5.0).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(mesh.vertices.len(), 3);
        let stats = mesh_stats(&mesh);
        assert_eq!(stats.boundary_edge_count, 3);
    }

    #[test]
    fn sphere_mesh_accuracy_closed_and_oriented() {
        let mesh = marching_cubes(&sphere_grid(1.0, 0.1), D_WALL / 2.0).unwrap();
        assert!(!mesh.triangles.is_empty());
        // Vertex radial accuracy within 1.5 voxels.
        let mut max_err = 0.0f64;
        for v in &mesh.vertices {
            max_err = max_err.max((v.norm() - 1.0).abs());
        }
        assert!(max_err <= 0.15, "max radial error {max_err}");
        // Watertight: closed surface entirely inside the grid.
        let stats = mesh_stats(&mesh);
        assert_eq!(stats.boundary_edge_count, 0, "sphere mesh is not closed");
        // Euler characteristic V - E + F = 2 for a genus-0 surface.
        let mut edges = std::collections::HashSet::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let euler =
            mesh.vertices.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64;
        assert_eq!(euler, 2, "unexpected Euler characteristic");
        // Orientation: normals point away from the center (toward lower
        // density) for at least 99% of triangles.
        let mut outward = 0usize;
        for (i, n) in mesh.normals.iter().enumerate() {
            let c = {
                let t = mesh.triangle(i);
                (t[0] + t[1] + t[2]) / 3.0
            };
            if n.dot(c.normalized()) > 0.0 {
                outward += 1;
            }
        }
        let frac = outward as f64 / mesh.triangles.len() as f64;
        assert!(frac >= 0.99, "only {frac} of normals outward");
    }

    #[test]
    fn scene_mesh_error_decreases_with_resolution() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        // Interior tube extended a little into every solid.
        let b = geo.interior;
        let bounds = Aabb::new(
            b.min + v3(0.5, -0.25, -0.25),
            b.max + v3(0.25, 0.25, 0.25),
        );
        let mut prev = f64::INFINITY;
        for voxel in [0.4, 0.2, 0.1] {
            let grid = sample_density_grid(&SceneDensity(&geo), &bounds, voxel).unwrap();
            let mesh = marching_cubes(&grid, D_WALL / 2.0).unwrap();
            let mean_err: f64 = mesh
                .vertices
                .iter()
                .map(|v| scene_sdf(*v, &geo).abs())
                .sum::<f64>()
                / mesh.vertices.len() as f64;
            assert!(
                mean_err <= prev + 1e-9,
                "error went up at voxel {voxel}: {mean_err} > {prev}"
            );
            prev = mean_err;
        }
        assert!(prev < 0.02, "finest-level mean error {prev}");
    }

    #[test]
    fn grid_constant_source_and_sphere_interior() {
        let bounds = Aabb::new(Vec3::ZERO, v3(1.0, 1.0, 1.0));
        let grid = sample_density_grid(&|_p: Vec3| 7.5, &bounds, 0.5).unwrap();
        assert!(grid.values.iter().all(|v| *v == 7.5));

        let grid = sphere_grid(1.0, 0.25);
        let (nx, ny, nz) = grid.dims;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let p = grid.corner_pos(ix, iy, iz);
                    let v = grid.values[grid.idx(ix, iy, iz)];
                    if p.norm() < 1.0 - EPS_RAMP {
                        assert_eq!(v, D_WALL);
                    }
                    if p.norm() > 1.0 + EPS_RAMP {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn field_density_grid_is_embedding_invariant() {
        use crate::field::{init_params, FieldArchitecture};
        let arch = FieldArchitecture {
            pe_levels_pos: 2,
            pe_levels_dir: 1,
            trunk_layers: 1,
            trunk_width: 8,
            color_head_width: 8,
            embed_dim: 4,
            n_conditions: 2,
        };
        let bounds = Aabb::new(v3(-1.0, -1.0, -1.0), v3(1.0, 1.0, 1.0));
        let params = init_params::<f32>(&arch, bounds, 3).unwrap();
        let a = sample_density_grid(
            &FieldDensity {
                params: &params,
                embedding: params.embedding_row(0),
            },
            &bounds,
            0.5,
        )
        .unwrap();
        let b = sample_density_grid(
            &FieldDensity {
                params: &params,
                embedding: params.embedding_row(1),
            },
            &bounds,
            0.5,
        )
        .unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn segment_through_wall_hits_at_face() {
        let spec = SceneSpec::straight_desk();
        let geo = build_geometry(&spec);
        let bounds = Aabb::new(v3(4.0, -3.0, -0.3), v3(10.0, 3.0, 2.3));
        let grid = sample_density_grid(&SceneDensity(&geo), &bounds, 0.1).unwrap();
        let mesh = CollisionMesh::new(marching_cubes(&grid, D_WALL / 2.0).unwrap());
        // Perpendicular crossing of the left wall at y = 2.
        let p0 = v3(7.0, 0.0, 1.0);
        let p1 = v3(7.0, 2.5, 1.0);
        let t = mesh.segment_intersect(p0, p1, 0.0).expect("must hit the wall");
        let hit_y = p0.y + (p1.y - p0.y) * t;
        assert!((hit_y - 2.0).abs() < 0.08, "hit at y = {hit_y}");
        // Far segment in open space.
        assert!(mesh
            .segment_intersect(v3(6.0, 0.0, 1.0), v3(8.0, 0.5, 1.0), 0.3)
            .is_none());
    }

    #[test]
    fn hash_matches_brute_force_on_random_capsules() {
        let mesh = CollisionMesh::new(marching_cubes(&sphere_grid(1.0, 0.2), D_WALL / 2.0).unwrap());
        let mut rng = RngStream::seed(41);
        let mut hits = 0;
        for i in 0..1000 {
            let p0 = v3(
                rng.uniform_in(-2.0, 2.0),
                rng.uniform_in(-2.0, 2.0),
                rng.uniform_in(-2.0, 2.0),
            );
            let p1 = v3(
                rng.uniform_in(-2.0, 2.0),
                rng.uniform_in(-2.0, 2.0),
                rng.uniform_in(-2.0, 2.0),
            );
            let inflate = if i % 3 == 0 { 0.0 } else { rng.uniform_in(0.0, 0.4) };
            let fast = mesh.segment_intersect(p0, p1, inflate);
            let brute = mesh.segment_intersect_brute(p0, p1, inflate);
            match (fast, brute) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-9, "t mismatch {a} vs {b}");
                    hits += 1;
                }
                other => panic!("hash/brute disagree: {other:?}"),
            }
        }
        assert!(hits > 100, "too few hits ({hits}) for a meaningful check");
    }

    #[test]
    fn closest_hit_matches_brute_force() {
        let mesh = CollisionMesh::new(marching_cubes(&sphere_grid(1.0, 0.2), D_WALL / 2.0).unwrap());
        let mut rng = RngStream::seed(77);
        let mut hits = 0;
        for _ in 0..500 {
            let origin = v3(
                rng.uniform_in(-3.0, 3.0),
                rng.uniform_in(-3.0, 3.0),
                rng.uniform_in(-3.0, 3.0),
            );
            // Aim mostly toward the sphere so plenty of rays hit.
            let jitter = v3(rng.normal(), rng.normal(), rng.normal()) * 0.3;
            let dir = (v3(0.0, 0.0, 0.0) - origin + jitter).normalized();
            let t_max = 10.0;
            let fast = mesh.closest_hit(origin, dir, t_max);
            // Brute force over all triangles.
            let far = origin + dir * t_max;
            let mut brute: Option<f64> = None;
            for i in 0..mesh.mesh.triangles.len() {
                if let Some(t) = segment_triangle_crossing(origin, far, &mesh.mesh.triangle(i)) {
                    let t_abs = t * t_max;
                    if brute.map(|b| t_abs < b).unwrap_or(true) {
                        brute = Some(t_abs);
                    }
                }
            }
            match (fast, brute) {
                (None, None) => {}
                (Some((a, _)), Some(b)) => {
                    assert!((a - b).abs() < 1e-9);
                    hits += 1;
                }
                other => panic!("closest_hit mismatch: {other:?}"),
            }
        }
        assert!(hits > 300, "only {hits} rays hit");
    }

    #[test]
    fn obj_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = marching_cubes(&sphere_grid(0.5, 0.25), D_WALL / 2.0).unwrap();
        let path = dir.path().join("m.obj");
        write_obj(&mesh, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("v "));
        assert!(text.contains("\nf "));
        let back = read_obj(&path).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((*a - *b).norm() < 1e-5);
        }
    }

    #[test]
    fn stats_of_empty_mesh() {
        let stats = mesh_stats(&TriangleMesh::default());
        assert_eq!(stats.n_vertices, 0);
        assert_eq!(stats.n_triangles, 0);
        assert_eq!(stats.boundary_edge_count, 0);
        assert!(stats.bbox.is_none());
    }

    #[test]
    fn occupancy_skips_empty_space() {
        let grid = sphere_grid(1.0, 0.2);
        let occ = OccupancyGrid::from_density_grid(&grid, 1.0, 1);
        assert!(occ.occupied_at(v3(1.0, 0.0, 0.0)));
        assert!(!occ.occupied_at(v3(1.9, 1.9, 1.9)));
        assert!(!occ.occupied_at(v3(50.0, 0.0, 0.0)));
        // Dilation keeps a conservative shell outside the surface.
        assert!(occ.occupied_at(v3(1.2, 0.0, 0.0)));
    }
}
