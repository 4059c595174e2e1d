//! Triangle meshes with per-vertex material (UV) coordinates.
//!
//! A [`TriMesh`] carries both its current and its rest positions so that a
//! single value can be handed to the simulator, the geometry-image codec and
//! the OBJ writer. UVs live in material space and are measured in meters.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Material-space triangles below this area are treated as degenerate.
pub const MIN_UV_AREA: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Vec<Vec2>,
    pub rest_positions: Vec<Vec3>,
}

impl TriMesh {
    /// Builds a mesh and checks index ranges, buffer lengths and material-space
    /// triangle areas.
    pub fn new(
        positions: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        uvs: Vec<Vec2>,
        rest_positions: Vec<Vec3>,
    ) -> Result<Self> {
        let mesh = TriMesh {
            positions,
            faces,
            uvs,
            rest_positions,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Mesh whose rest state is its current state.
    pub fn from_rest(positions: Vec<Vec3>, faces: Vec<[usize; 3]>, uvs: Vec<Vec2>) -> Result<Self> {
        let rest = positions.clone();
        Self::new(positions, faces, uvs, rest)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.uvs.len() != n {
            return Err(Error::mismatch("uv count", n, self.uvs.len()));
        }
        if self.rest_positions.len() != n {
            return Err(Error::mismatch("rest position count", n, self.rest_positions.len()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            let area = self.uv_area(fi);
            if !(area > MIN_UV_AREA) {
                return Err(Error::DegenerateTriangle { face: fi, area });
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Signed material-space area of face `fi` (positive for CCW faces).
    pub fn uv_signed_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.faces[fi];
        let e1 = self.uvs[b] - self.uvs[a];
        let e2 = self.uvs[c] - self.uvs[a];
        0.5 * (e1.x * e2.y - e1.y * e2.x)
    }

    pub fn uv_area(&self, fi: usize) -> f64 {
        self.uv_signed_area(fi).abs()
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        triangle_area(&self.positions, self.faces[fi])
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Copy of this mesh with different current positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(Error::mismatch("position count", self.positions.len(), positions.len()));
        }
        Ok(TriMesh {
            positions,
            ..self.clone()
        })
    }

    /// Vertex adjacency lists, sorted and without duplicates.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.positions.len()];
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Edges used by exactly one face, as (a, b) in face winding order.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                let e = count.entry(edge_key(a, b)).or_insert((0, [a, b]));
                e.0 += 1;
            }
        }
        let mut out: Vec<[usize; 2]> = count
            .into_values()
            .filter(|(n, _)| *n == 1)
            .map(|(_, e)| e)
            .collect();
        out.sort_unstable();
        out
    }

    /// Rectangular sheet of `cells_u × cells_v` quads split into triangles,
    /// lying in the z = 0 plane with positions equal to its UVs.
    pub fn grid(width: f64, height: f64, cells_u: usize, cells_v: usize) -> Result<Self> {
        if cells_u == 0 || cells_v == 0 || !(width > 0.0) || !(height > 0.0) {
            return Err(Error::Config(format!(
                "grid needs positive size and cell counts, got {width}x{height} with {cells_u}x{cells_v} cells"
            )));
        }
        let nu = cells_u + 1;
        let mut uvs = Vec::with_capacity(nu * (cells_v + 1));
        for j in 0..=cells_v {
            for i in 0..=cells_u {
                uvs.push(Vec2::new(
                    width * i as f64 / cells_u as f64,
                    height * j as f64 / cells_v as f64,
                ));
            }
        }
        let mut faces = Vec::with_capacity(2 * cells_u * cells_v);
        for j in 0..cells_v {
            for i in 0..cells_u {
                let a = j * nu + i;
                let b = a + 1;
                let c = a + nu;
                let d = c + 1;
                // alternate diagonals so the sheet has no preferred shear direction
                if (i + j) % 2 == 0 {
                    faces.push([a, b, d]);
                    faces.push([a, d, c]);
                } else {
                    faces.push([a, b, c]);
                    faces.push([b, d, c]);
                }
            }
        }
        let positions: Vec<Vec3> = uvs.iter().map(|uv| Vec3::new(uv.x, uv.y, 0.0)).collect();
        Self::from_rest(positions, faces, uvs)
    }

    pub fn vertex_normals(&self) -> VertexNormals {
        vertex_normals(&self.positions, &self.faces)
    }
}

pub fn triangle_area(positions: &[Vec3], f: [usize; 3]) -> f64 {
    let e1 = positions[f[1]] - positions[f[0]];
    let e2 = positions[f[2]] - positions[f[0]];
    0.5 * e1.cross(&e2).norm()
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Per-vertex normals plus the vertices whose fan was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<usize>,
}

pub const DEFAULT_NORMAL: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Area-weighted vertex normals. The cross product of two triangle edges is
/// twice the area times the unit normal, so summing raw cross products gives
/// the area weighting directly.
pub fn vertex_normals(positions: &[Vec3], faces: &[[usize; 3]]) -> VertexNormals {
    let mut acc = vec![Vec3::zeros(); positions.len()];
    for f in faces {
        let n = (positions[f[1]] - positions[f[0]]).cross(&(positions[f[2]] - positions[f[0]]));
        for &v in f {
            acc[v] += n;
        }
    }
    let mut degenerate = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 1e-300 && len.is_finite() {
                n / len
            } else {
                degenerate.push(i);
                DEFAULT_NORMAL
            }
        })
        .collect();
    if !degenerate.is_empty() {
        log::warn!(
            "{} vertices have a degenerate normal fan; using (0,0,1)",
            degenerate.len()
        );
    }
    VertexNormals {
        normals,
        degenerate,
    }
}

/// Correspondence between a coarse mesh and its midpoint subdivision.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdivisionMap {
    /// `feature_vertices[i]` is the fine index of coarse vertex `i`.
    pub feature_vertices: Vec<usize>,
    /// Parents of every fine vertex past the coarse prefix, in fine index
    /// space. Entry `k` describes vertex `feature_vertices.len() + k`.
    pub edge_parents: Vec<[usize; 2]>,
}

impl SubdivisionMap {
    pub fn num_coarse(&self) -> usize {
        self.feature_vertices.len()
    }

    pub fn num_fine(&self) -> usize {
        self.feature_vertices.len() + self.edge_parents.len()
    }

    /// Midpoint-upsamples coarse per-vertex values into the fine vertex set.
    pub fn upsample<T>(&self, coarse: &[T]) -> Result<Vec<T>>
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        if coarse.len() != self.num_coarse() {
            return Err(Error::mismatch("coarse vertex count", self.num_coarse(), coarse.len()));
        }
        let mut fine: Vec<T> = Vec::with_capacity(self.num_fine());
        // identity prefix
        fine.extend_from_slice(coarse);
        for &[a, b] in &self.edge_parents {
            let m = (fine[a] + fine[b]) * 0.5;
            fine.push(m);
        }
        Ok(fine)
    }
}

/// Splits every triangle 1:4 at its edge midpoints, `levels` times.
///
/// Positions, rest positions and UVs are all bisected, so the surface is
/// unchanged. New vertices are appended after the existing ones; a shared
/// edge produces a single midpoint.
pub fn subdivide_midpoint(mesh: &TriMesh, levels: usize) -> Result<(TriMesh, SubdivisionMap)> {
    if levels == 0 {
        return Err(Error::Precondition("subdivision needs levels >= 1".into()));
    }
    mesh.validate()?;
    let mut cur = mesh.clone();
    let mut edge_parents = Vec::new();
    for _ in 0..levels {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut faces = Vec::with_capacity(cur.faces.len() * 4);
        for f in &cur.faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                mid[k] = *midpoints.entry(edge_key(a, b)).or_insert_with(|| {
                    let idx = cur.positions.len();
                    cur.positions.push((cur.positions[a] + cur.positions[b]) * 0.5);
                    cur.rest_positions
                        .push((cur.rest_positions[a] + cur.rest_positions[b]) * 0.5);
                    cur.uvs.push((cur.uvs[a] + cur.uvs[b]) * 0.5);
                    edge_parents.push([a, b]);
                    idx
                });
            }
            let [a, b, c] = *f;
            let [mab, mbc, mca] = mid;
            faces.push([a, mab, mca]);
            faces.push([mab, b, mbc]);
            faces.push([mca, mbc, c]);
            faces.push([mab, mbc, mca]);
        }
        cur.faces = faces;
    }
    let map = SubdivisionMap {
        feature_vertices: (0..mesh.num_vertices()).collect(),
        edge_parents,
    };
    Ok((cur, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_triangle() -> TriMesh {
        TriMesh::from_rest(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
        )
        .unwrap()
    }

    fn bumpy_grid(seed: u64) -> TriMesh {
        let mut m = TriMesh::grid(1.0, 0.7, 5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut m.positions {
            p.z = rng.random_range(-0.1..0.1);
            p.x += rng.random_range(-0.02..0.02);
        }
        m
    }

    #[test]
    fn subdivide_counts() {
        let (m1, map1) = subdivide_midpoint(&one_triangle(), 1).unwrap();
        assert_eq!((m1.num_faces(), m1.num_vertices()), (4, 6));
        assert_eq!(map1.num_fine(), 6);
        let (m2, _) = subdivide_midpoint(&one_triangle(), 2).unwrap();
        assert_eq!((m2.num_faces(), m2.num_vertices()), (16, 15));
    }

    #[test]
    fn subdivide_rejects_zero_levels() {
        assert!(subdivide_midpoint(&one_triangle(), 0).is_err());
    }

    #[test]
    fn shared_edge_gets_one_midpoint() {
        let quad = TriMesh::grid(1.0, 1.0, 1, 1).unwrap();
        let (fine, map) = subdivide_midpoint(&quad, 1).unwrap();
        // 4 corners + 5 edges, the diagonal counted once
        assert_eq!(fine.num_vertices(), 9);
        let mut seen = std::collections::HashSet::new();
        for p in &map.edge_parents {
            assert!(seen.insert(edge_key(p[0], p[1])), "duplicate midpoint for {p:?}");
        }
        // no two vertices at the same place
        for i in 0..fine.num_vertices() {
            for j in i + 1..fine.num_vertices() {
                assert!((fine.positions[i] - fine.positions[j]).norm() > 1e-9);
            }
        }
    }

    #[test]
    fn subdivision_map_invariants() {
        let m = bumpy_grid(3);
        let (fine, map) = subdivide_midpoint(&m, 2).unwrap();
        for (i, &f) in map.feature_vertices.iter().enumerate() {
            assert_eq!(i, f);
            assert_eq!(fine.rest_positions[f], m.rest_positions[i]);
        }
        for (k, &[a, b]) in map.edge_parents.iter().enumerate() {
            let v = map.num_coarse() + k;
            assert_eq!(fine.rest_positions[v], (fine.rest_positions[a] + fine.rest_positions[b]) * 0.5);
        }
        let up = map.upsample(&m.positions).unwrap();
        assert_eq!(up, fine.positions);
    }

    #[test]
    fn subdivision_preserves_area_and_boundary() {
        let m = bumpy_grid(9);
        for levels in 1..=2 {
            let (fine, _) = subdivide_midpoint(&m, levels).unwrap();
            let (a0, a1) = (m.surface_area(), fine.surface_area());
            assert!(((a1 - a0) / a0).abs() < 1e-9, "{a0} vs {a1}");
            let coarse_b = m.boundary_edges();
            let fine_b = fine.boundary_edges();
            assert_eq!(fine_b.len(), coarse_b.len() << levels);
            // every fine boundary edge lies on some coarse boundary edge
            for &[a, b] in &fine_b {
                let on_some = coarse_b.iter().any(|&[c, d]| {
                    let dir = m.positions[d] - m.positions[c];
                    let off = |p: Vec3| (p - m.positions[c]).cross(&dir).norm();
                    off(fine.positions[a]) < 1e-12 && off(fine.positions[b]) < 1e-12
                });
                assert!(on_some);
            }
        }
    }

    #[test]
    fn flat_quad_normals() {
        let quad = TriMesh::grid(2.0, 1.0, 1, 1).unwrap();
        let n = quad.vertex_normals();
        assert!(n.degenerate.is_empty());
        for v in n.normals {
            assert!((v - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn tetrahedron_normals_follow_symmetry_axis() {
        let p = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ];
        // outward-oriented faces
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let n = vertex_normals(&p, &faces);
        for (v, nv) in p.iter().zip(&n.normals) {
            assert!((nv - v.normalize()).norm() < 1e-12, "{nv:?} vs {v:?}");
        }
    }

    #[test]
    fn degenerate_fan_defaults() {
        let p = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::new(5.0, 5.0, 5.0)];
        let n = vertex_normals(&p, &[[0, 1, 2]]);
        assert_eq!(n.degenerate, vec![0, 1, 2, 3]);
        assert!(n.normals.iter().all(|v| *v == DEFAULT_NORMAL));
    }

    #[test]
    fn normals_match_brute_force() {
        let m = bumpy_grid(11);
        let fast = m.vertex_normals();
        for v in 0..m.num_vertices() {
            let mut acc = Vec3::zeros();
            for f in &m.faces {
                if f.contains(&v) {
                    let a = m.positions[f[0]];
                    let b = m.positions[f[1]];
                    let c = m.positions[f[2]];
                    let cr = (b - a).cross(&(c - a));
                    acc += cr.normalize() * (0.5 * cr.norm());
                }
            }
            let expect = acc.normalize();
            assert!((fast.normals[v] - expect).norm() < 1e-12);
            assert!((fast.normals[v].norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normals_rotate_with_mesh() {
        let m = bumpy_grid(5);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rotated: Vec<Vec3> = m.positions.iter().map(|p| r * p).collect();
        let a = m.vertex_normals().normals;
        let b = vertex_normals(&rotated, &m.faces).normals;
        for (x, y) in a.iter().zip(&b) {
            assert!((r * x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_meshes() {
        let mut m = one_triangle();
        m.faces[0][2] = 7;
        assert!(matches!(m.validate(), Err(Error::InvalidMesh(_))));
        let mut m = one_triangle();
        m.uvs[2] = Vec2::new(2.0, 0.0);
        assert!(matches!(m.validate(), Err(Error::DegenerateTriangle { .. })));
        let mut m = one_triangle();
        m.uvs.pop();
        assert!(matches!(m.validate(), Err(Error::Mismatch { .. })));
    }
}
