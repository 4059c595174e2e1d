//! Collision refinement of synthesized meshes.
//!
//! [`push_out`] moves vertices that ended up inside obstacles back to the
//! offset surface and blends the correction into the surrounding ring.
//! [`resolve_zones`] removes self-intersections by interpolating each impact
//! zone toward a collision-free reference (the upsampled coarse mesh) with a
//! per-zone weight found by bisection.

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::sim::Obstacle;

/// Projects every vertex out of every obstacle, smooths the correction once
/// over the moved vertices and their neighbors, then re-projects so the
/// offset constraint holds exactly.
pub fn push_out(mesh: &TriMesh, obstacles: &[Obstacle]) -> Result<TriMesh> {
    for o in obstacles {
        o.validate()?;
    }
    let n = mesh.num_vertices();
    let mut corr = vec![Vec3::zeros(); n];
    let mut moved = vec![false; n];
    for (i, p) in mesh.positions.iter().enumerate() {
        let mut q = *p;
        let mut hit = false;
        for o in obstacles {
            hit |= o.project(&mut q).is_some();
        }
        if hit {
            corr[i] = q - p;
            moved[i] = true;
        }
    }
    if !moved.iter().any(|&m| m) {
        return Ok(mesh.clone());
    }

    let nbrs = mesh.vertex_neighbors();
    let mut region = moved.clone();
    for i in 0..n {
        if moved[i] {
            for &j in &nbrs[i] {
                region[j] = true;
            }
        }
    }
    let mut out = mesh.positions.clone();
    for i in 0..n {
        if !region[i] {
            continue;
        }
        let sum: Vec3 = nbrs[i].iter().map(|&j| corr[j]).sum::<Vec3>() + corr[i];
        out[i] += sum / (nbrs[i].len() + 1) as f64;
    }

    // Obstacles may push a vertex into each other; a few sweeps settle any
    // non-overlapping configuration.
    for _ in 0..8 {
        let mut changed = false;
        for p in out.iter_mut() {
            for o in obstacles {
                changed |= o.project(p).is_some();
            }
        }
        if !changed {
            break;
        }
    }
    mesh.with_positions(out)
}

/// Smallest signed clearance above each obstacle's offset over all vertices.
pub fn min_clearance(positions: &[Vec3], obstacles: &[Obstacle]) -> f64 {
    positions
        .iter()
        .flat_map(|p| obstacles.iter().map(move |o| o.signed_distance(p).0 - o.offset))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of_triangle(a: &Vec3, b: &Vec3, c: &Vec3) -> Self {
        Aabb {
            min: a.inf(b).inf(c),
            max: a.sup(b).sup(c),
        }
    }

    pub fn union(&self, o: &Aabb) -> Self {
        Aabb {
            min: self.min.inf(&o.min),
            max: self.max.sup(&o.max),
        }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] && o.min[k] <= self.max[k])
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bbox: Aabb, start: usize, end: usize },
    Inner { bbox: Aabb, left: usize, right: usize },
}

impl Node {
    fn bbox(&self) -> &Aabb {
        match self {
            Node::Leaf { bbox, .. } | Node::Inner { bbox, .. } => bbox,
        }
    }
}

/// Bounding volume hierarchy over triangle boxes, median split on the
/// longest axis.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    boxes: Vec<Aabb>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(positions: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| Aabb::of_triangle(&positions[f[0]], &positions[f[1]], &positions[f[2]]))
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..faces.len()).collect(),
            boxes,
        };
        if !faces.is_empty() {
            bvh.build_node(0, faces.len());
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let bbox = self.order[start..end]
            .iter()
            .map(|&f| self.boxes[f])
            .reduce(|a, b| a.union(&b))
            .expect("non-empty range");
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bbox, start, end });
            return id;
        }
        self.nodes.push(Node::Leaf { bbox, start, end });
        let ext = bbox.max - bbox.min;
        let axis = ext.imax();
        let mid = (start + end) / 2;
        let boxes = &self.boxes;
        let key = |f: &usize| boxes[*f].min[axis] + boxes[*f].max[axis];
        self.order[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Inner { bbox, left, right };
        id
    }

    /// Calls `visit` with every triangle whose box overlaps `query`.
    pub fn query(&self, query: &Aabb, mut visit: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if !node.bbox().overlaps(query) {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        if self.boxes[f].overlaps(query) {
                            visit(f);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
    }

    pub fn face_box(&self, f: usize) -> &Aabb {
        &self.boxes[f]
    }
}

// Adaptive-precision predicates: the sign is exact for any f64 input.
fn orient3d(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    let p = |v: &Vec3| robust::Coord3D { x: v.x, y: v.y, z: v.z };
    robust::orient3d(p(a), p(b), p(c), p(d))
}

fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let p = |v: [f64; 2]| robust::Coord { x: v[0], y: v[1] };
    robust::orient2d(p(a), p(b), p(c))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Drops the coordinate along the dominant normal axis.
fn project2d(n: &Vec3) -> impl Fn(&Vec3) -> [f64; 2] {
    let axis = n.abs().imax();
    let (u, v) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    move |p: &Vec3| [p[u], p[v]]
}

fn segments_intersect_2d(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let d1 = sign(orient2d(a, b, p));
    let d2 = sign(orient2d(a, b, q));
    let d3 = sign(orient2d(p, q, a));
    let d4 = sign(orient2d(p, q, b));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    let on = |x: [f64; 2], y: [f64; 2], z: [f64; 2]| {
        z[0] >= x[0].min(y[0]) && z[0] <= x[0].max(y[0]) && z[1] >= x[1].min(y[1]) && z[1] <= x[1].max(y[1])
    };
    (d1 == 0 && on(a, b, p)) || (d2 == 0 && on(a, b, q)) || (d3 == 0 && on(p, q, a)) || (d4 == 0 && on(p, q, b))
}

fn point_in_triangle_2d(p: [f64; 2], t: [[f64; 2]; 3]) -> bool {
    let s = [
        sign(orient2d(t[0], t[1], p)),
        sign(orient2d(t[1], t[2], p)),
        sign(orient2d(t[2], t[0], p)),
    ];
    !(s.contains(&1) && s.contains(&-1))
}

fn segment_triangle_2d(p: [f64; 2], q: [f64; 2], t: [[f64; 2]; 3]) -> bool {
    point_in_triangle_2d(p, t)
        || point_in_triangle_2d(q, t)
        || (0..3).any(|k| segments_intersect_2d(p, q, t[k], t[(k + 1) % 3]))
}

/// Closed segment `pq` against closed triangle `t`.
fn segment_crosses_triangle(p: &Vec3, q: &Vec3, t: &[Vec3; 3]) -> bool {
    let sp = sign(orient3d(&t[0], &t[1], &t[2], p));
    let sq = sign(orient3d(&t[0], &t[1], &t[2], q));
    if sp * sq > 0 {
        return false;
    }
    if sp == 0 && sq == 0 {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        let pr = project2d(&n);
        return segment_triangle_2d(pr(p), pr(q), [pr(&t[0]), pr(&t[1]), pr(&t[2])]);
    }
    let s = [
        sign(orient3d(p, q, &t[0], &t[1])),
        sign(orient3d(p, q, &t[1], &t[2])),
        sign(orient3d(p, q, &t[2], &t[0])),
    ];
    !(s.contains(&1) && s.contains(&-1))
}

/// Exact-predicate intersection test of two closed triangles.
pub fn triangles_intersect(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    let sa: Vec<i8> = a.iter().map(|p| sign(orient3d(&b[0], &b[1], &b[2], p))).collect();
    if sa.iter().all(|&s| s > 0) || sa.iter().all(|&s| s < 0) {
        return false;
    }
    let sb: Vec<i8> = b.iter().map(|p| sign(orient3d(&a[0], &a[1], &a[2], p))).collect();
    if sb.iter().all(|&s| s > 0) || sb.iter().all(|&s| s < 0) {
        return false;
    }
    if sa.iter().all(|&s| s == 0) {
        let n = (b[1] - b[0]).cross(&(b[2] - b[0]));
        if n.norm_squared() == 0.0 {
            return false;
        }
        let pr = project2d(&n);
        let ta = [pr(&a[0]), pr(&a[1]), pr(&a[2])];
        let tb = [pr(&b[0]), pr(&b[1]), pr(&b[2])];
        return (0..3).any(|k| segment_triangle_2d(ta[k], ta[(k + 1) % 3], tb))
            || point_in_triangle_2d(tb[0], ta);
    }
    (0..3).any(|k| segment_crosses_triangle(&a[k], &a[(k + 1) % 3], b))
        || (0..3).any(|k| segment_crosses_triangle(&b[k], &b[(k + 1) % 3], a))
}

fn share_vertex(f: &[usize; 3], g: &[usize; 3]) -> bool {
    f.iter().any(|v| g.contains(v))
}

fn face_points(positions: &[Vec3], f: &[usize; 3]) -> [Vec3; 3] {
    [positions[f[0]], positions[f[1]], positions[f[2]]]
}

/// All intersecting pairs `(f, g)` with `f < g` among triangles that share
/// no vertex, sorted.
pub fn detect_self_collisions(mesh: &TriMesh) -> Vec<(usize, usize)> {
    collisions(&mesh.positions, &mesh.faces)
}

pub fn collisions(positions: &[Vec3], faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let bvh = Bvh::build(positions, faces);
    let mut out = Vec::new();
    for (f, tri) in faces.iter().enumerate() {
        let pf = face_points(positions, tri);
        bvh.query(bvh.face_box(f), |g| {
            if g > f && !share_vertex(tri, &faces[g]) && triangles_intersect(&pf, &face_points(positions, &faces[g])) {
                out.push((f, g));
            }
        });
    }
    out.sort_unstable();
    out
}

/// Intersecting pairs with at least one triangle in `subset`.
fn collisions_touching(positions: &[Vec3], faces: &[[usize; 3]], subset: &[usize]) -> Vec<(usize, usize)> {
    let bvh = Bvh::build(positions, faces);
    let mut out = Vec::new();
    for &f in subset {
        let tri = &faces[f];
        let pf = face_points(positions, tri);
        bvh.query(bvh.face_box(f), |g| {
            if g != f && !share_vertex(tri, &faces[g]) && triangles_intersect(&pf, &face_points(positions, &faces[g])) {
                out.push((f.min(g), f.max(g)));
            }
        });
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactZone {
    /// Sorted vertex indices.
    pub vertices: Vec<usize>,
    pub alpha: f64,
    /// Every probed `(α, collision_free)` in evaluation order.
    pub probes: Vec<(f64, bool)>,
}

#[derive(Debug, Clone)]
pub struct ZoneResolution {
    pub mesh: TriMesh,
    pub zones: Vec<ImpactZone>,
    /// Global intersecting-pair count before resolution and after each zone.
    pub collision_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct ZoneConfig {
    pub bisection_steps: usize,
    /// Rounds of zone growth when a zone cannot be freed on its own.
    pub max_growth: usize,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        ZoneConfig {
            bisection_steps: 6,
            max_growth: 4,
        }
    }
}

/// Groups the vertices of intersecting triangle pairs into connected zones.
pub fn impact_zones(faces: &[[usize; 3]], num_vertices: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(num_vertices);
    let mut involved = vec![false; num_vertices];
    for &(f, g) in pairs {
        let vs: Vec<usize> = faces[f].iter().chain(&faces[g]).copied().collect();
        for &v in &vs {
            involved[v] = true;
            uf.union(vs[0], v);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for v in 0..num_vertices {
        if involved[v] {
            groups.entry(uf.find(v)).or_default().push(v);
        }
    }
    groups.into_values().collect()
}

/// Removes self-intersections of `sr` by blending each impact zone toward
/// `reference` with the smallest collision-free weight the bisection finds.
pub fn resolve_zones(sr: &TriMesh, reference: &TriMesh, cfg: &ZoneConfig) -> Result<ZoneResolution> {
    if sr.faces != reference.faces || sr.num_vertices() != reference.num_vertices() {
        return Err(Error::Precondition("meshes must share topology".into()));
    }
    let faces = &sr.faces;
    let ref_pairs = collisions(&reference.positions, faces);
    if !ref_pairs.is_empty() {
        return Err(Error::Precondition(format!(
            "reference mesh has {} self-intersecting pairs",
            ref_pairs.len()
        )));
    }
    let pairs = collisions(&sr.positions, faces);
    let mut counts = vec![pairs.len()];
    if pairs.is_empty() {
        return Ok(ZoneResolution {
            mesh: sr.clone(),
            zones: Vec::new(),
            collision_counts: counts,
        });
    }

    let n = sr.num_vertices();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (fi, f) in faces.iter().enumerate() {
        for &v in f {
            incident[v].push(fi);
        }
    }
    let nbrs = sr.vertex_neighbors();
    let mut pos = sr.positions.clone();
    let mut zones: Vec<ImpactZone> = Vec::new();

    let mut pending: Vec<Vec<usize>> = impact_zones(faces, n, &pairs);
    let mut growth = 0;
    loop {
        for verts in pending.drain(..) {
            let mut verts = verts;
            let zone = loop {
                match bisect_zone(&mut pos, &sr.positions, &reference.positions, faces, &incident, &verts, cfg) {
                    Some(z) => break z,
                    None => {
                        // not freeable alone: pull in the one-ring and retry
                        let mut grown: Vec<usize> = verts.iter().flat_map(|&v| nbrs[v].iter().copied()).collect();
                        grown.extend(&verts);
                        grown.sort_unstable();
                        grown.dedup();
                        if grown.len() == verts.len() {
                            break force_reference(&mut pos, &reference.positions, &verts);
                        }
                        verts = grown;
                    }
                }
            };
            zones.push(zone);
            counts.push(collisions(&pos, faces).len());
        }
        let remaining = collisions(&pos, faces);
        if remaining.is_empty() {
            break;
        }
        growth += 1;
        if growth > cfg.max_growth {
            // last resort: every vertex touched by any zone takes the reference
            let all: Vec<usize> = {
                let mut v: Vec<usize> = zones.iter().flat_map(|z| z.vertices.iter().copied()).collect();
                v.extend(impact_zones(faces, n, &remaining).into_iter().flatten());
                v.sort_unstable();
                v.dedup();
                v
            };
            zones.push(force_reference(&mut pos, &reference.positions, &all));
            counts.push(collisions(&pos, faces).len());
            if *counts.last().unwrap() > 0 {
                pos.clone_from(&reference.positions);
                zones.push(ImpactZone {
                    vertices: (0..n).collect(),
                    alpha: 1.0,
                    probes: vec![(1.0, true)],
                });
                counts.push(0);
            }
            break;
        }
        // merge new collisions with the zones they touch and redo those
        let new_zones = impact_zones(faces, n, &remaining);
        for nz in new_zones {
            let mut merged = nz.clone();
            zones.retain(|z| {
                let touches = z.vertices.iter().any(|v| nz.binary_search(v).is_ok());
                if touches {
                    merged.extend(&z.vertices);
                }
                !touches
            });
            merged.sort_unstable();
            merged.dedup();
            for &v in &merged {
                pos[v] = sr.positions[v];
            }
            pending.push(merged);
        }
    }

    Ok(ZoneResolution {
        mesh: sr.with_positions(pos)?,
        zones,
        collision_counts: counts,
    })
}

fn blend(pos: &mut [Vec3], sr: &[Vec3], reference: &[Vec3], verts: &[usize], alpha: f64) {
    for &v in verts {
        pos[v] = if alpha == 0.0 {
            sr[v]
        } else if alpha == 1.0 {
            reference[v]
        } else {
            sr[v] * (1.0 - alpha) + reference[v] * alpha
        };
    }
}

fn zone_faces(incident: &[Vec<usize>], verts: &[usize]) -> Vec<usize> {
    let mut fs: Vec<usize> = verts.iter().flat_map(|&v| incident[v].iter().copied()).collect();
    fs.sort_unstable();
    fs.dedup();
    fs
}

/// Bisection on α for one zone. Leaves `pos` at the chosen blend and returns
/// `None` (with `pos` reset) if even α = 1 collides locally.
fn bisect_zone(
    pos: &mut [Vec3],
    sr: &[Vec3],
    reference: &[Vec3],
    faces: &[[usize; 3]],
    incident: &[Vec<usize>],
    verts: &[usize],
    cfg: &ZoneConfig,
) -> Option<ImpactZone> {
    let local = zone_faces(incident, verts);
    let mut probes = Vec::with_capacity(cfg.bisection_steps + 1);
    let free_at = |pos: &mut [Vec3], alpha: f64, probes: &mut Vec<(f64, bool)>| {
        blend(pos, sr, reference, verts, alpha);
        let ok = collisions_touching(pos, faces, &local).is_empty();
        probes.push((alpha, ok));
        ok
    };
    if !free_at(pos, 1.0, &mut probes) {
        blend(pos, sr, reference, verts, 0.0);
        return None;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if free_at(pos, mid, &mut probes) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    blend(pos, sr, reference, verts, hi);
    Some(ImpactZone {
        vertices: verts.to_vec(),
        alpha: hi,
        probes,
    })
}

fn force_reference(pos: &mut [Vec3], reference: &[Vec3], verts: &[usize]) -> ImpactZone {
    for &v in verts {
        pos[v] = reference[v];
    }
    ImpactZone {
        vertices: verts.to_vec(),
        alpha: 1.0,
        probes: vec![(1.0, false)],
    }
}

/// Constructed two-layer fixtures with known intersections.
pub mod fixtures {
    use super::*;

    /// Two stacked sheets `gap` apart; in the first returned mesh the lower
    /// sheet carries a bump at every `centers` entry tall enough to pierce
    /// the upper sheet. The second mesh is the same pair of flat sheets.
    pub fn pinch(cells: usize, gap: f64, centers: &[(f64, f64)]) -> Result<(TriMesh, TriMesh)> {
        let sheet = TriMesh::grid(1.0, 1.0, cells, cells)?;
        let nv = sheet.num_vertices();
        let mut positions = Vec::with_capacity(2 * nv);
        let mut uvs = Vec::with_capacity(2 * nv);
        for layer in 0..2 {
            for (p, uv) in sheet.rest_positions.iter().zip(&sheet.uvs) {
                positions.push(Vec3::new(p.x, p.y, layer as f64 * gap));
                uvs.push(nalgebra::Vector2::new(uv.x + 1.5 * layer as f64, uv.y));
            }
        }
        let mut faces = sheet.faces.clone();
        faces.extend(sheet.faces.iter().map(|f| f.map(|v| v + nv)));
        let flat = TriMesh::from_rest(positions.clone(), faces, uvs)?;
        let sigma = 1.5 / cells as f64;
        let mut bumped = positions;
        for p in bumped.iter_mut().take(nv) {
            for &(cx, cy) in centers {
                let r2 = (p.x - cx).powi(2) + (p.y - cy).powi(2);
                p.z += 2.0 * gap * (-r2 / (sigma * sigma)).exp();
            }
        }
        Ok((flat.with_positions(bumped)?, flat))
    }
}
