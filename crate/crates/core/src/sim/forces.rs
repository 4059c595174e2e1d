//! Internal cloth forces: corotational constant-strain stretching, dihedral
//! hinge bending and their per-element damping.

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix3x2, Vector2};

use crate::error::{Error, Result};
use crate::mesh::{edge_key, TriMesh, Vec3};

use super::ForceConfig;

#[derive(Debug, Clone)]
pub struct StretchElement {
    pub idx: [usize; 3],
    /// Inverse of the rest edge matrix in material space.
    pub dm_inv: Matrix2<f64>,
    pub rest_area: f64,
}

#[derive(Debug, Clone)]
pub struct Hinge {
    /// `[opp1, opp2, edge_a, edge_b]`; face 1 is `(opp1, a, b)` and face 2 is
    /// `(opp2, b, a)` in winding order.
    pub idx: [usize; 4],
    pub rest_angle: f64,
    /// Dimensionless hinge weight `3|e|² / (A1 + A2)` at rest.
    pub weight: f64,
    pub rest_edge_len: f64,
}

/// Precomputed force elements for one triangle mesh. Indices refer to the
/// vertex array of the state the forces are evaluated on, which may be larger
/// than the set of vertices the elements touch.
#[derive(Debug, Clone, Default)]
pub struct ClothModel {
    pub triangles: Vec<StretchElement>,
    pub hinges: Vec<Hinge>,
    pub edges: Vec<[usize; 2]>,
    pub num_vertices: usize,
}

impl ClothModel {
    pub fn from_mesh(mesh: &TriMesh) -> Result<Self> {
        let mut triangles = Vec::with_capacity(mesh.num_faces());
        for (fi, f) in mesh.faces.iter().enumerate() {
            let [a, b, c] = *f;
            let e1 = mesh.uvs[b] - mesh.uvs[a];
            let e2 = mesh.uvs[c] - mesh.uvs[a];
            let dm = Matrix2::from_columns(&[e1, e2]);
            let area = 0.5 * dm.determinant().abs();
            let dm_inv = match dm.try_inverse() {
                Some(inv) if area > crate::mesh::MIN_UV_AREA => inv,
                _ => return Err(Error::DegenerateTriangle { face: fi, area }),
            };
            triangles.push(StretchElement {
                idx: *f,
                dm_inv,
                rest_area: area,
            });
        }

        // directed edge -> (face, opposite vertex)
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &mesh.faces {
            for k in 0..3 {
                directed.insert((f[k], f[(k + 1) % 3]), f[(k + 2) % 3]);
            }
        }
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut hinges = Vec::new();
        for f in &mesh.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if seen.insert(edge_key(a, b)) {
                    edges.push([a, b]);
                } else {
                    continue;
                }
                let opp1 = f[(k + 2) % 3];
                let Some(&opp2) = directed.get(&(b, a)) else {
                    if directed.contains_key(&(a, b)) && faces_sharing(mesh, a, b) > 1 {
                        log::warn!("edge ({a},{b}) joins inconsistently oriented faces; no hinge");
                    }
                    continue;
                };
                let idx = [opp1, opp2, a, b];
                let x = |i: usize| mesh.rest_positions[idx[i]];
                let Some(geo) = HingeGeometry::new(x(0), x(1), x(2), x(3)) else {
                    log::warn!("hinge on edge ({a},{b}) is degenerate at rest; skipped");
                    continue;
                };
                let a1 = 0.5 * geo.n1_len;
                let a2 = 0.5 * geo.n2_len;
                hinges.push(Hinge {
                    idx,
                    rest_angle: geo.angle(),
                    weight: 3.0 * geo.e_len * geo.e_len / (a1 + a2),
                    rest_edge_len: geo.e_len,
                });
            }
        }
        Ok(ClothModel {
            triangles,
            hinges,
            edges,
            num_vertices: mesh.num_vertices(),
        })
    }

    pub fn stretch_energy(&self, x: &[Vec3], cfg: &ForceConfig) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let f = deformation_gradient(t, x);
                let (e, _) = corotational(&f);
                cfg.stretch_stiffness * t.rest_area * e
            })
            .sum()
    }

    pub fn bend_energy(&self, x: &[Vec3], cfg: &ForceConfig) -> f64 {
        self.hinges
            .iter()
            .filter_map(|h| {
                let g = HingeGeometry::new(x[h.idx[0]], x[h.idx[1]], x[h.idx[2]], x[h.idx[3]])?;
                let d = wrap_angle(g.angle() - h.rest_angle);
                Some(0.5 * cfg.bend_stiffness * h.weight * d * d)
            })
            .sum()
    }

    /// Elastic stretch forces plus edge-wise stretch damping.
    pub fn add_stretch_forces(&self, x: &[Vec3], v: &[Vec3], cfg: &ForceConfig, out: &mut [Vec3]) {
        if cfg.stretch_stiffness != 0.0 {
            for t in &self.triangles {
                let f = deformation_gradient(t, x);
                let (_, p) = corotational(&f);
                let g = p * t.dm_inv.transpose() * (cfg.stretch_stiffness * t.rest_area);
                let f1: Vec3 = -g.column(0).into_owned();
                let f2: Vec3 = -g.column(1).into_owned();
                out[t.idx[0]] -= f1 + f2;
                out[t.idx[1]] += f1;
                out[t.idx[2]] += f2;
            }
        }
        if cfg.damping != 0.0 {
            for &[a, b] in &self.edges {
                let e = x[b] - x[a];
                let len = e.norm();
                if len <= 0.0 {
                    continue;
                }
                let dir = e / len;
                let rate = (v[b] - v[a]).dot(&dir);
                let f = dir * (cfg.damping * rate);
                out[a] += f;
                out[b] -= f;
            }
        }
    }

    /// Hinge bending forces plus damping on the dihedral angle rate. Hinges
    /// are damped stiffness-proportionally, with the same time constant
    /// `damping / stretch_stiffness` as the stretching edges.
    pub fn add_bend_forces(&self, x: &[Vec3], v: &[Vec3], cfg: &ForceConfig, out: &mut [Vec3]) {
        if cfg.bend_stiffness == 0.0 {
            return;
        }
        let tau = if cfg.stretch_stiffness > 0.0 {
            cfg.damping / cfg.stretch_stiffness
        } else {
            0.0
        };
        for h in &self.hinges {
            let [i0, i1, i2, i3] = h.idx;
            let Some(geo) = HingeGeometry::new(x[i0], x[i1], x[i2], x[i3]) else {
                continue;
            };
            let grad = geo.angle_gradient();
            let d = wrap_angle(geo.angle() - h.rest_angle);
            let rate: f64 = h.idx.iter().zip(&grad).map(|(&i, g)| g.dot(&v[i])).sum();
            let coef = cfg.bend_stiffness * h.weight * (d + tau * rate);
            for (&i, g) in h.idx.iter().zip(&grad) {
                out[i] -= g * coef;
            }
        }
    }
}

fn faces_sharing(mesh: &TriMesh, a: usize, b: usize) -> usize {
    mesh.faces
        .iter()
        .filter(|f| f.contains(&a) && f.contains(&b))
        .count()
}

fn deformation_gradient(t: &StretchElement, x: &[Vec3]) -> Matrix3x2<f64> {
    let [a, b, c] = t.idx;
    let ds = Matrix3x2::from_columns(&[x[b] - x[a], x[c] - x[a]]);
    ds * t.dm_inv
}

/// Corotational energy density `½ Σ (σᵢ − 1)²` and its derivative `F − R`
/// where `R` is the closest matrix with orthonormal columns.
fn corotational(f: &Matrix3x2<f64>) -> (f64, Matrix3x2<f64>) {
    let c = f.transpose() * f;
    let tr = c[(0, 0)] + c[(1, 1)];
    let det = (c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)]).max(0.0);
    let s = det.sqrt();
    let tr_s = (tr + 2.0 * s).sqrt();
    if s > 1e-10 * tr.max(1e-300) {
        // closed-form square root of the 2x2 right Cauchy-Green tensor
        let sq = (c + Matrix2::identity() * s) / tr_s;
        if let Some(sq_inv) = sq.try_inverse() {
            let rot = f * sq_inv;
            let energy = 0.5 * (tr - 2.0 * tr_s + 2.0);
            return (energy, f - rot);
        }
    }
    let svd = f.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sig = svd.singular_values;
    let energy = 0.5 * ((sig[0] - 1.0).powi(2) + (sig[1] - 1.0).powi(2));
    (energy, u * Matrix2::from_diagonal(&Vector2::new(sig[0] - 1.0, sig[1] - 1.0)) * vt)
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = a;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Geometry of a hinge `(x1, x2 | x3, x4)`: opposite vertices first, then the
/// shared edge. Face normals are left unnormalized.
pub(crate) struct HingeGeometry {
    x: [Vec3; 4],
    e: Vec3,
    e_len: f64,
    n1: Vec3,
    n2: Vec3,
    n1_len: f64,
    n2_len: f64,
}

impl HingeGeometry {
    pub(crate) fn new(x1: Vec3, x2: Vec3, x3: Vec3, x4: Vec3) -> Option<Self> {
        let e = x4 - x3;
        let n1 = (x1 - x3).cross(&(x1 - x4));
        let n2 = (x2 - x4).cross(&(x2 - x3));
        let (e_len, n1_len, n2_len) = (e.norm(), n1.norm(), n2.norm());
        let tiny = 1e-14 * e_len.max(1e-300) * e_len.max(1e-300);
        if !(e_len > 1e-300) || !(n1_len > tiny) || !(n2_len > tiny) {
            return None;
        }
        Some(HingeGeometry {
            x: [x1, x2, x3, x4],
            e,
            e_len,
            n1,
            n2,
            n1_len,
            n2_len,
        })
    }

    /// Bend angle: zero for a flat hinge, positive when folding toward the
    /// side face normals point to. The interior dihedral angle is `π − angle`.
    pub(crate) fn angle(&self) -> f64 {
        let n1 = self.n1 / self.n1_len;
        let n2 = self.n2 / self.n2_len;
        let sin = n1.cross(&n2).dot(&(self.e / self.e_len));
        let cos = n1.dot(&n2);
        sin.atan2(cos)
    }

    /// Gradient of [`Self::angle`] with respect to the four vertices.
    pub(crate) fn angle_gradient(&self) -> [Vec3; 4] {
        let [x1, x2, x3, x4] = self.x;
        let e = self.e;
        let el = self.e_len;
        let m1 = self.n1 / (self.n1_len * self.n1_len);
        let m2 = self.n2 / (self.n2_len * self.n2_len);
        let u1 = m1 * el;
        let u2 = m2 * el;
        let u3 = m1 * ((x1 - x4).dot(&e) / el) + m2 * ((x2 - x4).dot(&e) / el);
        let u4 = -(m1 * ((x1 - x3).dot(&e) / el)) - m2 * ((x2 - x3).dot(&e) / el);
        [-u1, -u2, -u3, -u4]
    }
}
