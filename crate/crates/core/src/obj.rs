//! Wavefront OBJ subset: `v x y z`, `vt u v`, `f a/a b/b c/c`.
//!
//! One UV per vertex. A face corner that pairs a position with a different
//! texture index than the one first seen for that position duplicates the
//! vertex, which is how UV seams are represented.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec2, Vec3};

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vs: Vec<Vec3> = Vec::new();
    let mut vts: Vec<Vec2> = Vec::new();
    // (line, corners as (v, vt))
    let mut raw_faces: Vec<(usize, [(usize, usize); 3])> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let c = parse_floats(&rest, 3, line_no)?;
                vs.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = parse_floats(&rest, 2, line_no)?;
                vts.push(Vec2::new(c[0], c[1]));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(Error::UnsupportedFace {
                        line: line_no,
                        corners: rest.len(),
                    });
                }
                let mut corners = [(0, 0); 3];
                for (k, tok) in rest.iter().enumerate() {
                    corners[k] = parse_corner(tok, vs.len(), vts.len(), line_no)?;
                }
                raw_faces.push((line_no, corners));
            }
            // normals, groups, materials and smoothing flags carry nothing we keep
            "vn" | "g" | "o" | "s" | "usemtl" | "mtllib" => {}
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
    }

    let mut positions = vs.clone();
    let mut uvs: Vec<Option<Vec2>> = vec![None; vs.len()];
    let mut first_vt: Vec<Option<usize>> = vec![None; vs.len()];
    let mut seams: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(raw_faces.len());
    for (_, corners) in &raw_faces {
        let mut f = [0usize; 3];
        for (k, &(vi, ti)) in corners.iter().enumerate() {
            f[k] = match first_vt[vi] {
                None => {
                    first_vt[vi] = Some(ti);
                    uvs[vi] = Some(vts[ti]);
                    vi
                }
                Some(t) if t == ti => vi,
                Some(_) => *seams.entry((vi, ti)).or_insert_with(|| {
                    positions.push(vs[vi]);
                    uvs.push(Some(vts[ti]));
                    positions.len() - 1
                }),
            };
        }
        faces.push(f);
    }
    // unreferenced vertices fall back to the matching vt record
    let uvs = uvs
        .into_iter()
        .enumerate()
        .map(|(i, uv)| {
            uv.or_else(|| vts.get(i).copied())
                .ok_or(Error::MissingUv { line: 0 })
        })
        .collect::<Result<Vec<_>>>()?;
    TriMesh::from_rest(positions, faces, uvs)
}

fn parse_floats(toks: &[&str], n: usize, line: usize) -> Result<Vec<f64>> {
    if toks.len() < n {
        return Err(Error::Parse {
            line,
            msg: format!("expected {n} numbers, found {}", toks.len()),
        });
    }
    toks[..n]
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number '{t}'"),
            })
        })
        .collect()
}

fn parse_index(tok: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad index '{tok}'"),
    })?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::Parse {
            line,
            msg: format!("index {i} out of range (have {count})"),
        });
    }
    Ok(idx as usize)
}

fn parse_corner(tok: &str, nv: usize, nvt: usize, line: usize) -> Result<(usize, usize)> {
    let mut it = tok.split('/');
    let v = parse_index(it.next().unwrap_or(""), nv, line)?;
    match it.next() {
        Some(t) if !t.is_empty() => Ok((v, parse_index(t, nvt, line)?)),
        _ => Err(Error::MissingUv { line }),
    }
}

/// Formats a mesh as OBJ text. Coordinates use the shortest representation
/// that round-trips exactly.
pub fn format_obj(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.num_vertices() * 64 + mesh.num_faces() * 32);
    for p in &mesh.positions {
        let _ = writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for uv in &mesh.uvs {
        let _ = writeln!(s, "vt {:?} {:?}", uv.x, uv.y);
    }
    for f in &mesh.faces {
        let [a, b, c] = [f[0] + 1, f[1] + 1, f[2] + 1];
        let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
    }
    s
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_obj(mesh)).map_err(|e| Error::io(path, e))
}
