//! Multi-feature geometry images.
//!
//! A [`SamplingMap`] ties a regular pixel grid over the UV bounding box to the
//! rest mesh. [`mesh_to_image`] rasterizes per-vertex displacement, normal and
//! velocity into a 9-channel [`FeatureImage`]; [`image_to_mesh`] goes back by
//! bilinear interpolation at each vertex's UV location.
//!
//! Rigid motion is factored out with one transform per frame that maps the
//! current shape toward the rest shape, `x_rest ≈ R·x + t`. Displacements are
//! taken after the transform, `d = R·p + t − p_rest`, so a purely rigid frame
//! has `d = 0`; the inverse is `p = Rᵀ·(p_rest + d − t)`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals, TriMesh, Vec2, Vec3};

pub const FEATURE_CHANNELS: usize = 9;
pub const MIN_RANGE: f64 = 1e-6;
const INSIDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelEntry {
    Invalid,
    Inside { face: usize, weights: [f64; 3] },
}

/// Four surrounding pixels of a vertex and their bilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexCell {
    pub pixels: [usize; 4],
    pub weights: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct SamplingMap {
    pub width: usize,
    pub height: usize,
    pub bbox_min: Vec2,
    pub bbox_extent: Vec2,
    /// Row-major, index `j * width + i` with `i` along u.
    pub entries: Vec<PixelEntry>,
    pub cells: Vec<VertexCell>,
}

impl SamplingMap {
    pub fn build(rest: &TriMesh, width: usize, height: usize) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Precondition(format!(
                "sampling grid must be at least 2×2, got {width}×{height}"
            )));
        }
        let total: f64 = (0..rest.num_faces()).map(|f| rest.uv_area(f)).sum();
        if rest.num_faces() == 0 || total <= crate::mesh::MIN_UV_AREA {
            return Err(Error::InvalidMesh("mesh has zero UV area".into()));
        }
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for f in &rest.faces {
            for &v in f {
                lo = lo.inf(&rest.uvs[v]);
                hi = hi.sup(&rest.uvs[v]);
            }
        }
        let extent = hi - lo;
        if !(extent.x > 0.0 && extent.y > 0.0) {
            return Err(Error::InvalidMesh("UV bounding box is degenerate".into()));
        }
        let mut map = SamplingMap {
            width,
            height,
            bbox_min: lo,
            bbox_extent: extent,
            entries: vec![PixelEntry::Invalid; width * height],
            cells: Vec::new(),
        };

        // Triangles in index order; a pixel keeps the first triangle that
        // contains it, so shared edges resolve to the lowest index.
        for (fi, f) in rest.faces.iter().enumerate() {
            let [a, b, c] = f.map(|v| rest.uvs[v]);
            let tmin = a.inf(&b).inf(&c);
            let tmax = a.sup(&b).sup(&c);
            let (i0, i1) = map.pixel_range(tmin.x, tmax.x, 0);
            let (j0, j1) = map.pixel_range(tmin.y, tmax.y, 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let k = j * width + i;
                    if map.entries[k] != PixelEntry::Invalid {
                        continue;
                    }
                    if let Some(w) = barycentric(map.pixel_center(i, j), a, b, c) {
                        if w.iter().all(|&x| x >= -INSIDE_EPS) {
                            map.entries[k] = PixelEntry::Inside { face: fi, weights: w };
                        }
                    }
                }
            }
        }

        map.cells = rest.uvs.iter().map(|&uv| map.cell_at(uv)).collect();
        Ok(map)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> Vec2 {
        self.bbox_min
            + Vec2::new(
                (i as f64 + 0.5) / self.width as f64 * self.bbox_extent.x,
                (j as f64 + 0.5) / self.height as f64 * self.bbox_extent.y,
            )
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| *e != PixelEntry::Invalid).collect()
    }

    /// Inclusive range of pixel indices whose centers may fall in `[lo, hi]`.
    fn pixel_range(&self, lo: f64, hi: f64, axis: usize) -> (usize, usize) {
        let (n, min, ext) = match axis {
            0 => (self.width, self.bbox_min.x, self.bbox_extent.x),
            _ => (self.height, self.bbox_min.y, self.bbox_extent.y),
        };
        let to_px = |x: f64| (x - min) / ext * n as f64 - 0.5;
        let a = to_px(lo).floor().max(0.0) as usize;
        let b = (to_px(hi).ceil().max(0.0) as usize).min(n - 1);
        (a.min(n - 1), b)
    }

    /// Bilinear cell in pixel-center coordinates. The lower-left pixel is
    /// clamped so all four pixels exist; vertices outside the outermost
    /// centers extrapolate linearly from the border cell.
    pub fn cell_at(&self, uv: Vec2) -> VertexCell {
        let x = (uv.x - self.bbox_min.x) / self.bbox_extent.x * self.width as f64 - 0.5;
        let y = (uv.y - self.bbox_min.y) / self.bbox_extent.y * self.height as f64 - 0.5;
        let i0 = (x.floor().max(0.0) as usize).min(self.width - 2);
        let j0 = (y.floor().max(0.0) as usize).min(self.height - 2);
        let fx = x - i0 as f64;
        let fy = y - j0 as f64;
        let k = j0 * self.width + i0;
        VertexCell {
            pixels: [k, k + 1, k + self.width, k + self.width + 1],
            weights: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        }
    }
}

/// Barycentric weights of `p` in triangle `(a, b, c)`; `None` if degenerate.
pub fn barycentric(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> Option<[f64; 3]> {
    let e1 = b - a;
    let e2 = c - a;
    let det = e1.x * e2.y - e1.y * e2.x;
    if det.abs() <= f64::MIN_POSITIVE {
        return None;
    }
    let r = p - a;
    let w1 = (r.x * e2.y - r.y * e2.x) / det;
    let w2 = (e1.x * r.y - e1.y * r.x) / det;
    Some([1.0 - w1 - w2, w1, w2])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `R` row-major followed by `t`.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        RigidTransform {
            rotation: Matrix3::from_row_slice(&a[..9]),
            translation: Vector3::new(a[9], a[10], a[11]),
        }
    }
}

/// Least-squares rigid transform taking `current` onto `rest` (Kabsch).
pub fn rigid_align(current: &[Vec3], rest: &[Vec3]) -> Result<RigidTransform> {
    if current.len() != rest.len() {
        return Err(Error::mismatch("point count", rest.len(), current.len()));
    }
    if current.len() < 3 {
        return Err(Error::DegeneratePoints(format!(
            "need at least 3 points, got {}",
            current.len()
        )));
    }
    let n = current.len() as f64;
    let c_cur: Vec3 = current.iter().sum::<Vec3>() / n;
    let c_rest: Vec3 = rest.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (x, y) in current.iter().zip(rest) {
        h += (x - c_cur) * (y - c_rest).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegeneratePoints("SVD failed".into())),
    };
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(Error::DegeneratePoints(
            "point sets are collinear or coincident".into(),
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: c_rest - rotation * c_cur,
    })
}

/// Per-channel `(min, max)` affine; normalized value is `(x − min)/(max − min)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAffine {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ChannelAffine {
    pub fn identity(channels: usize) -> Self {
        ChannelAffine {
            min: vec![0.0; channels],
            max: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    pub fn normalize(&self, c: usize, x: f64) -> f64 {
        (x - self.min[c]) / (self.max[c] - self.min[c])
    }

    pub fn denormalize(&self, c: usize, y: f64) -> f64 {
        self.min[c] + y * (self.max[c] - self.min[c])
    }

    pub fn scale(&self, c: usize) -> f64 {
        self.max[c] - self.min[c]
    }

    /// The affine restricted to channels `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        ChannelAffine {
            min: self.min[range.clone()].to_vec(),
            max: self.max[range].to_vec(),
        }
    }
}

/// Per-channel range over the valid pixels of all `images`, with the range
/// floored at [`MIN_RANGE`].
pub fn fit_normalization(images: &[FeatureImage]) -> Result<ChannelAffine> {
    let Some(first) = images.first() else {
        return Err(Error::Precondition("no images to fit normalization on".into()));
    };
    let ch = first.channels;
    let mut min = vec![f64::INFINITY; ch];
    let mut max = vec![f64::NEG_INFINITY; ch];
    for img in images {
        if img.channels != ch {
            return Err(Error::mismatch("channel count", ch, img.channels));
        }
        for (k, px) in img.data.chunks_exact(ch).enumerate() {
            if !img.valid[k] {
                continue;
            }
            for c in 0..ch {
                min[c] = min[c].min(px[c]);
                max[c] = max[c].max(px[c]);
            }
        }
    }
    for c in 0..ch {
        if !min[c].is_finite() {
            // no valid pixel anywhere
            min[c] = 0.0;
            max[c] = 0.0;
        }
        if max[c] - min[c] < MIN_RANGE {
            max[c] = min[c] + MIN_RANGE;
        }
    }
    Ok(ChannelAffine { min, max })
}

/// Height × width × channels samples, row-major, plus a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FeatureImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FeatureImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            valid: vec![false; width * height],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, k: usize) -> &[f64] {
        &self.data[k * self.channels..(k + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.channels..(k + 1) * self.channels]
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(j * self.width + i) * self.channels + c]
    }

    fn map_values(&self, norm: &ChannelAffine, f: impl Fn(&ChannelAffine, usize, f64) -> f64) -> Result<Self> {
        if norm.channels() != self.channels {
            return Err(Error::mismatch("normalization channels", self.channels, norm.channels()));
        }
        let mut out = self.clone();
        for (k, px) in out.data.chunks_exact_mut(self.channels).enumerate() {
            if !self.valid[k] {
                continue;
            }
            for (c, x) in px.iter_mut().enumerate() {
                *x = f(norm, c, *x);
            }
        }
        Ok(out)
    }

    /// Normalizes valid pixels; invalid pixels stay zero.
    pub fn normalized(&self, norm: &ChannelAffine) -> Result<Self> {
        self.map_values(norm, ChannelAffine::normalize)
    }

    pub fn denormalized(&self, norm: &ChannelAffine) -> Result<Self> {
        self.map_values(norm, ChannelAffine::denormalize)
    }

    /// Channels `range` as a new image with the same mask.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Self {
        let ch = range.len();
        let mut data = Vec::with_capacity(self.num_pixels() * ch);
        for px in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&px[range.clone()]);
        }
        FeatureImage {
            width: self.width,
            height: self.height,
            channels: ch,
            data,
            valid: self.valid.clone(),
        }
    }
}

/// Per-vertex `[d, n, v]` after factoring out `xform`.
pub fn vertex_features(
    positions: &[Vec3],
    prev_positions: Option<&[Vec3]>,
    rest: &TriMesh,
    xform: &RigidTransform,
    frame_dt: f64,
) -> Result<Vec<[f64; FEATURE_CHANNELS]>> {
    let nv = rest.num_vertices();
    if positions.len() != nv {
        return Err(Error::mismatch("vertex count", nv, positions.len()));
    }
    if let Some(prev) = prev_positions {
        if prev.len() != nv {
            return Err(Error::mismatch("previous frame vertex count", nv, prev.len()));
        }
    }
    if !(frame_dt > 0.0) {
        return Err(Error::Precondition("frame_dt must be positive".into()));
    }
    let normals = vertex_normals(positions, &rest.faces).normals;
    let r = &xform.rotation;
    Ok((0..nv)
        .map(|i| {
            let d = xform.apply(&positions[i]) - rest.rest_positions[i];
            let n = r * normals[i];
            let v = match prev_positions {
                Some(prev) => r * (positions[i] - prev[i]) / frame_dt,
                None => Vec3::zeros(),
            };
            [d.x, d.y, d.z, n.x, n.y, n.z, v.x, v.y, v.z]
        })
        .collect())
}

/// Barycentric rasterization of per-vertex values. Channels `3..6` are the
/// normal and are renormalized to unit length after interpolation.
pub fn rasterize<const C: usize>(
    map: &SamplingMap,
    faces: &[[usize; 3]],
    values: &[[f64; C]],
    unit_normal_channels: Option<usize>,
) -> FeatureImage {
    let mut img = FeatureImage::zeros(map.width, map.height, C);
    for (k, e) in map.entries.iter().enumerate() {
        let PixelEntry::Inside { face, weights } = *e else {
            continue;
        };
        let f = faces[face];
        let px = img.pixel_mut(k);
        for (w, &vi) in weights.iter().zip(&f) {
            for c in 0..C {
                px[c] += w * values[vi][c];
            }
        }
        if let Some(c0) = unit_normal_channels {
            let len = (px[c0] * px[c0] + px[c0 + 1] * px[c0 + 1] + px[c0 + 2] * px[c0 + 2]).sqrt();
            if len > 0.0 {
                for x in &mut px[c0..c0 + 3] {
                    *x /= len;
                }
            }
        }
        img.valid[k] = true;
    }
    img
}

/// Raw (unnormalized) 9-channel feature image of one frame.
pub fn mesh_to_image_raw(
    positions: &[Vec3],
    prev_positions: Option<&[Vec3]>,
    rest: &TriMesh,
    map: &SamplingMap,
    xform: &RigidTransform,
    frame_dt: f64,
) -> Result<FeatureImage> {
    if map.cells.len() != rest.num_vertices() {
        return Err(Error::mismatch("sampling map vertices", rest.num_vertices(), map.cells.len()));
    }
    let feats = vertex_features(positions, prev_positions, rest, xform, frame_dt)?;
    Ok(rasterize(map, &rest.faces, &feats, Some(3)))
}

pub fn mesh_to_image(
    positions: &[Vec3],
    prev_positions: Option<&[Vec3]>,
    rest: &TriMesh,
    map: &SamplingMap,
    xform: &RigidTransform,
    frame_dt: f64,
    norm: &ChannelAffine,
) -> Result<FeatureImage> {
    mesh_to_image_raw(positions, prev_positions, rest, map, xform, frame_dt)?.normalized(norm)
}

/// Fills every invalid pixel with its nearest valid pixel (Euclidean on
/// pixel centers; ties go to the smaller row, then the smaller column).
pub fn pad(image: &FeatureImage) -> Result<FeatureImage> {
    let (w, h) = (image.width, image.height);
    if !image.valid.iter().any(|&v| v) {
        return Err(Error::NoValidPixels);
    }
    let mut out = image.clone();
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            if image.valid[k] {
                continue;
            }
            let src = nearest_valid(image, i, j);
            let (a, b) = (k * image.channels, src * image.channels);
            out.data[a..a + image.channels].copy_from_slice(&image.data[b..b + image.channels]);
        }
    }
    out.valid.iter_mut().for_each(|v| *v = true);
    Ok(out)
}

/// Ring search outward in Chebyshev radius. A hit at squared distance `d2`
/// can only be beaten by rings with `r² ≤ d2`.
fn nearest_valid(image: &FeatureImage, i: usize, j: usize) -> usize {
    let (w, h) = (image.width as i64, image.height as i64);
    let (ci, cj) = (i as i64, j as i64);
    let mut best: Option<(i64, i64, i64)> = None; // (d2, row, col)
    let max_r = w.max(h);
    for r in 1..=max_r {
        if let Some((d2, _, _)) = best {
            if r * r > d2 {
                break;
            }
        }
        for dj in -r..=r {
            let y = cj + dj;
            if y < 0 || y >= h {
                continue;
            }
            let step = if dj.abs() == r { 1 } else { 2 * r };
            let mut di = -r;
            while di <= r {
                let x = ci + di;
                if x >= 0 && x < w && image.valid[(y * w + x) as usize] {
                    let cand = (di * di + dj * dj, y, x);
                    if best.is_none_or(|b| cand < b) {
                        best = Some(cand);
                    }
                }
                di += step;
            }
        }
    }
    let (_, y, x) = best.expect("caller checked for a valid pixel");
    (y * w + x) as usize
}

/// Bilinear reconstruction of vertex positions from the first three
/// (displacement) channels of a padded, normalized image.
pub fn image_to_mesh(
    image: &FeatureImage,
    rest: &TriMesh,
    map: &SamplingMap,
    xform: &RigidTransform,
    norm: &ChannelAffine,
) -> Result<TriMesh> {
    let positions = image_to_positions(image, rest, map, xform, norm)?;
    rest.with_positions(positions)
}

pub fn image_to_positions(
    image: &FeatureImage,
    rest: &TriMesh,
    map: &SamplingMap,
    xform: &RigidTransform,
    norm: &ChannelAffine,
) -> Result<Vec<Vec3>> {
    if image.width != map.width || image.height != map.height {
        return Err(Error::Precondition(format!(
            "image is {}×{}, sampling map is {}×{}",
            image.width, image.height, map.width, map.height
        )));
    }
    if image.channels < 3 || norm.channels() < 3 {
        return Err(Error::Precondition("need three displacement channels".into()));
    }
    if map.cells.len() != rest.num_vertices() {
        return Err(Error::mismatch("sampling map vertices", rest.num_vertices(), map.cells.len()));
    }
    let rt = xform.rotation.transpose();
    let mut out = Vec::with_capacity(rest.num_vertices());
    for (vi, cell) in map.cells.iter().enumerate() {
        let mut d = Vec3::zeros();
        for (&k, &wgt) in cell.pixels.iter().zip(&cell.weights) {
            if !image.valid[k] {
                return Err(Error::Precondition(
                    "image must be padded before reconstruction".into(),
                ));
            }
            let px = image.pixel(k);
            for c in 0..3 {
                d[c] += wgt * norm.denormalize(c, px[c]);
            }
        }
        out.push(rt * (rest.rest_positions[vi] + d - xform.translation));
    }
    Ok(out)
}

const GIMG_MAGIC: &[u8; 4] = b"GIMG";
const GIMG_VERSION: u16 = 1;

/// Binary image file: magic, version, `(h, w, c)` as u32 LE, f32 samples,
/// then one mask byte per pixel.
pub fn encode_gimg(image: &FeatureImage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(18 + image.data.len() * 4 + image.valid.len());
    buf.extend_from_slice(GIMG_MAGIC);
    buf.extend_from_slice(&GIMG_VERSION.to_le_bytes());
    for d in [image.height, image.width, image.channels] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in &image.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf.extend(image.valid.iter().map(|&v| v as u8));
    buf
}

pub fn write_gimg(image: &FeatureImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_gimg(image)).map_err(|e| Error::io(path, e))
}

pub fn read_gimg(path: impl AsRef<Path>) -> Result<FeatureImage> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_gimg(&buf)
}

pub fn decode_gimg(buf: &[u8]) -> Result<FeatureImage> {
    let bad = |m: &str| Error::Format(format!("GIMG: {m}"));
    if buf.len() < 18 || &buf[..4] != GIMG_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != GIMG_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(6), dim(10), dim(14));
    let n = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let expected = 18 + n * 4 + h * w;
    if buf.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", buf.len())));
    }
    let data = buf[18..18 + n * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let valid = buf[18 + n * 4..].iter().map(|&b| b != 0).collect();
    Ok(FeatureImage {
        width: w,
        height: h,
        channels: c,
        data,
        valid,
    })
}

/// Sidecar metadata stored next to each image file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub norm: ChannelAffine,
    pub frame_dt: f64,
    /// `R` row-major (9 values) then `t` (3 values).
    pub xform: Vec<f64>,
}

impl ImageMeta {
    pub fn new(norm: ChannelAffine, frame_dt: f64, xform: &RigidTransform) -> Self {
        ImageMeta {
            norm,
            frame_dt,
            xform: xform.to_array().to_vec(),
        }
    }

    pub fn transform(&self) -> Result<RigidTransform> {
        let arr: [f64; 12] = self
            .xform
            .as_slice()
            .try_into()
            .map_err(|_| Error::Format(format!("xform needs 12 values, found {}", self.xform.len())))?;
        Ok(RigidTransform::from_array(&arr))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
