//! Geometry images of LR/HR frame pairs.

use clothsr_core::geom_image::{
    image_to_positions, mesh_to_image_raw, pad, rigid_align, ChannelAffine, FeatureImage, RigidTransform, SamplingMap,
};
use clothsr_core::{subdivide_midpoint, SubdivisionMap, TriMesh, Vec3};

use crate::error::Result;

/// Rest meshes and sampling maps for one cloth at both resolutions.
#[derive(Debug, Clone)]
pub struct Imaging {
    pub lr_rest: TriMesh,
    pub hr_rest: TriMesh,
    pub sub_map: SubdivisionMap,
    pub lr_map: SamplingMap,
    pub hr_map: SamplingMap,
    pub frame_dt: f64,
}

impl Imaging {
    /// `lr_rest` positions are taken as the rest state.
    pub fn new(lr_rest: &TriMesh, levels: usize, lr_image: [usize; 2], frame_dt: f64) -> Result<Self> {
        let lr_rest = lr_rest.with_positions(lr_rest.rest_positions.clone())?;
        let (hr_rest, sub_map) = subdivide_midpoint(&lr_rest, levels)?;
        let [w, h] = lr_image;
        Ok(Imaging {
            lr_map: SamplingMap::build(&lr_rest, w, h)?,
            hr_map: SamplingMap::build(&hr_rest, 4 * w, 4 * h)?,
            lr_rest,
            hr_rest,
            sub_map,
            frame_dt,
        })
    }

    /// Rigid transform of a frame, fit on the LR (feature) vertices.
    pub fn transform(&self, lr_positions: &[Vec3]) -> Result<RigidTransform> {
        Ok(rigid_align(lr_positions, &self.lr_rest.rest_positions)?)
    }

    pub fn lr_raw(&self, frames: &[Vec<Vec3>], k: usize, xform: &RigidTransform) -> Result<FeatureImage> {
        raw(frames, k, &self.lr_rest, &self.lr_map, xform, self.frame_dt)
    }

    pub fn hr_raw(&self, frames: &[Vec<Vec3>], k: usize, xform: &RigidTransform) -> Result<FeatureImage> {
        raw(frames, k, &self.hr_rest, &self.hr_map, xform, self.frame_dt)
    }

    pub fn hr_positions(&self, image: &FeatureImage, xform: &RigidTransform, norm: &ChannelAffine) -> Result<Vec<Vec3>> {
        Ok(image_to_positions(image, &self.hr_rest, &self.hr_map, xform, norm)?)
    }

    /// Midpoint-upsampled LR positions in the HR vertex set.
    pub fn upsample(&self, lr_positions: &[Vec3]) -> Result<Vec<Vec3>> {
        Ok(self.sub_map.upsample(lr_positions)?)
    }
}

fn raw(
    frames: &[Vec<Vec3>],
    k: usize,
    rest: &TriMesh,
    map: &SamplingMap,
    xform: &RigidTransform,
    dt: f64,
) -> Result<FeatureImage> {
    let prev = k.checked_sub(1).map(|p| frames[p].as_slice());
    Ok(mesh_to_image_raw(&frames[k], prev, rest, map, xform, dt)?)
}

/// Normalizes and pads a raw image.
pub fn finish(raw: &FeatureImage, norm: &ChannelAffine) -> Result<FeatureImage> {
    Ok(pad(&raw.normalized(norm)?)?)
}

/// Per-channel extremes over valid pixels, mergeable across images.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAccumulator {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RangeAccumulator {
    pub fn new(channels: usize) -> Self {
        RangeAccumulator {
            min: vec![f64::INFINITY; channels],
            max: vec![f64::NEG_INFINITY; channels],
        }
    }

    pub fn add(&mut self, img: &FeatureImage) {
        for (k, px) in img.data.chunks_exact(img.channels).enumerate() {
            if img.valid[k] {
                for (c, &x) in px.iter().enumerate() {
                    self.min[c] = self.min[c].min(x);
                    self.max[c] = self.max[c].max(x);
                }
            }
        }
    }

    pub fn merge(&mut self, o: &RangeAccumulator) {
        for c in 0..self.min.len() {
            self.min[c] = self.min[c].min(o.min[c]);
            self.max[c] = self.max[c].max(o.max[c]);
        }
    }

    /// Same flooring as the per-image fit.
    pub fn affine(&self) -> ChannelAffine {
        let mut min = self.min.clone();
        let mut max = self.max.clone();
        for c in 0..min.len() {
            if !min[c].is_finite() {
                min[c] = 0.0;
                max[c] = 0.0;
            }
            if max[c] - min[c] < clothsr_core::geom_image::MIN_RANGE {
                max[c] = min[c] + clothsr_core::geom_image::MIN_RANGE;
            }
        }
        ChannelAffine { min, max }
    }
}

/// Round trip through the on-disk sample precision.
pub fn quantize(img: &FeatureImage) -> FeatureImage {
    let mut out = img.clone();
    for x in &mut out.data {
        *x = *x as f32 as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clothsr_core::geom_image::fit_normalization;

    #[test]
    fn accumulator_matches_joint_fit() {
        let rest = TriMesh::grid(1.5, 1.0, 4, 3).unwrap();
        let im = Imaging::new(&rest, 1, [12, 8], 0.04).unwrap();
        let frames: Vec<Vec<Vec3>> = (0..3)
            .map(|k| rest.rest_positions.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.1 * k as f64 * p.x)).collect())
            .collect();
        let xf = RigidTransform::identity();
        let imgs: Vec<_> = (0..3).map(|k| im.lr_raw(&frames, k, &xf).unwrap()).collect();
        let mut acc = RangeAccumulator::new(9);
        for (i, img) in imgs.iter().enumerate() {
            let mut one = RangeAccumulator::new(9);
            one.add(img);
            if i == 0 {
                acc = one;
            } else {
                acc.merge(&one);
            }
        }
        assert_eq!(acc.affine(), fit_normalization(&imgs).unwrap());
    }
}
