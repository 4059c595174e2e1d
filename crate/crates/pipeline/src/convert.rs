//! Standalone mesh ↔ geometry image conversion.

use std::path::{Path, PathBuf};

use clothsr_core::geom_image::{
    decode_gimg, encode_gimg, fit_normalization, image_to_positions, mesh_to_image_raw, pad, rigid_align, SamplingMap,
    ImageMeta,
};
use clothsr_core::obj::{format_obj, load_obj};
use clothsr_core::TriMesh;
use clothsr_net::metrics::vmse;
use serde::Serialize;

use crate::error::{write, PipelineError, Result};

pub struct ToImage {
    pub rest: PathBuf,
    pub mesh: PathBuf,
    /// Previous frame, for velocities; zero velocity without it.
    pub prev: Option<PathBuf>,
    /// `[width, height]`
    pub size: [usize; 2],
    pub frame_dt: f64,
    /// Sidecar whose normalization is reused; fitted on this image when
    /// absent.
    pub norm_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvertReport {
    pub image: String,
    pub meta: String,
    pub width: usize,
    pub height: usize,
    /// mesh → image → mesh, through the stored samples.
    pub roundtrip_vmse: f64,
}

fn rest_mesh(path: &Path) -> Result<TriMesh> {
    let m = load_obj(path)?;
    Ok(m.with_positions(m.rest_positions.clone())?)
}

/// Writes `<out>.gimg` and `<out>.json`.
pub fn to_image(a: &ToImage, out: &Path) -> Result<ConvertReport> {
    let rest = rest_mesh(&a.rest)?;
    let cur = load_obj(&a.mesh)?;
    if cur.faces != rest.faces {
        return Err(PipelineError::Data(format!("{} does not match the rest topology", a.mesh.display())));
    }
    let prev = a.prev.as_ref().map(load_obj).transpose()?;
    if prev.as_ref().is_some_and(|p| p.faces != rest.faces) {
        return Err(PipelineError::Data("previous frame does not match the rest topology".into()));
    }
    let map = SamplingMap::build(&rest, a.size[0], a.size[1])?;
    let xf = rigid_align(&cur.positions, &rest.rest_positions)?;
    let raw = mesh_to_image_raw(
        &cur.positions,
        prev.as_ref().map(|p| p.positions.as_slice()),
        &rest,
        &map,
        &xf,
        a.frame_dt,
    )?;
    let norm = match &a.norm_from {
        Some(p) => ImageMeta::load(p)?.norm,
        None => fit_normalization(std::slice::from_ref(&raw))?,
    };
    let img = pad(&raw.normalized(&norm)?)?;
    let bytes = encode_gimg(&img);
    let stored = decode_gimg(&bytes)?;
    let rec = image_to_positions(&stored, &rest, &map, &xf, &norm)?;
    let image = out.with_extension("gimg");
    let meta = out.with_extension("json");
    write(&image, &bytes)?;
    let meta_text = serde_json::to_string_pretty(&ImageMeta::new(norm, a.frame_dt, &xf))
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    write(&meta, meta_text)?;
    Ok(ConvertReport {
        image: image.display().to_string(),
        meta: meta.display().to_string(),
        width: img.width,
        height: img.height,
        roundtrip_vmse: vmse(&rec, &cur.positions)?,
    })
}

/// Reconstructs an OBJ from a padded image and its sidecar.
pub fn to_mesh(rest: &Path, image: &Path, meta: &Path, out: &Path) -> Result<TriMesh> {
    let rest = rest_mesh(rest)?;
    let bytes = std::fs::read(image).map_err(|e| PipelineError::io(image, e))?;
    let img = decode_gimg(&bytes)?;
    let meta = ImageMeta::load(meta)?;
    let map = SamplingMap::build(&rest, img.width, img.height)?;
    let positions = image_to_positions(&img, &rest, &map, &meta.transform()?, &meta.norm)?;
    let mesh = rest.with_positions(positions)?;
    write(out, format_obj(&mesh))?;
    Ok(mesh)
}
