//! On-disk datasets: generation, manifest, content hashes and the split
//! access audit.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! config.toml
//! seq/<name>/scene.toml
//! seq/<name>/lr_rest.obj  hr_rest.obj
//! seq/<name>/{lr,hr}/frame_NNNN.obj   positions of every frame
//! seq/<name>/{lr,hr}/frame_NNNN.gimg  padded normalized geometry image
//! seq/<name>/{lr,hr}/frame_NNNN.json  image metadata
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clothsr_core::geom_image::{decode_gimg, encode_gimg, ChannelAffine, ImageMeta};
use clothsr_core::obj::{format_obj, parse_obj};
use clothsr_core::scene::SceneConfig;
use clothsr_core::track::simulate_scene;
use clothsr_core::{TriMesh, Vec3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{read_to_string, write, PipelineError, Result};
use crate::features::{finish, quantize, Imaging, RangeAccumulator};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    pub frames: usize,
    pub frame_dt: f64,
    pub subdivision_levels: usize,
    /// `None` when the sequence simulated and converted cleanly.
    pub failure: Option<String>,
    pub roundtrip_max_vmse: Option<f64>,
    pub tracking_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub lr_image: [usize; 2],
    pub hr_image: [usize; 2],
    /// Fit on the LR and HR images of the training split.
    pub norm: ChannelAffine,
    pub sequences: Vec<SequenceEntry>,
    pub split: Split,
    /// SHA-256 of every file, keyed by path relative to the root.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&SequenceEntry> {
        self.sequences.iter().find(|s| s.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn seq_dir(name: &str) -> String {
    format!("seq/{name}")
}

pub fn frame_file(name: &str, res: &str, k: usize, ext: &str) -> String {
    format!("seq/{name}/{res}/frame_{k:04}.{ext}")
}

/// Which part of a dataset a reader may open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    TrainOnly,
}

/// Read handle that checks hashes, enforces the split scope and records
/// every file it opens.
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    scope: Scope,
    log: Mutex<Vec<String>>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>, scope: Scope) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let text = read_to_string(&root.join(MANIFEST))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(PipelineError::Data(format!(
                "dataset format {} is not the supported {FORMAT_VERSION}",
                manifest.format_version
            )));
        }
        let ds = Dataset {
            root,
            manifest,
            scope,
            log: Mutex::new(vec![MANIFEST.to_string()]),
        };
        ds.check_split()?;
        Ok(ds)
    }

    fn check_split(&self) -> Result<()> {
        let s = &self.manifest.split;
        let ok: Vec<&str> = self
            .manifest
            .sequences
            .iter()
            .filter(|e| e.failure.is_none())
            .map(|e| e.name.as_str())
            .collect();
        let mut all: Vec<&str> = s.train.iter().chain(&s.test).map(String::as_str).collect();
        all.sort_unstable();
        let mut want = ok.clone();
        want.sort_unstable();
        if all != want {
            return Err(PipelineError::Data(
                "split must be disjoint and cover every generated sequence".into(),
            ));
        }
        Ok(())
    }

    fn is_test_path(&self, rel: &str) -> bool {
        self.manifest
            .split
            .test
            .iter()
            .any(|t| rel.starts_with(&format!("{}/", seq_dir(t))))
    }

    /// Reads `rel`, verifying its recorded hash.
    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        if self.scope == Scope::TrainOnly && self.is_test_path(rel) {
            return Err(PipelineError::Data(format!("{rel} belongs to the test split")));
        }
        let expected = self
            .manifest
            .files
            .get(rel)
            .ok_or_else(|| PipelineError::Data(format!("{rel} is not listed in the manifest")))?;
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        if &sha256_hex(&bytes) != expected {
            return Err(PipelineError::Data(format!("{rel} does not match its manifest hash")));
        }
        self.log.lock().expect("log lock").push(rel.to_string());
        Ok(bytes)
    }

    pub fn read_string(&self, rel: &str) -> Result<String> {
        String::from_utf8(self.read(rel)?).map_err(|_| PipelineError::Data(format!("{rel} is not UTF-8")))
    }

    /// Every path read so far, in order.
    pub fn access_log(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }

    /// Test-split paths present in the access log.
    pub fn audit_violations(&self) -> Vec<String> {
        self.access_log().into_iter().filter(|p| self.is_test_path(p)).collect()
    }

    pub fn load_sequence(&self, name: &str) -> Result<Sequence> {
        let entry = self
            .manifest
            .entry(name)
            .ok_or_else(|| PipelineError::Data(format!("no sequence '{name}'")))?
            .clone();
        if let Some(f) = &entry.failure {
            return Err(PipelineError::Data(format!("sequence '{name}' failed during generation: {f}")));
        }
        let scene: SceneConfig = toml::from_str(&self.read_string(&format!("{}/scene.toml", seq_dir(name)))?)
            .map_err(|e| PipelineError::Data(format!("{name}/scene.toml: {e}")))?;
        let lr_rest = parse_obj(&self.read_string(&format!("{}/lr_rest.obj", seq_dir(name)))?)?;
        let imaging = Imaging::new(&lr_rest, entry.subdivision_levels, self.manifest.lr_image, entry.frame_dt)?;
        let positions = |res: &str, nv: usize| -> Result<Vec<Vec<Vec3>>> {
            (0..entry.frames)
                .map(|k| {
                    let m = parse_obj(&self.read_string(&frame_file(name, res, k, "obj"))?)?;
                    if m.num_vertices() != nv {
                        return Err(PipelineError::Data(format!("{name} {res} frame {k} has the wrong vertex count")));
                    }
                    Ok(m.positions)
                })
                .collect()
        };
        let lr_frames = positions("lr", imaging.lr_rest.num_vertices())?;
        let hr_frames = positions("hr", imaging.hr_rest.num_vertices())?;
        Ok(Sequence {
            name: name.to_string(),
            scene,
            imaging,
            lr_frames,
            hr_frames,
        })
    }
}

/// One simulated LR/HR sequence in memory.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub scene: SceneConfig,
    pub imaging: Imaging,
    pub lr_frames: Vec<Vec<Vec3>>,
    pub hr_frames: Vec<Vec<Vec3>>,
}

impl Sequence {
    pub fn num_frames(&self) -> usize {
        self.lr_frames.len()
    }
}

pub fn install_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

struct Simulated {
    name: String,
    result: Result<Sequence>,
    tracking_error: Option<f64>,
}

fn simulate(name: String, scene: SceneConfig, lr_image: [usize; 2]) -> Simulated {
    let run = || -> Result<(Sequence, f64)> {
        let (rig, tracked) = simulate_scene(&scene)?;
        let imaging = Imaging::new(&rig.lr_mesh, scene.subdivision_levels, lr_image, scene.frame_dt())?;
        let err = tracked.tracking_error(&rig.sub_map);
        let (lr_frames, hr_frames) = tracked.pairs.into_iter().map(|p| (p.lr_positions, p.hr_positions)).unzip();
        Ok((
            Sequence {
                name: name.clone(),
                scene,
                imaging,
                lr_frames,
                hr_frames,
            },
            err,
        ))
    };
    match run() {
        Ok((seq, err)) => Simulated {
            name,
            result: Ok(seq),
            tracking_error: Some(err),
        },
        Err(e) => Simulated {
            name,
            result: Err(e),
            tracking_error: None,
        },
    }
}

/// Summary of a finished generation run.
#[derive(Debug, Clone)]
pub struct GenReport {
    pub manifest: Manifest,
    pub worst_roundtrip_vmse: f64,
}

/// Simulates every configured scene, converts all frames to geometry
/// images and writes the dataset with its manifest. Fails if any HR frame
/// misses the round-trip gate.
pub fn gen_data(cfg: &PipelineConfig, out: &Path, threads: usize) -> Result<GenReport> {
    cfg.validate()?;
    let scenes: Vec<(String, SceneConfig)> = cfg
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let scene = s.scene()?;
            Ok((format!("{i:02}_{}", scene.name), scene))
        })
        .collect::<Result<_>>()?;
    let pool = install_pool(threads)?;
    let simulated: Vec<Simulated> = pool.install(|| {
        use rayon::prelude::*;
        scenes
            .into_par_iter()
            .map(|(name, scene)| simulate(name, scene, cfg.lr_image))
            .collect()
    });

    let mut entries = Vec::new();
    let mut ok: Vec<Sequence> = Vec::new();
    for s in simulated {
        match s.result {
            Ok(seq) => {
                entries.push(SequenceEntry {
                    name: s.name,
                    frames: seq.num_frames(),
                    frame_dt: seq.scene.frame_dt(),
                    subdivision_levels: seq.scene.subdivision_levels,
                    failure: None,
                    roundtrip_max_vmse: None,
                    tracking_error: s.tracking_error,
                });
                ok.push(seq);
            }
            Err(e) => {
                log::warn!("sequence {} failed: {e}", s.name);
                entries.push(SequenceEntry {
                    name: s.name,
                    frames: 0,
                    frame_dt: 0.0,
                    subdivision_levels: 0,
                    failure: Some(e.to_string()),
                    roundtrip_max_vmse: None,
                    tracking_error: None,
                });
            }
        }
    }
    if ok.len() <= cfg.test_sequences {
        return Err(PipelineError::Data(format!(
            "only {} sequences simulated, need more than {} for the split",
            ok.len(),
            cfg.test_sequences
        )));
    }

    let mut names: Vec<String> = ok.iter().map(|s| s.name.clone()).collect();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut test: Vec<String> = names[..cfg.test_sequences].to_vec();
    let mut train: Vec<String> = names[cfg.test_sequences..].to_vec();
    test.sort();
    train.sort();

    // normalization from the training split only
    let mut range = RangeAccumulator::new(9);
    for seq in ok.iter().filter(|s| train.contains(&s.name)) {
        for k in 0..seq.num_frames() {
            let xf = seq.imaging.transform(&seq.lr_frames[k])?;
            range.add(&seq.imaging.lr_raw(&seq.lr_frames, k, &xf)?);
            range.add(&seq.imaging.hr_raw(&seq.hr_frames, k, &xf)?);
        }
    }
    let norm = range.affine();

    let mut files = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for seq in &ok {
        let vmse = write_sequence(seq, &norm, out, cfg.roundtrip_gate, &mut files)?;
        worst = worst.max(vmse);
        if let Some(e) = entries.iter_mut().find(|e| e.name == seq.name) {
            e.roundtrip_max_vmse = Some(vmse);
        }
    }
    let cfg_text = cfg.to_toml();
    write(&out.join("config.toml"), &cfg_text)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        lr_image: cfg.lr_image,
        hr_image: cfg.hr_image(),
        norm,
        sequences: entries,
        split: Split { train, test },
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Data(e.to_string()))?;
    write(&out.join(MANIFEST), text)?;
    Ok(GenReport {
        manifest,
        worst_roundtrip_vmse: worst,
    })
}

fn put(out: &Path, files: &mut BTreeMap<String, String>, rel: String, bytes: &[u8]) -> Result<()> {
    write(&out.join(&rel), bytes)?;
    files.insert(rel, sha256_hex(bytes));
    Ok(())
}

fn obj_bytes(rest: &TriMesh, positions: &[Vec3]) -> Result<Vec<u8>> {
    Ok(format_obj(&rest.with_positions(positions.to_vec())?).into_bytes())
}

/// Writes one sequence and returns its worst HR round-trip VMSE.
fn write_sequence(seq: &Sequence, norm: &ChannelAffine, out: &Path, gate: f64, files: &mut BTreeMap<String, String>) -> Result<f64> {
    let name = &seq.name;
    let im = &seq.imaging;
    put(out, files, format!("{}/scene.toml", seq_dir(name)), seq.scene.to_toml().as_bytes())?;
    put(out, files, format!("{}/lr_rest.obj", seq_dir(name)), format_obj(&im.lr_rest).as_bytes())?;
    put(out, files, format!("{}/hr_rest.obj", seq_dir(name)), format_obj(&im.hr_rest).as_bytes())?;
    let mut worst: f64 = 0.0;
    for k in 0..seq.num_frames() {
        let xf = im.transform(&seq.lr_frames[k])?;
        let meta = ImageMeta::new(norm.clone(), im.frame_dt, &xf);
        let meta_text = serde_json::to_string_pretty(&meta).map_err(|e| PipelineError::Data(e.to_string()))?;
        for (res, rest, frames) in [("lr", &im.lr_rest, &seq.lr_frames), ("hr", &im.hr_rest, &seq.hr_frames)] {
            let raw = if res == "lr" { im.lr_raw(frames, k, &xf)? } else { im.hr_raw(frames, k, &xf)? };
            let img = finish(&raw, norm)?;
            let gimg_rel = frame_file(name, res, k, "gimg");
            let bytes = encode_gimg(&img);
            put(out, files, gimg_rel, &bytes)?;
            put(out, files, frame_file(name, res, k, "json"), meta_text.as_bytes())?;
            put(out, files, frame_file(name, res, k, "obj"), &obj_bytes(rest, &frames[k])?)?;
            if res == "hr" {
                // gate on exactly what was stored
                let stored = decode_gimg(&bytes)?;
                debug_assert_eq!(stored.data, quantize(&img).data);
                let rec = im.hr_positions(&stored, &xf, norm)?;
                let vmse = clothsr_net::metrics::vmse(&rec, &frames[k])?;
                worst = worst.max(vmse);
                if !(vmse < gate) {
                    return Err(PipelineError::Gate(format!(
                        "{name} frame {k}: round-trip VMSE {vmse:e} is not below {gate:e}"
                    )));
                }
            }
        }
    }
    Ok(worst)
}
