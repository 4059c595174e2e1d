use std::path::{Path, PathBuf};

use clothsr_core::refine::ZoneConfig;
use clothsr_core::scene::SceneConfig;
use clothsr_net::{LossWeights, NetConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneFamily {
    Draping,
    Hitting,
    /// A scene TOML file given by `path`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub family: SceneFamily,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Substep overrides, for fast test fixtures.
    #[serde(default)]
    pub lr_substeps: Option<usize>,
    #[serde(default)]
    pub hr_substeps: Option<usize>,
}

fn default_frames() -> usize {
    40
}

impl SceneSpec {
    pub fn scene(&self) -> Result<SceneConfig> {
        let mut s = match self.family {
            SceneFamily::Draping => SceneConfig::draping(self.seed, self.frames),
            SceneFamily::Hitting => SceneConfig::hitting(self.seed, self.frames),
            SceneFamily::Custom => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("custom scene needs a path".into()))?;
                let mut s = SceneConfig::load(path)?;
                s.frames = self.frames;
                s
            }
        };
        if let Some(n) = self.lr_substeps {
            s.lr_substeps = n;
        }
        if let Some(n) = self.hr_substeps {
            s.hr_substeps = n;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Windows per optimizer step.
    pub batch: usize,
    /// LR patch side; the HR patch is four times larger. `0` trains on
    /// whole images.
    pub lr_patch: usize,
    pub base_lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Epoch after which the learning rate stops decaying.
    pub freeze_after: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; `0` means one pass over the windows.
    pub iters_per_epoch: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch: 16,
            lr_patch: 24,
            base_lr: 1e-4,
            decay_every: 20,
            decay_factor: 10.0,
            freeze_after: 60,
            epochs: 120,
            iters_per_epoch: 0,
            checkpoint_every: 20,
        }
    }
}

impl TrainSchedule {
    /// Learning rate for 1-based `epoch`: divided by `decay_factor` every
    /// `decay_every` epochs, held fixed after `freeze_after`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let e = epoch.clamp(1, self.freeze_after.max(1));
        let decays = (e - 1) / self.decay_every.max(1);
        self.base_lr / self.decay_factor.powi(decays as i32)
    }

    pub fn hr_patch(&self) -> usize {
        4 * self.lr_patch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub bisection_steps: usize,
    pub max_growth: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        let z = ZoneConfig::default();
        RefineConfig {
            bisection_steps: z.bisection_steps,
            max_growth: z.max_growth,
        }
    }
}

impl RefineConfig {
    pub fn zone_config(&self) -> ZoneConfig {
        ZoneConfig {
            bisection_steps: self.bisection_steps,
            max_growth: self.max_growth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub seed: u64,
    pub scenes: Vec<SceneSpec>,
    /// LR geometry image `[width, height]`; HR images are four times larger.
    pub lr_image: [usize; 2],
    pub test_sequences: usize,
    /// Largest tolerated mesh→image→mesh VMSE on generated HR frames, m².
    pub roundtrip_gate: f64,
    pub net: NetConfig,
    pub loss: LossWeights,
    pub train: TrainSchedule,
    pub refine: RefineConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scenes = (0..4)
            .map(|i| SceneSpec {
                family: if i % 2 == 0 { SceneFamily::Draping } else { SceneFamily::Hitting },
                seed: i as u64 + 1,
                frames: 40,
                path: None,
                lr_substeps: None,
                hr_substeps: None,
            })
            .collect();
        PipelineConfig {
            name: "desk".into(),
            seed: 0,
            scenes,
            lr_image: [48, 32],
            test_sequences: 1,
            roundtrip_gate: 1e-4,
            net: NetConfig::toy(),
            loss: LossWeights::default(),
            train: TrainSchedule::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            for s in &mut cfg.scenes {
                if let Some(p) = &s.path {
                    if p.is_relative() {
                        s.path = Some(dir.join(p));
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn hr_image(&self) -> [usize; 2] {
        [4 * self.lr_image[0], 4 * self.lr_image[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.net.validate()?;
        self.loss.validate()?;
        if self.scenes.is_empty() {
            return bad("no scenes configured".into());
        }
        let [w, h] = self.lr_image;
        if w < clothsr_net::model::MIN_INPUT_SIDE || h < clothsr_net::model::MIN_INPUT_SIDE {
            return bad(format!("lr_image {w}×{h} is below the network minimum"));
        }
        let t = &self.train;
        if t.lr_patch != 0 && (t.lr_patch > w.min(h) || t.lr_patch < clothsr_net::model::MIN_INPUT_SIDE) {
            return bad(format!("lr_patch {} must fit inside {w}×{h} and be at least 8", t.lr_patch));
        }
        if t.batch == 0 || t.epochs == 0 || !(t.base_lr > 0.0) || !(t.decay_factor >= 1.0) {
            return bad("train: batch, epochs and base_lr must be positive, decay_factor >= 1".into());
        }
        if self.test_sequences >= self.scenes.len() {
            return bad(format!(
                "{} test sequences leave nothing to train on out of {}",
                self.test_sequences,
                self.scenes.len()
            ));
        }
        if !(self.roundtrip_gate > 0.0) {
            return bad("roundtrip_gate must be positive".into());
        }
        for s in &self.scenes {
            if s.frames < self.loss.window_n + 1 {
                return bad(format!("scene needs at least {} frames for a window", self.loss.window_n + 1));
            }
        }
        Ok(())
    }
}
