use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub num_rdb: usize,
    pub layers_per_rdb: usize,
    pub growth: usize,
    pub base_channels: usize,
    pub scale: usize,
    pub in_channels: usize,
    pub head_out_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            num_rdb: 16,
            layers_per_rdb: 6,
            growth: 32,
            base_channels: 64,
            scale: 4,
            in_channels: 9,
            head_out_channels: 3,
        }
    }
}

impl NetConfig {
    /// Narrow trunk for desk-scale training and gradient checks. Same
    /// topology as the default, fewer and thinner blocks.
    pub fn toy() -> Self {
        NetConfig {
            num_rdb: 3,
            layers_per_rdb: 3,
            growth: 8,
            base_channels: 16,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 4 {
            return Err(NetError::Config(format!("scale must be 4, got {}", self.scale)));
        }
        if self.in_channels != 9 {
            return Err(NetError::Config(format!("in_channels must be 9, got {}", self.in_channels)));
        }
        if self.head_out_channels != 3 {
            return Err(NetError::Config("each head emits 3 channels".into()));
        }
        if self.num_rdb == 0 || self.layers_per_rdb == 0 || self.growth == 0 || self.base_channels == 0 {
            return Err(NetError::Config("block counts and widths must be positive".into()));
        }
        Ok(())
    }

    /// Input channels seen by dense layer `j` of a block.
    pub fn dense_in(&self, j: usize) -> usize {
        self.base_channels + j * self.growth
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("net config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetConfig = toml::from_str(text).map_err(|e| NetError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| NetError::Io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }
}

/// Loss weights and window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_d: f64,
    pub w_n: f64,
    pub w_v: f64,
    pub w_kine: f64,
    pub window_n: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_d: 0.9,
            w_n: 0.03,
            w_v: 0.03,
            w_kine: 0.03,
            window_n: 3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.w_d, self.w_n, self.w_v, self.w_kine].iter().any(|w| !(*w >= 0.0)) {
            return Err(NetError::Config("loss weights must be non-negative".into()));
        }
        if self.window_n == 0 {
            return Err(NetError::Config("window_n must be >= 1".into()));
        }
        Ok(())
    }

    /// Table-style ablation variants: which terms are switched on.
    pub fn ablation(&self, name: &str) -> Result<Self> {
        let (n, v, k) = match name {
            "L_d" => (false, false, false),
            "L_d+n" => (true, false, false),
            "L_d+v" => (false, true, false),
            "L_d+n+v" => (true, true, false),
            "L_all" => (true, true, true),
            _ => return Err(NetError::Config(format!("unknown loss configuration '{name}'"))),
        };
        Ok(LossWeights {
            w_n: if n { self.w_n } else { 0.0 },
            w_v: if v { self.w_v } else { 0.0 },
            w_kine: if k { self.w_kine } else { 0.0 },
            ..self.clone()
        })
    }
}

pub const ABLATIONS: [&str; 5] = ["L_d", "L_d+n", "L_d+v", "L_d+n+v", "L_all"];
