//! Pipeline configuration: network sizes, detection settings, optimizer and
//! the ablation flags. Stored as TOML; missing keys take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::AdamConfig;
use crate::error::{Error, Result};
use crate::io::{read_text, write_bytes};
use crate::synth::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    None,
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

/// Which volume feeds the detection branch: the refined cost volume or the
/// one-channel aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputVolume {
    #[serde(rename = "costV")]
    CostV,
    #[serde(rename = "costA")]
    CostA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub rpn_on: bool,
    pub header_on: bool,
    pub deep_sample_on: bool,
    pub selective_on: bool,
    pub fusion: Fusion,
    pub input_volume: InputVolume,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags::method(5).expect("method 5 exists")
    }
}

impl AblationFlags {
    pub const METHODS: std::ops::RangeInclusive<u8> = 1..=9;

    /// Named configurations 1-9. Method 9 (cost volume with occupancy
    /// fusion) is the same network as method 5.
    pub fn method(n: u8) -> Result<Self> {
        let full = AblationFlags {
            rpn_on: true,
            header_on: true,
            deep_sample_on: true,
            selective_on: true,
            fusion: Fusion::ThreeD,
            input_volume: InputVolume::CostV,
        };
        let flags = match n {
            1 => AblationFlags { rpn_on: false, header_on: false, deep_sample_on: false, selective_on: false, fusion: Fusion::None, ..full },
            2 => AblationFlags { header_on: false, deep_sample_on: false, selective_on: false, fusion: Fusion::None, ..full },
            3 => AblationFlags { deep_sample_on: false, selective_on: false, ..full },
            4 => AblationFlags { selective_on: false, ..full },
            5 | 9 => full,
            6 => AblationFlags { fusion: Fusion::None, ..full },
            7 => AblationFlags { fusion: Fusion::None, input_volume: InputVolume::CostA, ..full },
            8 => AblationFlags { fusion: Fusion::TwoD, ..full },
            _ => return Err(Error::Invalid(format!("method {n} is not one of 1-9"))),
        };
        Ok(flags)
    }

    /// The lowest-numbered method with these flags, if any.
    pub fn method_number(&self) -> Option<u8> {
        Self::METHODS.into_iter().find(|&n| Self::method(n).is_ok_and(|f| f == *self))
    }

    pub fn validate(&self) -> Result<()> {
        if self.header_on && !self.rpn_on {
            return Err(Error::Invalid("the header needs the proposal network".into()));
        }
        if self.selective_on && !self.deep_sample_on {
            return Err(Error::Invalid("selective sampling builds on deep sampling".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub d_max: usize,
    pub feature_channels: usize,
    pub feature_layers: usize,
    pub refine_channels: usize,
    pub refine_layers: usize,
    pub agg_kernel: usize,
    pub rpn_channels: usize,
    pub header_channels: usize,
    pub roi_grid: usize,
    pub selective_margin: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            d_max: 48,
            feature_channels: 8,
            feature_layers: 3,
            refine_channels: 8,
            refine_layers: 2,
            agg_kernel: 3,
            rpn_channels: 16,
            header_channels: 16,
            roi_grid: 16,
            selective_margin: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub stride: usize,
    /// Depths (m) at which the mean vehicle is projected to get fixed anchor extents.
    pub depths: Vec<f64>,
    /// Depth-sized vehicle anchors per cell, spread along `d`.
    pub d_positions: usize,
    /// Mean vehicle size `(w, h, l)` in meters; also the header's size prior.
    pub vehicle_size: [f64; 3],
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig { stride: 8, depths: Vec::new(), d_positions: 8, vehicle_size: [1.7, 1.5, 4.0], pos_iou: 0.5, neg_iou: 0.35 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    /// RoIs per training step fed to the header.
    pub train_rois: usize,
    /// Relative jitter applied to ground-truth RoIs during training.
    pub jitter: f64,
    /// Volume IoU for a proposal to count as matched during training.
    pub match_iou: f64,
    pub pre_nms: usize,
    pub nms_iou: f64,
    /// RoIs kept after the proposal stage at inference.
    pub keep: usize,
    /// BEV IoU for suppressing final detections.
    pub bev_nms_iou: f64,
    pub min_confidence: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig { train_rois: 8, jitter: 0.1, match_iou: 0.5, pre_nms: 300, nms_iou: 0.6, keep: 32, bev_nms_iou: 0.1, min_confidence: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rpn: f64,
    pub header: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rpn: 1.0, header: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `lr_decay` at each of these steps.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    /// Training crop `(height, width)`; multiples of the anchor stride.
    pub crop: [usize; 2],
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1200,
            learning_rate: 1e-3,
            lr_milestones: vec![800, 1000],
            lr_decay: 0.5,
            adam: AdamConfig::default(),
            crop: [48, 96],
            log_every: 10,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub anchors: AnchorConfig,
    pub rois: RoiConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub flags: AblationFlags,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            network: NetworkConfig::default(),
            anchors: AnchorConfig::default(),
            rois: RoiConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            flags: AblationFlags::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn for_method(n: u8) -> Result<Self> {
        Ok(PipelineConfig { flags: AblationFlags::method(n)?, ..PipelineConfig::default() })
    }

    pub fn validate(&self) -> Result<()> {
        self.flags.validate()?;
        let n = &self.network;
        if n.d_max < 2 || n.feature_channels == 0 || n.refine_channels == 0 || n.roi_grid == 0 {
            return Err(Error::Invalid("network sizes must be positive (d_max >= 2)".into()));
        }
        if !n.d_max.is_multiple_of(self.anchors.stride) || self.train.crop.iter().any(|&c| c == 0 || c % self.anchors.stride != 0) {
            return Err(Error::Invalid(format!("d_max and crop must be multiples of the anchor stride {}", self.anchors.stride)));
        }
        if self.anchors.depths.is_empty() && self.anchors.d_positions == 0 {
            return Err(Error::Invalid("no anchors: depth list is empty and d_positions is 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Invalid(format!("config serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|m| Error::format(path, m))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_toml()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_is_lossless() {
        let mut cfg = PipelineConfig::for_method(8).unwrap();
        cfg.network.selective_margin = 2.75;
        cfg.train.learning_rate = 3.3e-4;
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_keys_take_defaults_and_unknown_keys_fail() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[network]\nroi_grid = 8\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.network.roi_grid, 8);
        assert_eq!(cfg.network.d_max, 48);
        assert!(PipelineConfig::from_toml("sed = 3\n").is_err());
    }

    #[test]
    fn method_five_is_the_full_model() {
        let f = AblationFlags::method(5).unwrap();
        assert!(f.rpn_on && f.header_on && f.deep_sample_on && f.selective_on);
        assert_eq!(f.fusion, Fusion::ThreeD);
        assert_eq!(f.input_volume, InputVolume::CostV);
    }

    #[test]
    fn methods_are_distinct_except_nine() {
        for a in 1..=8u8 {
            assert_eq!(AblationFlags::method(a).unwrap().method_number(), Some(a));
            for b in a + 1..=8 {
                assert_ne!(AblationFlags::method(a).unwrap(), AblationFlags::method(b).unwrap());
            }
        }
        assert_eq!(AblationFlags::method(9).unwrap(), AblationFlags::method(5).unwrap());
        assert!(AblationFlags::method(10).is_err());
        assert!(AblationFlags::method(1).unwrap().validate().is_ok());
    }
}
