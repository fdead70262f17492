//! Model and training configuration, with the desk-scale and paper-scale presets.

use serde::{Deserialize, Serialize};

use crate::docmodel::{DEFAULT_EPS, DEFAULT_ROW_HEIGHT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextBackbone {
    BagOfTokens,
    ExternalTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionBackbone {
    TinyConv,
    ExternalTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub text_backbone: TextBackbone,
    pub vision_backbone: VisionBackbone,
    /// ROI pooling grid (rows, cols).
    pub roi_pool: (usize, usize),
    pub vocab_size: usize,
    /// Side of the square raster fed to the tiny conv backbone.
    pub image_size: usize,
    /// Input pixels per feature-map cell; two 2×2 pooling stages give 4.
    pub feature_map_stride: usize,
    pub conv_channels: (usize, usize),
    /// Keep backbone weights (token table, conv stack) fixed during training.
    pub freeze_backbones: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub n_heads: usize,
    pub n_mg_layers: usize,
    pub n_self_layers: usize,
    pub n_cross_layers: usize,
    /// Buckets on each side of zero for the relative-offset bias tables.
    pub rel_buckets: usize,
    /// Offsets below this magnitude get linear buckets; beyond, logarithmic.
    pub rel_linear_max: f64,
    pub ffn_mult: usize,
    pub containment_eps: f64,
}

impl AttentionConfig {
    pub fn n_rel_buckets(&self) -> usize {
        2 * self.rel_buckets + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub row_height: f64,
}

impl ModelConfig {
    /// d=64, 4 heads, 2 cross layers.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig {
                d_model: 64,
                text_backbone: TextBackbone::BagOfTokens,
                vision_backbone: VisionBackbone::TinyConv,
                roi_pool: (2, 2),
                vocab_size: 2000,
                image_size: 64,
                feature_map_stride: 4,
                conv_channels: (8, 16),
                freeze_backbones: false,
            },
            attention: AttentionConfig {
                n_heads: 4,
                n_mg_layers: 2,
                n_self_layers: 2,
                n_cross_layers: 2,
                rel_buckets: 8,
                rel_linear_max: 0.05,
                ffn_mult: 4,
                containment_eps: DEFAULT_EPS,
            },
            row_height: DEFAULT_ROW_HEIGHT,
        }
    }

    /// Hidden size 768, 12 heads, 12 cross-modal layers, frozen backbones.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.encoder.d_model = 768;
        c.encoder.vocab_size = 30_000;
        c.encoder.image_size = 224;
        c.encoder.freeze_backbones = true;
        c.attention.n_heads = 12;
        c.attention.n_cross_layers = 12;
        c
    }

    pub fn d_model(&self) -> usize {
        self.encoder.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.encoder.d_model / self.attention.n_heads
    }

    pub fn feature_size(&self) -> usize {
        self.encoder.image_size / self.encoder.feature_map_stride
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let a = &self.attention;
        if e.d_model == 0 || a.n_heads == 0 || e.d_model % a.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                e.d_model, a.n_heads
            )));
        }
        if e.roi_pool.0 == 0 || e.roi_pool.1 == 0 {
            return Err(Error::Config("roi_pool grid must be non-empty".into()));
        }
        if e.vision_backbone == VisionBackbone::TinyConv {
            if e.feature_map_stride != 4 {
                return Err(Error::Config(
                    "feature_map_stride must be 4 for the two-stage conv backbone".into(),
                ));
            }
            if e.image_size == 0 || e.image_size % 4 != 0 {
                return Err(Error::Config("image_size must be a positive multiple of 4".into()));
            }
        }
        if e.vocab_size <= crate::vocab::N_SPECIAL {
            return Err(Error::Config("vocab_size too small".into()));
        }
        if a.rel_buckets < 2 || !(a.rel_linear_max > 0.0 && a.rel_linear_max < 1.0) {
            return Err(Error::Config("rel bucket settings out of range".into()));
        }
        if !(self.row_height > 0.0) {
            return Err(Error::Config("row_height must be positive".into()));
        }
        Ok(())
    }
}

/// Which pre-training objectives contribute to the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainTasks {
    pub mtm: bool,
    pub mvm: bool,
    pub mgm: bool,
}

impl PretrainTasks {
    pub const ALL: PretrainTasks = PretrainTasks {
        mtm: true,
        mvm: true,
        mgm: true,
    };
    pub const NONE: PretrainTasks = PretrainTasks {
        mtm: false,
        mvm: false,
        mgm: false,
    };

    pub fn any(&self) -> bool {
        self.mtm || self.mvm || self.mgm
    }

    /// Parses a comma list such as `mtm,mvm`; the empty string selects none.
    pub fn parse(s: &str) -> Result<Self> {
        let mut t = Self::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "mtm" => t.mtm = true,
                "mvm" => t.mvm = true,
                "mgm" => t.mgm = true,
                other => return Err(Error::Config(format!("unknown pre-training task `{other}`"))),
            }
        }
        Ok(t)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.mtm {
            parts.push("mtm");
        }
        if self.mvm {
            parts.push("mvm");
        }
        if self.mgm {
            parts.push("mgm");
        }
        parts.join(",")
    }
}

impl Default for PretrainTasks {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_ratio: f64,
    /// Allow the page row to be masked.
    pub mask_page: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub tasks: PretrainTasks,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            mask_ratio: 0.15,
            mask_page: false,
            lr: 3e-4,
            batch_size: 8,
            epochs: 5,
            warmup_frac: 0.2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            tasks: PretrainTasks::ALL,
        }
    }

    pub fn paper() -> Self {
        Self {
            lr: 1e-6,
            batch_size: 64,
            epochs: 5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio {} not in (0, 1)", self.mask_ratio)));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac {} not in [0, 1)",
                self.warmup_frac
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}
