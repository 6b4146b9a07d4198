//! Run configuration: model, training, augmentation and data settings in one
//! TOML document. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mamba::scan::ScanStrategy;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub data: DataConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Std of the normal init used for projections and positional embeddings.
    pub init_std: f64,
    pub layernorm_eps: f64,
    pub vit: ViTConfig,
    pub mamba: MambaConfig,
    pub fusion: FusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            channels: 3,
            init_std: 0.02,
            layernorm_eps: 1e-6,
            vit: ViTConfig::default(),
            mamba: MambaConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            depth: 4,
            embed_dim: 128,
            num_heads: 4,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTokenPosition {
    #[default]
    First,
    Last,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    #[default]
    Sequential,
    Chunked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MambaConfig {
    pub patch_size: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub d_state: usize,
    pub conv_kernel: usize,
    pub expand: usize,
    pub bidirectional: bool,
    pub class_token: ClassTokenPosition,
    pub scan: ScanMode,
    pub scan_chunk: usize,
    /// Range of the initial step sizes softplus(dt_bias).
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for MambaConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            depth: 4,
            embed_dim: 192,
            d_state: 16,
            conv_kernel: 4,
            expand: 2,
            bidirectional: true,
            class_token: ClassTokenPosition::First,
            scan: ScanMode::Sequential,
            scan_chunk: 64,
            dt_min: 1e-3,
            dt_max: 1e-1,
        }
    }
}

impl MambaConfig {
    pub fn inner_dim(&self) -> usize {
        self.expand * self.embed_dim
    }

    pub fn scan_strategy(&self) -> ScanStrategy {
        match self.scan {
            ScanMode::Sequential => ScanStrategy::Sequential,
            ScanMode::Chunked => ScanStrategy::Chunked(self.scan_chunk),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub init_weight: [f64; 2],
    pub init_bias: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            init_weight: [0.5, 0.5],
            init_bias: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    /// `VMB_PRECISION=f64` overrides the configured precision.
    pub fn resolve(configured: Precision) -> Precision {
        match std::env::var("VMB_PRECISION").ok().as_deref() {
            Some("f64") => Precision::F64,
            Some("f32") => Precision::F32,
            _ => configured,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub precision: Precision,
    pub cosine_schedule: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Stop after this many optimiser steps; 0 means run every epoch in full.
    pub max_steps: usize,
    /// Epoch checkpoints retained on disk.
    pub keep_last: usize,
    /// Data-loading worker threads.
    pub workers: usize,
    /// Start both regression-head biases at the mean training score.
    pub center_heads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-5,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
            cosine_schedule: false,
            grad_clip: 0.0,
            max_steps: 0,
            keep_last: 3,
            workers: 1,
            center_heads: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flip_prob: f64,
    pub rotation_degrees: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_prob: 0.5,
            rotation_degrees: 10.0,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            flip_prob: 0.0,
            rotation_degrees: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub folds: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ModelConfig {
    /// The smallest end-to-end model: 8×8 input, 4×4 patches, one block per
    /// branch with 8-dim tokens.
    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            channels: 3,
            init_std: 0.02,
            layernorm_eps: 1e-6,
            vit: ViTConfig {
                patch_size: 4,
                depth: 1,
                embed_dim: 8,
                num_heads: 1,
                mlp_ratio: 2,
                dropout: 0.0,
            },
            mamba: MambaConfig {
                patch_size: 4,
                depth: 1,
                embed_dim: 8,
                d_state: 4,
                conv_kernel: 2,
                expand: 2,
                ..MambaConfig::default()
            },
            fusion: FusionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.image_size == 0 {
            return Err(invalid("image_size and channels must be positive"));
        }
        for (branch, p) in [("vit", self.vit.patch_size), ("mamba", self.mamba.patch_size)] {
            if p == 0 || !self.image_size.is_multiple_of(p) {
                return Err(invalid(format!(
                    "{branch}.patch_size {p} does not divide image_size {}",
                    self.image_size
                )));
            }
        }
        let v = &self.vit;
        if v.depth == 0 {
            return Err(invalid("vit.depth must be at least 1"));
        }
        if v.num_heads == 0 || !v.embed_dim.is_multiple_of(v.num_heads) {
            return Err(invalid(format!(
                "vit.embed_dim {} is not divisible by num_heads {}",
                v.embed_dim, v.num_heads
            )));
        }
        if v.mlp_ratio == 0 || !(0.0..1.0).contains(&v.dropout) {
            return Err(invalid("vit.mlp_ratio must be positive and dropout in [0, 1)"));
        }
        let m = &self.mamba;
        if m.depth == 0 || m.d_state == 0 || m.embed_dim == 0 {
            return Err(invalid("mamba.depth, embed_dim and d_state must be at least 1"));
        }
        if m.expand == 0 || m.conv_kernel == 0 || m.scan_chunk == 0 {
            return Err(invalid("mamba.expand, conv_kernel and scan_chunk must be positive"));
        }
        if !(m.dt_min > 0.0 && m.dt_min <= m.dt_max) {
            return Err(invalid("mamba.dt_min must satisfy 0 < dt_min <= dt_max"));
        }
        if !(self.layernorm_eps > 0.0 && self.init_std >= 0.0) {
            return Err(invalid("layernorm_eps must be positive and init_std non-negative"));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(invalid("train.learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("train.batch_size and train.epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("train.beta1 and train.beta2 must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid("weight_decay and grad_clip must be >= 0, eps > 0"));
        }
        Ok(())
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(invalid("augment.flip_prob must lie in [0, 1]"));
        }
        if self.rotation_degrees < 0.0 {
            return Err(invalid("augment.rotation_degrees must be >= 0"));
        }
        for (k, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(format!("augment.{k} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.data.folds == 0 {
            return Err(invalid("data.folds must be at least 1"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Short digest of the serialised config plus an optional tag.
    pub fn hash(&self, tag: &str) -> String {
        let mut text = self.to_toml();
        text.push_str(tag);
        crate::seed::short_hash(text.as_bytes())
    }
}
