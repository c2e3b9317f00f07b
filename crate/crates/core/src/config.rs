//! Architecture, training and run configuration, with the plain-text
//! `key = value` format used by config files and checkpoint headers.

use std::fmt;
use std::str::FromStr;

use crate::discriminator::DiscriminatorSpec;
use crate::error::{FuseError, Result};

/// How the two transformers are composed into the fusion module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformerOrder {
    ChannelThenSpatial,
    SpatialThenChannel,
    SpatialOnly,
    ChannelOnly,
}

impl TransformerOrder {
    pub const ALL: [TransformerOrder; 4] = [
        TransformerOrder::SpatialOnly,
        TransformerOrder::ChannelOnly,
        TransformerOrder::SpatialThenChannel,
        TransformerOrder::ChannelThenSpatial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformerOrder::ChannelThenSpatial => "channel_then_spatial",
            TransformerOrder::SpatialThenChannel => "spatial_then_channel",
            TransformerOrder::SpatialOnly => "spatial_only",
            TransformerOrder::ChannelOnly => "channel_only",
        }
    }

    pub fn uses_spatial(self) -> bool {
        self != TransformerOrder::ChannelOnly
    }

    pub fn uses_channel(self) -> bool {
        self != TransformerOrder::SpatialOnly
    }
}

impl fmt::Display for TransformerOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformerOrder {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        TransformerOrder::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| FuseError::input(format!("unknown transformer order {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    /// Residual blocks in the stem; also the number of feature scales.
    pub cnn_layers: usize,
    pub channels: usize,
    pub spatial_patch: usize,
    /// Side of the pooling grid each channel is reduced to before projection.
    pub channel_patch: usize,
    pub spatial_embed: usize,
    pub channel_embed: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub use_position_embedding: bool,
    pub transformer_order: TransformerOrder,
    pub use_gan: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            cnn_layers: 4,
            channels: 64,
            spatial_patch: 4,
            channel_patch: 16,
            spatial_embed: 2048,
            channel_embed: 128,
            encoder_layers: 4,
            heads: 8,
            mlp_ratio: 2.0,
            use_position_embedding: false,
            transformer_order: TransformerOrder::ChannelThenSpatial,
            use_gan: true,
        }
    }
}

impl FusionConfig {
    /// Narrow widths that train in seconds on one CPU core. Patch sizes,
    /// depths and the fusion topology are left at their defaults.
    pub fn desk() -> Self {
        FusionConfig {
            channels: 16,
            spatial_embed: 64,
            channel_embed: 32,
            heads: 4,
            ..FusionConfig::default()
        }
    }

    pub fn mlp_hidden(&self, embed: usize) -> usize {
        ((embed as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Divisibility the stem needs: one halving per block after the first.
    pub fn stem_multiple(&self) -> usize {
        1 << (self.cnn_layers - 1)
    }

    /// Input extents must be multiples of this: the stem's halvings, times
    /// the patch side when the coarsest features are patchified.
    pub fn required_multiple(&self) -> usize {
        if self.transformer_order.uses_spatial() {
            self.stem_multiple() * self.spatial_patch
        } else {
            self.stem_multiple()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("spatial_patch", self.spatial_patch),
            ("channel_patch", self.channel_patch),
            ("spatial_embed", self.spatial_embed),
            ("channel_embed", self.channel_embed),
            ("encoder_layers", self.encoder_layers),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(FuseError::input(format!("{name} must be positive")));
        }
        if self.cnn_layers < 2 {
            return Err(FuseError::input("cnn_layers must be at least 2"));
        }
        if self.channels < 8 {
            return Err(FuseError::input("channels must be at least 8"));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return Err(FuseError::input("mlp_ratio must be positive"));
        }
        if self.spatial_embed % self.heads != 0 {
            return Err(FuseError::input(format!(
                "spatial_embed {} not divisible by heads {}",
                self.spatial_embed, self.heads
            )));
        }
        if self.channel_embed % self.heads != 0 {
            return Err(FuseError::input(format!(
                "channel_embed {} not divisible by heads {}",
                self.channel_embed, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda_ir: f64,
    pub lambda_vis: f64,
    /// Discriminator learning rate as a fraction of `lr`.
    pub disc_lr_scale: f64,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Update the discriminators by feature-distance ascent. When off they
    /// stay at their initial weights.
    pub fine_tune_discriminators: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 16,
            epochs: 20,
            seed: 0,
            lambda_ir: 0.01,
            lambda_vis: 0.01,
            disc_lr_scale: 0.1,
            checkpoint_every: 0,
            fine_tune_discriminators: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(FuseError::input("lr must be positive"));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(FuseError::input("batch and epochs must be at least 1"));
        }
        if !(self.lambda_ir >= 0.0 && self.lambda_vis >= 0.0) {
            return Err(FuseError::input("loss weights must be non-negative"));
        }
        if !(self.disc_lr_scale.is_finite() && self.disc_lr_scale >= 0.0) {
            return Err(FuseError::input("disc_lr_scale must be non-negative"));
        }
        Ok(())
    }
}

/// Everything a run needs, as read from a config file.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub disc: DiscriminatorSpec,
}

pub const RUN_KEYS: [&str; 23] = [
    "cnn_layers",
    "channels",
    "spatial_patch",
    "channel_patch",
    "spatial_embed",
    "channel_embed",
    "encoder_layers",
    "heads",
    "mlp_ratio",
    "use_position_embedding",
    "transformer_order",
    "use_gan",
    "lr",
    "batch",
    "epochs",
    "seed",
    "lambda_ir",
    "lambda_vis",
    "disc_lr_scale",
    "checkpoint_every",
    "fine_tune_discriminators",
    "ir_stage",
    "vis_stage",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| FuseError::input(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    /// Desk-scale architecture with batch 2.
    pub fn desk() -> Self {
        RunConfig {
            fusion: FusionConfig::desk(),
            train: TrainConfig {
                batch: 2,
                ..TrainConfig::default()
            },
            disc: DiscriminatorSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.train.validate()?;
        self.disc.validate()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (f, t) = (&mut self.fusion, &mut self.train);
        match key {
            "cnn_layers" => f.cnn_layers = parse(key, value)?,
            "channels" => f.channels = parse(key, value)?,
            "spatial_patch" => f.spatial_patch = parse(key, value)?,
            "channel_patch" => f.channel_patch = parse(key, value)?,
            "spatial_embed" => f.spatial_embed = parse(key, value)?,
            "channel_embed" => f.channel_embed = parse(key, value)?,
            "encoder_layers" => f.encoder_layers = parse(key, value)?,
            "heads" => f.heads = parse(key, value)?,
            "mlp_ratio" => f.mlp_ratio = parse(key, value)?,
            "use_position_embedding" => f.use_position_embedding = parse(key, value)?,
            "transformer_order" => f.transformer_order = value.parse()?,
            "use_gan" => f.use_gan = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lambda_ir" => t.lambda_ir = parse(key, value)?,
            "lambda_vis" => t.lambda_vis = parse(key, value)?,
            "disc_lr_scale" => t.disc_lr_scale = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "fine_tune_discriminators" => t.fine_tune_discriminators = parse(key, value)?,
            "ir_stage" => self.disc.ir_stage = parse(key, value)?,
            "vis_stage" => self.disc.vis_stage = parse(key, value)?,
            _ => return Err(FuseError::input(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (f, t) = (&self.fusion, &self.train);
        Some(match key {
            "cnn_layers" => f.cnn_layers.to_string(),
            "channels" => f.channels.to_string(),
            "spatial_patch" => f.spatial_patch.to_string(),
            "channel_patch" => f.channel_patch.to_string(),
            "spatial_embed" => f.spatial_embed.to_string(),
            "channel_embed" => f.channel_embed.to_string(),
            "encoder_layers" => f.encoder_layers.to_string(),
            "heads" => f.heads.to_string(),
            "mlp_ratio" => f.mlp_ratio.to_string(),
            "use_position_embedding" => f.use_position_embedding.to_string(),
            "transformer_order" => f.transformer_order.to_string(),
            "use_gan" => f.use_gan.to_string(),
            "lr" => t.lr.to_string(),
            "batch" => t.batch.to_string(),
            "epochs" => t.epochs.to_string(),
            "seed" => t.seed.to_string(),
            "lambda_ir" => t.lambda_ir.to_string(),
            "lambda_vis" => t.lambda_vis.to_string(),
            "disc_lr_scale" => t.disc_lr_scale.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "fine_tune_discriminators" => t.fine_tune_discriminators.to_string(),
            "ir_stage" => self.disc.ir_stage.to_string(),
            "vis_stage" => self.disc.vis_stage.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are rejected.
    pub fn parse_over(mut self, text: &str) -> Result<Self> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FuseError::input(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| FuseError::input(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        RUN_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

impl FromStr for RunConfig {
    type Err = FuseError;

    fn from_str(s: &str) -> Result<Self> {
        RunConfig::default().parse_over(s)
    }
}
