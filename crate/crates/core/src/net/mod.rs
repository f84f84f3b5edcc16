//! Temporal U-Net: a shared per-date encoder, a convolutional LSTM at every
//! encoder level, and a decoder whose skip connections carry each level's
//! final LSTM hidden state. `UnetPlain` is the early-fusion baseline.

pub mod archive;
pub mod convlstm;
pub mod graph;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use convlstm::{convlstm_step, ConvLstmGates, ConvLstmState, GATES};
pub use model::{forward, forward_batch, gradients, trace_shapes, Batch, Gradients, LossSpec, ShapeTrace};
pub use params::{build, ModelParams, BN_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UnetLstm,
    UnetPlain,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::UnetLstm => "unet_lstm",
            Variant::UnetPlain => "unet_plain",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch-norm uses batch moments.
    Train,
    /// Batch-norm uses frozen running statistics.
    Eval,
}

fn default_base_depth() -> usize {
    16
}
fn default_levels() -> usize {
    5
}
fn default_num_classes() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    #[serde(default = "default_base_depth")]
    pub base_depth: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    pub variant: Variant,
    /// Required by `unet_plain`, whose first layer is sized for `T * C` inputs.
    /// Ignored by `unet_lstm`, which accepts any number of dates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_dates: Option<usize>,
}

impl NetConfig {
    pub fn new(variant: Variant, in_channels: usize) -> Self {
        Self {
            in_channels,
            base_depth: default_base_depth(),
            levels: default_levels(),
            num_classes: default_num_classes(),
            variant,
            num_dates: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("net config: {m}")));
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1");
        }
        if self.base_depth == 0 {
            return bad("base_depth must be >= 1");
        }
        if self.levels < 2 {
            return bad("levels must be >= 2");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if self.variant == Variant::UnetPlain && self.num_dates.is_none_or(|t| t < 2) {
            return bad("unet_plain needs num_dates >= 2");
        }
        Ok(())
    }

    /// Output depth of encoder level `level` (1-based): `base_depth * 2^(level-1)`.
    pub fn depth(&self, level: usize) -> usize {
        self.base_depth << (level - 1)
    }

    pub fn encoder_depths(&self) -> Vec<usize> {
        (1..=self.levels).map(|l| self.depth(l)).collect()
    }

    /// Spatial extents must be multiples of this (one 2x2 pool per level after the first).
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Channels seen by the first convolution.
    pub fn input_depth(&self) -> usize {
        match self.variant {
            Variant::UnetLstm => self.in_channels,
            Variant::UnetPlain => self.in_channels * self.num_dates.unwrap_or(0),
        }
    }
}
