//! Change detection on multi-date satellite imagery with a recurrent
//! fully-convolutional network.
//!
//! The pipeline runs scene storage ([`raster`]) and synthetic scene generation
//! ([`synth`]) through patch sampling ([`sampler`]) and the temporal U-Net
//! ([`net`]), then training with k-fold ensembles ([`train`]) and tiled
//! whole-scene inference and scoring ([`infer`]).

pub mod error;
pub mod experiment;
pub mod infer;
pub mod net;
pub mod raster;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use infer::{MetricsReport, ProbabilityMap, TileOptions};
pub use net::{Mode, ModelParams, NetConfig, Variant};
pub use raster::{BandRaster, BandStats, ChangeMask, Scene, SceneManifest};
pub use sampler::{ClassWeights, Patch, PatchSet, SamplerConfig};
pub use synth::{EventLog, SynthParams};
pub use tensor::{Scalar, Tensor};
pub use train::{Checkpoint, FoldPlan, TrainConfig};
