//! Infrared/visible image fusion with a transformer-guided generator.
//!
//! The networks, losses and trainer are generic over the scalar type. Use
//! `f64` for gradient checks and `f32` for training; the aliases below name
//! both.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradsuite;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod trainer;

pub use tgfuse_autodiff as autodiff;

pub use config::{FusionConfig, RunConfig, TrainConfig, TransformerOrder};
pub use data::Pair;
pub use discriminator::{DiscriminatorSpec, PerceptualNet};
pub use error::{FuseError, Result};
pub use generator::{Generator, GeneratorOutput};
pub use image::Image;
pub use metrics::{evaluate_all, MetricReport};
pub use trainer::{TrainLog, Trainer};

pub type Generator32 = Generator<f32>;
pub type Generator64 = Generator<f64>;
pub type PerceptualNet32 = PerceptualNet<f32>;
pub type PerceptualNet64 = PerceptualNet<f64>;
pub type Trainer32 = Trainer<f32>;
pub type Trainer64 = Trainer<f64>;
