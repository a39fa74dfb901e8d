//! Prompt-conditioned dissection-zone segmentation.
//!
//! Visual prompts (points, scribbles, boxes) are painted onto endoscopic
//! frames; a ViT encoder with low-rank adapters and an All-MLP decoder
//! predict a two-class mask (no-go zone / dissection zone).

pub mod config;
pub mod contour;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod service;
pub mod synthetic;
pub mod train;

pub use config::{ExperimentConfig, Preset};
pub use data::{ClassMask, DatasetManifest, ImageTensor, SampleRecord};
pub use error::{Error, Result};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use model::{ModelConfig, Segmenter};
pub use prompt::{PromptKind, VisualPrompt};
