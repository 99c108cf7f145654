//! Core of the anonpipe face-video anonymizer: the shared data model and
//! configuration, shot detection, head pose estimation, identity clustering
//! with anonymity verification, and the evaluation metrics.
//!
//! Inner loops over frames, poses and probes run through [`exec::Exec`],
//! which uses rayon when the `parallel` feature is enabled.

pub mod config;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod identity;
pub mod metrics;
pub mod model;
pub mod scene;

pub use config::{load_config_file, load_config_str, validate_config, PipelineConfig, RawConfig, RetryDeltas};
pub use error::{ConfigError, DimensionError, MetricError, NoFrontalFrameError, PoseSolveError, RetryExhaustedError};
pub use exec::Exec;
pub use model::{
    cosine_distance, AttributeConfidence, AttributeSet, Control, ControlStrengths, Embedding, FaceBox, FrameRate,
    FrameRef, Gender, InpaintParams, PromptPair, Scene, Timestamp,
};
