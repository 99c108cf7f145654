//! End-to-end anonymization: scenes, frontal faces, identity clusters,
//! verified inpainting, motion transfer and reassembly, plus the run report.

pub mod fixtures;
mod orchestrator;
pub mod prompt;
pub mod report;

pub use orchestrator::{anonymize_scene, detect_faces, run_pipeline, AnonymizedScene, PipelineError, RunOptions, RunOutcome};
pub use report::{Flag, RunReport, SceneReport};
