//! Video decode, probe and reassembly through an external ffmpeg executable.
//!
//! Frames travel as raw RGB24 over pipes; the audio stream of the source is
//! copied into the output without re-encoding. Every invocation is logged
//! verbatim under the `anonpipe::ffmpeg` target.

mod error;
pub mod fixtures;
mod probe;
mod transcoder;

pub use error::{MediaError, ReassemblyError, VideoError};
pub use probe::MediaInfo;
pub use transcoder::{check_outputs, SceneOutput, Transcoder, FFMPEG_ENV};
