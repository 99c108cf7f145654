use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
#[error("{}: {message}{}", path.display(), frame_index.map(|i| format!(" (at frame {i})")).unwrap_or_default())]
pub struct MediaError {
    pub path: PathBuf,
    pub message: String,
    /// Index of the first frame that could not be decoded, for mid-stream
    /// failures.
    pub frame_index: Option<u64>,
}

impl MediaError {
    pub(crate) fn new(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into(), frame_index: None }
    }

    pub(crate) fn at_frame(mut self, frame_index: u64) -> Self {
        self.frame_index = Some(frame_index);
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReassemblyError {
    #[error("frames {start}..={end} are not covered by any scene output")]
    Gap { start: u64, end: u64 },
    #[error("frame {0} is covered by more than one scene output")]
    Overlap(u64),
    #[error("scene output {segment_id} is not a contiguous frame run")]
    NonContiguous { segment_id: usize },
    #[error("scene output {segment_id} has frames of {got_w}x{got_h}, source is {want_w}x{want_h}")]
    Dimensions { segment_id: usize, got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("scene outputs reach frame {0} but the source has only {1} frames")]
    OutOfRange(u64, u64),
}

#[derive(Debug, Error)]
pub enum VideoError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Reassembly(#[from] ReassemblyError),
}
