use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anonpipe_core::identity::VerificationOutcome;
use anonpipe_core::{AttributeSet, FaceBox, PromptPair};
use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    AnonymityUnverified,
    NoFrontalFrame,
    NoFace,
}

impl Flag {
    /// Flags that make a run a partial success.
    pub fn is_partial(self) -> bool {
        matches!(self, Flag::AnonymityUnverified | Flag::NoFrontalFrame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub frame_count: u64,
    pub fps: String,
    pub width: u32,
    pub height: u32,
    pub has_audio: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment_id: usize,
    pub scene_id: usize,
    pub start_frame: u64,
    pub end_frame: u64,
    pub passthrough: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster_id: usize,
    pub scene_ids: BTreeSet<usize>,
    pub anon_seed: u64,
    pub attributes: Option<AttributeSet>,
    pub prompt: Option<PromptPair>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: usize,
    pub segment_ids: Vec<usize>,
    pub frame_count: u64,
    pub cluster_id: Option<usize>,
    pub frontal_frame: Option<u64>,
    pub face_box: Option<FaceBox>,
    pub attributes: Option<AttributeSet>,
    pub verification: Option<VerificationOutcome>,
    pub flags: BTreeSet<Flag>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

impl SceneReport {
    /// Anonymized and verified against the distance threshold.
    pub fn verified(&self) -> bool {
        self.verification.as_ref().is_some_and(|v| v.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub scenes: usize,
    pub face_scenes: usize,
    pub anonymized_scenes: usize,
    pub verified_scenes: usize,
    pub flagged_scenes: usize,
    pub clusters: usize,
    pub output_frame_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub protocol: String,
    pub run_seed: u64,
    pub input: InputSummary,
    pub segments: Vec<SegmentReport>,
    pub clusters: Vec<ClusterReport>,
    pub scenes: Vec<SceneReport>,
    pub totals: Totals,
    /// Wall-clock per stage; excluded from equality checks between runs.
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    /// A copy with wall-clock fields cleared, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        Self { timings_ms: BTreeMap::new(), ..self.clone() }
    }

    pub fn is_partial(&self) -> bool {
        self.scenes.iter().any(|s| s.flags.iter().any(|f| f.is_partial()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// `out.mp4` → `out.report.json`.
pub fn default_report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    out.with_file_name(format!("{stem}.report.json"))
}

/// Writes `text` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::Builder::new().prefix(".anonpipe-").tempfile_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_path_sits_next_to_output() {
        assert_eq!(default_report_path(Path::new("/a/b/out.mp4")), PathBuf::from("/a/b/out.report.json"));
        assert_eq!(default_report_path(Path::new("clip")), PathBuf::from("clip.report.json"));
    }

    #[test]
    fn flags_serialize_snake_case() {
        let v = serde_json::to_string(&[Flag::AnonymityUnverified, Flag::NoFrontalFrame, Flag::NoFace]).unwrap();
        assert_eq!(v, r#"["anonymity_unverified","no_frontal_frame","no_face"]"#);
        assert!(!Flag::NoFace.is_partial());
    }
}
