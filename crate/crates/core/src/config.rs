//! Pipeline configuration: TOML schema, defaults and range checks.
//!
//! Every key is optional. A minimal file looks like
//!
//! ```toml
//! scene_threshold = 0.3
//! anonymity_distance_threshold = 0.3
//!
//! [inpaint]
//! steps = 35
//! guidance = 12.0
//!
//! [retry]
//! steps = 5
//! ```
//!
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::{Control, ControlStrengths, InpaintParams, PromptPair};

/// Histogram resolution used by scene scoring. Not configurable so scores stay
/// comparable across runs.
pub const SCENE_HISTOGRAM_BINS: usize = 64;

pub const DEFAULT_SCENE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MERGE_TOLERANCE: f64 = 15.0;
pub const DEFAULT_LANDMARK_COVERAGE_MIN: f64 = 0.8;
pub const DEFAULT_ANONYMITY_THRESHOLD: f64 = 0.3;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.5;
pub const DEFAULT_STEPS: u32 = 35;
pub const DEFAULT_GUIDANCE: f64 = 12.0;
pub const DEFAULT_RETRY_STEPS: u32 = 5;
pub const DEFAULT_RETRY_GUIDANCE: f64 = 2.0;
pub const DEFAULT_RETRY_CONTROL: f64 = 0.15;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_SCHEDULER: &str = "dpmsolver++";
pub const DEFAULT_BACKEND_TIMEOUT_SECS: f64 = 120.0;
pub const DEFAULT_TRANSPORT_RETRIES: u32 = 2;

pub fn default_control_strengths() -> ControlStrengths {
    BTreeMap::from([(Control::Mask, 1.0), (Control::Lineart, 0.8), (Control::Pose, 0.8)])
}

/// Per-attempt parameter changes applied by the verification retry loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryDeltas {
    pub steps: u32,
    pub guidance: f64,
    pub control: f64,
}

impl Default for RetryDeltas {
    fn default() -> Self {
        Self {
            steps: DEFAULT_RETRY_STEPS,
            guidance: DEFAULT_RETRY_GUIDANCE,
            control: DEFAULT_RETRY_CONTROL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSettings {
    pub url: Option<String>,
    pub timeout_secs: f64,
    pub transport_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VideoSettings {
    /// Transcoder executable; falls back to `ANONPIPE_FFMPEG`, then `ffmpeg`.
    pub ffmpeg: Option<String>,
}

/// Fully defaulted, range-checked configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scene_threshold: f64,
    pub merge_tolerance: f64,
    pub landmark_coverage_min: f64,
    pub anonymity_distance_threshold: f64,
    pub cluster_distance_threshold: f64,
    /// Base parameters; the prompt pair is filled per scene.
    pub inpaint: InpaintParams,
    pub scheduler: String,
    pub retry: RetryDeltas,
    pub max_retries: u32,
    pub backend: BackendSettings,
    pub video: VideoSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        validate_config(RawConfig::default()).expect("defaults are valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmark_coverage_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anonymity_distance_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_distance_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub inpaint: RawInpaint,
    #[serde(default)]
    pub retry: RawRetry,
    #[serde(default)]
    pub backend: RawBackend,
    #[serde(default)]
    pub video: RawVideo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInpaint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<String>,
    #[serde(default)]
    pub control_strengths: RawControls,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawControls {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lineart: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRetry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBackend {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport_retries: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawVideo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ffmpeg: Option<String>,
}

impl RawConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_owned();
            match msg.strip_prefix("unknown field `").and_then(|rest| rest.split('`').next()) {
                Some(key) => ConfigError::UnknownKey(key.to_owned()),
                None => ConfigError::Parse(e.to_string()),
            }
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("raw config always serializes")
    }
}

/// Parse, default and range-check a TOML config document.
pub fn load_config_str(text: &str) -> Result<PipelineConfig, ConfigError> {
    validate_config(RawConfig::from_toml_str(text)?)
}

pub fn load_config_file(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    load_config_str(&text)
}

fn check_open_unit(field: &str, v: f64, lo: f64, hi: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > lo && v < hi {
        Ok(v)
    } else {
        Err(ConfigError::range(field, format!("{v} not in ({lo}, {hi})")))
    }
}

pub fn validate_config(raw: RawConfig) -> Result<PipelineConfig, ConfigError> {
    let scene_threshold =
        check_open_unit("scene_threshold", raw.scene_threshold.unwrap_or(DEFAULT_SCENE_THRESHOLD), 0.0, 1.0)?;

    let merge_tolerance = raw.merge_tolerance.unwrap_or(DEFAULT_MERGE_TOLERANCE);
    if !(merge_tolerance.is_finite() && merge_tolerance >= 0.0) {
        return Err(ConfigError::range("merge_tolerance", format!("{merge_tolerance} must be >= 0")));
    }

    let landmark_coverage_min = raw.landmark_coverage_min.unwrap_or(DEFAULT_LANDMARK_COVERAGE_MIN);
    if !(landmark_coverage_min > 0.0 && landmark_coverage_min <= 1.0) {
        return Err(ConfigError::range(
            "landmark_coverage_min",
            format!("{landmark_coverage_min} not in (0, 1]"),
        ));
    }

    let anonymity_distance_threshold = check_open_unit(
        "anonymity_distance_threshold",
        raw.anonymity_distance_threshold.unwrap_or(DEFAULT_ANONYMITY_THRESHOLD),
        0.0,
        2.0,
    )?;
    let cluster_distance_threshold = check_open_unit(
        "cluster_distance_threshold",
        raw.cluster_distance_threshold.unwrap_or(DEFAULT_CLUSTER_THRESHOLD),
        0.0,
        2.0,
    )?;

    let defaults = default_control_strengths();
    let rc = &raw.inpaint.control_strengths;
    let control_strengths: ControlStrengths = [
        (Control::Mask, rc.mask),
        (Control::Lineart, rc.lineart),
        (Control::Pose, rc.pose),
    ]
    .into_iter()
    .map(|(c, v)| (c, v.unwrap_or(defaults[&c])))
    .collect();

    let inpaint = InpaintParams {
        steps: raw.inpaint.steps.unwrap_or(DEFAULT_STEPS),
        guidance: raw.inpaint.guidance.unwrap_or(DEFAULT_GUIDANCE),
        control_strengths,
        seed: raw.inpaint.seed.unwrap_or(0),
        prompt_pair: PromptPair::default(),
    };
    if !(1..=InpaintParams::MAX_STEPS).contains(&inpaint.steps) {
        return Err(ConfigError::range("inpaint.steps", format!("{} not in [1, 150]", inpaint.steps)));
    }
    if !(inpaint.guidance.is_finite() && inpaint.guidance > 0.0) {
        return Err(ConfigError::range("inpaint.guidance", format!("{} must be > 0", inpaint.guidance)));
    }
    for (c, v) in &inpaint.control_strengths {
        if !(0.0..=1.0).contains(v) {
            let name = format!("{c:?}").to_lowercase();
            return Err(ConfigError::range(
                &format!("inpaint.control_strengths.{name}"),
                format!("{v} not in [0, 1]"),
            ));
        }
    }

    let scheduler = raw.inpaint.scheduler.unwrap_or_else(|| DEFAULT_SCHEDULER.to_owned());
    if scheduler.trim().is_empty() {
        return Err(ConfigError::range("inpaint.scheduler", "must not be empty"));
    }

    let retry = RetryDeltas {
        steps: raw.retry.steps.unwrap_or(DEFAULT_RETRY_STEPS),
        guidance: raw.retry.guidance.unwrap_or(DEFAULT_RETRY_GUIDANCE),
        control: raw.retry.control.unwrap_or(DEFAULT_RETRY_CONTROL),
    };
    if retry.steps == 0 {
        return Err(ConfigError::range("retry.steps", "must be >= 1"));
    }
    if !(retry.guidance.is_finite() && retry.guidance >= 0.0) {
        return Err(ConfigError::range("retry.guidance", format!("{} must be >= 0", retry.guidance)));
    }
    if !(retry.control.is_finite() && retry.control >= 0.0) {
        return Err(ConfigError::range("retry.control", format!("{} must be >= 0", retry.control)));
    }

    let max_retries = raw.max_retries.unwrap_or(DEFAULT_MAX_RETRIES);
    let last_steps = u64::from(inpaint.steps) + u64::from(max_retries) * u64::from(retry.steps);
    if last_steps > u64::from(InpaintParams::MAX_STEPS) {
        return Err(ConfigError::range(
            "max_retries",
            format!("final retry would use {last_steps} steps (limit 150)"),
        ));
    }

    let backend = BackendSettings {
        url: raw.backend.url,
        timeout_secs: raw.backend.timeout_secs.unwrap_or(DEFAULT_BACKEND_TIMEOUT_SECS),
        transport_retries: raw.backend.transport_retries.unwrap_or(DEFAULT_TRANSPORT_RETRIES),
    };
    if !(backend.timeout_secs.is_finite() && backend.timeout_secs > 0.0) {
        return Err(ConfigError::range("backend.timeout_secs", "must be > 0"));
    }

    Ok(PipelineConfig {
        scene_threshold,
        merge_tolerance,
        landmark_coverage_min,
        anonymity_distance_threshold,
        cluster_distance_threshold,
        inpaint,
        scheduler,
        retry,
        max_retries,
        backend,
        video: VideoSettings { ffmpeg: raw.video.ffmpeg },
    })
}

impl PipelineConfig {
    /// The fully populated raw form; validating it yields `self` again.
    pub fn to_raw(&self) -> RawConfig {
        let cs = &self.inpaint.control_strengths;
        RawConfig {
            scene_threshold: Some(self.scene_threshold),
            merge_tolerance: Some(self.merge_tolerance),
            landmark_coverage_min: Some(self.landmark_coverage_min),
            anonymity_distance_threshold: Some(self.anonymity_distance_threshold),
            cluster_distance_threshold: Some(self.cluster_distance_threshold),
            max_retries: Some(self.max_retries),
            inpaint: RawInpaint {
                steps: Some(self.inpaint.steps),
                guidance: Some(self.inpaint.guidance),
                seed: Some(self.inpaint.seed),
                scheduler: Some(self.scheduler.clone()),
                control_strengths: RawControls {
                    mask: cs.get(&Control::Mask).copied(),
                    lineart: cs.get(&Control::Lineart).copied(),
                    pose: cs.get(&Control::Pose).copied(),
                },
            },
            retry: RawRetry {
                steps: Some(self.retry.steps),
                guidance: Some(self.retry.guidance),
                control: Some(self.retry.control),
            },
            backend: RawBackend {
                url: self.backend.url.clone(),
                timeout_secs: Some(self.backend.timeout_secs),
                transport_retries: Some(self.backend.transport_retries),
            },
            video: RawVideo { ffmpeg: self.video.ffmpeg.clone() },
        }
    }
}
