//! Evaluation manifests: one JSON record per image or video frame.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    attribute_stats, expression_retention, pose_gaze_mae, reid_rank1_with, temporal_consistency, AnglePair,
    Counts, EvalReport, LabeledEmbedding, QualityColumns, TemporalColumns,
};
use crate::error::MetricError;
use crate::exec::{compensated_mean, Exec};
use crate::model::{AttributeSet, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub pitch: f64,
    pub yaw: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Pairs an anonymized record with its original.
    pub item_id: String,
    pub identity_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u64>,
    /// Identity embedding used for re-identification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    /// Appearance embedding used for temporal consistency; falls back to
    /// `embedding`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_embedding: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Angles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<Angles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetics: Option<f64>,
    #[serde(default = "yes")]
    pub face_detected: bool,
    #[serde(default = "yes")]
    pub anonymized: bool,
}

impl ManifestRecord {
    pub fn new(item_id: impl Into<String>, identity_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            identity_id: identity_id.into(),
            path: None,
            video_id: None,
            frame_index: None,
            embedding: None,
            frame_embedding: None,
            pose: None,
            gaze: None,
            expression: None,
            attributes: None,
            quality: None,
            aesthetics: None,
            face_detected: true,
            anonymized: true,
        }
    }

    fn expression_label(&self) -> Option<&str> {
        self.expression.as_deref().or_else(|| self.attributes.as_ref()?.emotion.as_deref())
    }

    /// Parses JSON Lines; blank lines are skipped.
    pub fn parse_jsonl(text: &str) -> Result<Vec<Self>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", n + 1)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Reid,
    Pose,
    Expr,
    Temporal,
    Attrs,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] =
        [MetricKind::Reid, MetricKind::Pose, MetricKind::Expr, MetricKind::Temporal, MetricKind::Attrs];
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "reid" => Ok(MetricKind::Reid),
            "pose" => Ok(MetricKind::Pose),
            "expr" => Ok(MetricKind::Expr),
            "temporal" => Ok(MetricKind::Temporal),
            "attrs" => Ok(MetricKind::Attrs),
            other => Err(format!("unknown metric `{other}` (expected reid, pose, expr, temporal, attrs)")),
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| compensated_mean(&v))
}

fn video_consistency(records: &[&ManifestRecord]) -> Result<Option<f64>, MetricError> {
    let mut videos: BTreeMap<&str, Vec<(u64, &Embedding)>> = BTreeMap::new();
    for r in records {
        let (Some(video), Some(frame)) = (r.video_id.as_deref(), r.frame_index) else { continue };
        if let Some(e) = r.frame_embedding.as_ref().or(r.embedding.as_ref()) {
            videos.entry(video).or_default().push((frame, e));
        }
    }
    let mut per_video = Vec::new();
    for frames in videos.values_mut() {
        frames.sort_by_key(|(i, _)| *i);
        if frames.len() >= 2 {
            let seq: Vec<Embedding> = frames.iter().map(|(_, e)| (*e).clone()).collect();
            per_video.push(temporal_consistency(&seq)?);
        }
    }
    Ok((!per_video.is_empty()).then(|| compensated_mean(&per_video)))
}

/// Computes the requested metrics from an original and an anonymized
/// manifest, pairing records by `item_id`.
pub fn evaluate_manifests(
    orig: &[ManifestRecord],
    anon: &[ManifestRecord],
    metrics: &[MetricKind],
    exec: Exec,
) -> Result<EvalReport, MetricError> {
    if orig.is_empty() {
        return Err(MetricError::Empty("original manifest"));
    }
    let anon_by_item: HashMap<&str, &ManifestRecord> = anon.iter().map(|r| (r.item_id.as_str(), r)).collect();
    let pairs: Vec<(&ManifestRecord, &ManifestRecord)> = orig
        .iter()
        .filter_map(|o| anon_by_item.get(o.item_id.as_str()).map(|a| (o, *a)))
        .filter(|(o, a)| o.face_detected && a.face_detected && a.anonymized)
        .collect();

    let mut report = EvalReport::default();

    let detection_failures = orig
        .iter()
        .filter(|o| !o.face_detected || anon_by_item.get(o.item_id.as_str()).is_some_and(|a| !a.face_detected))
        .count();
    report.counts = Counts {
        total: orig.len(),
        anonymized: pairs.len(),
        anonymization_failures: orig.len().saturating_sub(pairs.len() + detection_failures),
        detection_failures,
    };

    for metric in metrics {
        match metric {
            MetricKind::Reid => {
                let labeled = |r: &ManifestRecord| {
                    r.embedding.clone().map(|embedding| LabeledEmbedding {
                        identity_id: r.identity_id.clone(),
                        item_id: r.item_id.clone(),
                        embedding,
                    })
                };
                let gallery: Vec<_> = orig.iter().filter_map(labeled).collect();
                let probes: Vec<_> = pairs.iter().filter_map(|(_, a)| labeled(a)).collect();
                report.re_at_1 = Some(reid_rank1_with(&gallery, &probes, exec)?);
            }
            MetricKind::Pose => {
                let angle_pairs: Vec<AnglePair> = pairs
                    .iter()
                    .filter_map(|(o, a)| {
                        Some(AnglePair { orig_pose: o.pose?, anon_pose: a.pose?, orig_gaze: o.gaze, anon_gaze: a.gaze })
                    })
                    .collect();
                let (pose, gaze) = pose_gaze_mae(&angle_pairs)?;
                report.pose_mae = Some(pose);
                report.gaze_mae = gaze;
            }
            MetricKind::Expr => {
                let labels: Vec<(&str, &str)> =
                    pairs.iter().filter_map(|(o, a)| Some((o.expression_label()?, a.expression_label()?))).collect();
                report.expression_retention = Some(expression_retention(&labels)?);
            }
            MetricKind::Temporal => {
                let o: Vec<&ManifestRecord> = orig.iter().collect();
                let a: Vec<&ManifestRecord> = anon.iter().collect();
                match (video_consistency(&o)?, video_consistency(&a)?) {
                    (Some(original), Some(anonymized)) => {
                        report.temporal_consistency = Some(TemporalColumns { original, anonymized })
                    }
                    _ => return Err(MetricError::Empty("video frames with embeddings")),
                }
            }
            MetricKind::Attrs => {
                let attr_pairs: Vec<(AttributeSet, AttributeSet)> = pairs
                    .iter()
                    .filter_map(|(o, a)| Some((o.attributes.clone()?, a.attributes.clone()?)))
                    .collect();
                report.attributes = Some(attribute_stats(&attr_pairs)?);
            }
        }
    }

    let quality = QualityColumns {
        original_quality: mean_of(orig.iter().filter_map(|r| r.quality)),
        original_aesthetics: mean_of(orig.iter().filter_map(|r| r.aesthetics)),
        anonymized_quality: mean_of(anon.iter().filter_map(|r| r.quality)),
        anonymized_aesthetics: mean_of(anon.iter().filter_map(|r| r.aesthetics)),
    };
    if quality != QualityColumns::default() {
        report.quality = Some(quality);
    }
    Ok(report)
}
