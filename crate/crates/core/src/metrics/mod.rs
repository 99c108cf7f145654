//! Evaluation metrics for anonymized output.
//!
//! All reductions sum in input order with compensation, so parallel and
//! sequential evaluation agree bitwise.

mod manifest;
mod report;

pub use manifest::{evaluate_manifests, ManifestRecord, MetricKind, Angles};
pub use report::{AttributeTable, Counts, EvalReport, QualityColumns, TemporalColumns, ANGLE_UNITS};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::exec::{compensated_mean, compensated_sum, Exec};
use crate::model::{cosine_distance, AttributeSet, Embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub identity_id: String,
    pub item_id: String,
    pub embedding: Embedding,
}

/// Index of the gallery item most similar to `probe`; exact ties go to the
/// lowest `item_id`.
pub fn nearest_gallery_item(gallery: &[LabeledEmbedding], probe: &Embedding) -> Result<usize, MetricError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gallery.iter().enumerate() {
        let sim = g.embedding.dot(probe)?;
        best = match best {
            None => Some((i, sim)),
            Some((j, s)) => match sim.total_cmp(&s) {
                Ordering::Greater => Some((i, sim)),
                Ordering::Equal if g.item_id < gallery[j].item_id => Some((i, sim)),
                _ => Some((j, s)),
            },
        };
    }
    best.map(|(i, _)| i).ok_or(MetricError::Empty("gallery"))
}

/// Rank-1 re-identification rate: fraction of probes whose nearest gallery
/// item (cosine similarity) carries the probe's identity.
pub fn reid_rank1(gallery: &[LabeledEmbedding], probes: &[LabeledEmbedding]) -> Result<f64, MetricError> {
    reid_rank1_with(gallery, probes, Exec::default())
}

pub fn reid_rank1_with(
    gallery: &[LabeledEmbedding],
    probes: &[LabeledEmbedding],
    exec: Exec,
) -> Result<f64, MetricError> {
    if gallery.is_empty() {
        return Err(MetricError::Empty("gallery"));
    }
    if probes.is_empty() {
        return Err(MetricError::Empty("probes"));
    }
    let hits = exec.map(probes, |p| {
        nearest_gallery_item(gallery, &p.embedding).map(|i| gallery[i].identity_id == p.identity_id)
    });
    let mut count = 0usize;
    for h in hits {
        count += usize::from(h?);
    }
    Ok(count as f64 / probes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    pub orig_pose: Angles,
    pub anon_pose: Angles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orig_gaze: Option<Angles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anon_gaze: Option<Angles>,
}

/// Mean over pairs of `(|Δpitch| + |Δyaw|) / 2`.
pub fn angle_mae(pairs: &[(Angles, Angles)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("angle pairs"));
    }
    let errs: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| ((a.pitch - b.pitch).abs() + (a.yaw - b.yaw).abs()) / 2.0)
        .collect();
    if errs.iter().any(|e| !e.is_finite()) {
        return Err(MetricError::NonFinite("angles"));
    }
    Ok(compensated_mean(&errs))
}

/// `(pose_mae, gaze_mae)`; gaze is `None` when no pair carries gaze angles.
pub fn pose_gaze_mae(pairs: &[AnglePair]) -> Result<(f64, Option<f64>), MetricError> {
    let pose: Vec<_> = pairs.iter().map(|p| (p.orig_pose, p.anon_pose)).collect();
    let pose_mae = angle_mae(&pose)?;
    let gaze: Vec<_> = pairs.iter().filter_map(|p| Some((p.orig_gaze?, p.anon_gaze?))).collect();
    let gaze_mae = if gaze.is_empty() { None } else { Some(angle_mae(&gaze)?) };
    Ok((pose_mae, gaze_mae))
}

fn labels_match(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

/// Fraction of pairs whose expression label survived anonymization
/// (case-insensitive).
pub fn expression_retention<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("expression pairs"));
    }
    let kept = pairs.iter().filter(|(a, b)| labels_match(a.as_ref(), b.as_ref())).count();
    Ok(kept as f64 / pairs.len() as f64)
}

/// Mean cosine distance between consecutive frame embeddings.
pub fn temporal_consistency(frames: &[Embedding]) -> Result<f64, MetricError> {
    if frames.len() < 2 {
        return Err(MetricError::TooFew { metric: "temporal_consistency", needed: 2, got: frames.len() });
    }
    let dists = frames
        .windows(2)
        .map(|w| cosine_distance(&w[0], &w[1]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(compensated_mean(&dists))
}

/// Attribute preservation: label-match percentages and the mean / population
/// standard deviation of the absolute age difference.
pub fn attribute_stats(pairs: &[(AttributeSet, AttributeSet)]) -> Result<AttributeTable, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty("attribute pairs"));
    }
    let n = pairs.len() as f64;
    let pct = |f: &dyn Fn(&AttributeSet, &AttributeSet) -> bool| {
        100.0 * pairs.iter().filter(|(a, b)| f(a, b)).count() as f64 / n
    };
    let emotion = |a: &AttributeSet| a.emotion.clone().unwrap_or_else(|| "neutral".into());
    let age_diffs: Vec<f64> = pairs.iter().map(|(a, b)| (a.age - b.age).abs()).collect();
    if age_diffs.iter().any(|d| !d.is_finite()) {
        return Err(MetricError::NonFinite("age"));
    }
    let mean = compensated_mean(&age_diffs);
    let sq: Vec<f64> = age_diffs.iter().map(|d| (d - mean).powi(2)).collect();
    let std = (compensated_sum(&sq) / n).sqrt();
    Ok(AttributeTable {
        race_pct: pct(&|a, b| labels_match(&a.race, &b.race)),
        gender_pct: pct(&|a, b| a.gender == b.gender),
        age_abs_diff_mean: mean,
        age_abs_diff_std: std,
        expression_pct: pct(&|a, b| labels_match(&emotion(a), &emotion(b))),
    })
}
