//! Shot boundary detection from frame-to-frame colour histogram changes, and
//! grouping of visually similar segments under shared scene ids.

use serde::{Deserialize, Serialize};

use crate::config::SCENE_HISTOGRAM_BINS;
use crate::error::DimensionError;
use crate::exec::{compensated_mean, Exec};
use crate::model::{FrameRef, Scene};

/// Boundaries closer than this many frames to the previous boundary (or to
/// the start of the video) are suppressed.
pub const MIN_SEGMENT_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub frame_index: u64,
    pub score: f64,
}

type Histogram = [[u32; SCENE_HISTOGRAM_BINS]; 3];

fn histogram(pixels: &[u8]) -> Histogram {
    let shift = 8 - SCENE_HISTOGRAM_BINS.trailing_zeros();
    let mut h = [[0u32; SCENE_HISTOGRAM_BINS]; 3];
    for px in pixels.chunks_exact(3) {
        for c in 0..3 {
            h[c][(px[c] >> shift) as usize] += 1;
        }
    }
    h
}

/// Mean over R, G, B of the total-variation distance between the normalized
/// 64-bin channel histograms of two frames. 0 for identical frames, 1 for
/// frames with disjoint histograms in every channel.
pub fn frame_score(prev: &FrameRef, cur: &FrameRef) -> Result<f64, DimensionError> {
    if prev.width() != cur.width() || prev.height() != cur.height() {
        return Err(DimensionError::FrameSize(prev.width(), prev.height(), cur.width(), cur.height()));
    }
    let a = histogram(prev.pixels());
    let b = histogram(cur.pixels());
    let n = f64::from(prev.width()) * f64::from(prev.height());
    let tv: f64 = (0..3)
        .map(|c| {
            let l1: u64 = a[c].iter().zip(&b[c]).map(|(x, y)| u64::from(x.abs_diff(*y))).sum();
            l1 as f64 / (2.0 * n)
        })
        .sum();
    Ok(tv / 3.0)
}

/// Scores for every consecutive frame pair; entry `k` compares frames `k` and
/// `k + 1`.
pub fn score_sequence(frames: &[FrameRef], exec: Exec) -> Result<Vec<SceneScore>, DimensionError> {
    if frames.len() < 2 {
        return Ok(Vec::new());
    }
    exec.map_range(1..frames.len(), |i| {
        frame_score(&frames[i - 1], &frames[i])
            .map(|score| SceneScore { frame_index: frames[i].frame_index, score })
    })
    .into_iter()
    .collect()
}

/// Boundary frame indices from a score sequence.
///
/// A frame is a boundary when its score exceeds `threshold` and it is the
/// strongest change within `MIN_SEGMENT_LEN - 1` frames on either side
/// (earliest wins on ties). The peak test does not depend on the threshold,
/// so raising the threshold can only remove boundaries.
pub fn boundaries_from_scores(scores: &[SceneScore], threshold: f64) -> Vec<u64> {
    let radius = MIN_SEGMENT_LEN - 1;
    let mut out = Vec::new();
    for (k, s) in scores.iter().enumerate() {
        if s.score <= threshold || (s.frame_index as usize) < MIN_SEGMENT_LEN {
            continue;
        }
        let lo = k.saturating_sub(radius);
        let hi = (k + radius).min(scores.len() - 1);
        let is_peak = (lo..=hi).filter(|&j| j != k).all(|j| {
            let other = scores[j].score;
            other < s.score || (other == s.score && j > k)
        });
        if is_peak {
            out.push(s.frame_index);
        }
    }
    out
}

pub fn detect_boundaries(frames: &[FrameRef], threshold: f64) -> Result<Vec<u64>, DimensionError> {
    detect_boundaries_with(frames, threshold, Exec::default())
}

pub fn detect_boundaries_with(
    frames: &[FrameRef],
    threshold: f64,
    exec: Exec,
) -> Result<Vec<u64>, DimensionError> {
    Ok(boundaries_from_scores(&score_sequence(frames, exec)?, threshold))
}

/// Inclusive `(start, end)` ranges partitioning `[0, frame_count)`.
pub fn segment_ranges(frame_count: u64, boundaries: &[u64]) -> Vec<(u64, u64)> {
    let mut ranges = Vec::with_capacity(boundaries.len() + 1);
    let mut start = 0;
    for &b in boundaries.iter().filter(|&&b| b > 0 && b < frame_count) {
        if b > start {
            ranges.push((start, b - 1));
            start = b;
        }
    }
    if frame_count > start {
        ranges.push((start, frame_count - 1));
    }
    ranges
}

pub fn mean_rgb(frame: &FrameRef) -> [f64; 3] {
    let mut sums = [0u64; 3];
    for px in frame.pixels().chunks_exact(3) {
        for c in 0..3 {
            sums[c] += u64::from(px[c]);
        }
    }
    let n = f64::from(frame.width()) * f64::from(frame.height());
    sums.map(|s| s as f64 / n)
}

/// Builds one `Scene` per range with its mean colour. Scene ids are left
/// equal to segment ids; `merge_segments` assigns the grouping.
pub fn build_segments(frames: &[FrameRef], ranges: &[(u64, u64)], exec: Exec) -> Vec<Scene> {
    let frame_means = exec.map(frames, mean_rgb);
    ranges
        .iter()
        .enumerate()
        .map(|(segment_id, &(start, end))| {
            let slice = &frame_means[start as usize..=end as usize];
            let mean = std::array::from_fn(|c| {
                let channel: Vec<f64> = slice.iter().map(|m| m[c]).collect();
                compensated_mean(&channel)
            });
            Scene {
                segment_id,
                scene_id: segment_id,
                start_frame: start,
                end_frame: end,
                mean_rgb: mean,
                has_face: false,
                frontal_frame: None,
            }
        })
        .collect()
}

fn rgb_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Assigns scene ids: each segment takes the id of the earliest previous
/// segment whose mean colour lies within `tolerance` (RGB L2), otherwise the
/// next fresh id. Segment boundaries are untouched.
pub fn merge_segments(mut segments: Vec<Scene>, tolerance: f64) -> Vec<Scene> {
    let mut next_id = 0;
    for i in 0..segments.len() {
        let matched = (0..i)
            .find(|&j| rgb_distance(&segments[j].mean_rgb, &segments[i].mean_rgb) <= tolerance)
            .map(|j| segments[j].scene_id);
        segments[i].scene_id = match matched {
            Some(id) => id,
            None => {
                next_id += 1;
                next_id - 1
            }
        };
    }
    segments
}

/// Boundary detection, segmentation and merging in one call.
pub fn detect_scenes(frames: &[FrameRef], threshold: f64, tolerance: f64, exec: Exec) -> Result<Vec<Scene>, DimensionError> {
    let boundaries = detect_boundaries_with(frames, threshold, exec)?;
    let ranges = segment_ranges(frames.len() as u64, &boundaries);
    Ok(merge_segments(build_segments(frames, &ranges, exec), tolerance))
}
