//! Shared value types consumed by every pipeline stage.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use image::RgbImage;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::DimensionError;

/// Presentation timestamp in seconds, exact in the media timebase.
pub type Timestamp = Ratio<i64>;

/// Frames per second as an exact ratio (e.g. 30000/1001).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Self {
        assert!(num > 0 && den > 0, "frame rate must be positive");
        Self { num, den }
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Timestamp of `frame_index` on a constant-rate timeline.
    pub fn timestamp_of(&self, frame_index: u64) -> Timestamp {
        Ratio::new(frame_index as i64 * i64::from(self.den), i64::from(self.num))
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// One decoded RGB24 frame.
///
/// The pixel buffer is shared so passthrough segments can be carried through
/// the pipeline without copying.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub frame_index: u64,
    pub timestamp: Timestamp,
    pub image: Arc<RgbImage>,
}

impl FrameRef {
    pub fn new(frame_index: u64, timestamp: Timestamp, image: RgbImage) -> Self {
        assert!(image.width() > 0 && image.height() > 0, "frame must be non-empty");
        Self { frame_index, timestamp, image: Arc::new(image) }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn pixels(&self) -> &[u8] {
        self.image.as_raw()
    }

    /// Same frame position with different pixels.
    pub fn with_image(&self, image: RgbImage) -> Self {
        Self { frame_index: self.frame_index, timestamp: self.timestamp, image: Arc::new(image) }
    }
}

/// A contiguous shot segment and the scene group it was merged into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub segment_id: usize,
    pub scene_id: usize,
    pub start_frame: u64,
    /// Inclusive.
    pub end_frame: u64,
    pub mean_rgb: [f64; 3],
    pub has_face: bool,
    pub frontal_frame: Option<u64>,
}

impl Scene {
    pub fn frame_count(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }

    pub fn contains(&self, frame_index: u64) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame_index)
    }
}

/// Unit-norm face feature vector.
///
/// Construction always normalizes, so cosine distance between two embeddings
/// is a plain inner product.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// L2-normalizes `values`. Fails on dimension < 2, non-finite entries or a
    /// zero vector.
    pub fn new(values: Vec<f64>) -> Result<Self, DimensionError> {
        if values.len() < 2 {
            return Err(DimensionError::TooSmall(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DimensionError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(DimensionError::ZeroVector);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64, DimensionError> {
        if self.dim() != other.dim() {
            return Err(DimensionError::Mismatch { left: self.dim(), right: other.dim() });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Embedding::new(values).map_err(serde::de::Error::custom)
    }
}

/// `1 − ⟨a, b⟩`, clamped to `[0, 2]` against rounding.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64, DimensionError> {
    Ok((1.0 - a.dot(b)?).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeConfidence {
    pub age: f64,
    pub gender: f64,
    pub race: f64,
    pub emotion: f64,
}

/// Coarse demographic and affective attributes of one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub age: f64,
    pub gender: Gender,
    pub race: String,
    /// Absent when the recognizer could not decide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default)]
    pub confidence: AttributeConfidence,
}

impl AttributeSet {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.age.is_finite() && self.age >= 0.0) {
            return Err(format!("age must be a non-negative number, got {}", self.age));
        }
        if self.race.trim().is_empty() {
            return Err("race label is empty".into());
        }
        if matches!(&self.emotion, Some(e) if e.trim().is_empty()) {
            return Err("emotion label is empty".into());
        }
        let c = &self.confidence;
        for (name, v) in [("age", c.age), ("gender", c.gender), ("race", c.race), ("emotion", c.emotion)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} confidence {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// The conditioning controls forwarded to the inpainting backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Mask,
    Lineart,
    Pose,
}

impl Control {
    pub const ALL: [Control; 3] = [Control::Mask, Control::Lineart, Control::Pose];
}

pub type ControlStrengths = BTreeMap<Control, f64>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: String,
    pub negative: String,
}

/// Dispatch parameters for one inpainting call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintParams {
    pub steps: u32,
    pub guidance: f64,
    pub control_strengths: ControlStrengths,
    pub seed: u64,
    pub prompt_pair: PromptPair,
}

impl InpaintParams {
    pub const MAX_STEPS: u32 = 150;

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=Self::MAX_STEPS).contains(&self.steps) {
            return Err(format!("steps {} outside [1, {}]", self.steps, Self::MAX_STEPS));
        }
        if !(self.guidance.is_finite() && self.guidance > 0.0) {
            return Err(format!("guidance must be positive, got {}", self.guidance));
        }
        for (c, v) in &self.control_strengths {
            if !(0.0..=1.0).contains(v) {
                return Err(format!("{c:?} control strength {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Axis-aligned face box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
}

impl FaceBox {
    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    /// Integer pixel rectangle `(x, y, w, h)` clipped to a `width × height`
    /// image, or `None` if nothing of the box remains.
    pub fn pixel_rect(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = self.x.floor().max(0.0);
        let y0 = self.y.floor().max(0.0);
        let x1 = (self.x + self.width).ceil().min(f64::from(width));
        let y1 = (self.y + self.height).ceil().min(f64::from(height));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some((x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_distance_examples() {
        let mut unit = vec![0.0; 8];
        unit[0] = 1.0;
        assert_eq!(cosine_distance(&e(&unit), &e(&unit)).unwrap(), 0.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[-1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn cosine_distance_dimension_mismatch() {
        let err = cosine_distance(&e(&[1.0, 0.0]), &e(&[1.0, 0.0, 0.0])).unwrap_err();
        assert_eq!(err, DimensionError::Mismatch { left: 2, right: 3 });
    }

    #[test]
    fn embedding_rejects_degenerate_input() {
        assert!(Embedding::new(vec![1.0]).is_err());
        assert!(Embedding::new(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn embedding_deserialize_normalizes() {
        let emb: Embedding = serde_json::from_str("[3.0, 4.0]").unwrap();
        assert_eq!(emb.values(), &[0.6, 0.8]);
    }

    #[test]
    fn frame_rate_timestamps() {
        let fps = FrameRate::new(30000, 1001);
        assert_eq!(fps.timestamp_of(30), Ratio::new(1001, 1000));
        assert_eq!(fps.to_string(), "30000/1001");
    }

    #[test]
    fn pixel_rect_clips() {
        let b = FaceBox { x: -3.5, y: 10.2, width: 20.0, height: 100.0, score: 1.0 };
        assert_eq!(b.pixel_rect(64, 48), Some((0, 10, 17, 38)));
        let outside = FaceBox { x: 70.0, y: 0.0, width: 5.0, height: 5.0, score: 1.0 };
        assert_eq!(outside.pixel_rect(64, 48), None);
    }
}
