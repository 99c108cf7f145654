//! v1 wire types. Requests are `{request_id, op, payload}`; responses are
//! `{request_id, status, result | error_message}` where `result` carries the
//! op name as an `op` field.

use std::fmt;
use std::io::Cursor;

use anonpipe_core::{AttributeSet, ControlStrengths, FaceBox};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::BackendError;

pub const PROTOCOL_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Detect,
    Landmarks,
    Embed,
    Attributes,
    Inpaint,
    Animate,
}

impl Op {
    pub const ALL: [Op; 6] = [Op::Detect, Op::Landmarks, Op::Embed, Op::Attributes, Op::Inpaint, Op::Animate];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Detect => "detect",
            Op::Landmarks => "landmarks",
            Op::Embed => "embed",
            Op::Attributes => "attributes",
            Op::Inpaint => "inpaint",
            Op::Animate => "animate",
        }
    }

    /// HTTP path of the op endpoint.
    pub fn path(self) -> String {
        format!("/{PROTOCOL_VERSION}/{}", self.as_str())
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL.into_iter().find(|op| op.as_str() == s).ok_or_else(|| format!("unknown op `{s}`"))
    }
}

/// A base64-encoded PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageData(pub String);

impl ImageData {
    pub fn encode(img: &RgbImage) -> Self {
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png).expect("PNG encoding into memory");
        Self(STANDARD.encode(buf.into_inner()))
    }

    /// Decodes to RGB8, converting other PNG colour types.
    pub fn decode(&self) -> Result<RgbImage, BackendError> {
        let bytes = STANDARD.decode(&self.0).map_err(|e| BackendError::Protocol(format!("bad base64 image: {e}")))?;
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
            .map_err(|e| BackendError::Protocol(format!("bad PNG image: {e}")))?;
        Ok(img.to_rgb8())
    }
}

/// Opaque motion representation owned by the animate backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MotionCode(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub image: ImageData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarksRequest {
    pub image: ImageData,
    pub face: FaceBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRequest {
    pub image: ImageData,
    /// Crop to this box before embedding; whole image otherwise.
    #[serde(default)]
    pub face: Option<FaceBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributesRequest {
    pub image: ImageData,
    pub face: FaceBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintRequest {
    pub image: ImageData,
    /// Head region to synthesize; the backend derives its control maps from it.
    #[serde(default)]
    pub mask: Option<FaceBox>,
    pub prompt: String,
    pub negative_prompt: String,
    pub steps: u32,
    pub guidance: f64,
    pub control_strengths: ControlStrengths,
    pub seed: u64,
    pub scheduler: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimateRequest {
    pub source: ImageData,
    pub driving: Vec<ImageData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "lowercase")]
pub enum RequestBody {
    Detect(DetectRequest),
    Landmarks(LandmarksRequest),
    Embed(EmbedRequest),
    Attributes(AttributesRequest),
    Inpaint(InpaintRequest),
    Animate(AnimateRequest),
}

impl RequestBody {
    pub fn op(&self) -> Op {
        match self {
            RequestBody::Detect(_) => Op::Detect,
            RequestBody::Landmarks(_) => Op::Landmarks,
            RequestBody::Embed(_) => Op::Embed,
            RequestBody::Attributes(_) => Op::Attributes,
            RequestBody::Inpaint(_) => Op::Inpaint,
            RequestBody::Animate(_) => Op::Animate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub request_id: Uuid,
    #[serde(flatten)]
    pub body: RequestBody,
}

impl BackendRequest {
    pub fn new(body: RequestBody) -> Self {
        Self { request_id: Uuid::new_v4(), body }
    }

    pub fn op(&self) -> Op {
        self.body.op()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectResult {
    pub faces: Vec<FaceBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarksResult {
    /// 68 points in iBUG order, pixel coordinates.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedResult {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributesResult {
    pub attributes: AttributeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintResult {
    pub image: ImageData,
    pub steps_used: u32,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimateResult {
    pub frames: Vec<ImageData>,
    pub motion: MotionCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum OpResult {
    Detect(DetectResult),
    Landmarks(LandmarksResult),
    Embed(EmbedResult),
    Attributes(AttributesResult),
    Inpaint(InpaintResult),
    Animate(AnimateResult),
}

impl OpResult {
    pub fn op(&self) -> Op {
        match self {
            OpResult::Detect(_) => Op::Detect,
            OpResult::Landmarks(_) => Op::Landmarks,
            OpResult::Embed(_) => Op::Embed,
            OpResult::Attributes(_) => Op::Attributes,
            OpResult::Inpaint(_) => Op::Inpaint,
            OpResult::Animate(_) => Op::Animate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub request_id: Uuid,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OpResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
}

impl BackendResponse {
    pub fn ok(request_id: Uuid, result: OpResult) -> Self {
        Self { request_id, status: Status::Ok, result: Some(result), error_message: None }
    }

    pub fn error(request_id: Uuid, message: impl Into<String>) -> Self {
        Self { request_id, status: Status::Error, result: None, error_message: Some(message.into()) }
    }

    /// `result` present iff `status` is ok.
    pub fn check_shape(&self) -> Result<(), BackendError> {
        match (self.status, &self.result, &self.error_message) {
            (Status::Ok, Some(_), None) | (Status::Error, None, Some(_)) => Ok(()),
            (Status::Ok, None, _) => Err(BackendError::Protocol("status ok without result".into())),
            (Status::Ok, Some(_), Some(_)) => Err(BackendError::Protocol("status ok with error_message".into())),
            (Status::Error, Some(_), _) => Err(BackendError::Protocol("status error with result".into())),
            (Status::Error, None, None) => Err(BackendError::Protocol("status error without error_message".into())),
        }
    }
}

/// `GET /v1/health` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub protocol: String,
    /// Model name per op.
    pub ops: std::collections::BTreeMap<Op, String>,
}

pub fn to_json(value: &impl Serialize) -> Vec<u8> {
    serde_json::to_vec(value).expect("protocol types serialize")
}

/// Pretty form used for golden files, with a trailing newline.
pub fn to_json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("protocol types serialize");
    s.push('\n');
    s
}

pub fn parse_request(bytes: &[u8]) -> Result<BackendRequest, BackendError> {
    serde_json::from_slice(bytes).map_err(|e| BackendError::Protocol(format!("malformed request: {e}")))
}

pub fn parse_response(bytes: &[u8]) -> Result<BackendResponse, BackendError> {
    let resp: BackendResponse =
        serde_json::from_slice(bytes).map_err(|e| BackendError::Protocol(format!("malformed response: {e}")))?;
    resp.check_shape()?;
    Ok(resp)
}
