use std::sync::Arc;

use anonpipe_core::geometry::{LandmarkSet, LANDMARK_COUNT};
use anonpipe_core::{AttributeSet, Embedding, FaceBox, InpaintParams};
use image::RgbImage;

use crate::error::BackendError;
use crate::protocol::*;
use crate::transport::Transport;

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintOutput {
    pub image: RgbImage,
    pub steps_used: u32,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnimateOutput {
    pub frames: Vec<RgbImage>,
    pub motion: MotionCode,
}

/// Typed calls over any [`Transport`], with response validation.
#[derive(Clone)]
pub struct BackendClient {
    transport: Arc<dyn Transport>,
}

impl BackendClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self { transport }
    }

    /// Sends `body` and returns the validated result for its op.
    pub fn call(&self, body: RequestBody) -> Result<OpResult, BackendError> {
        let req = BackendRequest::new(body);
        let resp = self.transport.call(&req)?;
        if resp.request_id != req.request_id {
            return Err(BackendError::Protocol(format!(
                "response id {} does not match request id {}",
                resp.request_id, req.request_id
            )));
        }
        resp.check_shape()?;
        match resp.status {
            Status::Error => Err(BackendError::Remote(resp.error_message.unwrap_or_default())),
            Status::Ok => {
                let result = resp.result.expect("shape checked");
                if result.op() != req.op() {
                    return Err(BackendError::Protocol(format!("asked for {} but got a {} result", req.op(), result.op())));
                }
                Ok(result)
            }
        }
    }

    pub fn detect(&self, image: &RgbImage) -> Result<Vec<FaceBox>, BackendError> {
        match self.call(RequestBody::Detect(DetectRequest { image: ImageData::encode(image) }))? {
            OpResult::Detect(r) => Ok(r.faces),
            _ => unreachable!("op checked"),
        }
    }

    pub fn landmarks(&self, image: &RgbImage, face: &FaceBox) -> Result<LandmarkSet, BackendError> {
        let body = RequestBody::Landmarks(LandmarksRequest { image: ImageData::encode(image), face: *face });
        match self.call(body)? {
            OpResult::Landmarks(r) => {
                if r.points.len() != LANDMARK_COUNT {
                    return Err(BackendError::Protocol(format!("expected {LANDMARK_COUNT} landmarks, got {}", r.points.len())));
                }
                LandmarkSet::new(r.points).map_err(BackendError::Protocol)
            }
            _ => unreachable!("op checked"),
        }
    }

    pub fn embed(&self, image: &RgbImage, face: Option<&FaceBox>) -> Result<Embedding, BackendError> {
        let body = RequestBody::Embed(EmbedRequest { image: ImageData::encode(image), face: face.copied() });
        match self.call(body)? {
            OpResult::Embed(r) => Embedding::new(r.embedding).map_err(|e| BackendError::Protocol(format!("bad embedding: {e}"))),
            _ => unreachable!("op checked"),
        }
    }

    pub fn attributes(&self, image: &RgbImage, face: &FaceBox) -> Result<AttributeSet, BackendError> {
        let body = RequestBody::Attributes(AttributesRequest { image: ImageData::encode(image), face: *face });
        match self.call(body)? {
            OpResult::Attributes(r) => {
                r.attributes.validate().map_err(BackendError::Protocol)?;
                Ok(r.attributes)
            }
            _ => unreachable!("op checked"),
        }
    }

    pub fn inpaint(
        &self,
        image: &RgbImage,
        mask: &FaceBox,
        params: &InpaintParams,
        scheduler: &str,
    ) -> Result<InpaintOutput, BackendError> {
        let body = RequestBody::Inpaint(inpaint_request(image, mask, params, scheduler));
        match self.call(body)? {
            OpResult::Inpaint(r) => {
                let out = r.image.decode()?;
                if out.dimensions() != image.dimensions() {
                    return Err(BackendError::Protocol(format!(
                        "inpaint returned {:?}, expected {:?}",
                        out.dimensions(),
                        image.dimensions()
                    )));
                }
                Ok(InpaintOutput { image: out, steps_used: r.steps_used, seed_used: r.seed_used })
            }
            _ => unreachable!("op checked"),
        }
    }

    pub fn animate(&self, source: &RgbImage, driving: &[RgbImage]) -> Result<AnimateOutput, BackendError> {
        let body = RequestBody::Animate(AnimateRequest {
            source: ImageData::encode(source),
            driving: driving.iter().map(ImageData::encode).collect(),
        });
        match self.call(body)? {
            OpResult::Animate(r) => {
                if r.frames.len() != driving.len() {
                    return Err(BackendError::Protocol(format!(
                        "animate returned {} frames for {} driving frames",
                        r.frames.len(),
                        driving.len()
                    )));
                }
                let frames = r.frames.iter().map(ImageData::decode).collect::<Result<Vec<_>, _>>()?;
                Ok(AnimateOutput { frames, motion: r.motion })
            }
            _ => unreachable!("op checked"),
        }
    }
}

pub fn inpaint_request(image: &RgbImage, mask: &FaceBox, params: &InpaintParams, scheduler: &str) -> InpaintRequest {
    InpaintRequest {
        image: ImageData::encode(image),
        mask: Some(*mask),
        prompt: params.prompt_pair.positive.clone(),
        negative_prompt: params.prompt_pair.negative.clone(),
        steps: params.steps,
        guidance: params.guidance,
        control_strengths: params.control_strengths.clone(),
        seed: params.seed,
        scheduler: scheduler.to_string(),
    }
}
