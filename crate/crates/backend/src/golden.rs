//! Fixed v1 example requests and the conformance check run against them.

use anonpipe_core::config::{default_control_strengths, DEFAULT_GUIDANCE, DEFAULT_SCHEDULER, DEFAULT_STEPS};
use anonpipe_core::FaceBox;
use image::{Rgb, RgbImage};

use crate::mock::{draw_face, golden_request_id};
use crate::protocol::*;
use crate::transport::Transport;

/// Golden request files shipped with the crate, keyed by op.
pub const GOLDEN_REQUESTS: [(Op, &str); 6] = [
    (Op::Detect, include_str!("../golden/v1/detect.request.json")),
    (Op::Landmarks, include_str!("../golden/v1/landmarks.request.json")),
    (Op::Embed, include_str!("../golden/v1/embed.request.json")),
    (Op::Attributes, include_str!("../golden/v1/attributes.request.json")),
    (Op::Inpaint, include_str!("../golden/v1/inpaint.request.json")),
    (Op::Animate, include_str!("../golden/v1/animate.request.json")),
];

fn golden_scene() -> (RgbImage, FaceBox) {
    let mut img = RgbImage::from_pixel(16, 12, Rgb([20, 40, 80]));
    let face = draw_face(&mut img, 5, 3, 7, 7, 1);
    (img, face)
}

/// Builds the golden request for `op` from code.
pub fn golden_request(op: Op) -> BackendRequest {
    let (img, face) = golden_scene();
    let image = ImageData::encode(&img);
    let body = match op {
        Op::Detect => RequestBody::Detect(DetectRequest { image }),
        Op::Landmarks => RequestBody::Landmarks(LandmarksRequest { image, face }),
        Op::Embed => RequestBody::Embed(EmbedRequest { image, face: Some(face) }),
        Op::Attributes => RequestBody::Attributes(AttributesRequest { image, face }),
        Op::Inpaint => RequestBody::Inpaint(InpaintRequest {
            image,
            mask: Some(face),
            prompt: "A photorealistic portrait of a middle-aged Asian female, with a neutral expression.".into(),
            negative_prompt: "distortions, unrealistic textures, cartoon-like features".into(),
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            control_strengths: default_control_strengths(),
            seed: 42,
            scheduler: DEFAULT_SCHEDULER.into(),
        }),
        Op::Animate => {
            let crop = image::imageops::crop_imm(&img, 5, 3, 7, 7).to_image();
            let shifted = image::imageops::crop_imm(&img, 4, 3, 7, 7).to_image();
            RequestBody::Animate(AnimateRequest {
                source: ImageData::encode(&crop),
                driving: vec![ImageData::encode(&crop), ImageData::encode(&shifted), ImageData::encode(&crop)],
            })
        }
    };
    BackendRequest { request_id: golden_request_id(op), body }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Parses each request, sends it and checks the response against the schema:
/// id echo, status/result shape, matching op.
pub fn check_requests<'a>(files: impl IntoIterator<Item = (String, &'a [u8])>, transport: &dyn Transport) -> Vec<CheckOutcome> {
    files
        .into_iter()
        .map(|(name, bytes)| {
            let verdict = (|| {
                let req = parse_request(bytes)?;
                let resp = transport.call(&req)?;
                // Round trip through the wire form so schema drift shows up.
                let resp = parse_response(&to_json(&resp))?;
                if resp.request_id != req.request_id {
                    return Err(crate::BackendError::Protocol("request_id not echoed".into()));
                }
                match (resp.status, resp.result) {
                    (Status::Ok, Some(r)) if r.op() == req.op() => Ok(format!("{} ok", req.op())),
                    (Status::Ok, Some(r)) => Err(crate::BackendError::Protocol(format!("{} result for {}", r.op(), req.op()))),
                    _ => Err(crate::BackendError::Remote(resp.error_message.unwrap_or_default())),
                }
            })();
            match verdict {
                Ok(detail) => CheckOutcome { name, passed: true, detail },
                Err(e) => CheckOutcome { name, passed: false, detail: e.to_string() },
            }
        })
        .collect()
}

/// Conformance over the built-in golden requests.
pub fn check_builtin(transport: &dyn Transport) -> Vec<CheckOutcome> {
    check_requests(GOLDEN_REQUESTS.iter().map(|(op, text)| (format!("{op}.request.json"), text.as_bytes())), transport)
}
