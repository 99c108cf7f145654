//! A small synthetic clip with known scene structure and faces.

use std::path::Path;

use anonpipe_backend::mock::draw_face;
use anonpipe_core::FrameRate;
use anonpipe_video::fixtures::{solid, write_clip};
use anonpipe_video::{MediaError, Transcoder};
use image::RgbImage;

pub const WIDTH: u32 = 96;
pub const HEIGHT: u32 = 72;
pub const FRAMES_PER_SCENE: usize = 13;
pub const FACE_W: u32 = 30;
pub const FACE_H: u32 = 34;
pub const FACE_Y: u32 = 19;

/// One scene of the fixture: background colour and the identity of the face
/// walking across it, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub background: [u8; 3],
    pub identity: Option<u8>,
}

/// Face, empty room, the same face again.
pub const THREE_SCENES: [SceneSpec; 3] = [
    SceneSpec { background: [30, 60, 120], identity: Some(3) },
    SceneSpec { background: [20, 110, 40], identity: None },
    SceneSpec { background: [110, 30, 90], identity: Some(3) },
];

/// Left edge of the face in frame `k` of a scene; the middle frame is centred.
pub fn face_x(k: usize) -> u32 {
    13 + (k as f64 * 40.0 / (FRAMES_PER_SCENE - 1) as f64).round() as u32
}

pub fn scene_frames(spec: &SceneSpec) -> Vec<RgbImage> {
    (0..FRAMES_PER_SCENE)
        .map(|k| {
            let mut img = solid(WIDTH, HEIGHT, spec.background);
            if let Some(id) = spec.identity {
                draw_face(&mut img, face_x(k), FACE_Y, FACE_W, FACE_H, id);
            }
            img
        })
        .collect()
}

pub fn clip_frames(scenes: &[SceneSpec]) -> Vec<RgbImage> {
    scenes.iter().flat_map(scene_frames).collect()
}

/// Writes `scenes` at 25 fps with a tone track.
pub fn write_fixture(transcoder: &Transcoder, scenes: &[SceneSpec], out: &Path) -> Result<(), MediaError> {
    write_clip(transcoder, &clip_frames(scenes), FrameRate::new(25, 1), true, out)
}
