//! Synthetic clips with known content, for tests and demos.

use std::path::Path;

use anonpipe_core::FrameRate;
use image::{Rgb, RgbImage};

use crate::error::MediaError;
use crate::transcoder::{Audio, Transcoder};

pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb(rgb))
}

/// Writes `frames` losslessly at `fps`. With `tone`, a sine track as long as
/// the video is muxed in.
pub fn write_clip(
    transcoder: &Transcoder,
    frames: &[RgbImage],
    fps: FrameRate,
    tone: bool,
    out: &Path,
) -> Result<(), MediaError> {
    let refs: Vec<&RgbImage> = frames.iter().collect();
    let audio = if tone { Audio::Tone(frames.len() as f64 / fps.as_f64()) } else { Audio::None };
    transcoder.encode(&refs, fps, audio, out)
}

/// `count` frames of one colour.
pub fn write_solid_clip(
    transcoder: &Transcoder,
    count: usize,
    width: u32,
    height: u32,
    rgb: [u8; 3],
    fps: FrameRate,
    out: &Path,
) -> Result<(), MediaError> {
    let frames = vec![solid(width, height, rgb); count];
    write_clip(transcoder, &frames, fps, false, out)
}
