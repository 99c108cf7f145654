use std::sync::OnceLock;

use anonpipe_core::FrameRate;
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaInfo {
    /// Counted by decoding; container headers are not trusted.
    pub frame_count: u64,
    pub fps: FrameRate,
    /// `frame_count / fps`, in seconds.
    pub duration: f64,
    pub has_audio: bool,
    pub width: u32,
    pub height: u32,
    /// Decoded audio length in seconds, when an audio stream exists.
    pub audio_duration: Option<f64>,
}

/// Fields readable from the container header printed by `ffmpeg -i`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub fps: FrameRate,
    pub has_audio: bool,
    /// Container duration in seconds, when printed.
    pub duration: Option<f64>,
}

fn duration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Duration: (\d+):(\d+):(\d+(?:\.\d+)?)").unwrap())
}

fn video_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Stream #\d+:\d+.*?: Video: .*?, (\d+)x(\d+)[, \[]").unwrap())
}

fn rate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r", (\d+(?:\.\d+)?)(k?) (fps|tbr)\b").unwrap())
}

fn audio_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Stream #\d+:\d+.*?: Audio: ").unwrap())
}

/// Parses the first video stream line of `ffmpeg -i` stderr output.
pub(crate) fn parse_header(stderr: &str) -> Option<StreamHeader> {
    let line = stderr.lines().find(|l| video_re().is_match(l))?;
    let caps = video_re().captures(line)?;
    let width = caps[1].parse().ok()?;
    let height = caps[2].parse().ok()?;
    // Prefer the "fps" figure, fall back to "tbr".
    let mut rates: Vec<(bool, f64)> = rate_re()
        .captures_iter(line)
        .filter_map(|c| {
            let mut v: f64 = c[1].parse().ok()?;
            if &c[2] == "k" {
                v *= 1000.0;
            }
            Some((&c[3] == "fps", v))
        })
        .filter(|&(_, v)| v >= 0.001)
        .collect();
    rates.sort_by_key(|(is_fps, _)| !is_fps);
    let fps = rates.first().map(|&(_, v)| rate_from_decimal(v))?;
    let has_audio = stderr.lines().any(|l| audio_re().is_match(l));
    let duration = duration_re().captures(stderr).and_then(|c| {
        let h: f64 = c[1].parse().ok()?;
        let m: f64 = c[2].parse().ok()?;
        let s: f64 = c[3].parse().ok()?;
        Some(h * 3600.0 + m * 60.0 + s)
    });
    Some(StreamHeader { width, height, fps, has_audio, duration })
}

/// Recovers a rational rate from ffmpeg's rounded decimal print-out.
pub(crate) fn rate_from_decimal(v: f64) -> FrameRate {
    if (v - v.round()).abs() < 1e-6 {
        return FrameRate::new(v.round() as u32, 1);
    }
    // NTSC family: 23.98, 29.97, 59.94 ...
    let ntsc = v * 1.001;
    if (ntsc - ntsc.round()).abs() < 0.01 {
        return FrameRate::new(ntsc.round() as u32 * 1000, 1001);
    }
    let (mut a, mut b) = ((v * 1000.0).round() as u32, 1000u32);
    let (num, den) = (a, b);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    FrameRate::new(num / a, den / a)
}
