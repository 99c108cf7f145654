use std::path::Path;

use anonpipe_core::{FrameRate, FrameRef};
use anonpipe_video::fixtures::{solid, write_clip, write_solid_clip};
use anonpipe_video::{ReassemblyError, SceneOutput, Transcoder, VideoError};
use image::{Rgb, RgbImage};

const FPS: FrameRate = FrameRate { num: 25, den: 1 };

fn tc() -> Transcoder {
    let t = Transcoder::discover(None);
    assert!(t.is_available(), "ffmpeg not found; set ANONPIPE_FFMPEG");
    t
}

/// Frames whose pixels depend on position and frame index, so reordering or
/// dropping shows up in a diff.
fn gradient_frames(n: usize, w: u32, h: u32) -> Vec<RgbImage> {
    (0..n)
        .map(|i| RgbImage::from_fn(w, h, |x, y| Rgb([(x * 4 + i as u32) as u8, (y * 5) as u8, (i * 9) as u8])))
        .collect()
}

fn max_channel_diff(a: &RgbImage, b: &RgbImage) -> u8 {
    a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

fn segments(frames: &[FrameRef], ranges: &[(u64, u64)]) -> Vec<SceneOutput> {
    ranges
        .iter()
        .enumerate()
        .map(|(id, &(s, e))| SceneOutput {
            segment_id: id,
            frames: frames[s as usize..=e as usize].to_vec(),
            passthrough: true,
        })
        .collect()
}

#[test]
fn probe_counts_frames_of_known_clip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.mp4");
    write_clip(&tc(), &gradient_frames(100, 64, 48), FPS, true, &p).unwrap();
    let info = tc().probe(&p).unwrap();
    assert_eq!(info.frame_count, 100);
    assert_eq!(info.fps, FPS);
    assert_eq!((info.width, info.height), (64, 48));
    assert!(info.has_audio);
    assert!((info.duration - 4.0).abs() < 1.0 / 25.0);
    assert!((info.audio_duration.unwrap() - 4.0).abs() < 1.0 / 25.0);
}

#[test]
fn single_frame_clip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.mkv");
    write_solid_clip(&tc(), 1, 32, 32, [10, 200, 30], FPS, &p).unwrap();
    assert_eq!(tc().probe(&p).unwrap().frame_count, 1);
    let frames = tc().decode_frames(&p).unwrap();
    assert_eq!(frames.len(), 1);
    assert!(!tc().probe(&p).unwrap().has_audio);
}

#[test]
fn empty_and_missing_files_are_media_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.mp4");
    std::fs::write(&empty, b"").unwrap();
    let err = tc().probe(&empty).unwrap_err();
    assert_eq!(err.path, empty);
    assert!(tc().decode_frames(&empty).is_err());
    assert!(tc().probe(&dir.path().join("missing.mp4")).is_err());
}

#[test]
fn solid_red_decodes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("red.mp4");
    write_solid_clip(&tc(), 10, 48, 32, [255, 0, 0], FPS, &p).unwrap();
    let frames = tc().decode_frames(&p).unwrap();
    assert_eq!(frames.len(), 10);
    for (i, f) in frames.iter().enumerate() {
        assert_eq!(f.frame_index, i as u64);
        assert_eq!(f.timestamp, FPS.timestamp_of(i as u64));
        assert!(f.image.pixels().all(|p| p.0.iter().zip([255u8, 0, 0]).all(|(a, b)| a.abs_diff(b) <= 2)));
    }
}

#[test]
fn truncated_files_report_frame_index() {
    let dir = tempfile::tempdir().unwrap();
    for ext in ["mkv", "mp4"] {
        let p = dir.path().join(format!("full.{ext}"));
        write_clip(&tc(), &gradient_frames(50, 64, 48), FPS, false, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // Keep the index at the front for mp4 so the header still parses.
        let cut = dir.path().join(format!("cut.{ext}"));
        if ext == "mp4" {
            let fast = dir.path().join("fast.mp4");
            let ok = std::process::Command::new(tc().program())
                .args(["-v", "error", "-y", "-i"])
                .arg(&p)
                .args(["-c", "copy", "-movflags", "+faststart"])
                .arg(&fast)
                .status()
                .unwrap();
            assert!(ok.success());
            let fb = std::fs::read(&fast).unwrap();
            std::fs::write(&cut, &fb[..fb.len() / 2]).unwrap();
        } else {
            std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        }
        let err = tc().decode_frames(&cut).unwrap_err();
        let at = err.frame_index.unwrap_or_else(|| panic!("{ext}: no frame index in {err}"));
        assert!(at > 0 && at < 50, "{ext}: {at}");
    }
}

#[test]
fn passthrough_reassembly_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.mp4");
    let out = dir.path().join("out.mp4");
    let t = tc();
    write_clip(&t, &gradient_frames(30, 64, 48), FPS, true, &src).unwrap();
    let frames = t.decode_frames(&src).unwrap();
    let info = t.reassemble(&segments(&frames, &[(0, 9), (10, 21), (22, 29)]), &src, &out).unwrap();
    assert_eq!(info.frame_count, 30);
    assert_eq!(info.fps, FPS);
    let back = t.decode_frames(&out).unwrap();
    assert_eq!(back.len(), frames.len());
    for (a, b) in frames.iter().zip(&back) {
        assert_eq!(a.timestamp, b.timestamp);
        assert!(max_channel_diff(&a.image, &b.image) <= 2);
    }
    let src_audio = t.probe(&src).unwrap().audio_duration.unwrap();
    assert!((info.audio_duration.unwrap() - src_audio).abs() <= 1.0 / 25.0);
}

#[test]
fn replaced_segment_only_changes_its_frames() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.mkv");
    let out = dir.path().join("out.mkv");
    let t = tc();
    write_clip(&t, &gradient_frames(24, 40, 30), FPS, false, &src).unwrap();
    let frames = t.decode_frames(&src).unwrap();
    let mut outputs = segments(&frames, &[(0, 7), (8, 15), (16, 23)]);
    outputs[1].passthrough = false;
    outputs[1].frames = outputs[1].frames.iter().map(|f| f.with_image(solid(40, 30, [0, 0, 255]))).collect();
    t.reassemble(&outputs, &src, &out).unwrap();

    let back = t.decode_frames(&out).unwrap();
    assert_eq!(back.len(), 24);
    let blue = solid(40, 30, [0, 0, 255]);
    for (i, (a, b)) in frames.iter().zip(&back).enumerate() {
        let want = if (8..=15).contains(&i) { &blue } else { a.image.as_ref() };
        assert!(max_channel_diff(want, &b.image) <= 2, "frame {i}");
    }
}

#[test]
fn coverage_errors_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.mp4");
    let out = dir.path().join("out.mp4");
    let t = tc();
    write_clip(&t, &gradient_frames(12, 32, 32), FPS, false, &src).unwrap();
    let frames = t.decode_frames(&src).unwrap();

    let missing = segments(&frames, &[(0, 3), (8, 11)]);
    match t.reassemble(&missing, &src, &out) {
        Err(VideoError::Reassembly(ReassemblyError::Gap { start: 4, end: 7 })) => {}
        other => panic!("{other:?}"),
    }
    let mut resized = segments(&frames, &[(0, 11)]);
    resized[0].frames[3] = resized[0].frames[3].with_image(RgbImage::new(16, 16));
    assert!(matches!(
        t.reassemble(&resized, &src, &out),
        Err(VideoError::Reassembly(ReassemblyError::Dimensions { .. }))
    ));
    assert!(!out.exists());
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".anonpipe-")));
}

#[test]
fn round_trip_keeps_count_and_timestamps_at_ntsc_rate() {
    let dir = tempfile::tempdir().unwrap();
    let fps = FrameRate::new(30000, 1001);
    let t = tc();
    for (n, name) in [(7usize, "a.mp4"), (31, "b.mkv")] {
        let src = dir.path().join(name);
        let out = dir.path().join(format!("out-{name}"));
        write_clip(&t, &gradient_frames(n, 24, 16), fps, false, &src).unwrap();
        let frames = t.decode_frames(&src).unwrap();
        assert_eq!(t.probe(&src).unwrap().fps, fps);
        let mid = n as u64 / 2;
        t.reassemble(&segments(&frames, &[(0, mid), (mid + 1, n as u64 - 1)]), &src, &out).unwrap();
        let back = t.decode_frames(&out).unwrap();
        let ts = |v: &[FrameRef]| v.iter().map(|f| f.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(&back), ts(&frames));
    }
}

#[test]
fn bad_executable_is_a_media_error() {
    let t = Transcoder::new("/nonexistent/ffmpeg");
    assert!(!t.is_available());
    let err = t.probe(&Path::new(env!("CARGO_MANIFEST_DIR")).join("Cargo.toml")).unwrap_err();
    assert!(err.message.contains("cannot start"), "{err}");
}
