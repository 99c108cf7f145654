use std::ffi::{OsStr, OsString};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;

use anonpipe_core::{FrameRate, FrameRef};
use image::RgbImage;

use crate::error::{MediaError, ReassemblyError, VideoError};
use crate::probe::{parse_header, MediaInfo, StreamHeader};

/// Environment variable naming the ffmpeg executable.
pub const FFMPEG_ENV: &str = "ANONPIPE_FFMPEG";

const AUDIO_PROBE_RATE: u32 = 48_000;

/// The processed frames of one shot segment, ready for reassembly.
#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub segment_id: usize,
    /// Frames in order, with indices matching the source segment.
    pub frames: Vec<FrameRef>,
    /// Emit the original decoded frames for this range instead of `frames`.
    pub passthrough: bool,
}

impl SceneOutput {
    fn range(&self) -> Option<(u64, u64)> {
        let first = self.frames.first()?.frame_index;
        let contiguous = self.frames.iter().enumerate().all(|(i, f)| f.frame_index == first + i as u64);
        contiguous.then(|| (first, first + self.frames.len() as u64 - 1))
    }
}

pub(crate) enum Audio<'a> {
    None,
    /// Stream-copy the first audio stream of this file, if it has one.
    CopyFrom(&'a Path),
    /// Synthesize a sine tone of the given length (fixtures only).
    Tone(f64),
}

/// Handle on an ffmpeg-compatible executable.
#[derive(Debug, Clone)]
pub struct Transcoder {
    program: PathBuf,
    video_codec_args: Vec<String>,
}

impl Default for Transcoder {
    fn default() -> Self {
        Self::discover(None)
    }
}

impl Transcoder {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            video_codec_args: ["-c:v", "libx264rgb", "-qp", "0", "-preset", "veryfast"].map(String::from).to_vec(),
        }
    }

    /// Configured path first, then `ANONPIPE_FFMPEG`, then `ffmpeg` on `PATH`.
    pub fn discover(configured: Option<&Path>) -> Self {
        let program = configured
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(FFMPEG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("ffmpeg"));
        Self::new(program)
    }

    /// Replaces the output video codec arguments (default: lossless RGB H.264).
    pub fn with_video_codec_args(mut self, args: Vec<String>) -> Self {
        self.video_codec_args = args;
        self
    }

    pub fn program(&self) -> &Path {
        &self.program
    }

    /// True when the executable can be started.
    pub fn is_available(&self) -> bool {
        self.command(["-hide_banner", "-version"].map(OsString::from).to_vec())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }

    fn command(&self, args: Vec<OsString>) -> Command {
        let line = std::iter::once(self.program.as_os_str())
            .chain(args.iter().map(OsString::as_os_str))
            .map(quote)
            .collect::<Vec<_>>()
            .join(" ");
        tracing::info!(target: "anonpipe::ffmpeg", "{line}");
        let mut cmd = Command::new(&self.program);
        cmd.args(args).stdin(Stdio::null());
        cmd
    }

    fn spawn(&self, path: &Path, mut cmd: Command) -> Result<Child, MediaError> {
        cmd.spawn().map_err(|e| MediaError::new(path, format!("cannot start {}: {e}", self.program.display())))
    }

    fn header(&self, path: &Path) -> Result<StreamHeader, MediaError> {
        std::fs::File::open(path).map_err(|e| MediaError::new(path, format!("cannot read: {e}")))?;
        let args = vec!["-hide_banner".into(), "-nostdin".into(), "-i".into(), path.into()];
        let mut cmd = self.command(args);
        cmd.stdout(Stdio::null()).stderr(Stdio::piped());
        let out = self.spawn(path, cmd)?.wait_with_output().map_err(|e| MediaError::new(path, e.to_string()))?;
        let stderr = String::from_utf8_lossy(&out.stderr);
        parse_header(&stderr).ok_or_else(|| MediaError::new(path, format!("no video stream: {}", last_line(&stderr))))
    }

    /// Runs a raw-video decode and calls `on_frame` with each `frame_bytes`
    /// chunk. Returns the number of complete frames.
    fn decode_raw(
        &self,
        path: &Path,
        header: &StreamHeader,
        output_args: &[&str],
        frame_bytes: usize,
        mut on_frame: impl FnMut(u64, Vec<u8>),
    ) -> Result<u64, MediaError> {
        let mut args: Vec<OsString> = ["-v", "error", "-nostdin", "-xerror", "-i"].map(OsString::from).to_vec();
        args.push(path.into());
        args.extend(["-map", "0:v:0", "-fps_mode", "passthrough"].map(OsString::from));
        args.extend(output_args.iter().map(OsString::from));
        args.push("-".into());
        let mut cmd = self.command(args);
        cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
        let mut child = self.spawn(path, cmd)?;
        let stderr = drain(child.stderr.take().expect("piped stderr"));
        let mut stdout = child.stdout.take().expect("piped stdout");

        let mut count = 0u64;
        let mut partial = false;
        loop {
            let mut buf = vec![0u8; frame_bytes];
            match read_full(&mut stdout, &mut buf) {
                Ok(n) if n == frame_bytes => {
                    on_frame(count, buf);
                    count += 1;
                }
                Ok(0) => break,
                Ok(_) => {
                    partial = true;
                    break;
                }
                Err(e) => return Err(MediaError::new(path, e.to_string()).at_frame(count)),
            }
        }
        drop(stdout);
        let status = child.wait().map_err(|e| MediaError::new(path, e.to_string()))?;
        let stderr = stderr.join().unwrap_or_default();
        if !status.success() || partial {
            let why = if status.success() { "incomplete frame in stream".to_string() } else { last_line(&stderr) };
            return Err(MediaError::new(path, format!("decode failed: {why}")).at_frame(count));
        }
        if count == 0 {
            return Err(MediaError::new(path, "stream contains no frames"));
        }
        // Some demuxers stop quietly at a truncated tail; an error report plus
        // a frame count short of the header duration means the same thing.
        if let Some(d) = header.duration {
            let expected = (d * header.fps.as_f64()).round() as u64;
            if !stderr.trim().is_empty() && count + 1 < expected {
                return Err(MediaError::new(path, format!("decode stopped early: {}", last_line(&stderr))).at_frame(count));
            }
        }
        Ok(count)
    }

    fn audio_duration(&self, path: &Path) -> Result<f64, MediaError> {
        let mut args: Vec<OsString> = ["-v", "error", "-nostdin", "-i"].map(OsString::from).to_vec();
        args.push(path.into());
        let rate = AUDIO_PROBE_RATE.to_string();
        args.extend(["-map", "0:a:0", "-ac", "1", "-ar", &rate, "-f", "s16le", "-"].map(OsString::from));
        let mut cmd = self.command(args);
        cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
        let mut child = self.spawn(path, cmd)?;
        let stderr = drain(child.stderr.take().expect("piped stderr"));
        let bytes = io::copy(&mut child.stdout.take().expect("piped stdout"), &mut io::sink())
            .map_err(|e| MediaError::new(path, e.to_string()))?;
        let status = child.wait().map_err(|e| MediaError::new(path, e.to_string()))?;
        if !status.success() {
            let stderr = stderr.join().unwrap_or_default();
            return Err(MediaError::new(path, format!("audio decode failed: {}", last_line(&stderr))));
        }
        Ok(bytes as f64 / 2.0 / f64::from(AUDIO_PROBE_RATE))
    }

    /// Stream parameters, with the frame count taken from a full decode.
    pub fn probe(&self, path: &Path) -> Result<MediaInfo, MediaError> {
        let header = self.header(path)?;
        let frame_count = self.decode_raw(path, &header, &["-vf", "scale=16:16", "-f", "rawvideo", "-pix_fmt", "gray"], 256, |_, _| {})?;
        let audio_duration = if header.has_audio { Some(self.audio_duration(path)?) } else { None };
        Ok(info(&header, frame_count, audio_duration))
    }

    /// All frames as RGB24 in presentation order.
    pub fn decode_frames(&self, path: &Path) -> Result<Vec<FrameRef>, MediaError> {
        self.decode_with_info(path).map(|(frames, _)| frames)
    }

    /// Decoded frames together with the stream parameters, from one decode.
    pub fn decode_with_info(&self, path: &Path) -> Result<(Vec<FrameRef>, MediaInfo), MediaError> {
        let header = self.header(path)?;
        let (w, h) = (header.width, header.height);
        let mut frames = Vec::new();
        let count = self.decode_raw(path, &header, &["-f", "rawvideo", "-pix_fmt", "rgb24"], (w * h * 3) as usize, |i, buf| {
            let img = RgbImage::from_raw(w, h, buf).expect("buffer sized to frame");
            frames.push(FrameRef::new(i, header.fps.timestamp_of(i), img));
        })?;
        let audio_duration = if header.has_audio { Some(self.audio_duration(path)?) } else { None };
        Ok((frames, info(&header, count, audio_duration)))
    }

    /// Encodes `frames` at a constant `fps` into `out`, replacing it atomically.
    pub(crate) fn encode(&self, frames: &[&RgbImage], fps: FrameRate, audio: Audio<'_>, out: &Path) -> Result<(), MediaError> {
        let first = frames.first().ok_or_else(|| MediaError::new(out, "no frames to encode"))?;
        let (w, h) = first.dimensions();
        let dir = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let suffix = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
        let tmp = tempfile::Builder::new()
            .prefix(".anonpipe-")
            .suffix(&suffix)
            .tempfile_in(&dir)
            .map_err(|e| MediaError::new(out, format!("cannot create temporary output: {e}")))?;

        let mut args: Vec<OsString> = ["-v", "error", "-nostdin", "-y", "-f", "rawvideo", "-pix_fmt", "rgb24"]
            .map(OsString::from)
            .to_vec();
        args.extend(["-s".into(), format!("{w}x{h}").into(), "-framerate".into(), fps.to_string().into()]);
        args.extend(["-i", "pipe:0"].map(OsString::from));
        match audio {
            Audio::None => args.extend(["-map", "0:v:0"].map(OsString::from)),
            Audio::CopyFrom(src) => {
                args.extend(["-i".into(), src.into()]);
                args.extend(["-map", "0:v:0", "-map", "1:a:0?", "-c:a", "copy"].map(OsString::from));
            }
            Audio::Tone(secs) => {
                args.extend(["-f".into(), "lavfi".into(), "-i".into(), format!("sine=frequency=440:duration={secs}").into()]);
                args.extend(["-map", "0:v:0", "-map", "1:a:0", "-c:a", "aac"].map(OsString::from));
            }
        }
        args.extend(self.video_codec_args.iter().map(OsString::from));
        args.push(tmp.path().into());

        let mut cmd = self.command(args);
        cmd.stdin(Stdio::piped()).stdout(Stdio::null()).stderr(Stdio::piped());
        let mut child = self.spawn(out, cmd)?;
        let stderr = drain(child.stderr.take().expect("piped stderr"));
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut write_err = None;
        for (i, img) in frames.iter().enumerate() {
            if img.dimensions() != (w, h) {
                write_err = Some(MediaError::new(out, "frame size changed mid-stream").at_frame(i as u64));
                break;
            }
            if let Err(e) = stdin.write_all(img.as_raw()) {
                write_err = Some(MediaError::new(out, format!("encoder closed its input: {e}")).at_frame(i as u64));
                break;
            }
        }
        drop(stdin);
        let status = child.wait().map_err(|e| MediaError::new(out, e.to_string()))?;
        let stderr = stderr.join().unwrap_or_default();
        if !status.success() {
            return Err(MediaError::new(out, format!("encode failed: {}", last_line(&stderr))));
        }
        if let Some(e) = write_err {
            return Err(e);
        }
        tmp.persist(out).map_err(|e| MediaError::new(out, format!("cannot move output into place: {}", e.error)))?;
        Ok(())
    }

    /// Decodes `source`, splices in the scene outputs and writes `out`.
    pub fn reassemble(&self, outputs: &[SceneOutput], source: &Path, out: &Path) -> Result<MediaInfo, VideoError> {
        let (frames, info) = self.decode_with_info(source)?;
        self.reassemble_with_source(outputs, &frames, info.fps, source, out)
    }

    /// As [`Transcoder::reassemble`], reusing already decoded source frames.
    pub fn reassemble_with_source(
        &self,
        outputs: &[SceneOutput],
        source_frames: &[FrameRef],
        fps: FrameRate,
        source: &Path,
        out: &Path,
    ) -> Result<MediaInfo, VideoError> {
        let first = source_frames.first().ok_or_else(|| MediaError::new(source, "source has no frames"))?;
        let order = check_outputs(outputs, source_frames.len() as u64, first.width(), first.height())?;
        let mut images: Vec<&RgbImage> = Vec::with_capacity(source_frames.len());
        for idx in order {
            let o = &outputs[idx];
            if o.passthrough {
                let (s, e) = o.range().expect("validated");
                images.extend(source_frames[s as usize..=e as usize].iter().map(|f| f.image.as_ref()));
            } else {
                images.extend(o.frames.iter().map(|f| f.image.as_ref()));
            }
        }
        self.encode(&images, fps, Audio::CopyFrom(source), out)?;
        Ok(self.probe(out)?)
    }
}

/// Validates exact coverage of `0..frame_count` and returns output indices in
/// frame order.
pub fn check_outputs(outputs: &[SceneOutput], frame_count: u64, width: u32, height: u32) -> Result<Vec<usize>, ReassemblyError> {
    let mut spans = Vec::with_capacity(outputs.len());
    for (i, o) in outputs.iter().enumerate() {
        let (s, e) = o.range().ok_or(ReassemblyError::NonContiguous { segment_id: o.segment_id })?;
        if let Some(f) = o.frames.iter().find(|f| f.width() != width || f.height() != height) {
            return Err(ReassemblyError::Dimensions {
                segment_id: o.segment_id,
                got_w: f.width(),
                got_h: f.height(),
                want_w: width,
                want_h: height,
            });
        }
        if e >= frame_count {
            return Err(ReassemblyError::OutOfRange(e, frame_count));
        }
        spans.push((s, e, i));
    }
    spans.sort_unstable();
    let mut next = 0u64;
    for &(s, e, _) in &spans {
        if s > next {
            return Err(ReassemblyError::Gap { start: next, end: s - 1 });
        }
        if s < next {
            return Err(ReassemblyError::Overlap(s));
        }
        next = e + 1;
    }
    if next < frame_count {
        return Err(ReassemblyError::Gap { start: next, end: frame_count - 1 });
    }
    Ok(spans.into_iter().map(|(_, _, i)| i).collect())
}

fn info(header: &StreamHeader, frame_count: u64, audio_duration: Option<f64>) -> MediaInfo {
    MediaInfo {
        frame_count,
        fps: header.fps,
        duration: frame_count as f64 / header.fps.as_f64(),
        has_audio: header.has_audio,
        width: header.width,
        height: header.height,
        audio_duration,
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn drain(mut r: impl Read + Send + 'static) -> JoinHandle<String> {
    std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = r.read_to_end(&mut s);
        String::from_utf8_lossy(&s).into_owned()
    })
}

fn last_line(stderr: &str) -> String {
    stderr.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("unknown error").trim().to_string()
}

fn quote(arg: &OsStr) -> String {
    let s = arg.to_string_lossy();
    if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_./:=+,@%".contains(c)) {
        s.into_owned()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}
