use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anonpipe_backend::{BackendClient, BackendError, PROTOCOL_VERSION};
use anonpipe_core::exec::Exec;
use anonpipe_core::geometry::{landmark_coverage, pose_from_landmarks, select_frontal, CameraModel, FrontalCandidate};
use anonpipe_core::identity::{cluster_scenes, run_verification, IdentityCluster, VerificationOutcome};
use anonpipe_core::scene::detect_scenes;
use anonpipe_core::{cosine_distance, DimensionError, Embedding, FaceBox, FrameRef, InpaintParams, PipelineConfig, PromptPair, Scene};
use anonpipe_video::{MediaError, MediaInfo, ReassemblyError, SceneOutput, Transcoder, VideoError};
use image::imageops::{self, FilterType};
use image::RgbImage;
use thiserror::Error;

use crate::prompt::build_prompt;
use crate::report::*;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Reassembly(#[from] ReassemblyError),
    #[error("decoded frames are inconsistent: {0}")]
    Frames(#[from] DimensionError),
    #[error("cannot write report {}: {source}", path.display())]
    Report { path: PathBuf, source: std::io::Error },
}

impl From<VideoError> for PipelineError {
    fn from(e: VideoError) -> Self {
        match e {
            VideoError::Media(m) => PipelineError::Media(m),
            VideoError::Reassembly(r) => PipelineError::Reassembly(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub run_seed: u64,
    /// Scenes processed concurrently.
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub output: MediaInfo,
    pub report_path: PathBuf,
}

/// Faces in `frame`, largest first.
pub fn detect_faces(frame: &RgbImage, client: &BackendClient) -> Result<Vec<FaceBox>, BackendError> {
    let (w, h) = frame.dimensions();
    let mut faces = client.detect(frame)?;
    faces.retain(|f| f.pixel_rect(w, h).is_some());
    faces.sort_by(|a, b| b.area().total_cmp(&a.area()).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x)));
    Ok(faces)
}

/// Result of anonymizing one face-bearing scene.
#[derive(Debug, Clone)]
pub struct AnonymizedScene {
    /// One output image per input frame, in order.
    pub frames: Vec<RgbImage>,
    /// The accepted (or last) inpainted frontal frame.
    pub anon_frontal: RgbImage,
    pub verification: VerificationOutcome,
}

/// Inpaints the frontal frame until it verifies (or retries run out), then
/// transfers the original motion onto the anonymized face across the scene.
///
/// `boxes[i]` is the face in `frames[i]`, if one was detected; at least the
/// frontal frame must have one.
#[allow(clippy::too_many_arguments)]
pub fn anonymize_scene(
    frames: &[&RgbImage],
    boxes: &[Option<FaceBox>],
    frontal_pos: usize,
    orig_embedding: &Embedding,
    anon_seed: u64,
    prompt: &PromptPair,
    client: &BackendClient,
    cfg: &PipelineConfig,
) -> Result<AnonymizedScene, BackendError> {
    assert_eq!(frames.len(), boxes.len());
    let face = boxes[frontal_pos].expect("frontal frame has a face");
    let frontal = frames[frontal_pos];
    let base = InpaintParams { seed: anon_seed, prompt_pair: prompt.clone(), ..cfg.inpaint.clone() };

    let (verification, anon) = run_verification(
        &base,
        &cfg.retry,
        cfg.max_retries,
        cfg.anonymity_distance_threshold,
        |attempt, params| {
            let out = client.inpaint(frontal, &face, params, &cfg.scheduler)?;
            let emb = client.embed(&out.image, Some(&face))?;
            let d = cosine_distance(orig_embedding, &emb)
                .map_err(|e| BackendError::Protocol(format!("embedding dimension changed: {e}")))?;
            tracing::debug!(attempt, seed = params.seed, steps = params.steps, distance = d, "verification attempt");
            Ok((d, out.image))
        },
    )?;

    let (w, h) = frontal.dimensions();
    let (fx, fy, fw, fh) = face.pixel_rect(w, h).expect("detected box lies in frame");
    let source = imageops::crop_imm(&anon, fx, fy, fw, fh).to_image();
    let filled = fill_boxes(boxes);
    let rects: Vec<_> = frames
        .iter()
        .zip(&filled)
        .map(|(img, b)| b.pixel_rect(img.width(), img.height()).unwrap_or((fx.min(img.width() - 1), fy.min(img.height() - 1), 1, 1)))
        .collect();
    let driving: Vec<RgbImage> = frames
        .iter()
        .zip(&rects)
        .map(|(img, &(x, y, rw, rh))| resized(&imageops::crop_imm(*img, x, y, rw, rh).to_image(), fw, fh))
        .collect();
    let animated = client.animate(&source, &driving)?;

    let out = frames
        .iter()
        .enumerate()
        .map(|(i, img)| {
            if i == frontal_pos {
                return anon.clone();
            }
            let (x, y, rw, rh) = rects[i];
            let mut frame = (*img).clone();
            imageops::replace(&mut frame, &resized(&animated.frames[i], rw, rh), i64::from(x), i64::from(y));
            frame
        })
        .collect();
    Ok(AnonymizedScene { frames: out, anon_frontal: anon, verification })
}

fn resized(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    if img.dimensions() == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, w, h, FilterType::Nearest)
    }
}

/// Gives undetected frames the box of the nearest detected frame (earlier on
/// ties).
fn fill_boxes(boxes: &[Option<FaceBox>]) -> Vec<FaceBox> {
    let known: Vec<(usize, FaceBox)> = boxes.iter().enumerate().filter_map(|(i, b)| b.map(|b| (i, b))).collect();
    (0..boxes.len())
        .map(|i| {
            known
                .iter()
                .min_by_key(|(j, _)| (i.abs_diff(*j), *j))
                .map(|&(_, b)| b)
                .expect("at least one detected face")
        })
        .collect()
}

/// What stage 2 learns about one scene before clustering.
struct SceneAnalysis {
    report: SceneReport,
    /// Global frame indices of the scene, ascending.
    frames: Vec<usize>,
    boxes: Vec<Option<FaceBox>>,
    frontal_pos: Option<usize>,
    embedding: Option<Embedding>,
}

fn analyze_scene(scene_id: usize, segments: &[&Scene], frames: &[FrameRef], client: &BackendClient, cfg: &PipelineConfig) -> SceneAnalysis {
    let indices: Vec<usize> =
        segments.iter().flat_map(|s| s.start_frame as usize..=s.end_frame as usize).collect();
    let mut a = SceneAnalysis {
        report: SceneReport {
            scene_id,
            segment_ids: segments.iter().map(|s| s.segment_id).collect(),
            frame_count: indices.len() as u64,
            ..SceneReport::default()
        },
        frames: indices,
        boxes: Vec::new(),
        frontal_pos: None,
        embedding: None,
    };
    if let Err(e) = analyze_into(&mut a, frames, client, cfg) {
        a.report.flags.insert(Flag::AnonymityUnverified);
        a.report.error = Some(e.to_string());
        a.report.notes.push("backend failure during analysis; scene passed through".into());
        a.frontal_pos = None;
        a.embedding = None;
    }
    a
}

fn analyze_into(a: &mut SceneAnalysis, frames: &[FrameRef], client: &BackendClient, cfg: &PipelineConfig) -> Result<(), BackendError> {
    let mut crowded = 0;
    for &i in &a.frames {
        let faces = detect_faces(&frames[i].image, client)?;
        crowded += usize::from(faces.len() > 1);
        a.boxes.push(faces.first().copied());
    }
    if crowded > 0 {
        a.report.notes.push(format!("{crowded} frame(s) had more than one face; only the largest was processed"));
    }
    if a.boxes.iter().all(Option::is_none) {
        a.report.flags.insert(Flag::NoFace);
        return Ok(());
    }

    let mut candidates = Vec::new();
    let mut unsolved = 0;
    for (pos, &i) in a.frames.iter().enumerate() {
        let Some(face) = a.boxes[pos] else { continue };
        let img = &frames[i].image;
        let lm = client.landmarks(img, &face)?;
        let coverage = landmark_coverage(&lm, img.width(), img.height());
        match pose_from_landmarks(&lm, &CameraModel::for_image(img.width(), img.height())) {
            Ok(pose) => candidates.push(FrontalCandidate::new(frames[i].frame_index, &pose, coverage)),
            Err(_) => unsolved += 1,
        }
    }
    if unsolved > 0 {
        a.report.notes.push(format!("head pose unsolved on {unsolved} frame(s)"));
    }
    let frontal = match select_frontal(&candidates, cfg.landmark_coverage_min) {
        Ok(f) => f,
        Err(e) => {
            a.report.flags.insert(Flag::NoFrontalFrame);
            a.report.notes.push(e.to_string());
            return Ok(());
        }
    };
    let pos = a.frames.iter().position(|&i| frames[i].frame_index == frontal).expect("frontal frame is in scene");
    let face = a.boxes[pos].expect("candidates have faces");
    a.report.frontal_frame = Some(frontal);
    a.report.face_box = Some(face);
    a.embedding = Some(client.embed(&frames[a.frames[pos]].image, Some(&face))?);
    a.frontal_pos = Some(pos);
    Ok(())
}

/// Scene-level work runs on a pool of `workers` threads when the `parallel`
/// feature is on, sequentially otherwise.
struct Workers {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    fn new(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().ok();
            Self { pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Self {}
        }
    }

    fn map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(f);
        }
        f()
    }
}

struct ClusterPlan {
    cluster: IdentityCluster,
    attributes: Result<anonpipe_core::AttributeSet, BackendError>,
    prompt: Option<PromptPair>,
}

/// The whole run on one video: decode, scenes, faces and frontal frames,
/// identity clusters, inpaint with verification, motion transfer, reassembly.
/// The report is written to `report_path` (default: next to `out`).
pub fn run_pipeline(
    video: &Path,
    out: &Path,
    report_path: Option<&Path>,
    cfg: &PipelineConfig,
    client: &BackendClient,
    opts: RunOptions,
) -> Result<RunOutcome, PipelineError> {
    let workers = Workers::new(opts.workers);
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1000.0);
        clock = Instant::now();
    };

    let transcoder = Transcoder::discover(cfg.video.ffmpeg.as_deref().map(Path::new));
    let (frames, info) = transcoder.decode_with_info(video)?;
    lap("decode", &mut timings);

    let segments = workers.install(|| detect_scenes(&frames, cfg.scene_threshold, cfg.merge_tolerance, Exec::default()))?;
    let mut groups: BTreeMap<usize, Vec<&Scene>> = BTreeMap::new();
    for s in &segments {
        groups.entry(s.scene_id).or_default().push(s);
    }
    let groups: Vec<(usize, Vec<&Scene>)> = groups.into_iter().collect();
    lap("scene_detect", &mut timings);

    let mut analyses = workers.map(&groups, |(id, segs)| analyze_scene(*id, segs, &frames, client, cfg));
    lap("analyze", &mut timings);

    let reps: BTreeMap<usize, Embedding> =
        analyses.iter().filter_map(|a| a.embedding.clone().map(|e| (a.report.scene_id, e))).collect();
    let clusters = cluster_scenes(&reps, cfg.cluster_distance_threshold, opts.run_seed)?;
    let plans: Vec<ClusterPlan> = workers.map(&clusters, |c| {
        // Attributes come from the founding scene so the whole cluster shares
        // one prompt.
        let founder = analyses.iter().find(|a| Some(&a.report.scene_id) == c.scene_ids.first()).expect("founder analysed");
        let pos = founder.frontal_pos.expect("clustered scenes have a frontal frame");
        let img = &frames[founder.frames[pos]].image;
        let attributes = client.attributes(img, &founder.boxes[pos].expect("frontal face"));
        let prompt = attributes.as_ref().ok().map(build_prompt);
        ClusterPlan { cluster: c.clone(), attributes, prompt }
    });
    let cluster_of: BTreeMap<usize, usize> =
        plans.iter().enumerate().flat_map(|(k, p)| p.cluster.scene_ids.iter().map(move |&s| (s, k))).collect();
    lap("cluster", &mut timings);

    // None: nothing to anonymize in the scene.
    let attempts: Vec<Option<Result<AnonymizedScene, BackendError>>> = workers.map(&analyses, |a| {
        let k = *cluster_of.get(&a.report.scene_id)?;
        let plan = &plans[k];
        let prompt = plan.prompt.as_ref()?;
        let imgs: Vec<&RgbImage> = a.frames.iter().map(|&i| frames[i].image.as_ref()).collect();
        let r = anonymize_scene(&imgs, &a.boxes, a.frontal_pos?, a.embedding.as_ref()?, plan.cluster.anon_seed, prompt, client, cfg);
        if let Err(e) = &r {
            tracing::warn!(scene = a.report.scene_id, "scene anonymization failed: {e}");
        }
        Some(r)
    });
    lap("anonymize", &mut timings);

    let results: Vec<Option<&AnonymizedScene>> =
        attempts.iter().map(|a| a.as_ref().and_then(|r| r.as_ref().ok())).collect();

    // Fold outcomes into the per-scene reports.
    for (a, attempt) in analyses.iter_mut().zip(&attempts) {
        let r = &mut a.report;
        let Some(&k) = cluster_of.get(&r.scene_id) else { continue };
        let plan = &plans[k];
        r.cluster_id = Some(plan.cluster.cluster_id);
        match &plan.attributes {
            Ok(attrs) => r.attributes = Some(attrs.clone()),
            Err(e) => {
                r.flags.insert(Flag::AnonymityUnverified);
                r.error = Some(e.to_string());
                r.notes.push("attribute recognition failed; scene passed through".into());
                continue;
            }
        }
        match attempt {
            Some(Ok(done)) => {
                let v = &done.verification;
                if !v.accepted {
                    r.flags.insert(Flag::AnonymityUnverified);
                    r.notes.push(format!(
                        "distance {:.4} still below {} after {} attempt(s)",
                        v.distance, cfg.anonymity_distance_threshold, v.attempts
                    ));
                }
                r.verification = Some(v.clone());
            }
            Some(Err(e)) => {
                r.flags.insert(Flag::AnonymityUnverified);
                r.error = Some(e.to_string());
                r.notes.push("backend failure during anonymization; scene passed through".into());
            }
            None => {}
        }
    }

    let mut outputs = Vec::with_capacity(segments.len());
    let mut segment_reports = Vec::with_capacity(segments.len());
    for s in &segments {
        let (a, result) = analyses
            .iter()
            .zip(&results)
            .find(|(a, _)| a.report.scene_id == s.scene_id)
            .expect("every scene analysed");
        let range = s.start_frame as usize..=s.end_frame as usize;
        let (scene_frames, passthrough) = match result {
            Some(done) => {
                let fs = range
                    .map(|i| {
                        let pos = a.frames.iter().position(|&j| j == i).expect("segment frame in scene");
                        frames[i].with_image(done.frames[pos].clone())
                    })
                    .collect();
                (fs, false)
            }
            None => (frames[range].to_vec(), true),
        };
        segment_reports.push(SegmentReport {
            segment_id: s.segment_id,
            scene_id: s.scene_id,
            start_frame: s.start_frame,
            end_frame: s.end_frame,
            passthrough,
        });
        outputs.push(SceneOutput { segment_id: s.segment_id, frames: scene_frames, passthrough });
    }
    let output = transcoder.reassemble_with_source(&outputs, &frames, info.fps, video, out)?;
    lap("reassemble", &mut timings);

    let face_scenes = analyses.iter().filter(|a| a.boxes.iter().any(Option::is_some)).count();
    let scenes: Vec<SceneReport> = analyses.into_iter().map(|a| a.report).collect();
    let totals = Totals {
        scenes: scenes.len(),
        face_scenes,
        anonymized_scenes: results.iter().filter(|r| r.is_some()).count(),
        verified_scenes: scenes.iter().filter(|s| s.verified()).count(),
        flagged_scenes: scenes.iter().filter(|s| !s.flags.is_empty()).count(),
        clusters: plans.len(),
        output_frame_count: output.frame_count,
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        protocol: PROTOCOL_VERSION.into(),
        run_seed: opts.run_seed,
        input: InputSummary {
            frame_count: info.frame_count,
            fps: info.fps.to_string(),
            width: info.width,
            height: info.height,
            has_audio: info.has_audio,
        },
        segments: segment_reports,
        clusters: plans
            .iter()
            .map(|p| ClusterReport {
                cluster_id: p.cluster.cluster_id,
                scene_ids: p.cluster.scene_ids.clone(),
                anon_seed: p.cluster.anon_seed,
                attributes: p.attributes.as_ref().ok().cloned(),
                prompt: p.prompt.clone(),
            })
            .collect(),
        scenes,
        totals,
        timings_ms: timings,
    };
    let report_path = report_path.map(Path::to_path_buf).unwrap_or_else(|| default_report_path(out));
    write_atomic(&report_path, &report.to_json()).map_err(|source| PipelineError::Report { path: report_path.clone(), source })?;
    Ok(RunOutcome { report, output, report_path })
}
