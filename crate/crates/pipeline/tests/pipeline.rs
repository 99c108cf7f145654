use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anonpipe_backend::protocol::{EmbedResult, OpResult, RequestBody};
use anonpipe_backend::{mock, BackendClient, BackendError, BackendResponse, FnTransport, MockTransport, Op, RecordingTransport, Transport};
use anonpipe_core::PipelineConfig;
use anonpipe_pipeline::fixtures::{self, SceneSpec, THREE_SCENES};
use anonpipe_pipeline::{run_pipeline, Flag, RunOptions, RunOutcome};
use anonpipe_video::Transcoder;
use image::RgbImage;
use tempfile::TempDir;

fn fixture(dir: &TempDir, scenes: &[SceneSpec]) -> PathBuf {
    let path = dir.path().join("in.mkv");
    fixtures::write_fixture(&Transcoder::discover(None), scenes, &path).unwrap();
    path
}

fn run(input: &Path, out: &Path, transport: Arc<dyn Transport>, seed: u64, workers: usize) -> RunOutcome {
    let client = BackendClient::new(transport);
    run_pipeline(input, out, None, &PipelineConfig::default(), &client, RunOptions { run_seed: seed, workers }).unwrap()
}

fn decode(path: &Path) -> Vec<RgbImage> {
    let frames = Transcoder::discover(None).decode_frames(path).unwrap();
    frames.iter().map(|f| f.image.as_ref().clone()).collect()
}

#[test]
fn face_free_scene_passes_through_untouched() {
    let dir = TempDir::new().unwrap();
    let input = fixture(&dir, &THREE_SCENES);
    let out = dir.path().join("out.mkv");
    let outcome = run(&input, &out, Arc::new(MockTransport), 7, 2);
    let r = &outcome.report;

    assert_eq!(r.segments.len(), 3);
    assert_eq!(r.scenes.len(), 3);
    assert!(r.segments[1].passthrough);
    assert!(r.scenes[1].flags.contains(&Flag::NoFace));
    assert_eq!(outcome.output.frame_count, 39);
    assert!(outcome.output.has_audio);

    let src = decode(&input);
    let dst = decode(&out);
    assert_eq!(src[13..26], dst[13..26]);
    for s in [0, 2] {
        assert!(r.scenes[s].verified(), "scene {s}: {:?}", r.scenes[s]);
        assert_eq!(r.scenes[s].frontal_frame, Some(s as u64 * 13 + 6));
        assert_ne!(src[s * 13 + 6], dst[s * 13 + 6]);
    }
    // Pixels away from the face are kept.
    for (a, b) in src.iter().zip(&dst) {
        assert_eq!(a.get_pixel(2, 2), b.get_pixel(2, 2));
        assert_eq!(a.get_pixel(95, 71), b.get_pixel(95, 71));
    }
    assert!(!r.is_partial());
    assert!(outcome.report_path.exists());
}

#[test]
fn recurring_identity_shares_seed_and_prompt() {
    let dir = TempDir::new().unwrap();
    let input = fixture(&dir, &THREE_SCENES);
    let rec = Arc::new(RecordingTransport::new(MockTransport));
    let outcome = run(&input, &dir.path().join("out.mkv"), rec.clone(), 11, 3);

    assert_eq!(outcome.report.clusters.len(), 1);
    assert_eq!(outcome.report.scenes[0].cluster_id, outcome.report.scenes[2].cluster_id);
    let inpaints: Vec<_> = rec
        .requests()
        .into_iter()
        .filter_map(|r| match r.body {
            RequestBody::Inpaint(p) => Some(p),
            _ => None,
        })
        .collect();
    assert_eq!(inpaints.len(), 2);
    assert_eq!(inpaints[0].seed, inpaints[1].seed);
    assert_eq!(inpaints[0].prompt, inpaints[1].prompt);
    assert_eq!(inpaints[0].negative_prompt, inpaints[1].negative_prompt);
    assert_eq!(inpaints[0].seed, outcome.report.clusters[0].anon_seed);
}

#[test]
fn distinct_identities_get_distinct_clusters() {
    let dir = TempDir::new().unwrap();
    let scenes = [THREE_SCENES[0], SceneSpec { background: [110, 30, 90], identity: Some(9) }];
    let input = fixture(&dir, &scenes);
    let outcome = run(&input, &dir.path().join("out.mkv"), Arc::new(MockTransport), 5, 2);
    assert_eq!(outcome.report.clusters.len(), 2);
    assert_ne!(outcome.report.clusters[0].anon_seed, outcome.report.clusters[1].anon_seed);
}

#[test]
fn same_seed_gives_identical_output_and_report() {
    let dir = TempDir::new().unwrap();
    let input = fixture(&dir, &THREE_SCENES);
    let a = run(&input, &dir.path().join("a.mkv"), Arc::new(MockTransport), 7, 1);
    let b = run(&input, &dir.path().join("b.mkv"), Arc::new(MockTransport), 7, 4);
    assert_eq!(a.report.without_timings(), b.report.without_timings());
    assert_eq!(decode(&dir.path().join("a.mkv")), decode(&dir.path().join("b.mkv")));
}

/// Embeds every inpainted face as the original for the first `stuck` checks.
fn stuck_embedder(stuck: usize) -> (Arc<dyn Transport>, Arc<Mutex<Vec<u32>>>) {
    let calls = AtomicUsize::new(0);
    let original = Mutex::new(None::<Vec<f64>>);
    let steps = Arc::new(Mutex::new(Vec::new()));
    let seen = steps.clone();
    let t = FnTransport(move |req: &anonpipe_backend::BackendRequest| -> Result<BackendResponse, BackendError> {
        let resp = mock::handle(req);
        match &req.body {
            RequestBody::Inpaint(p) => seen.lock().unwrap().push(p.steps),
            RequestBody::Embed(_) => {
                let n = calls.fetch_add(1, Ordering::SeqCst);
                let mut orig = original.lock().unwrap();
                if n == 0 {
                    if let Some(OpResult::Embed(e)) = &resp.result {
                        *orig = Some(e.embedding.clone());
                    }
                } else if n <= stuck {
                    let embedding = orig.clone().unwrap();
                    return Ok(BackendResponse::ok(req.request_id, OpResult::Embed(EmbedResult { embedding })));
                }
            }
            _ => {}
        }
        Ok(resp)
    });
    (Arc::new(t), steps)
}

#[test]
fn verification_retries_until_distance_clears() {
    let dir = TempDir::new().unwrap();
    let input = fixture(&dir, &THREE_SCENES[..1]);
    let (t, steps) = stuck_embedder(3);
    let outcome = run(&input, &dir.path().join("out.mkv"), t, 3, 1);
    let v = outcome.report.scenes[0].verification.clone().unwrap();
    assert!(v.accepted);
    assert_eq!(v.attempts, 4);
    assert_eq!(v.final_params.steps, 35 + 15);
    assert_eq!(*steps.lock().unwrap(), vec![35, 40, 45, 50]);
    assert!(!outcome.report.is_partial());
}

#[test]
fn exhausted_retries_flag_the_scene() {
    let dir = TempDir::new().unwrap();
    let input = fixture(&dir, &THREE_SCENES[..1]);
    let (t, steps) = stuck_embedder(usize::MAX);
    let outcome = run(&input, &dir.path().join("out.mkv"), t, 3, 1);
    let s = &outcome.report.scenes[0];
    assert!(s.flags.contains(&Flag::AnonymityUnverified));
    assert_eq!(s.verification.as_ref().unwrap().attempts, 4);
    assert_eq!(steps.lock().unwrap().len(), 4);
    assert!(outcome.report.is_partial());
}

#[test]
fn backend_failure_degrades_to_passthrough() {
    let dir = TempDir::new().unwrap();
    let input = fixture(&dir, &THREE_SCENES);
    let t = FnTransport(|req: &anonpipe_backend::BackendRequest| {
        if req.op() == Op::Inpaint {
            Ok(BackendResponse::error(req.request_id, "out of memory"))
        } else {
            Ok(mock::handle(req))
        }
    });
    let out = dir.path().join("out.mkv");
    let outcome = run(&input, &out, Arc::new(t), 1, 2);
    for s in [0, 2] {
        let scene = &outcome.report.scenes[s];
        assert!(scene.flags.contains(&Flag::AnonymityUnverified));
        assert!(scene.error.as_deref().unwrap().contains("out of memory"));
    }
    assert!(outcome.report.segments.iter().all(|s| s.passthrough));
    assert_eq!(decode(&input), decode(&out));
}
