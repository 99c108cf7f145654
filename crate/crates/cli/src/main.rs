use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anonpipe_backend::golden::{check_builtin, check_requests, CheckOutcome};
use anonpipe_backend::{server, BackendClient, BackendError, HttpTransport, MockTransport, Transport};
use anonpipe_core::geometry::{pose_from_landmarks, CameraModel, LandmarkSet};
use anonpipe_core::metrics::{evaluate_manifests, ManifestRecord, MetricKind};
use anonpipe_core::scene::detect_scenes;
use anonpipe_core::{load_config_file, Exec, PipelineConfig, Scene};
use anonpipe_pipeline::report::write_atomic;
use anonpipe_pipeline::{run_pipeline, PipelineError, RunOptions};
use anonpipe_video::Transcoder;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (backend protocol v1)");

#[derive(Debug, Parser)]
#[command(name = "anonpipe", version = VERSION, about = "Face anonymization for video", propagate_version = true)]
struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Anonymize every face in a video.
    Anonymize(AnonymizeArgs),
    /// Print the scene segmentation of a video.
    Scenes(ScenesArgs),
    /// Estimate head pose from a 68-point landmark file.
    Pose(PoseArgs),
    /// Compute anonymization metrics from two manifests.
    Evaluate(EvaluateArgs),
    /// Backend utilities.
    #[command(subcommand)]
    Backends(BackendsCommand),
}

#[derive(Debug, Args)]
struct AnonymizeArgs {
    video: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the built-in deterministic backends instead of a service.
    #[arg(long)]
    mock_backends: bool,
    #[arg(long, env = "ANONPIPE_BACKEND_URL")]
    backend_url: Option<String>,
    /// Seed for every random choice in the run; drawn and printed if absent.
    #[arg(long)]
    run_seed: Option<u64>,
    /// Scenes processed at once [default: available parallelism].
    #[arg(long)]
    workers: Option<usize>,
    /// Report path [default: <output stem>.report.json].
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenesArgs {
    video: PathBuf,
    /// Cut threshold on the histogram difference.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PoseArgs {
    /// Image the landmarks were taken from; only its size is read.
    image: PathBuf,
    /// 68 lines of "x y".
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Original manifest (JSON Lines).
    #[arg(long)]
    orig: PathBuf,
    /// Anonymized manifest (JSON Lines).
    #[arg(long)]
    anon: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "reid,pose,expr,temporal,attrs")]
    metrics: Vec<MetricKind>,
    /// `.md` renders tables; anything else is JSON.
    #[arg(long)]
    out: PathBuf,
    /// Row label used in the markdown tables.
    #[arg(long, default_value = "anonymized")]
    label: String,
}

#[derive(Debug, Subcommand)]
enum BackendsCommand {
    /// Serve the mock backends over HTTP until interrupted.
    ServeMock {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Send golden requests to a backend and validate the responses.
    Check {
        #[arg(long, env = "ANONPIPE_BACKEND_URL", conflicts_with = "mock")]
        url: Option<String>,
        /// Check the in-process mocks.
        #[arg(long)]
        mock: bool,
        /// Directory of `*.request.json` files [default: built-in set].
        #[arg(long)]
        golden_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// A failed command: message and process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const EXIT_USAGE: u8 = 1;
const EXIT_MEDIA: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
    fn media(message: impl Into<String>) -> Self {
        Self { code: EXIT_MEDIA, message: message.into() }
    }
    fn backend(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_BACKEND, message: e.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::media(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Anonymize(a) => anonymize(a),
        Command::Scenes(a) => scenes(a),
        Command::Pose(a) => pose(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Backends(BackendsCommand::ServeMock { port, host }) => serve_mock(SocketAddr::new(host, port)),
        Command::Backends(BackendsCommand::Check { url, mock, golden_dir, json }) => {
            check(url, mock, golden_dir.as_deref(), json)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => load_config_file(p).map_err(|e| Failure::usage(e.to_string())),
        None => Ok(PipelineConfig::default()),
    }
}

fn anonymize(args: AnonymizeArgs) -> Result<u8, Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let transport: Arc<dyn Transport> = if args.mock_backends {
        Arc::new(MockTransport)
    } else {
        let url = args.backend_url.clone().or_else(|| cfg.backend.url.clone()).ok_or_else(|| {
            Failure::usage("no backend configured: pass --backend-url, set ANONPIPE_BACKEND_URL, or use --mock-backends")
        })?;
        let http = HttpTransport::new(&url, Duration::from_secs_f64(cfg.backend.timeout_secs), cfg.backend.transport_retries)
            .map_err(Failure::backend)?;
        let health = http.health().map_err(|e| Failure::backend(format!("backend at {url} is not healthy: {e}")))?;
        if health.protocol != anonpipe_backend::PROTOCOL_VERSION {
            return Err(Failure::backend(format!("backend at {url} speaks protocol {}", health.protocol)));
        }
        Arc::new(http)
    };
    let run_seed = args.run_seed.unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("run seed: {seed}");
        seed
    });
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let client = BackendClient::new(transport);
    let outcome = run_pipeline(
        &args.video,
        &args.output,
        args.report.as_deref(),
        &cfg,
        &client,
        RunOptions { run_seed, workers },
    )?;

    let t = &outcome.report.totals;
    println!("wrote {} ({} frames)", args.output.display(), outcome.output.frame_count);
    println!("report {}", outcome.report_path.display());
    println!(
        "scenes {}  with faces {}  anonymized {}  verified {}  flagged {}",
        t.scenes, t.face_scenes, t.anonymized_scenes, t.verified_scenes, t.flagged_scenes
    );
    if outcome.report.is_partial() {
        for s in outcome.report.scenes.iter().filter(|s| s.flags.iter().any(|f| f.is_partial())) {
            eprintln!("warning: scene {} flagged {:?}", s.scene_id, s.flags);
        }
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

#[derive(Serialize)]
struct ScenesOutput<'a> {
    video: String,
    frame_count: u64,
    fps: String,
    threshold: f64,
    scene_count: usize,
    segments: &'a [Scene],
}

fn scenes(args: ScenesArgs) -> Result<u8, Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let threshold = args.threshold.unwrap_or(cfg.scene_threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Failure::usage(format!("--threshold must lie in (0, 1), got {threshold}")));
    }
    let tc = Transcoder::discover(cfg.video.ffmpeg.as_deref().map(Path::new));
    let (frames, info) = tc.decode_with_info(&args.video).map_err(|e| Failure::media(e.to_string()))?;
    let segments = detect_scenes(&frames, threshold, cfg.merge_tolerance, Exec::default())
        .map_err(|e| Failure::media(e.to_string()))?;
    let scene_count = segments.iter().map(|s| s.scene_id).max().map_or(0, |m| m + 1);
    if args.json {
        let out = ScenesOutput {
            video: args.video.display().to_string(),
            frame_count: info.frame_count,
            fps: info.fps.to_string(),
            threshold,
            scene_count,
            segments: &segments,
        };
        println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    } else {
        println!("{:>7} {:>5} {:>7} {:>7}  mean_rgb", "segment", "scene", "start", "end");
        for s in &segments {
            let [r, g, b] = s.mean_rgb;
            println!("{:>7} {:>5} {:>7} {:>7}  {r:.1} {g:.1} {b:.1}", s.segment_id, s.scene_id, s.start_frame, s.end_frame);
        }
        println!("{} segment(s), {scene_count} scene(s), {} frames", segments.len(), info.frame_count);
    }
    Ok(0)
}

fn pose(args: PoseArgs) -> Result<u8, Failure> {
    let (w, h) = image::image_dimensions(&args.image)
        .map_err(|e| Failure::media(format!("{}: {e}", args.image.display())))?;
    let text = std::fs::read_to_string(&args.landmarks)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.landmarks.display())))?;
    let lm = LandmarkSet::parse(&text).map_err(|e| Failure::usage(format!("{}: {e}", args.landmarks.display())))?;
    let pose = pose_from_landmarks(&lm, &CameraModel::for_image(w, h)).map_err(|e| Failure::usage(e.to_string()))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&pose).expect("serializable"));
    } else {
        println!("pitch {:.2}  yaw {:.2}  roll {:.2}  (degrees)", pose.pitch, pose.yaw, pose.roll);
        println!("rmse  {:.3} px", pose.reprojection_rmse);
    }
    Ok(0)
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    ManifestRecord::parse_jsonl(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn evaluate(args: EvaluateArgs) -> Result<u8, Failure> {
    let orig = read_manifest(&args.orig)?;
    let anon = read_manifest(&args.anon)?;
    let report = evaluate_manifests(&orig, &anon, &args.metrics, Exec::default()).map_err(|e| Failure::usage(e.to_string()))?;
    let text = if args.out.extension().is_some_and(|e| e == "md") {
        report.to_markdown(&args.label)
    } else {
        let mut s = serde_json::to_string_pretty(&report).expect("serializable");
        s.push('\n');
        s
    };
    write_atomic(&args.out, &text).map_err(|e| Failure::usage(format!("{}: {e}", args.out.display())))?;
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn serve_mock(addr: SocketAddr) -> Result<u8, Failure> {
    server::run_until_ctrl_c(addr, |bound| println!("mock backends listening on http://{bound}"))
        .map_err(|e| Failure::backend(format!("cannot serve on {addr}: {e}")))?;
    Ok(0)
}

fn golden_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, Failure> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| Failure::usage(e.to_string()))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".request.json") {
            let bytes = std::fs::read(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            files.push((name, bytes));
        }
    }
    files.sort();
    Ok(files)
}

fn check(url: Option<String>, mock: bool, golden_dir: Option<&Path>, json: bool) -> Result<u8, Failure> {
    let transport: Box<dyn Transport> = if mock {
        Box::new(MockTransport)
    } else {
        let url = url.ok_or_else(|| Failure::usage("pass --url, set ANONPIPE_BACKEND_URL, or use --mock"))?;
        let http = HttpTransport::new(&url, Duration::from_secs(30), 0).map_err(Failure::backend)?;
        http.health().map_err(|e: BackendError| Failure::backend(format!("backend at {url} is not healthy: {e}")))?;
        Box::new(http)
    };
    let outcomes: Vec<CheckOutcome> = match golden_dir {
        Some(dir) => {
            let files = golden_files(dir)?;
            if files.is_empty() {
                eprintln!("warning: no *.request.json files in {}", dir.display());
            }
            check_requests(files.iter().map(|(n, b)| (n.clone(), b.as_slice())), transport.as_ref())
        }
        None => check_builtin(transport.as_ref()),
    };
    if json {
        let rows: Vec<_> = outcomes
            .iter()
            .map(|o| serde_json::json!({ "name": o.name, "passed": o.passed, "detail": o.detail }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows).expect("serializable"));
    } else {
        for o in &outcomes {
            println!("{} {}  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        }
    }
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { EXIT_BACKEND })
}
