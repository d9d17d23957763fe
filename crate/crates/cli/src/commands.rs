//! Subcommand implementations.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use prt_client::{CameraSpec, Client, Layer, RenderRequest, Selection};
use prt_core::cubemap::Cubemap;
use prt_core::dataset::{self, Dataset, DatasetConfig};
use prt_core::error::Error;
use prt_core::fixtures::{self, Trajectory};
use prt_core::imageio::{self, Image};
use prt_core::render::{self, RenderSettings};
use prt_core::scene::{Camera, Scene};
use prt_core::train::checkpoint;
use prt_core::train::{evaluate_case, EvalCase, EvalMetrics, TrainConfig, Trainer};
use prt_core::wavelet::{self, SelectionMode};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::Global;

/// A failure reported as one JSON line; `exit` is 2 for usage errors and
/// missing inputs, 1 otherwise.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
            exit: 1,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            exit: 2,
            ..Self::new("usage", message)
        }
    }

    pub fn missing(path: &Path, e: impl Display) -> Self {
        CliError {
            exit: 2,
            ..Self::new("missing_input", format!("{}: {e}", path.display()))
        }
    }

    pub fn config(path: &Path, e: impl Display) -> Self {
        CliError {
            exit: 2,
            ..Self::new("invalid_config", format!("{}: {e}", path.display()))
        }
    }

    pub fn internal(e: impl Display) -> Self {
        Self::new("internal", e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => "io",
            Error::Format { .. } => "malformed_input",
            Error::InvalidArgument(_) | Error::OutOfRange(_) => "invalid_argument",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::SceneMismatch { .. } => "scene_mismatch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Cancelled => "cancelled",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        };
        CliError::new(code, e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, "no such file or directory"))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((w, h))
}

/// A wavelet budget; `None` keeps all of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavelets(pub Option<usize>);

/// `all` or a positive count.
fn parse_wavelets(s: &str) -> std::result::Result<Wavelets, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Wavelets(None));
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err("expected a positive count or `all`".into()),
        Ok(n) => Ok(Wavelets(Some(n))),
    }
}

/// Comma-separated degrees; a newtype so clap treats the list as one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotations(pub Vec<f64>);

fn parse_rotations(s: &str) -> std::result::Result<Rotations, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad rotation {t:?}")))
        .collect::<std::result::Result<_, _>>()
        .map(Rotations)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    AreaWeighted,
    Magnitude,
}

impl From<Mode> for SelectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::AreaWeighted => SelectionMode::AreaWeighted,
            Mode::Magnitude => SelectionMode::Magnitude,
        }
    }
}

/// Environment maps in a directory: face directories, `.hdr` and `.pfm`
/// files, sorted by name.
fn load_env_dir(dir: &Path, face_res: usize) -> Result<Vec<(String, Cubemap)>> {
    require(dir)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                || p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("hdr") || e.eq_ignore_ascii_case("pfm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::usage(format!("{} holds no environment maps", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("env").to_string();
            Ok((id, Cubemap::load(p, face_res.max(64))?))
        })
        .collect()
}

/// An environment given as a path, or as an id under `<assets>/envs`.
fn load_env(g: &Global, spec: &Path, face_res: usize) -> Result<Cubemap> {
    let direct = g.path(spec);
    if direct.exists() {
        return Ok(Cubemap::load(&direct, face_res)?);
    }
    if let Some(assets) = &g.assets_dir {
        let envs = assets.join("envs");
        for cand in [envs.join(spec), envs.join(spec).with_extension("hdr"), envs.join(spec).with_extension("pfm")] {
            if cand.exists() {
                return Ok(Cubemap::load(&cand, face_res)?);
            }
        }
    }
    Err(CliError::missing(&direct, "no such environment map"))
}

fn scene_file(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        p.join("scene.json")
    } else {
        p
    }
}

/// A scene given as a path, or as an id under `<assets>/scenes`.
fn load_scene(g: &Global, spec: &Path) -> Result<Scene> {
    let direct = scene_file(g.path(spec));
    if direct.exists() {
        return Ok(Scene::load(&direct)?);
    }
    if let Some(assets) = &g.assets_dir {
        for cand in [assets.join("scenes").join(spec).join("scene.json"), assets.join("scenes").join(spec).with_extension("json")] {
            if cand.exists() {
                return Ok(Scene::load(&cand)?);
            }
        }
    }
    Err(CliError::missing(&direct, "no such scene"))
}

/// The scene under `<assets>/scenes` whose hash matches `hash`.
fn find_scene_by_hash(g: &Global, hash: &str) -> Result<Scene> {
    let Some(assets) = &g.assets_dir else {
        return Err(CliError::usage("pass --scene, or --assets-dir to look the checkpoint's scene up"));
    };
    let dir = assets.join("scenes");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::missing(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        let f = scene_file(p);
        if f.extension().is_some_and(|e| e == "json") {
            if let Ok(s) = Scene::load(&f) {
                if s.hash() == hash {
                    return Ok(s);
                }
            }
        }
    }
    Err(CliError::new("scene_mismatch", format!("no scene under {} matches the checkpoint", dir.display())))
}

// ---------------------------------------------------------------- precompute

#[derive(Args, Debug)]
pub struct PrecomputeArgs {
    /// Scene JSON (or a directory holding `scene.json`, or an asset id).
    #[arg(long)]
    scene: PathBuf,
    /// Directory of environment maps (face directories, `.hdr`, `.pfm`).
    #[arg(long)]
    envs: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with defaults for any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples per pixel.
    #[arg(long)]
    spp: Option<usize>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Number of camera views.
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cubemap face resolution of the training lighting.
    #[arg(long)]
    face_res: Option<usize>,
    /// Extra environment rotations in degrees, comma separated (0 is
    /// always included).
    #[arg(long, value_parser = parse_rotations)]
    rotations: Option<Rotations>,
    /// Lighting conditions per view (0 renders every view under all).
    #[arg(long)]
    envs_per_view: Option<usize>,
    #[arg(long)]
    max_bounces: Option<usize>,
    /// Also store direct-only renders, used by `eval` for full-image metrics.
    #[arg(long)]
    store_direct: bool,
    /// Camera trajectory JSON; by default an orbit framing the scene.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Offset in [0, 1) along the trajectory; a different phase gives
    /// disjoint views, e.g. for a held-out set.
    #[arg(long)]
    phase: Option<f64>,
    /// Use the full-scale lighting resolution (64).
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecomputeConfig {
    #[serde(flatten)]
    pub dataset: DatasetConfig,
    pub cameras: usize,
    pub phase: f64,
    pub trajectory: Option<Trajectory>,
}

impl Default for PrecomputeConfig {
    fn default() -> Self {
        PrecomputeConfig {
            dataset: DatasetConfig::default(),
            cameras: 48,
            phase: 0.0,
            trajectory: None,
        }
    }
}

pub fn precompute(g: &Global, a: PrecomputeArgs) -> Result<()> {
    let mut defaults = PrecomputeConfig::default();
    if a.paper_scale {
        defaults.dataset.face_res = 64;
    }
    let mut cfg = config::load(&defaults, a.config.as_deref().map(|p| g.path(p)).as_deref())?;
    let d = &mut cfg.dataset;
    if let Some(v) = a.spp {
        d.spp = v;
    }
    if let Some((w, h)) = a.size {
        d.width = w;
        d.height = h;
    }
    if let Some(v) = a.seed {
        d.seed = v;
    }
    if let Some(v) = a.face_res {
        d.face_res = v;
    }
    if let Some(v) = a.rotations {
        d.rotations_deg = v.0;
    }
    if let Some(v) = a.envs_per_view {
        d.envs_per_view = v;
    }
    if let Some(v) = a.max_bounces {
        d.max_bounces = v;
    }
    d.store_direct |= a.store_direct;
    if let Some(v) = a.cameras {
        cfg.cameras = v;
    }
    if let Some(v) = a.phase {
        cfg.phase = v;
    }
    if let Some(p) = &a.trajectory {
        let p = g.path(p);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::missing(&p, e))?;
        cfg.trajectory = Some(serde_json::from_str(&text).map_err(|e| CliError::config(&p, e))?);
    }
    if cfg.cameras == 0 {
        return Err(CliError::usage("--cameras must be positive"));
    }
    let scene = load_scene(g, &a.scene)?;
    let envs = load_env_dir(&g.path(&a.envs), cfg.dataset.face_res)?;
    let mut traj = cfg.trajectory.clone().unwrap_or_else(|| Trajectory::framing(&scene.bounds(), cfg.cameras));
    traj.count = cfg.cameras;
    traj.phase = cfg.phase;
    cfg.trajectory = Some(traj.clone());
    let cams = traj.cameras(cfg.dataset.width, cfg.dataset.height);
    let out = a.out.clone();
    let rows = dataset::generate_training_set(&scene, &envs, &cams, &out, &cfg.dataset)?;
    write_json(&out.join("precompute.json"), &cfg)?;
    println!(
        "{}",
        serde_json::json!({
            "images": rows.len(),
            "views": cams.len(),
            "manifest_sha256": dataset::manifest_hash(&out)?,
        })
    );
    Ok(())
}

// --------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training set written by `precompute`.
    #[arg(long)]
    data: PathBuf,
    /// JSON training configuration (any subset of the fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines); defaults to the checkpoint path with
    /// `.log.jsonl` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Held-out dataset scored every `eval_every` steps.
    #[arg(long)]
    held_out: Option<PathBuf>,
    /// Held-out images used for the periodic score.
    #[arg(long, default_value_t = 4)]
    held_out_images: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    wavelets_per_step: Option<usize>,
    #[arg(long)]
    pixels_per_strategy: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Full-scale model and batch sizes.
    #[arg(long)]
    paper_scale: bool,
}

pub fn train(g: &Global, a: TrainArgs) -> Result<()> {
    let defaults = if a.paper_scale { TrainConfig::paper() } else { TrainConfig::desk() };
    let mut cfg = config::load(&defaults, a.config.as_deref().map(|p| g.path(p)).as_deref())?;
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.wavelets_per_step {
        cfg.wavelets_per_step = v;
    }
    if let Some(v) = a.pixels_per_strategy {
        cfg.pixels_per_strategy = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    let data = g.path(&a.data);
    require(&data.join("dataset.json"))?;
    let ds = Dataset::load(&data)?;
    let held: Vec<EvalCase> = match &a.held_out {
        Some(p) => {
            let p = g.path(p);
            require(&p.join("dataset.json"))?;
            let h = Dataset::load(&p)?;
            if h.meta.scene_hash != ds.meta.scene_hash {
                return Err(CliError::new("scene_mismatch", "held-out set was rendered from a different scene"));
            }
            EvalCase::all(&h).into_iter().take(a.held_out_images).collect()
        }
        None => Vec::new(),
    };
    let out = a.out.clone();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let log_path = a.log.unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let mut trainer = Trainer::new(&ds, cfg)?;
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let records = trainer.run(&held, &mut log, Some(&out))?;
    let last = records.last();
    println!(
        "{}",
        serde_json::json!({
            "steps": trainer.steps_completed(),
            "final_loss": last.map(|r| r.loss),
            "held_out_psnr": records.iter().rev().find_map(|r| r.held_out_psnr),
            "checkpoint": out,
            "log": log_path,
        })
    );
    Ok(())
}

// -------------------------------------------------------------------- render

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Checkpoint file (or its id when --remote is used).
    #[arg(long)]
    ckpt: PathBuf,
    /// Environment map path or asset id.
    #[arg(long)]
    env: PathBuf,
    /// Camera preset name of the scene.
    #[arg(long)]
    camera: String,
    /// Scene path or asset id; by default the scene under
    /// `<assets-dir>/scenes` matching the checkpoint.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Environment rotation about +Y in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rotation: f64,
    /// Wavelets kept per frame, or `all`.
    #[arg(long, default_value = "64", value_parser = parse_wavelets)]
    wavelets: Wavelets,
    #[arg(long, value_enum, default_value_t = Mode::AreaWeighted)]
    mode: Mode,
    /// Add path-traced direct lighting.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 64)]
    direct_spp: usize,
    /// Image size as WIDTHxHEIGHT (default: the preset's).
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output image; a `.pfm`, `.png` and `.json` with the same stem are
    /// written (only the PNG when --remote is used).
    #[arg(long)]
    out: PathBuf,
    /// Render through a running service at this URL instead of in-process.
    #[arg(long)]
    remote: Option<String>,
}

#[derive(Debug, Serialize)]
struct RenderRecord<'a> {
    checkpoint_sha256: &'a str,
    scene_hash: &'a str,
    env: String,
    rotation_deg: f64,
    camera: &'a Camera,
    settings: &'a RenderSettings,
    wavelets_used: usize,
}

fn with_ext(p: &Path, ext: &str) -> PathBuf {
    p.with_extension(ext)
}

pub fn render(g: &Global, a: RenderArgs) -> Result<()> {
    if let Some(url) = &a.remote {
        return render_remote(&a, url);
    }
    let ckpt = g.path(&a.ckpt);
    let bytes = std::fs::read(&ckpt).map_err(|e| CliError::missing(&ckpt, e))?;
    let (model, meta) = checkpoint::decode(&bytes)?;
    meta.check_conventions()?;
    let scene = match &a.scene {
        Some(s) => load_scene(g, s)?,
        None => find_scene_by_hash(g, &meta.scene_hash)?,
    };
    meta.check_scene(scene.hash())?;
    let mut camera = scene
        .preset(&a.camera)
        .cloned()
        .ok_or_else(|| CliError::usage(format!("scene has no camera preset {:?}", a.camera)))?;
    if let Some((w, h)) = a.size {
        camera.width = w;
        camera.height = h;
    }
    let env = load_env(g, &a.env, 64)?;
    let lighting = render::prepare_lighting(&env, meta.field.wavelet_face_res, a.rotation)?;
    let settings = RenderSettings {
        num_wavelets: a.wavelets.0,
        selection: a.mode.into(),
        include_direct: a.full,
        direct_spp: a.direct_spp,
        seed: a.seed,
    };
    let out = render::render_full(&model, &scene, &camera, &lighting, &settings, None)?;
    let path = a.out.clone();
    write_file(&with_ext(&path, "pfm"), &imageio::encode_pfm(&out.full))?;
    write_file(&with_ext(&path, "png"), &imageio::encode_png(&out.full)?)?;
    if let Some(d) = &out.direct {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("render");
        write_file(&path.with_file_name(format!("{stem}_indirect.pfm")), &imageio::encode_pfm(&out.indirect))?;
        write_file(&path.with_file_name(format!("{stem}_direct.pfm")), &imageio::encode_pfm(d))?;
    }
    let hash = checkpoint::hash_bytes(&bytes);
    write_json(
        &with_ext(&path, "json"),
        &RenderRecord {
            checkpoint_sha256: &hash,
            scene_hash: scene.hash(),
            env: a.env.display().to_string(),
            rotation_deg: a.rotation,
            camera: &camera,
            settings: &settings,
            wavelets_used: out.wavelets_used,
        },
    )?;
    println!("{}", serde_json::json!({"out": with_ext(&path, "pfm"), "wavelets_used": out.wavelets_used}));
    Ok(())
}

fn id_of(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn render_remote( a: &RenderArgs, url: &str) -> Result<()> {
    let scene = a.scene.as_deref().map(id_of).ok_or_else(|| CliError::usage("--remote needs --scene with a scene id"))?;
    let (w, h) = a.size.unwrap_or((64, 64));
    let mut req = RenderRequest::new(&scene, &id_of(&a.ckpt), &id_of(&a.env), CameraSpec::preset(&a.camera, w, h));
    req.rotation_deg = a.rotation;
    req.num_wavelets = a.wavelets.0.ok_or_else(|| CliError::usage("--remote needs a numeric --wavelets"))?;
    req.selection = match a.mode {
        Mode::AreaWeighted => Selection::AreaWeighted,
        Mode::Magnitude => Selection::Magnitude,
    };
    req.include_direct = a.full;
    req.direct_spp = a.direct_spp;
    req.seed = a.seed;
    req.layer = Layer::Full;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(CliError::internal)?;
    let frame = rt
        .block_on(Client::new(url).render(&req))
        .map_err(|e| CliError::new("remote", e.to_string()))?;
    let path = with_ext(&a.out, "png");
    write_file(&path, &frame.png)?;
    println!(
        "{}",
        serde_json::json!({"out": path, "wavelets_used": frame.wavelets_used, "render_ms": frame.render_ms, "etag": frame.etag})
    );
    Ok(())
}

// ---------------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long, required_unless_present = "compare")]
    ckpt: Option<PathBuf>,
    /// Score PFM images in this directory instead of a checkpoint; files
    /// are matched to dataset rows by relative path or by file name.
    #[arg(long, conflicts_with = "ckpt")]
    compare: Option<PathBuf>,
    /// Dataset with ground-truth images (typically held out).
    #[arg(long)]
    data: PathBuf,
    /// Output JSON report.
    #[arg(long)]
    report: PathBuf,
    /// Wavelets kept per image, or `all`.
    #[arg(long, default_value = "64", value_parser = parse_wavelets)]
    wavelets: Wavelets,
    #[arg(long, value_enum, default_value_t = Mode::AreaWeighted)]
    mode: Mode,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub num_wavelets: Option<usize>,
    pub mode: Mode,
    pub images: Vec<EvalMetrics>,
    pub mean: MeanMetrics,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub rel_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_rel_l2: Option<f64>,
}

fn mean_metrics(images: &[EvalMetrics]) -> MeanMetrics {
    let n = images.len().max(1) as f64;
    let opt_mean = |f: &dyn Fn(&EvalMetrics) -> Option<f64>| {
        let v: Option<Vec<f64>> = images.iter().map(f).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    MeanMetrics {
        psnr: images.iter().map(|m| m.psnr).sum::<f64>() / n,
        rel_l2: images.iter().map(|m| m.rel_l2).sum::<f64>() / n,
        full_psnr: opt_mean(&|m| m.full_psnr),
        full_rel_l2: opt_mean(&|m| m.full_rel_l2),
    }
}

fn compare_metrics(case: &EvalCase, pred: &Image) -> Result<EvalMetrics> {
    let mask = case.hit_mask();
    let full = match &case.direct {
        Some(d) => {
            let (p, t) = (pred.add(d)?, case.target.add(d)?);
            Some((render::psnr(&p, &t, 1.0, Some(&mask))?, render::rel_l2(&p, &t, Some(&mask))?))
        }
        None => None,
    };
    Ok(EvalMetrics {
        name: case.name.clone(),
        wavelets_used: 0,
        psnr: render::psnr(pred, &case.target, 1.0, Some(&mask))?,
        rel_l2: render::rel_l2(pred, &case.target, Some(&mask))?,
        loss: f64::NAN,
        full_psnr: full.map(|f| f.0),
        full_rel_l2: full.map(|f| f.1),
    })
}

pub fn eval(g: &Global, a: EvalArgs) -> Result<()> {
    let data = g.path(&a.data);
    require(&data.join("dataset.json"))?;
    let ds = Dataset::load(&data)?;
    let cases = EvalCase::all(&ds);
    let (source, images) = if let Some(dir) = &a.compare {
        let dir = g.path(dir);
        require(&dir)?;
        let mut out = Vec::new();
        for (case, row) in cases.iter().zip(&ds.rows) {
            let nested = dir.join(&row.image);
            let p = if nested.exists() {
                nested
            } else {
                dir.join(Path::new(&row.image).file_name().unwrap_or_default())
            };
            require(&p)?;
            let mut m = compare_metrics(case, &imageio::read_pfm(&p)?)?;
            m.loss = 0.0;
            out.push(m);
        }
        (dir.display().to_string(), out)
    } else {
        let ckpt = g.path(a.ckpt.as_ref().expect("clap requires --ckpt or --compare"));
        require(&ckpt)?;
        let (model, meta) = checkpoint::load(&ckpt)?;
        meta.check_conventions()?;
        meta.check_scene(&ds.meta.scene_hash)?;
        let tm = prt_core::train::tonemap::Tonemap::new(prt_core::train::tonemap::MU, prt_core::train::tonemap::EPS);
        let mut out = Vec::new();
        for case in &cases {
            out.push(evaluate_case(&model, case, a.wavelets.0, a.mode.into(), &tm)?.1);
        }
        (ckpt.display().to_string(), out)
    };
    let report = EvalReport {
        source,
        num_wavelets: a.wavelets.0,
        mode: a.mode,
        mean: mean_metrics(&images),
        images,
    };
    write_json(&a.report, &report)?;
    println!("{}", serde_json::to_string(&report.mean).map_err(CliError::internal)?);
    Ok(())
}

// ------------------------------------------------------------- wavelet-stats

#[derive(Args, Debug)]
pub struct WaveletStatsArgs {
    /// Environment map path or asset id.
    #[arg(long)]
    env: PathBuf,
    /// Output CSV with columns `k,fraction,retained`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    face_res: usize,
    #[arg(long, value_enum, default_value_t = Mode::Magnitude)]
    mode: Mode,
}

/// Powers of two, the 1% point and the total, ascending.
pub fn curve_points(total: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|k| *k < total).collect();
    ks.push(one_percent(total));
    ks.push(total);
    ks.sort_unstable();
    ks.dedup();
    ks
}

pub fn one_percent(total: usize) -> usize {
    (total / 100).max(1)
}

pub fn wavelet_stats(g: &Global, a: WaveletStatsArgs) -> Result<()> {
    if !a.face_res.is_power_of_two() {
        return Err(CliError::usage("--face-res must be a power of two"));
    }
    let env = load_env(g, &a.env, a.face_res)?.resampled(a.face_res)?;
    let w = wavelet::forward(&env)?;
    let total = w.len();
    let curve = wavelet::energy_curve(&w, a.mode.into(), &curve_points(total));
    let mut csv = String::from("k,fraction,retained\n");
    for (k, r) in &curve {
        csv.push_str(&format!("{k},{:.8},{r:.10}\n", *k as f64 / total as f64));
    }
    write_file(&a.out, csv.as_bytes())?;
    let k1 = one_percent(total);
    let r1 = curve.iter().find(|(k, _)| *k == k1).map(|c| c.1);
    println!(
        "{}",
        serde_json::json!({"env": a.env, "face_res": a.face_res, "total": total, "top_1pct_k": k1, "top_1pct_retained": r1})
    );
    Ok(())
}

// --------------------------------------------------------------------- serve

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Concurrent renders (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
}

pub fn serve(g: &Global, a: ServeArgs) -> Result<()> {
    let mut cfg = prt_service::ServiceConfig {
        assets_dir: g.assets_dir.clone().unwrap_or_else(|| PathBuf::from("assets")),
        host: a.host,
        port: a.port,
        ..Default::default()
    };
    if let Some(w) = a.workers {
        cfg.workers = w.max(1);
    }
    require(&cfg.assets_dir)?;
    let rt = tokio::runtime::Runtime::new().map_err(CliError::internal)?;
    rt.block_on(prt_service::serve(cfg)).map_err(|e| CliError::new("serve", e.to_string()))
}

// ------------------------------------------------------------------- fixture

#[derive(Args, Debug)]
pub struct FixtureArgs {
    /// Output asset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of procedural indoor probes.
    #[arg(long, default_value_t = 5)]
    probes: usize,
    #[arg(long, default_value_t = 64)]
    face_res: usize,
}

pub fn fixture(_g: &Global, a: FixtureArgs) -> Result<()> {
    if !a.face_res.is_power_of_two() {
        return Err(CliError::usage("--face-res must be a power of two"));
    }
    let out = a.out.clone();
    fixtures::write_assets(&out, a.probes, a.face_res)?;
    println!("{}", serde_json::json!({"assets": out, "probes": a.probes}));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_size("64x32"), Ok((64, 32)));
        assert!(parse_size("64").is_err() && parse_size("0x4").is_err());
        assert_eq!(parse_wavelets("all"), Ok(Wavelets(None)));
        assert_eq!(parse_wavelets("16"), Ok(Wavelets(Some(16))));
        assert!(parse_wavelets("0").is_err());
        assert_eq!(parse_rotations("120, 240"), Ok(Rotations(vec![120.0, 240.0])));
        assert_eq!(parse_rotations(""), Ok(Rotations(vec![])));
    }

    #[test]
    fn curve_points_cover_the_one_percent_mark() {
        let ks = curve_points(6 * 64 * 64);
        assert!(ks.contains(&245) && ks.contains(&24576) && ks[0] == 1);
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
    }
}
