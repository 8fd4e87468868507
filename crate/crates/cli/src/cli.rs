//! Command line front end.

use std::error::Error;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sketchforge::fusion::{
    encode_depth_png, integrate_depth, load_depth_sequence, load_scene_mesh, SceneDocument, TsdfVolume,
};
use sketchforge::geometry::{parse_obj, write_obj, ViewCamera, CANONICAL_DISTANCE, CANONICAL_FOV_DEG};
use sketchforge::nn::{load_weights, save_weights};
use sketchforge::placement::PlacementTransform;
use sketchforge::render::{render_depth, render_hard_view, render_soft_view, RasterParams};
use sketchforge::train::{
    evaluate, fit, generate_toy_dataset, load_dataset, split_by_shape, write_dataset, DatasetSpec, ShapeFamily,
    TrainConfig, Trainer,
};
use sketchforge::{CameraIntrinsics, CameraPose};

use crate::error::ServiceError;
use crate::registry::Registry;
use crate::service::{handle_generate, router, AppState, GenerateRequest, DEFAULT_FOV_DEG};
use crate::store::Store;

type CmdResult = Result<(), Box<dyn Error + Send + Sync>>;

#[derive(Parser, Debug)]
#[command(name = "sketchforge", version, about = "Sketch-to-mesh generation and in-scene placement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a procedural sketch dataset.
    Dataset(DatasetArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate weights: voxel IoU and viewpoint errors per class.
    Eval(EvalArgs),
    /// Overfit a single sketch and report the silhouette IoU.
    Fit(FitArgs),
    /// Generate an object from a sketch and place it in a stored scene.
    Generate(GenerateArgs),
    /// Build a scene from depth frames or an OBJ mesh.
    Fuse(FuseArgs),
    /// Add an existing mesh to a stored scene.
    Place(PlaceArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Render a mesh to a PNG.
    Render(RenderArgs),
}

fn parse_family(s: &str) -> Result<ShapeFamily, String> {
    ShapeFamily::ALL
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| format!("unknown family '{s}' (chair, table, lamp)"))
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected x,y,z, got '{s}'"))
}

#[derive(Args, Debug)]
pub struct PoseArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub elevation: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub azimuth: f64,
    #[arg(long, default_value_t = CANONICAL_DISTANCE)]
    pub distance: f64,
}

impl PoseArgs {
    fn pose(&self) -> Result<CameraPose, sketchforge::geometry::GeometryError> {
        CameraPose::new(self.elevation, self.azimuth, self.distance)
    }
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_family, default_value = "chair")]
    pub families: Vec<ShapeFamily>,
    #[arg(long, default_value_t = 200)]
    pub shapes: usize,
    #[arg(long, default_value_t = 24)]
    pub poses: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Final weights.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration; missing fields take default values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Disable random pose sampling.
    #[arg(long)]
    pub no_rps: bool,
    /// Disable the shape discriminator.
    #[arg(long)]
    pub no_sd: bool,
    /// Train only on the shapes kept after holding out this fraction.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Per-step metrics, one JSON object per line.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate only the shapes held out by `train --holdout`.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Voxel grid resolution.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Dataset to take the sample from; without it one shape is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_parser = parse_family, default_value = "chair")]
    pub family: ShapeFamily,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Supervise at the true pose instead of the predicted one.
    #[arg(long)]
    pub supervise_at_gt: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub class: String,
    /// Sketch PNG drawn over the view; dark pixels are strokes.
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub scene: String,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    pub target: [f64; 3],
    #[arg(long, default_value_t = DEFAULT_FOV_DEG)]
    pub fov: f64,
    /// Apply the elevation change as well as the yaw.
    #[arg(long)]
    pub full_rotation: bool,
    /// Write the canonical mesh here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Depth sequence directory (frames.json plus 16-bit PNGs).
    #[arg(long, required_unless_present = "mesh", conflicts_with = "mesh")]
    pub frames: Option<PathBuf>,
    /// Import this OBJ as the scene instead of fusing.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = TsdfVolume::DEFAULT_RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = TsdfVolume::DEFAULT_VOXEL)]
    pub voxel: f64,
    #[arg(long, default_value_t = TsdfVolume::DEFAULT_TRUNCATION)]
    pub truncation: f64,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    pub center: [f64; 3],
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add the scene to this store and print its id.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlaceArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub scene: String,
    #[arg(long)]
    pub mesh: PathBuf,
    /// JSON placement transform; identity when omitted.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    #[arg(long, default_value = "import")]
    pub source: String,
    /// Write the merged scene here.
    #[arg(long)]
    pub merged_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Silhouette,
    Soft,
    Sketch,
    Depth,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = CANONICAL_FOV_DEG)]
    pub fov: f64,
    #[arg(long, value_enum, default_value_t = RenderMode::Silhouette)]
    pub mode: RenderMode,
    /// Edge sharpness of the soft renderer.
    #[arg(long, default_value_t = RasterParams::default().sharpness)]
    pub sharpness: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 on usage errors and 1 on
/// operational errors, which are reported as one `error:` line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            match e.downcast_ref::<ServiceError>() {
                Some(s) => eprintln!("error: {}: {s}", s.code()),
                None => eprintln!("error: {e}"),
            }
            1
        }
    }
}

pub fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Dataset(a) => dataset(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Generate(a) => generate(a),
        Command::Fuse(a) => fuse(a),
        Command::Place(a) => place(a),
        Command::Serve(a) => serve(a),
        Command::Render(a) => render(a),
    }
}

fn dataset(a: DatasetArgs) -> CmdResult {
    let spec = DatasetSpec {
        families: a.families,
        shapes_per_family: a.shapes,
        poses_per_shape: a.poses,
        image_size: a.size,
        seed: a.seed,
        ..DatasetSpec::default()
    };
    let samples = generate_toy_dataset(&spec)?;
    write_dataset(&a.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn merge_json(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults overlaid with the fields present in `path`.
pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig, Box<dyn Error + Send + Sync>> {
    let mut value = serde_json::to_value(TrainConfig::default())?;
    if let Some(p) = path {
        let over: serde_json::Value = serde_json::from_slice(&std::fs::read(p)?)?;
        merge_json(&mut value, over);
    }
    Ok(serde_json::from_value(value)?)
}

fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_train_config(a.config.as_deref())?;
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    cfg.rps &= !a.no_rps;
    cfg.sd &= !a.no_sd;
    let mut data = load_dataset(&a.data)?;
    if let Some(h) = a.holdout {
        data = split_by_shape(&data, h).0;
    }
    if let Some(first) = data.first() {
        cfg.model.input_size = first.sketch.width;
    }
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(cfg, p)?,
        None => Trainer::new(cfg)?,
    };
    let mut log = a.log.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    let metrics = trainer.run(
        &data,
        log.as_mut().map(|w| w as &mut dyn Write),
        a.checkpoint.as_deref(),
        a.checkpoint_every,
    )?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    save_weights(&trainer.weights, &a.out)?;
    match metrics.last() {
        Some(m) => println!("step {}: total {:.6}, wrote {}", m.step + 1, m.total, a.out.display()),
        None => println!("nothing to do, wrote {}", a.out.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let weights = load_weights(&a.weights)?;
    let mut data = load_dataset(&a.data)?;
    if let Some(h) = a.holdout {
        data = split_by_shape(&data, h).1;
    }
    let report = evaluate(&weights, &data, a.resolution)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn fit_cmd(a: FitArgs) -> CmdResult {
    let sample = match &a.data {
        Some(dir) => {
            let mut data = load_dataset(dir)?;
            if a.index >= data.len() {
                return Err(format!("index {} outside a dataset of {}", a.index, data.len()).into());
            }
            data.swap_remove(a.index)
        }
        None => {
            let spec = DatasetSpec {
                families: vec![a.family],
                shapes_per_family: 1,
                poses_per_shape: 1,
                image_size: a.size,
                seed: a.seed,
                ..DatasetSpec::default()
            };
            generate_toy_dataset(&spec)?.swap_remove(0)
        }
    };
    let mut cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        decay_every: a.steps.max(1),
        seed: a.seed,
        supervise_at_gt: a.supervise_at_gt,
        ..TrainConfig::default()
    };
    cfg.model.input_size = sample.sketch.width;
    let (weights, report) = fit(&sample, cfg)?;
    if let Some(p) = &a.out {
        save_weights(&weights, p)?;
    }
    let last = report.metrics.last().map_or(f64::NAN, |m| m.total);
    println!(
        "fit: {} steps, final loss {last:.6}, silhouette IoU {:.4} at elevation {:.2} azimuth {:.2}",
        report.steps, report.iou, report.pose.elevation, report.pose.azimuth
    );
    Ok(())
}

fn generate(a: GenerateArgs) -> CmdResult {
    let store = Store::open(&a.store)?;
    let registry = Registry::load(&a.registry)?;
    let req = GenerateRequest {
        scene_id: a.scene,
        view_pose: a.pose.pose()?,
        target: a.target,
        fov_deg: a.fov,
        sketch: STANDARD.encode(std::fs::read(&a.sketch)?),
        class: a.class,
        upright: !a.full_rotation,
    };
    let resp = handle_generate(&store, &registry, &req)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &resp.mesh)?;
    }
    let summary = serde_json::json!({
        "object_id": resp.object_id,
        "predicted_pose": resp.predicted_pose,
        "transform": resp.transform,
        "timing": resp.timing,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn fuse(a: FuseArgs) -> CmdResult {
    let doc = match (&a.frames, &a.mesh) {
        (Some(dir), _) => {
            let frames = load_depth_sequence(dir)?;
            let mut vol = TsdfVolume::centered(a.center, a.resolution, a.voxel, a.truncation)?;
            integrate_depth(&mut vol, &frames)?;
            SceneDocument::from_volume("fused", vol)?
        }
        (None, Some(obj)) => load_scene_mesh("imported", &std::fs::read(obj)?)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(p) = &a.out {
        std::fs::write(p, write_obj(&doc.mesh))?;
    }
    println!("scene: {} vertices, {} faces", doc.mesh.vertices.len(), doc.mesh.faces.len());
    if let Some(root) = &a.store {
        println!("{}", Store::open(root)?.create_scene(&doc.mesh)?);
    }
    Ok(())
}

fn place(a: PlaceArgs) -> CmdResult {
    let store = Store::open(&a.store)?;
    let mesh = parse_obj(&std::fs::read_to_string(&a.mesh)?)?;
    let transform: PlacementTransform = match &a.transform {
        Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
        None => PlacementTransform::default(),
    };
    let id = store.add_object(&a.scene, &mesh, transform, &a.source)?;
    if let Some(p) = &a.merged_out {
        std::fs::write(p, store.merged_obj(&a.scene)?)?;
    }
    println!("{id}");
    Ok(())
}

fn serve(a: ServeArgs) -> CmdResult {
    let state = Arc::new(AppState {
        store: Store::open(&a.store)?,
        registry: Registry::load(&a.registry)?,
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

fn render(a: RenderArgs) -> CmdResult {
    let mesh = parse_obj(&std::fs::read_to_string(&a.mesh)?)?;
    let intr = CameraIntrinsics::new(a.size, a.size, a.fov)?;
    let cam = ViewCamera::orbit(&a.pose.pose()?, [0.0; 3], intr);
    let png = match a.mode {
        RenderMode::Silhouette => render_hard_view(&mesh, &cam)?.to_png()?,
        RenderMode::Soft => render_soft_view(&mesh, &cam, &RasterParams::with_sharpness(a.sharpness))?.to_png()?,
        RenderMode::Sketch => render_hard_view(&mesh, &cam)?.outer_contour().to_png()?,
        RenderMode::Depth => encode_depth_png(a.size, a.size, &render_depth(&mesh, &cam))?,
    };
    std::fs::write(&a.out, png)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
