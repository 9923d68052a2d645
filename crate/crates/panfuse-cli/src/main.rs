//! Command-line front end: scene generation, occlusion derivation,
//! classifier training, fusion, evaluation, benchmarking, rendering.
//!
//! Exit codes: 0 success, 2 usage, 3 data or flag error, 4 predictor
//! contract violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use panfuse::fusion::{
    fuse_by_confidence, fuse_with_occlusion, FusionError, FusionParams, FusionTrace,
    OcclusionScope, SkipConvention,
};
use panfuse::io::{
    export_panoptic_png, import_panoptic_png, read_model, read_occlusion_matrix, read_scene,
    render_panoptic_png, write_model, write_occlusion_matrix, write_results, write_scene,
    FORMAT_VERSION,
};
use panfuse::metrics::aggregate_pq;
use panfuse::occlusion::{
    derive_gt_occlusion, evaluate_predictor, pair_accuracy, sample_training_pairs,
    train_occlusion_classifier, ClassifierPredictor, ConfidencePredictor, OcclusionError,
    OcclusionPredictor, OraclePredictor, PairAccuracyReport, PairClassifierModel, TrainConfig,
};
use panfuse::scene::Scene;
use panfuse::scenegen::{corpus_scene_seed, generate_scene, SceneGenConfig};

#[derive(Parser)]
#[command(
    name = "panfuse",
    version,
    about = "Panoptic fusion toolkit: synthetic scenes, occlusion-aware mask fusion, PQ evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus of synthetic scenes with ground truth
    GenScenes(GenScenesArgs),
    /// Derive ground-truth occlusion matrices from scene ground truth
    DeriveOcc(DeriveOccArgs),
    /// Train the pairwise occlusion classifier on scenes + matrices
    TrainOcc(TrainOccArgs),
    /// Fuse proposals into panoptic maps
    Fuse(FuseArgs),
    /// Score fused maps against ground truth with the PQ metric
    Eval(EvalArgs),
    /// Score an occlusion predictor's pair accuracy
    EvalOcc(EvalOccArgs),
    /// Time both fusion strategies over a corpus
    Bench(BenchArgs),
    /// Render a panoptic map as a colored PNG
    Render(RenderArgs),
}

#[derive(Args)]
struct GenScenesArgs {
    /// Output directory for scene_NNNNNN.json files
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes
    #[arg(long)]
    n: u32,
    /// Generator config as JSON; missing fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct DeriveOccArgs {
    /// Directory of scene_NNNNNN.json files with ground truth
    #[arg(long)]
    scenes: PathBuf,
    /// Appreciable-overlap threshold rho, in (0, 1]
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    /// Output directory for occ_NNNNNN.json files
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TrainOccArgs {
    /// Directory of scene_NNNNNN.json files
    #[arg(long)]
    scenes: PathBuf,
    /// Directory of occ_NNNNNN.json files
    #[arg(long)]
    occ: PathBuf,
    /// Training pair budget per image (even, both orders counted)
    #[arg(long, default_value_t = 128)]
    pairs_per_image: usize,
    /// Appreciable-overlap threshold rho, in (0, 1]
    #[arg(long, default_value_t = 0.2)]
    rho: f64,
    /// Gradient-descent epochs
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    /// Subsampling seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Directory of scene_NNNNNN.json files
    #[arg(long)]
    scenes: PathBuf,
    /// Merge strategy
    #[arg(long, value_enum, default_value_t = Strategy::Ocfusion)]
    strategy: Strategy,
    /// Occlusion predictor for the ocfusion strategy
    #[arg(long, value_enum, default_value_t = PredictorKind::Oracle)]
    predictor: PredictorKind,
    /// Trained model file (required with --predictor classifier)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Base hyperparameter profile
    #[arg(long, value_enum, default_value_t = Profile::Coco)]
    profile: Profile,
    /// Mostly-covered skip threshold tau, in [0, 1] (profile default: 0.5 coco, 0.6 cityscapes)
    #[arg(long)]
    tau: Option<f64>,
    /// Appreciable-overlap threshold rho, in (0, 1] (profile default: 0.2 coco, 0.1 cityscapes)
    #[arg(long)]
    rho: Option<f64>,
    /// Confidence floor, in [0, 1] (profile default: 0.5 coco, 0.6 cityscapes)
    #[arg(long)]
    cmin: Option<f64>,
    /// Minimum stuff segment area in pixels (profile default: 4096 coco, 2048 cityscapes)
    #[arg(long)]
    min_stuff_area: Option<u64>,
    /// Which pairs consult the predictor (default: all)
    #[arg(long, value_enum)]
    scope: Option<ScopeArg>,
    /// Reading of the skip threshold (default: overlap)
    #[arg(long, value_enum)]
    skip_convention: Option<SkipArg>,
    /// Output directory for panoptic_NNNNNN.png/.json pairs
    #[arg(long)]
    out: PathBuf,
    /// Also write trace_NNNNNN.json fusion audits
    #[arg(long)]
    trace: bool,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of fused panoptic_NNNNNN.png/.json pairs
    #[arg(long)]
    pred: PathBuf,
    /// Directory of scene_NNNNNN.json files with ground truth
    #[arg(long)]
    gt: PathBuf,
    /// Output JSON file; a .txt table is written alongside
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvalOccArgs {
    /// Predictor to score
    #[arg(long, value_enum, default_value_t = PredictorKind::Oracle)]
    predictor: PredictorKind,
    /// Trained model file (required with --predictor classifier)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of scene_NNNNNN.json files
    #[arg(long)]
    scenes: PathBuf,
    /// Directory of occ_NNNNNN.json files
    #[arg(long)]
    occ: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of scene_NNNNNN.json files with ground truth
    #[arg(long)]
    scenes: PathBuf,
    /// Timing repetitions; the fastest run counts
    #[arg(long, default_value_t = 3)]
    repeat: u32,
}

#[derive(Args)]
struct RenderArgs {
    /// Panoptic PNG (its .json segment table must sit alongside)
    #[arg(long)]
    panoptic: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Confidence,
    Ocfusion,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    Oracle,
    Classifier,
    Confidence,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Coco,
    Cityscapes,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    All,
    Inter,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SkipArg {
    Overlap,
    Remaining,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let contract = err.chain().any(|c| {
                matches!(
                    c.downcast_ref::<FusionError>(),
                    Some(FusionError::PredictorContract { .. })
                )
            });
            ExitCode::from(if contract { 4 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenScenes(args) => gen_scenes(args),
        Command::DeriveOcc(args) => derive_occ(args),
        Command::TrainOcc(args) => train_occ(args),
        Command::Fuse(args) => fuse(args),
        Command::Eval(args) => eval(args),
        Command::EvalOcc(args) => eval_occ(args),
        Command::Bench(args) => bench(args),
        Command::Render(args) => render(args),
    }
}

/// Runs `work` on a dedicated rayon pool when --jobs was given.
fn with_pool<T: Send>(jobs: Option<usize>, work: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => work(),
        Some(0) => bail!("flag --jobs must be positive"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(work),
    }
}

fn file_name(prefix: &str, index: u32, ext: &str) -> String {
    format!("{prefix}_{index:06}.{ext}")
}

/// All `prefix_NNNNNN.ext` files in `dir`, sorted by index.
fn indexed_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<(u32, PathBuf)>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("reading directory {}", dir.display()))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let digits = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('_'))
            .and_then(|r| r.strip_suffix(ext))
            .and_then(|r| r.strip_suffix('.'));
        if let Some(digits) = digits {
            if digits.len() == 6 {
                if let Ok(index) = digits.parse::<u32>() {
                    out.push((index, path));
                }
            }
        }
    }
    out.sort();
    if out.is_empty() {
        bail!("no {prefix}_NNNNNN.{ext} files in {}", dir.display());
    }
    Ok(out)
}

fn load_scene(path: &Path) -> Result<Scene> {
    read_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn check_unit(flag: &str, value: f64) -> Result<()> {
    ensure!(
        value.is_finite() && (0.0..=1.0).contains(&value),
        "flag {flag}={value} must be in [0, 1]"
    );
    Ok(())
}

fn check_rho_flag(value: f64) -> Result<()> {
    ensure!(
        value.is_finite() && value > 0.0 && value <= 1.0,
        "flag --rho={value} must be in (0, 1]"
    );
    Ok(())
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    version: u32,
    seed: u64,
    count: u32,
    config: &'a SceneGenConfig,
    files: Vec<FileDigest>,
}

#[derive(Serialize)]
struct FileDigest {
    name: String,
    sha256: String,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn gen_scenes(args: GenScenesArgs) -> Result<()> {
    ensure!(args.n > 0, "flag --n must be positive");
    let config = match &args.config {
        None => SceneGenConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
    };
    config.validate().context("validating generator config")?;
    create_out_dir(&args.out)?;

    let files = with_pool(args.jobs, || {
        (0..args.n)
            .into_par_iter()
            .map(|i| {
                let scene =
                    generate_scene(&config, i as u64, corpus_scene_seed(args.seed, i as u64))
                        .with_context(|| format!("generating scene {i}"))?;
                let name = file_name("scene", i, "json");
                let path = args.out.join(&name);
                write_scene(&scene, &path)
                    .with_context(|| format!("writing {}", path.display()))?;
                Ok(FileDigest { name, sha256: sha256_hex(&path)? })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let manifest = ManifestDoc {
        version: FORMAT_VERSION,
        seed: args.seed,
        count: args.n,
        config: &config,
        files,
    };
    let path = args.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} scenes to {}", args.n, args.out.display());
    Ok(())
}

fn derive_occ(args: DeriveOccArgs) -> Result<()> {
    check_rho_flag(args.rho)?;
    let scenes = indexed_files(&args.scenes, "scene", "json")?;
    create_out_dir(&args.out)?;
    let count = scenes.len();
    with_pool(args.jobs, || {
        scenes
            .into_par_iter()
            .map(|(index, path)| {
                let scene = load_scene(&path)?;
                let instances = scene.gt_instances.as_ref().with_context(|| {
                    format!("{}: no ground-truth instances to derive from", path.display())
                })?;
                let panoptic = scene.gt_panoptic.as_ref().with_context(|| {
                    format!("{}: no ground-truth panoptic map to derive from", path.display())
                })?;
                let matrix = derive_gt_occlusion(instances, panoptic, args.rho)
                    .with_context(|| format!("deriving occlusion for {}", path.display()))?;
                let out = args.out.join(file_name("occ", index, "json"));
                write_occlusion_matrix(scene.image_id, &matrix, &out)
                    .with_context(|| format!("writing {}", out.display()))
            })
            .collect::<Result<()>>()
    })?;
    println!("derived {count} occlusion matrices to {}", args.out.display());
    Ok(())
}

/// Loads the occlusion matrix for a scene and checks the image ids
/// agree.
fn load_matrix_for(
    occ_dir: &Path,
    index: u32,
    scene: &Scene,
) -> Result<panfuse::occlusion::OcclusionMatrix> {
    let path = occ_dir.join(file_name("occ", index, "json"));
    let (image_id, matrix) = read_occlusion_matrix(&path)
        .with_context(|| format!("loading occlusion matrix {}", path.display()))?;
    ensure!(
        image_id == scene.image_id,
        "{}: belongs to image {image_id}, but scene {index} is image {}",
        path.display(),
        scene.image_id
    );
    Ok(matrix)
}

fn train_occ(args: TrainOccArgs) -> Result<()> {
    check_rho_flag(args.rho)?;
    ensure!(
        args.pairs_per_image > 0 && args.pairs_per_image.is_multiple_of(2),
        "flag --pairs-per-image={} must be positive and even",
        args.pairs_per_image
    );
    let scenes = indexed_files(&args.scenes, "scene", "json")?;
    let mut pairs = Vec::new();
    for (index, path) in &scenes {
        let scene = load_scene(path)?;
        let matrix = load_matrix_for(&args.occ, *index, &scene)?;
        let mined = sample_training_pairs(
            &scene,
            &matrix,
            args.rho,
            args.pairs_per_image,
            corpus_scene_seed(args.seed, *index as u64),
        )
        .with_context(|| format!("sampling pairs from {}", path.display()))?;
        pairs.extend(mined);
    }
    let config = TrainConfig { epochs: args.epochs, learning_rate: args.lr, seed: args.seed };
    let model = train_occlusion_classifier(&pairs, &config).context("training classifier")?;
    let accuracy = pair_accuracy(&model, &pairs).expect("nonempty training set");
    write_model(&model, &args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;
    let curve = &model.metadata.loss_curve;
    println!(
        "trained on {} pairs from {} scenes: loss {:.4} -> {:.4}, training accuracy {:.4}",
        pairs.len(),
        scenes.len(),
        curve.first().expect("loss curve has initial entry"),
        curve.last().expect("loss curve has final entry"),
        accuracy,
    );
    println!("model written to {}", args.out.display());
    Ok(())
}

fn fusion_params(args: &FuseArgs) -> Result<FusionParams> {
    let mut params = match args.profile {
        Profile::Coco => FusionParams::default(),
        Profile::Cityscapes => FusionParams::cityscapes(),
    };
    if let Some(v) = args.tau {
        check_unit("--tau", v)?;
        params.overlap_threshold = v;
    }
    if let Some(v) = args.cmin {
        check_unit("--cmin", v)?;
        params.confidence_min = v;
    }
    if let Some(v) = args.rho {
        check_rho_flag(v)?;
        params.occlusion_ratio = v;
    }
    if let Some(v) = args.min_stuff_area {
        params.min_stuff_area = v;
    }
    if let Some(v) = args.scope {
        params.scope = match v {
            ScopeArg::All => OcclusionScope::All,
            ScopeArg::Inter => OcclusionScope::InterClassOnly,
        };
    }
    if let Some(v) = args.skip_convention {
        params.skip_convention = match v {
            SkipArg::Overlap => SkipConvention::OverlapRatio,
            SkipArg::Remaining => SkipConvention::RemainingFraction,
        };
    }
    params.validate().context("validating fusion parameters")?;
    Ok(params)
}

/// Builds the requested predictor for one scene.
fn predictor_for(
    kind: PredictorKind,
    model: Option<&PairClassifierModel>,
    scene: &Scene,
    rho: f64,
    scene_path: &Path,
) -> Result<Box<dyn OcclusionPredictor>> {
    match kind {
        PredictorKind::Oracle => {
            let oracle = OraclePredictor::for_scene(scene, rho).with_context(|| {
                format!("building oracle predictor for {}", scene_path.display())
            })?;
            Ok(Box::new(oracle))
        }
        PredictorKind::Classifier => {
            let model = model.expect("checked before the corpus loop");
            Ok(Box::new(ClassifierPredictor { model: model.clone() }))
        }
        PredictorKind::Confidence => Ok(Box::new(ConfidencePredictor)),
    }
}

fn fuse(args: FuseArgs) -> Result<()> {
    let params = fusion_params(&args)?;
    let model = match (args.strategy, args.predictor) {
        (Strategy::Ocfusion, PredictorKind::Classifier) => {
            let path = args
                .model
                .as_ref()
                .context("flag --model is required with --predictor classifier")?;
            Some(read_model(path).with_context(|| format!("loading model {}", path.display()))?)
        }
        _ => None,
    };
    let scenes = indexed_files(&args.scenes, "scene", "json")?;
    create_out_dir(&args.out)?;
    let count = scenes.len();

    with_pool(args.jobs, || {
        scenes
            .into_par_iter()
            .map(|(index, path)| {
                let scene = load_scene(&path)?;
                let (map, trace) = match args.strategy {
                    Strategy::Confidence => fuse_by_confidence(&scene, &params),
                    Strategy::Ocfusion => {
                        let predictor = predictor_for(
                            args.predictor,
                            model.as_ref(),
                            &scene,
                            params.occlusion_ratio,
                            &path,
                        )?;
                        fuse_with_occlusion(&scene, &params, predictor.as_ref())
                    }
                }
                .with_context(|| format!("fusing {}", path.display()))?;
                let png = args.out.join(file_name("panoptic", index, "png"));
                let table = args.out.join(file_name("panoptic", index, "json"));
                export_panoptic_png(&map, &png, &table)
                    .with_context(|| format!("writing {}", png.display()))?;
                if args.trace {
                    let trace_path = args.out.join(file_name("trace", index, "json"));
                    write_trace(&trace, &trace_path)?;
                }
                Ok(())
            })
            .collect::<Result<()>>()
    })?;
    let strategy = match args.strategy {
        Strategy::Confidence => "confidence".to_string(),
        Strategy::Ocfusion => {
            let predictor = match args.predictor {
                PredictorKind::Oracle => "oracle",
                PredictorKind::Classifier => "classifier",
                PredictorKind::Confidence => "confidence",
            };
            format!("ocfusion with {predictor} predictor")
        }
    };
    println!("fused {count} scenes ({strategy}) to {}", args.out.display());
    Ok(())
}

fn write_trace(trace: &FusionTrace, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(trace).context("serializing trace")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval(args: EvalArgs) -> Result<()> {
    let preds = indexed_files(&args.pred, "panoptic", "png")?;
    let per_image = with_pool(args.jobs, || {
        preds
            .into_par_iter()
            .map(|(index, png)| {
                let table = png.with_extension("json");
                let pred = import_panoptic_png(&png, &table)
                    .with_context(|| format!("loading prediction {}", png.display()))?;
                let scene_path = args.gt.join(file_name("scene", index, "json"));
                let scene = load_scene(&scene_path)?;
                let gt = scene.gt_panoptic.as_ref().with_context(|| {
                    format!("{}: no ground-truth panoptic map", scene_path.display())
                })?;
                panfuse::metrics::compute_pq(gt, &pred, &scene.catalog)
                    .with_context(|| format!("scoring {}", png.display()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let stats = aggregate_pq(&per_image).context("aggregating per-image statistics")?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            create_out_dir(parent)?;
        }
    }
    let table_path = args.out.with_extension("txt");
    write_results(&stats, None, &args.out, &table_path)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let s = stats.summary();
    println!(
        "images: {}  PQ {:.4}  SQ {:.4}  RQ {:.4}  PQ-things {:.4}  PQ-stuff {:.4}",
        per_image.len(),
        s.pq,
        s.sq,
        s.rq,
        s.pq_things,
        s.pq_stuff
    );
    println!("results written to {} and {}", args.out.display(), table_path.display());
    Ok(())
}

fn eval_occ(args: EvalOccArgs) -> Result<()> {
    let model = match args.predictor {
        PredictorKind::Classifier => {
            let path = args
                .model
                .as_ref()
                .context("flag --model is required with --predictor classifier")?;
            Some(read_model(path).with_context(|| format!("loading model {}", path.display()))?)
        }
        _ => None,
    };
    let scenes = indexed_files(&args.scenes, "scene", "json")?;
    let mut grand = PairAccuracyReport::default();
    for (index, path) in &scenes {
        let scene = load_scene(path)?;
        let matrix = load_matrix_for(&args.occ, *index, &scene)?;
        let predictor = match args.predictor {
            PredictorKind::Oracle => {
                let oracle = OraclePredictor::with_matrix(&scene, matrix.clone())
                    .with_context(|| format!("building oracle for {}", path.display()))?;
                Box::new(oracle) as Box<dyn OcclusionPredictor>
            }
            PredictorKind::Classifier => {
                Box::new(ClassifierPredictor { model: model.clone().expect("loaded above") })
            }
            PredictorKind::Confidence => Box::new(ConfidencePredictor),
        };
        match evaluate_predictor(predictor.as_ref(), [(&scene, &matrix)]) {
            Ok(report) => {
                for (into, from) in [
                    (&mut grand.overall, report.overall),
                    (&mut grand.inter_class, report.inter_class),
                    (&mut grand.intra_class, report.intra_class),
                ] {
                    into.correct += from.correct;
                    into.total += from.total;
                }
            }
            Err(OcclusionError::NoDefinedPairs) => continue,
            Err(e) => return Err(e).with_context(|| format!("evaluating on {}", path.display())),
        }
    }
    ensure!(grand.overall.total > 0, "no defined matched pairs across the corpus");
    let line = |name: &str, acc: panfuse::occlusion::CountAccuracy| match acc.fraction() {
        Some(f) => println!("{name:<12} {f:.4}  ({}/{})", acc.correct, acc.total),
        None => println!("{name:<12} n/a  (0 pairs)"),
    };
    line("overall", grand.overall);
    line("inter-class", grand.inter_class);
    line("intra-class", grand.intra_class);
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    ensure!(args.repeat > 0, "flag --repeat must be positive");
    let params = FusionParams::default();
    let files = indexed_files(&args.scenes, "scene", "json")?;
    let mut scenes = Vec::with_capacity(files.len());
    for (_, path) in &files {
        let scene = load_scene(path)?;
        let oracle = OraclePredictor::for_scene(&scene, params.occlusion_ratio)
            .with_context(|| format!("building oracle predictor for {}", path.display()))?;
        scenes.push((scene, oracle));
    }

    let mut best_baseline = f64::INFINITY;
    let mut best_occlusion = f64::INFINITY;
    for _ in 0..args.repeat {
        let start = Instant::now();
        for (scene, _) in &scenes {
            fuse_by_confidence(scene, &params).context("baseline fusion")?;
        }
        best_baseline = best_baseline.min(start.elapsed().as_secs_f64());

        let start = Instant::now();
        for (scene, oracle) in &scenes {
            fuse_with_occlusion(scene, &params, oracle).context("occlusion fusion")?;
        }
        best_occlusion = best_occlusion.min(start.elapsed().as_secs_f64());
    }
    let n = scenes.len() as f64;
    let base_ms = best_baseline * 1000.0 / n;
    let occ_ms = best_occlusion * 1000.0 / n;
    println!("scenes: {}  repeats: {}", scenes.len(), args.repeat);
    println!("confidence baseline: {base_ms:.3} ms/scene");
    println!("ocfusion (oracle)  : {occ_ms:.3} ms/scene");
    println!("overhead           : {:+.1}%", (occ_ms / base_ms - 1.0) * 100.0);
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let table = args.panoptic.with_extension("json");
    let map = import_panoptic_png(&args.panoptic, &table)
        .with_context(|| format!("loading panoptic map {}", args.panoptic.display()))?;
    render_panoptic_png(&map, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("rendered {} to {}", args.panoptic.display(), args.out.display());
    Ok(())
}
