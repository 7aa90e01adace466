#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rope_core::dataset::{
    generate_dataset, manifest_dir, read_predictions, write_predictions, DatasetConfig, Manifest, MANIFEST_FILE,
};
use rope_core::filter::FilterConfig;
use rope_core::geometry::fps_select;
use rope_core::metrics::{evaluate_dataset, pose_correct, write_bubble_csv, write_report_csv, DEFAULT_FRACTION};
use rope_core::oba::{apply_oba, BBox, ImageBuffer, ObaConfig};
use rope_core::pipeline::{run_dataset, DecodeMode, PipelineConfig};
use rope_core::pnp::RansacConfig;
use rope_core::synth::{BuiltinShape, CloudSource, CorruptionConfig, SceneConfig};
use rope_core::{metrics, Error, PointCloud, Pose};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Occlusion-robust pose estimation pipeline over landmark heatmaps.
#[derive(Parser)]
#[command(name = "rope", version)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output path; a directory for `synth` and `eval`, a file otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifest plus heatmap files.
    Synth(SynthArgs),
    /// Estimate poses for every scene of a manifest.
    Run(RunArgs),
    /// Score predictions against a manifest.
    Eval(EvalArgs),
    /// Occlude-and-blackout augmentation of one image.
    Oba(ObaArgs),
    /// Farthest point sampling of landmarks on a cloud.
    Fps(FpsArgs),
    /// ADD / ADD-S between two poses.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    /// Builtin shape (cube, icosahedron, blob) or PLY path; repeatable.
    #[arg(long = "object", default_value = "blob")]
    objects: Vec<String>,
    /// Treat PLY objects as symmetric.
    #[arg(long)]
    symmetric: bool,
    #[arg(long, default_value_t = 11)]
    landmarks: usize,
    #[arg(long, default_value_t = 64)]
    heatmap_size: usize,
    /// Store corrupted heatmaps instead of clean ones.
    #[arg(long)]
    corrupt: bool,
    #[arg(long, default_value_t = 0.3)]
    occluded_fraction: f64,
    /// Pixels.
    #[arg(long, default_value_t = 15.0)]
    occluded_shift: f64,
    /// Pixels.
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 1)]
    blobs: usize,
    #[arg(long, default_value_t = 0.25)]
    blob_mass: f64,
    #[arg(long, default_value_t = 0.5)]
    flatten: f64,
    /// Reuse the high-precision corruption draws for the other heads.
    #[arg(long)]
    correlated_medium: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// Verification threshold, pixels.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 3.0)]
    ransac_thresh: f64,
    #[arg(long, default_value_t = 0.999)]
    ransac_conf: f64,
    #[arg(long, default_value_t = 1000)]
    ransac_iters: usize,
    #[arg(long)]
    no_filter: bool,
    #[arg(long)]
    argmax_decode: bool,
    #[arg(long)]
    single_precision: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Correctness threshold as a fraction of the diameter.
    #[arg(long, default_value_t = DEFAULT_FRACTION)]
    fraction: f64,
}

#[derive(Args)]
struct ObaArgs {
    #[arg(long)]
    image: PathBuf,
    /// `x0,y0,x1,y1`, half-open; defaults to the whole image.
    #[arg(long)]
    bbox: Option<String>,
    /// `R` or `RxC` patches.
    #[arg(long, default_value = "4")]
    oba_grid: String,
    #[arg(long, default_value_t = 0.5)]
    oba_p: f64,
    #[arg(long, default_value_t = 0.5)]
    oba_noise_p: f64,
}

#[derive(Args)]
struct FpsArgs {
    /// Builtin shape or PLY path.
    #[arg(long)]
    cloud: String,
    #[arg(long, default_value_t = 11)]
    k: usize,
}

#[derive(Args)]
struct MetricsArgs {
    /// Pose JSON: `{"rotation": [9 row-major], "translation": [3]}`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Builtin shape or PLY path.
    #[arg(long)]
    cloud: String,
    #[arg(long)]
    symmetric: bool,
    #[arg(long, default_value_t = DEFAULT_FRACTION)]
    fraction: f64,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

fn cloud_source(spec: &str, symmetric: bool) -> CloudSource {
    match BuiltinShape::parse(spec) {
        Ok(shape) => CloudSource::Builtin(shape),
        Err(_) => CloudSource::Ply {
            path: PathBuf::from(spec),
            symmetric,
        },
    }
}

fn load_cloud(spec: &str, symmetric: bool) -> Result<PointCloud> {
    let mut cloud = cloud_source(spec, symmetric)
        .load()
        .with_context(|| format!("loading cloud {spec}"))?;
    cloud.symmetric |= symmetric;
    Ok(cloud)
}

fn required_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| usage("--out is required"))
}

/// Writes `text` to `out` if given, else prints it.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad grid {s:?}")));
    match s.split_once(['x', 'X']) {
        Some((r, c)) => Ok((parse(r)?, parse(c)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn parse_bbox(s: &str) -> Result<BBox> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad bbox {s:?}, expected x0,y0,x1,y1")))?;
    match v[..] {
        [x0, y0, x1, y1] => Ok(BBox::new(x0, y0, x1, y1)),
        _ => Err(usage(format!("bad bbox {s:?}, expected x0,y0,x1,y1"))),
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let out = required_out(&cli.out)?;
    let corruption = args.corrupt.then_some(CorruptionConfig {
        landmark_noise_sigma: args.noise_sigma,
        occluded_fraction: args.occluded_fraction,
        occluded_shift: args.occluded_shift,
        distractor_blobs: args.blobs,
        blob_mass: args.blob_mass,
        flatten_factor: args.flatten,
        decorrelate_medium: !args.correlated_medium,
        seed: 0,
    });
    let cfg = DatasetConfig {
        scenes: args.scenes,
        objects: args.objects.iter().map(|o| cloud_source(o, args.symmetric)).collect(),
        scene: SceneConfig {
            n_landmarks: args.landmarks,
            heatmap_size: args.heatmap_size,
            ..SceneConfig::default()
        },
        corruption,
        seed: cli.seed,
    };
    let manifest = generate_dataset(out, &cfg)?;
    println!(
        "{}",
        json!({
            "scenes": manifest.scenes.len(),
            "objects": manifest.objects.iter().map(|o| o.id.as_str()).collect::<Vec<_>>(),
            "corruption": manifest.corruption,
            "manifest": out.join(MANIFEST_FILE),
        })
    );
    Ok(())
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let out = required_out(&cli.out)?;
    let p = &args.pipeline;
    let cfg = PipelineConfig {
        filter: FilterConfig { epsilon: p.epsilon },
        ransac: RansacConfig {
            reproj_threshold: p.ransac_thresh,
            confidence: p.ransac_conf,
            max_iterations: p.ransac_iters,
            seed: cli.seed,
        },
        decode: if p.argmax_decode {
            DecodeMode::Argmax
        } else {
            DecodeMode::Expectation
        },
        no_filter: p.no_filter,
        single_precision: p.single_precision,
    };
    cfg.filter.validate()?;
    cfg.ransac.validate()?;
    let manifest = Manifest::load(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let predictions = run_dataset(&manifest, &manifest_dir(&args.manifest), &cfg)?;
    write_predictions(out, &predictions)?;
    let failed = predictions.iter().filter(|p| !p.valid).count();
    println!(
        "{}",
        json!({
            "scenes": predictions.len(),
            "valid": predictions.len() - failed,
            "failed": failed,
            "fallback_used": predictions.iter().filter(|p| p.fallback_used).count(),
        })
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let out = required_out(&cli.out)?;
    if !(args.fraction > 0.0) {
        return Err(usage("--fraction must be > 0"));
    }
    let manifest = Manifest::load(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let predictions =
        read_predictions(&args.predictions).with_context(|| format!("reading {}", args.predictions.display()))?;
    let clouds = manifest.load_clouds(&manifest_dir(&args.manifest))?;
    let report = evaluate_dataset(&predictions, &manifest, &clouds, args.fraction)?;

    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(out.join("report.json"), text)?;
    let mut csv = Vec::new();
    write_report_csv(&report, &mut csv)?;
    fs::write(out.join("report.csv"), csv)?;
    let mut bubble = Vec::new();
    write_bubble_csv(&report, &mut bubble)?;
    fs::write(out.join("bubble.csv"), bubble)?;

    let a = &report.aggregate;
    let mut summary = json!({
        "images": a.images,
        "pass_rate": a.pooled_pass_rate,
        "mean_pass_rate": a.mean_pass_rate,
        "auc": a.pooled_auc,
        "mean_auc": a.mean_auc,
    });
    if a.missing == a.images {
        summary["note"] = json!("no predictions matched any scene; all scenes scored as missing");
    }
    println!("{summary}");
    Ok(())
}

fn cmd_oba(cli: &Cli, args: &ObaArgs) -> Result<()> {
    let out = required_out(&cli.out)?;
    let (grid_rows, grid_cols) = parse_grid(&args.oba_grid)?;
    let cfg = ObaConfig {
        grid_rows,
        grid_cols,
        p_occlude: args.oba_p,
        p_noise_vs_patch: args.oba_noise_p,
        seed: cli.seed,
    };
    cfg.validate()?;
    let img = ImageBuffer::read_png(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let bbox = match &args.bbox {
        Some(s) => parse_bbox(s)?,
        None => BBox::whole(&img),
    };
    apply_oba(&img, &bbox, &cfg)?.write_png(out)?;
    Ok(())
}

fn cmd_fps(cli: &Cli, args: &FpsArgs) -> Result<()> {
    let cloud = load_cloud(&args.cloud, false)?;
    let landmarks = fps_select(&cloud, args.k)?;
    emit(&cli.out, &serde_json::to_string_pretty(&landmarks)?)
}

fn read_pose(path: &Path) -> Result<Pose> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn cmd_metrics(cli: &Cli, args: &MetricsArgs) -> Result<()> {
    let pred = read_pose(&args.pred)?;
    let gt = read_pose(&args.gt)?;
    let cloud = load_cloud(&args.cloud, args.symmetric)?;
    let diameter = cloud.diameter()?;
    let add = metrics::add_distance(&pred, &gt, &cloud)?;
    let adds = metrics::adds_distance(&pred, &gt, &cloud)?;
    let chosen = if cloud.symmetric { adds } else { add };
    let report = json!({
        "add_mm": add.value,
        "adds_mm": adds.value,
        "metric": chosen.kind,
        "diameter_mm": diameter,
        "correct": pose_correct(&chosen, diameter, args.fraction),
    });
    emit(&cli.out, &serde_json::to_string_pretty(&report)?)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        Some(Error::InvalidConfig(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&cli, a),
        Command::Run(a) => cmd_run(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Oba(a) => cmd_oba(&cli, a),
        Command::Fps(a) => cmd_fps(&cli, a),
        Command::Metrics(a) => cmd_metrics(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
