//! `orthoforge` command-line front end.
//!
//! Exit codes: 0 ok, 2 usage, 3 io, 4 format or schema, 5 degenerate
//! geometry, 6 numeric or domain. Failures print `error[<category>]: ...`
//! on stderr.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use orthoforge::exec::with_threads;
use orthoforge::fixtures::{self, BoxCityScene};
use orthoforge::inpaint::{self, HoleMask};
use orthoforge::pipeline::{self, PipelineConfig, RunManifest};
use orthoforge::plane::{self, RansacParams};
use orthoforge::raster::{self, sidecar_path};
use orthoforge::retrieval;
use orthoforge::wavelet::{self, CannyParams, Plane, Reduction, StructuralMaskSet, WaveletFilter};
use orthoforge::{load_ply, ErrorCategory, OrthoImage, Parallelism};

#[derive(Parser)]
#[command(
    name = "orthoforge",
    version,
    about = "Point-cloud orthophotos, wavelet losses and descriptor retrieval"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point-cloud inspection.
    #[command(subcommand)]
    Cloud(CloudCommand),
    /// Ground-plane estimation.
    #[command(subcommand)]
    Plane(PlaneCommand),
    /// Render a cloud to an orthophoto with sidecars and a run manifest.
    Render(Box<RenderArgs>),
    /// Orthorectify a photo from four point correspondences.
    Warp(WarpArgs),
    /// Fill holes, optionally matching a reference's color statistics.
    Inpaint(InpaintArgs),
    /// Binary edge map of an image.
    Edges(EdgesArgs),
    /// Image losses.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Rank references for every query and write a Recall@K / AP report.
    Retrieve(RetrieveArgs),
    /// Synthetic scenes with known ground truth.
    #[command(subcommand)]
    Fixture(FixtureCommand),
    /// Compare two images.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum CloudCommand {
    /// Print point count, bounding box and dropped points.
    Info { path: PathBuf },
}

#[derive(Subcommand)]
enum PlaneCommand {
    /// Fit the dominant plane and print its coefficients.
    Fit {
        cloud: PathBuf,
        /// Inlier distance: absolute (`0.05`) or relative to the diagonal (`0.01*diag`).
        #[arg(long)]
        threshold: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RenderArgs {
    /// Input PLY; defaults to the manifest's input with `--replay`.
    cloud: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// key=value configuration file.
    #[arg(long, conflicts_with = "replay")]
    config: Option<PathBuf>,
    /// Rerun with the configuration recorded in a run manifest.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    rmin: Option<f64>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    pmax: Option<u64>,
    #[arg(long)]
    ssaa: Option<usize>,
    #[arg(long)]
    roof_band: Option<f64>,
    #[arg(long)]
    ground_band: Option<f64>,
    #[arg(long)]
    mmin: Option<u32>,
    #[arg(long)]
    splat_radius: Option<f64>,
    #[arg(long)]
    crop: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    inpaint_radius: Option<usize>,
    #[arg(long)]
    harmonize_ref: Option<PathBuf>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct WarpArgs {
    image: PathBuf,
    /// CSV rows `sx,sy,tu,tv`: source pixel and output pixel.
    #[arg(long)]
    corr: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Output size; defaults to the source size.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args)]
struct InpaintArgs {
    image: PathBuf,
    /// Hole mask, nonzero = hole.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 5)]
    radius: usize,
    /// Grow the mask by this many pixels first.
    #[arg(long, default_value_t = 1)]
    dilate: usize,
    #[arg(long)]
    harmonize_ref: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EdgesArgs {
    image: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = CannyParams::default().sigma)]
    sigma: f64,
    /// Hysteresis thresholds as fractions of the strongest gradient.
    #[arg(long, default_value_t = CannyParams::default().low_frac)]
    low: f64,
    #[arg(long, default_value_t = CannyParams::default().high_frac)]
    high: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

#[derive(Subcommand)]
enum LossCommand {
    /// Weighted stationary-wavelet detail loss.
    Swt {
        a: PathBuf,
        b: PathBuf,
        /// Defaults to the number of weights.
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, default_value = "haar")]
        filter: String,
        /// Per-level weights; defaults to 0.5,0.3,0.2, or uniform when only `--levels` is given.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
        reduction: ReductionArg,
    },
    /// Masked L1 loss; masks are grayscale images scaled to [0, 1].
    Mask {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        mask: Vec<PathBuf>,
        #[arg(long = "lambda", value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
    },
    /// Uncertainty-weighted sum of per-task losses.
    Total {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        losses: Vec<f64>,
        /// Per-task log-variances.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        logvars: Vec<f64>,
    },
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long)]
    report: PathBuf,
    /// Free-form label recorded in the report, e.g. `drone->satellite`.
    #[arg(long, default_value = "query->reference")]
    direction: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    TallOccluders,
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Write `<prefix>.ply`, `<prefix>.truth.png` and `<prefix>.scene.json`.
    BoxCity {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Standard, conflicts_with = "scene")]
        preset: Preset,
        /// Scene description as JSON, e.g. an earlier `.scene.json`.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Overrides the scene's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Ground-truth resolution in scene units per pixel.
        #[arg(long, default_value_t = 0.25)]
        pixel_scale: f64,
    },
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Hole mask for `a`; masked pixels are left out of the comparison.
    #[arg(long)]
    holes: Option<PathBuf>,
}

/// Invalid argument combination detected after parsing.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    if err.downcast_ref::<Usage>().is_some() {
        return (2, "usage");
    }
    match err.downcast_ref::<orthoforge::Error>().map(orthoforge::Error::category) {
        Some(ErrorCategory::Io) | None => (3, "io"),
        Some(ErrorCategory::Format) => (4, "format"),
        Some(ErrorCategory::DegenerateGeometry) => (5, "degenerate-geometry"),
        Some(ErrorCategory::Domain) => (6, "domain"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match with_threads(cli.threads, || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = exit_code(&err);
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Cloud(CloudCommand::Info { path }) => cloud_info(&path),
        Command::Plane(PlaneCommand::Fit {
            cloud,
            threshold,
            iters,
            seed,
        }) => plane_fit(&cloud, threshold, iters, seed),
        Command::Render(args) => render(*args),
        Command::Warp(args) => warp(args),
        Command::Inpaint(args) => inpaint_cmd(args),
        Command::Edges(args) => edges(args),
        Command::Loss(cmd) => loss(cmd),
        Command::Retrieve(args) => retrieve(args),
        Command::Fixture(FixtureCommand::BoxCity {
            output,
            preset,
            scene,
            seed,
            pixel_scale,
        }) => box_city(&output, preset, scene.as_deref(), seed, pixel_scale),
        Command::Compare(args) => compare(args),
    }
}

fn triple(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn cloud_info(path: &Path) -> Result<()> {
    let load = load_ply(path)?;
    println!("points={}", load.cloud.len());
    println!("declared={}", load.declared);
    println!("dropped_nonfinite={}", load.dropped_nonfinite);
    if let Ok(bb) = load.cloud.bounding_box() {
        println!("bbox_min={}", triple(bb.min));
        println!("bbox_max={}", triple(bb.max));
        println!("diagonal={}", bb.diagonal());
    }
    Ok(())
}

fn plane_fit(path: &Path, threshold: Option<String>, iters: Option<usize>, seed: u64) -> Result<()> {
    let mut cfg = PipelineConfig::default();
    if let Some(t) = threshold {
        cfg.set("ransac_threshold", &t)?;
    }
    if let Some(n) = iters {
        cfg.set("ransac_iters", &n.to_string())?;
    }
    cfg.validate()?;
    let cloud = load_ply(path)?.cloud;
    let params = RansacParams {
        seed,
        ..cfg.render.ransac
    };
    let fitted = plane::fit_plane_ransac(&cloud, &params)?;
    let (_, plane) = plane::fix_orientation(plane::to_plane_coords(&cloud, &fitted), fitted);
    let [a, b, c, d] = plane.coefficients();
    println!("a={a}\nb={b}\nc={c}\nd={d}");
    println!("centroid={}", triple(plane.centroid.iter().copied()));
    println!("inlier_fraction={}", plane.inlier_fraction);
    println!("threshold={}", plane.threshold);
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let (mut cfg, replay_input) = match (&args.replay, &args.config) {
        (Some(path), _) => {
            let manifest = RunManifest::load(path)?;
            (manifest.config()?, Some(manifest.input))
        }
        (None, Some(path)) => (PipelineConfig::load(path)?, None),
        (None, None) => (PipelineConfig::default(), None),
    };
    let flags: [(&str, Option<String>); 13] = [
        ("rho", args.rho.map(|v| v.to_string())),
        ("r_min", args.rmin.map(|v| v.to_string())),
        ("r_max", args.rmax.map(|v| v.to_string())),
        ("p_max", args.pmax.map(|v| v.to_string())),
        ("ssaa", args.ssaa.map(|v| v.to_string())),
        ("roof_band_frac", args.roof_band.map(|v| v.to_string())),
        ("ground_band", args.ground_band.map(|v| v.to_string())),
        ("m_min", args.mmin.map(|v| v.to_string())),
        ("splat_radius_px", args.splat_radius.map(|v| v.to_string())),
        ("crop_frac", args.crop.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("inpaint_radius", args.inpaint_radius.map(|v| v.to_string())),
        ("harmonize_ref", args.harmonize_ref.map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(value) = value {
            cfg.set(key, &value)?;
        }
    }
    for kv in &args.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(key.trim(), value)?;
    }
    cfg.validate()?;
    let input = args
        .cloud
        .or(replay_input)
        .ok_or_else(|| usage("an input cloud is required unless --replay is given"))?;
    let manifest = pipeline::run_pipeline(&input, &args.output, &cfg)?;
    for (stage, secs) in &manifest.timings_s {
        log::info!("{stage}: {secs:.3}s");
    }
    println!("output={}", manifest.output.display());
    println!("manifest={}", pipeline::manifest_path(&args.output).display());
    println!("width={}\nheight={}", manifest.output_size[1], manifest.output_size[0]);
    println!("pixel_scale={}", manifest.pixel_scale);
    println!("holes_before_inpaint={}", manifest.holes_before_inpaint);
    Ok(())
}

fn warp(args: WarpArgs) -> Result<()> {
    let image = OrthoImage::load_png(&args.image)?;
    let corr = raster::load_correspondences(&args.corr)?;
    let width = args.width.unwrap_or(image.width);
    let height = args.height.unwrap_or(image.height);
    let out = raster::perspective_fallback(&image, &corr, width, height)?;
    out.save_png(&args.output)?;
    out.save_hole_mask(&args.output)?;
    println!("output={}", args.output.display());
    println!("holes={}", out.hole_count());
    Ok(())
}

fn load_with_mask(image: &Path, mask: &Path) -> Result<OrthoImage> {
    let mut img = OrthoImage::load_png(image)?;
    let mask = OrthoImage::load_png(mask)?;
    if (mask.width, mask.height) != (img.width, img.height) {
        return Err(orthoforge::Error::domain("mask and image sizes differ").into());
    }
    for (hole, c) in img.hole_mask.iter_mut().zip(&mask.rgb) {
        *hole = c.iter().any(|&v| v > 0.0);
    }
    Ok(img)
}

fn inpaint_cmd(args: InpaintArgs) -> Result<()> {
    let img = load_with_mask(&args.image, &args.mask)?;
    let mask = HoleMask::from_image(&img);
    let filled = if mask.count() == 0 {
        img.clone()
    } else {
        inpaint::inpaint(&img, &mask.dilate(args.dilate), args.radius)?
    };
    let out = match &args.harmonize_ref {
        Some(path) => inpaint::harmonize(&filled, Some(&OrthoImage::load_png(path)?))?,
        None => filled,
    };
    out.save_png(&args.output)?;
    println!("output={}", args.output.display());
    println!("filled={}", mask.count());
    Ok(())
}

fn edges(args: EdgesArgs) -> Result<()> {
    let img = OrthoImage::load_png(&args.image)?;
    let params = CannyParams {
        sigma: args.sigma,
        low_frac: args.low,
        high_frac: args.high,
    };
    let map = wavelet::canny_edges(&wavelet::luminance(&img), params)?;
    let rgb = map.data.iter().map(|&v| [(v * 255.0) as f32; 3]).collect();
    OrthoImage::from_rgb(map.width, map.height, rgb)?.save_png(&args.output)?;
    println!("output={}", args.output.display());
    println!("edge_pixels={}", map.data.iter().filter(|&&v| v > 0.0).count());
    Ok(())
}

fn image_channels(path: &Path) -> Result<Vec<Plane>> {
    Ok(wavelet::channels(&OrthoImage::load_png(path)?))
}

fn loss(cmd: LossCommand) -> Result<()> {
    let value = match cmd {
        LossCommand::Swt {
            a,
            b,
            levels,
            filter,
            weights,
            reduction,
        } => {
            let weights = match (levels, weights) {
                (Some(l), Some(w)) if l != w.len() => {
                    return Err(usage(format!("--levels {l} needs {l} weights, got {}", w.len())));
                }
                (_, Some(w)) => w,
                (Some(0), None) => return Err(usage("--levels must be at least 1")),
                (Some(l), None) => vec![1.0 / l as f64; l],
                (None, None) => vec![0.5, 0.3, 0.2],
            };
            let reduction = match reduction {
                ReductionArg::Mean => Reduction::Mean,
                ReductionArg::Sum => Reduction::Sum,
            };
            let filter = WaveletFilter::parse(&filter)?;
            wavelet::swt_loss(&image_channels(&a)?, &image_channels(&b)?, &weights, filter, reduction)?
        }
        LossCommand::Mask { a, b, mask, lambdas } => {
            if mask.len() != lambdas.len() {
                return Err(usage(format!("{} masks but {} lambdas", mask.len(), lambdas.len())));
            }
            let mut set = StructuralMaskSet::default();
            for path in &mask {
                let mut plane = wavelet::luminance(&OrthoImage::load_png(path)?);
                plane.data.iter_mut().for_each(|v| *v = (*v / 255.0).clamp(0.0, 1.0));
                set.push(plane, path.display().to_string())?;
            }
            wavelet::mask_loss(&image_channels(&a)?, &image_channels(&b)?, &set, &lambdas)?
        }
        LossCommand::Total { losses, logvars } => {
            if losses.len() != logvars.len() {
                return Err(usage(format!(
                    "{} losses but {} log-variances",
                    losses.len(),
                    logvars.len()
                )));
            }
            wavelet::uncertainty_total(&losses, &logvars)?
        }
    };
    println!("{value}");
    Ok(())
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(usage("--k needs positive cutoffs"));
    }
    let queries = retrieval::load_descriptor_pack(&args.queries)?;
    let refs = retrieval::load_descriptor_pack(&args.refs)?;
    let report = retrieval::evaluate(&queries, &refs, &args.k, &args.direction, Parallelism::Parallel)?;
    let json = serde_json::to_string_pretty(&report).context("serializing the retrieval report")?;
    std::fs::write(&args.report, json + "\n").map_err(|e| orthoforge::Error::io(&args.report, e))?;
    for (k, r) in &report.recall_at {
        println!("recall@{k}={r}");
    }
    println!("ap_mean={}", report.ap_mean);
    println!("excluded_queries={}", report.excluded_queries.len());
    Ok(())
}

fn box_city(output: &Path, preset: Preset, scene: Option<&Path>, seed: Option<u64>, pixel_scale: f64) -> Result<()> {
    let mut scene = match scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| orthoforge::Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| orthoforge::Error::Schema(format!("scene: {e}")))?
        }
        None => match preset {
            Preset::Standard => BoxCityScene::standard(0),
            Preset::TallOccluders => BoxCityScene::tall_occluders(0),
        },
    };
    if let Some(seed) = seed {
        scene.seed = seed;
    }
    if !(pixel_scale > 0.0 && pixel_scale.is_finite()) {
        return Err(usage("--pixel-scale must be positive"));
    }
    let (cloud, truth) = fixtures::generate_box_city(&scene, pixel_scale)?;
    let ply = output.with_extension("ply");
    let truth_path = sidecar_path(output, "truth.png");
    let scene_path = sidecar_path(output, "scene.json");
    orthoforge::save_ply(&cloud, &ply)?;
    truth.save_png(&truth_path)?;
    truth.save_georef(&truth_path)?;
    let json = serde_json::to_string_pretty(&scene).context("serializing the scene")?;
    std::fs::write(&scene_path, json + "\n").map_err(|e| orthoforge::Error::io(&scene_path, e))?;
    println!("cloud={}", ply.display());
    println!("points={}", cloud.len());
    println!("truth={}", truth_path.display());
    println!("scene={}", scene_path.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let a = match &args.holes {
        Some(mask) => load_with_mask(&args.a, mask)?,
        None => OrthoImage::load_png(&args.a)?,
    };
    let b = OrthoImage::load_png(&args.b)?;
    let report = fixtures::compare_images(&a, &b, args.holes.is_some())?;
    println!("mean_abs_diff={}", triple(report.mean_abs_diff));
    println!("fraction_within_16={}", report.fraction_within_16);
    println!("ssim={}", report.ssim);
    println!("compared_pixels={}", report.compared_pixels);
    Ok(())
}
