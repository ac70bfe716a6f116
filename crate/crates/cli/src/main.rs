//! Command-line driver for the appearance-transfer toolkit.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numerical solver
//! failure, 5 dual-demo tolerance failure.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use appearance_ot::error::{Error, Result};
use appearance_ot::features::WeightedPointCloud;
use appearance_ot::image_io::{load_image, save_image, GeometryMaps, ImageBuffer};
use appearance_ot::metrics::{metric_report, FeatureBank};
use appearance_ot::mixgame::{generate_mix_mask, mix_images};
use appearance_ot::neural::{estimate_w1, SampleSet, TrainConfig};
use appearance_ot::ot::{cost_matrix, exact_ot_small, plan_cost, sinkhorn, CostKind, EXACT_SOLVER_LIMIT};
use appearance_ot::rng::Rng;
use appearance_ot::transfer::{transfer_appearance, TransferMethod, TransferReport};

use config::{resolve, FileConfig, Overrides, ResolvedConfig};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "appearance-ot",
    version,
    about = "Optimal-transport appearance transfer between images",
    after_help = "Exit codes: 0 ok, 2 bad arguments, 3 I/O, 4 solver failure, 5 demo tolerance.\n\
                  OT_APPEARANCE_THREADS caps internal parallelism (0 = auto)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sinkhorn,
    Exact,
    Neural,
}

impl From<MethodArg> for TransferMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sinkhorn => TransferMethod::Sinkhorn,
            MethodArg::Exact => TransferMethod::Exact,
            MethodArg::Neural => TransferMethod::Neural,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoTask {
    Shift1d,
    Shift2d,
    Identity,
}

#[derive(Subcommand)]
enum Command {
    /// Transfer the target's appearance onto the source image.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Position map (3-channel, `[0,1]` coordinates); used for both images
        /// unless a target-specific map is also given.
        #[arg(long)]
        position_map: Option<PathBuf>,
        /// Normal map ((n+1)/2 encoding); used for both images unless a
        /// target-specific map is also given.
        #[arg(long)]
        normal_map: Option<PathBuf>,
        /// Position map for the target image only.
        #[arg(long)]
        target_position_map: Option<PathBuf>,
        /// Normal map for the target image only.
        #[arg(long)]
        target_normal_map: Option<PathBuf>,
        /// JSON config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the JSON run report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        max_points: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        position_weight: Option<f64>,
        #[arg(long)]
        normal_weight: Option<f64>,
        #[arg(long)]
        smoothing_radius: Option<usize>,
        /// Training iterations for the neural method.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Evaluate image-pair metrics and emit a JSON report.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Edge-SSIM reference; defaults to --b when absent.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the neural dual benchmarks against closed-form oracles.
    DualDemo {
        #[arg(long, value_enum)]
        task: DemoTask,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training iterations (default 3000).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Generate a mix-mask and the mixed image for an image pair.
    MaskDemo {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1)]
        patches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the mask PNG.
        #[arg(long)]
        out: PathBuf,
        /// Output path for the mixed image.
        #[arg(long)]
        mixed: PathBuf,
        #[arg(long, default_value_t = 0)]
        soft_edge: usize,
        #[arg(long, default_value_t = 0.2)]
        min_frac: f64,
        #[arg(long, default_value_t = 0.5)]
        max_frac: f64,
    },
    /// Time the solvers on synthetic Gaussian-mixture clouds, writing a CSV.
    Bench {
        /// Comma-separated support sizes, e.g. 16,64,256,1024.
        #[arg(long, default_value = "16,64,256,1024")]
        sizes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::UnsupportedFormat(_) | Error::InvalidImage(_) | Error::Checkpoint(_) => 3,
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::ExactSolverLimit { .. } => 2,
        Error::Numerical(_) => 4,
    }
}

fn require_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Io {
            action: "open",
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    Ok(())
}

fn require_output_dir(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Error::Io {
            action: "create",
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory missing"),
        });
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("serialize report: {e}")))?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        action: "write",
        path: path.to_path_buf(),
        source,
    })
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Transfer {
            source,
            target,
            out,
            method,
            position_map,
            normal_map,
            target_position_map,
            target_normal_map,
            config,
            seed,
            report,
            max_points,
            epsilon,
            position_weight,
            normal_weight,
            smoothing_radius,
            iters,
        } => cmd_transfer(TransferArgs {
            source,
            target,
            out,
            method: method.map(Into::into),
            position_map,
            normal_map,
            target_position_map,
            target_normal_map,
            config,
            seed,
            report,
            max_points,
            epsilon,
            position_weight,
            normal_weight,
            smoothing_radius,
            iters,
        }),
        Command::Metrics { a, b, source, out } => cmd_metrics(&a, &b, source.as_deref(), out.as_deref()),
        Command::DualDemo { task, seed, iters } => cmd_dual_demo(task, seed, iters),
        Command::MaskDemo {
            a,
            b,
            patches,
            seed,
            out,
            mixed,
            soft_edge,
            min_frac,
            max_frac,
        } => cmd_mask_demo(&a, &b, patches, seed, &out, &mixed, soft_edge, (min_frac, max_frac)),
        Command::Bench { sizes, seed, out } => cmd_bench(&sizes, seed, &out),
    }
}

struct TransferArgs {
    source: PathBuf,
    target: PathBuf,
    out: PathBuf,
    method: Option<TransferMethod>,
    position_map: Option<PathBuf>,
    normal_map: Option<PathBuf>,
    target_position_map: Option<PathBuf>,
    target_normal_map: Option<PathBuf>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    report: Option<PathBuf>,
    max_points: Option<usize>,
    epsilon: Option<f64>,
    position_weight: Option<f64>,
    normal_weight: Option<f64>,
    smoothing_radius: Option<usize>,
    iters: Option<usize>,
}

#[derive(Serialize)]
struct TransferReportFile<'a> {
    tool_version: &'a str,
    config: &'a ResolvedConfig,
    #[serde(flatten)]
    report: &'a TransferReport,
}

fn cmd_transfer(args: TransferArgs) -> Result<i32> {
    // Validate every path before doing any work.
    for input in [Some(&args.source), Some(&args.target), args.position_map.as_ref(), args.normal_map.as_ref(), args.target_position_map.as_ref(), args.target_normal_map.as_ref(), args.config.as_ref()].into_iter().flatten() {
        require_input(input)?;
    }
    require_output_dir(&args.out)?;
    if let Some(r) = &args.report {
        require_output_dir(r)?;
    }

    let file_cfg = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let overrides = Overrides {
        method: args.method,
        max_points: args.max_points,
        epsilon: args.epsilon,
        position_weight: args.position_weight,
        normal_weight: args.normal_weight,
        seed: args.seed,
        smoothing_radius: args.smoothing_radius,
        total_iterations: args.iters,
    };
    let resolved = resolve(&file_cfg, &overrides)?;
    let options = resolved.transfer_options()?;

    let source = load_image(&args.source)?;
    let target = load_image(&args.target)?;
    let load_map = |p: &Option<PathBuf>| -> Result<Option<ImageBuffer>> {
        p.as_ref().map(load_image).transpose()
    };
    let source_geom = GeometryMaps {
        position_map: load_map(&args.position_map)?,
        normal_map: load_map(&args.normal_map)?,
    };
    // The shared maps stand in for the target's unless overridden; aligned
    // pairs share their geometry.
    let target_geom = GeometryMaps {
        position_map: load_map(&args.target_position_map)?
            .or_else(|| source_geom.position_map.clone()),
        normal_map: load_map(&args.target_normal_map)?.or_else(|| source_geom.normal_map.clone()),
    };

    let (output, report) = transfer_appearance(&source, &target, &source_geom, &target_geom, &options)?;
    save_image(&output, &args.out)?;
    if let Some(report_path) = &args.report {
        write_json(
            report_path,
            &TransferReportFile {
                tool_version: TOOL_VERSION,
                config: &resolved,
                report: &report,
            },
        )?;
    }
    println!(
        "{}: cost {:.6}, histogram distance {:.6} -> {:.6}, {:.3}s",
        report.method,
        report.cost,
        report.histogram_distance_before,
        report.histogram_distance_after,
        report.seconds
    );
    Ok(0)
}

#[derive(Serialize)]
struct MetricsConfigEcho<'a> {
    a: &'a Path,
    b: &'a Path,
    edge_reference: &'a Path,
    bank_seed: u64,
}

#[derive(Serialize)]
struct MetricsReportFile<'a> {
    tool_version: &'a str,
    config: MetricsConfigEcho<'a>,
    #[serde(flatten)]
    report: appearance_ot::metrics::MetricReport,
}

fn cmd_metrics(a: &Path, b: &Path, source: Option<&Path>, out: Option<&Path>) -> Result<i32> {
    require_input(a)?;
    require_input(b)?;
    if let Some(s) = source {
        require_input(s)?;
    }
    if let Some(o) = out {
        require_output_dir(o)?;
    }
    let img_a = load_image(a)?;
    let img_b = load_image(b)?;
    let edge_ref_path = source.unwrap_or(b);
    let edge_ref = if source.is_some() {
        load_image(edge_ref_path)?
    } else {
        img_b.clone()
    };
    let bank = FeatureBank::default();
    let report = metric_report(&img_a, &img_b, &edge_ref, &bank)?;
    let file = MetricsReportFile {
        tool_version: TOOL_VERSION,
        config: MetricsConfigEcho {
            a,
            b,
            edge_reference: edge_ref_path,
            bank_seed: bank.seed(),
        },
        report,
    };
    match out {
        Some(path) => write_json(path, &file)?,
        None => {
            let text = serde_json::to_string_pretty(&file)
                .map_err(|e| Error::InvalidArgument(format!("serialize report: {e}")))?;
            println!("{text}");
        }
    }
    Ok(0)
}

/// Benchmark training configuration: clip 0.125 with hidden width 64 pins
/// the critic class's Lipschitz constant at 1 on the demo tasks.
fn demo_config(seed: u64, iters: Option<usize>) -> TrainConfig {
    TrainConfig {
        clip_bound: 0.125,
        learning_rate: 2e-3,
        total_iterations: iters.unwrap_or(3000),
        seed,
        ..TrainConfig::default()
    }
}

fn cmd_dual_demo(task: DemoTask, seed: u64, iters: Option<usize>) -> Result<i32> {
    let start = Instant::now();
    let cfg = demo_config(seed, iters);
    let mut rng = Rng::derive(seed, 0xde30);
    let (name, oracle, estimate, tolerance, relative) = match task {
        DemoTask::Shift1d => {
            // Uniform[0,1] vs uniform[2,3]: pure translation, W1 = 2.
            let source = SampleSet::new((0..512).map(|_| rng.next_f64()).collect(), 1)?;
            let target = SampleSet::new((0..512).map(|_| 2.0 + rng.next_f64()).collect(), 1)?;
            let (_, est) = estimate_w1(&source, &target, &cfg)?;
            ("shift1d", 2.0, est, 0.10, true)
        }
        DemoTask::Shift2d => {
            // Tight Gaussians translated by (1.0, 0.5): W1 = |t| = 1.118.
            // The clipped critic's dual geometry is l1-flavored (each first-
            // layer weight is box-clipped), so diagonal shifts overshoot by
            // up to |t|_1 / |t|_2; the documented tolerance is 40%.
            let mut data_s = Vec::with_capacity(512 * 2);
            let mut data_t = Vec::with_capacity(512 * 2);
            for _ in 0..512 {
                data_s.push(0.1 * rng.normal());
                data_s.push(0.1 * rng.normal());
                data_t.push(1.0 + 0.1 * rng.normal());
                data_t.push(0.5 + 0.1 * rng.normal());
            }
            let source = SampleSet::new(data_s, 2)?;
            let target = SampleSet::new(data_t, 2)?;
            let (_, est) = estimate_w1(&source, &target, &cfg)?;
            ("shift2d", (1.0f64 + 0.25).sqrt(), est, 0.40, true)
        }
        DemoTask::Identity => {
            // Independent draws from the same distribution: W1 = 0.
            let source = SampleSet::new((0..512).map(|_| rng.next_f64()).collect(), 1)?;
            let target = SampleSet::new((0..512).map(|_| rng.next_f64()).collect(), 1)?;
            let (_, est) = estimate_w1(&source, &target, &cfg)?;
            ("identity", 0.0, est, 0.05, false)
        }
    };
    let error = if relative {
        (estimate - oracle).abs() / oracle
    } else {
        estimate.abs()
    };
    let ok = error <= tolerance;
    println!("task: {name}");
    println!("oracle_w1: {oracle:.6}");
    println!("estimate: {estimate:.6}");
    println!(
        "{}: {error:.6}",
        if relative { "relative_error" } else { "absolute_error" }
    );
    println!("tolerance: {tolerance:.2}");
    println!("status: {}", if ok { "ok" } else { "fail" });
    println!("seconds: {:.3}", start.elapsed().as_secs_f64());
    Ok(if ok { 0 } else { 5 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_mask_demo(
    a: &Path,
    b: &Path,
    patches: usize,
    seed: u64,
    out: &Path,
    mixed_path: &Path,
    soft_edge: usize,
    fraction_range: (f64, f64),
) -> Result<i32> {
    require_input(a)?;
    require_input(b)?;
    require_output_dir(out)?;
    require_output_dir(mixed_path)?;
    let generated = load_image(a)?;
    let real = load_image(b)?;
    if !generated.same_dims(&real) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            generated.width(),
            generated.height(),
            real.width(),
            real.height()
        )));
    }
    let mask = generate_mix_mask(
        generated.height(),
        generated.width(),
        patches,
        fraction_range,
        soft_edge,
        seed,
    )?;
    let mixed = mix_images(&generated, &real, &mask)?;
    mask.save_png(out)?;
    save_image(&mixed, mixed_path)?;
    println!(
        "mask: {} patches over {}x{}, coverage {:.3}",
        mask.patches().len(),
        mask.width(),
        mask.height(),
        mask.values().iter().sum::<f64>() / mask.values().len() as f64
    );
    Ok(0)
}

fn gaussian_mixture_cloud(n: usize, rng: &mut Rng) -> WeightedPointCloud {
    let centers: Vec<[f64; 3]> = (0..3)
        .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
        .collect();
    let mut points = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let c = centers[rng.below(3)];
        for &x in &c {
            points.push(x + 0.1 * rng.normal());
        }
    }
    WeightedPointCloud::new(points, vec![1.0 / n as f64; n], 3).unwrap()
}

fn cmd_bench(sizes: &str, seed: u64, out: &Path) -> Result<i32> {
    require_output_dir(out)?;
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad size {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() || sizes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument("sizes must all be >= 2".into()));
    }
    let mut csv = String::from("method,n_points,cost_or_estimate,marginal_error,seconds\n");
    for (idx, &n) in sizes.iter().enumerate() {
        let mut rng = Rng::derive(seed, 0xbe << 8 | idx as u64);
        let a = gaussian_mixture_cloud(n, &mut rng);
        let b = gaussian_mixture_cloud(n, &mut rng);
        let cost = cost_matrix(&a, &b, CostKind::SquaredEuclidean)?;

        let t = Instant::now();
        let plan = sinkhorn(&cost, a.weights(), b.weights(), 0.005, 2000, 1e-7)?;
        let sink_cost = plan_cost(&plan, &cost)?;
        csv.push_str(&format!(
            "sinkhorn,{n},{:.9},{:.3e},{:.4}\n",
            sink_cost,
            plan.max_marginal_error(),
            t.elapsed().as_secs_f64()
        ));

        if n <= EXACT_SOLVER_LIMIT {
            let t = Instant::now();
            let plan = exact_ot_small(&cost, a.weights(), b.weights())?;
            let exact_cost = plan_cost(&plan, &cost)?;
            csv.push_str(&format!(
                "exact,{n},{:.9},{:.3e},{:.4}\n",
                exact_cost,
                plan.max_marginal_error(),
                t.elapsed().as_secs_f64()
            ));
        }

        let t = Instant::now();
        let cfg = TrainConfig {
            clip_bound: 0.125,
            learning_rate: 2e-3,
            total_iterations: 1500,
            seed: seed ^ n as u64,
            ..TrainConfig::default()
        };
        let (_, est) = estimate_w1(
            &SampleSet::from_cloud(&a),
            &SampleSet::from_cloud(&b),
            &cfg,
        )?;
        csv.push_str(&format!(
            "neural,{n},{:.9},,{:.4}\n",
            est,
            t.elapsed().as_secs_f64()
        ));
    }
    let mut file = std::fs::File::create(out).map_err(|source| Error::Io {
        action: "create",
        path: out.to_path_buf(),
        source,
    })?;
    file.write_all(csv.as_bytes()).map_err(|source| Error::Io {
        action: "write",
        path: out.to_path_buf(),
        source,
    })?;
    println!("wrote {} ({} sizes)", out.display(), sizes.len());
    Ok(0)
}
