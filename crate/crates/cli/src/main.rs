//! `histlayer` — differentiable color histograms from the command line.
//!
//! Subcommands: `hist`, `jointhist`, `metrics`, `match`, `gradcheck`.
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 shape, 4 optimization failure,
//! 5 gradcheck failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use histlayer_core as core;
use histlayer_core::{
    activation_stack, channel_histogram, check_scalar_fn, color_transfer, d_mi, emd,
    joint_histogram, optimize, rgb_to_yuv, total_loss, total_loss_with_grad, yuv_to_rgb,
    BinningConfig, Channel, ImageRgb8, ImageYuv, InitMode, LossWeights, OptimizationConfig,
    SoftHistogram,
};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_SHAPE: u8 = 3;
const EXIT_OPTIM: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser)]
#[command(
    name = "histlayer",
    version,
    about = "Differentiable color histograms, EMD/MI metrics, and histogram matching",
    disable_help_subcommand = true
)]
struct Cli {
    /// Internal parallelism (0 = library default). Falls back to the
    /// HISTLAYER_THREADS environment variable. Results are bit-identical for
    /// every thread count; --threads 1 is the guaranteed-reproducible mode.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Soft color histogram(s) of an image, as JSON
    Hist(HistArgs),
    /// Joint histogram of two images, as JSON or CSV
    Jointhist(JointArgs),
    /// Per-channel EMD and normalized-MI metrics between two images
    Metrics(MetricsArgs),
    /// Match an image's color distribution to a reference (image or histogram file)
    Match(MatchArgs),
    /// End-to-end analytic-vs-numeric pixel gradient check
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Copy)]
struct BinningArgs {
    /// Number of histogram bins
    #[arg(long, default_value_t = 256)]
    bins: usize,

    /// Kernel bandwidth as L / ratio, where L is the bin width
    #[arg(long, default_value_t = 2.5)]
    bandwidth_ratio: f64,
}

impl BinningArgs {
    fn build(&self) -> Result<BinningConfig, CliError> {
        BinningConfig::with_bandwidth_ratio(self.bins, self.bandwidth_ratio)
            .map_err(CliError::from)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChannelSel {
    Y,
    U,
    V,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JointFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct HistArgs {
    /// Input PNG image
    image: PathBuf,

    /// Which channel(s) to histogram
    #[arg(long, value_enum, default_value_t = ChannelSel::All)]
    channel: ChannelSel,

    #[command(flatten)]
    binning: BinningArgs,

    /// Write to a file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct JointArgs {
    /// First PNG image (rows of the joint histogram)
    image_a: PathBuf,
    /// Second PNG image (columns), same dimensions as the first
    image_b: PathBuf,

    #[arg(long, value_enum, default_value_t = ChannelSel::Y)]
    channel: ChannelSel,

    #[command(flatten)]
    binning: BinningArgs,

    /// Output format; CSV requires a single channel
    #[arg(long, value_enum, default_value_t = JointFormat::Json)]
    format: JointFormat,

    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    image_a: PathBuf,
    image_b: PathBuf,

    #[command(flatten)]
    binning: BinningArgs,

    /// Only compute EMD (allows images of different sizes)
    #[arg(long)]
    emd_only: bool,
}

#[derive(Args)]
struct MatchArgs {
    /// Source (content) PNG image
    source: PathBuf,

    /// Reference PNG whose color histograms are the target
    #[arg(long, group = "reference", required = true)]
    ref_image: Option<PathBuf>,

    /// Reference histogram JSON file with keys "y", "u", "v"
    #[arg(long, group = "reference")]
    ref_hist: Option<PathBuf>,

    #[command(flatten)]
    binning: BinningArgs,

    /// Output image path
    #[arg(long, default_value = "out.png")]
    out: PathBuf,

    /// Loss trace CSV path
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,

    /// Final loss report JSON path
    #[arg(long, default_value = "report.json")]
    report: PathBuf,

    #[arg(long, default_value_t = 1000)]
    steps: usize,

    #[arg(long, default_value_t = 0.01)]
    lr: f64,

    #[arg(long, default_value_t = 1.0)]
    lambda_emd: f64,

    #[arg(long, default_value_t = 1.0)]
    lambda_mi: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, value_enum, default_value_t = InitModeArg::FromSource)]
    init: InitModeArg,

    /// Record every n-th step in the trace
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitModeArg {
    FromSource,
    FromNoise,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Side length of the random test images
    #[arg(long, default_value_t = 8)]
    size: usize,

    #[arg(long, default_value_t = 16)]
    bins: usize,

    #[arg(long, default_value_t = 2.5)]
    bandwidth_ratio: f64,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Finite-difference step
    #[arg(long, default_value_t = 1e-4)]
    step: f64,

    /// Failure threshold on the max relative error
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,

    /// Print only the machine-readable JSON report
    #[arg(long)]
    json: bool,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<core::Error> for CliError {
    fn from(err: core::Error) -> Self {
        let code = match &err {
            core::Error::Image(_) | core::Error::Io(_) | core::Error::Json(_) => EXIT_IO,
            core::Error::ShapeMismatch { .. }
            | core::Error::LengthMismatch { .. }
            | core::Error::ConfigMismatch => EXIT_SHAPE,
            core::Error::InvalidArgument(_) => EXIT_USAGE,
            core::Error::EmptyDistribution
            | core::Error::DegenerateJoint
            | core::Error::NonFinite(_) => EXIT_OPTIM,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("histlayer: {}", e.message);
        return ExitCode::from(e.code);
    }

    let result = match cli.command {
        Command::Hist(args) => cmd_hist(args),
        Command::Jointhist(args) => cmd_jointhist(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Match(args) => cmd_match(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("histlayer: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HISTLAYER_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                CliError::usage(format!("HISTLAYER_THREADS must be an integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

fn load_image(path: &Path) -> Result<ImageRgb8, CliError> {
    ImageRgb8::load_png(path).map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {}", path.display(), e),
    })
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError {
            code: EXIT_IO,
            message: format!("{}: {}", path.display(), e),
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn hist_value(hist: &SoftHistogram) -> serde_json::Value {
    serde_json::from_str(&hist.to_json()).expect("histogram JSON is valid")
}

fn selected_channels(sel: ChannelSel) -> &'static [(usize, &'static str)] {
    match sel {
        ChannelSel::Y => &[(0, "y")],
        ChannelSel::U => &[(1, "u")],
        ChannelSel::V => &[(2, "v")],
        ChannelSel::All => &[(0, "y"), (1, "u"), (2, "v")],
    }
}

fn cmd_hist(args: HistArgs) -> Result<u8, CliError> {
    let config = args.binning.build()?;
    let img = load_image(&args.image)?;
    let yuv = rgb_to_yuv(&img, &config);
    let picks = selected_channels(args.channel);

    let text = if picks.len() == 1 {
        let hist = channel_histogram(yuv.channels()[picks[0].0], &config);
        hist.to_json()
    } else {
        let mut map = serde_json::Map::new();
        for &(idx, name) in picks {
            let hist = channel_histogram(yuv.channels()[idx], &config);
            map.insert(name.to_string(), hist_value(&hist));
        }
        serde_json::to_string(&serde_json::Value::Object(map)).expect("valid JSON")
    };
    write_or_print(args.output.as_deref(), &text)?;
    Ok(0)
}

fn joint_rows(joint: &core::JointHistogram) -> Vec<Vec<f64>> {
    let k = joint.config().bins();
    (0..k)
        .map(|k1| joint.mass()[k1 * k..(k1 + 1) * k].to_vec())
        .collect()
}

fn cmd_jointhist(args: JointArgs) -> Result<u8, CliError> {
    let config = args.binning.build()?;
    if args.format == JointFormat::Csv && args.channel == ChannelSel::All {
        return Err(CliError::usage(
            "--format csv requires a single channel (--channel y|u|v)",
        ));
    }
    let a = rgb_to_yuv(&load_image(&args.image_a)?, &config);
    let b = rgb_to_yuv(&load_image(&args.image_b)?, &config);

    let picks = selected_channels(args.channel);
    let mut joints = Vec::new();
    for &(idx, name) in picks {
        let ja = activation_stack(a.channels()[idx], &config);
        let jb = activation_stack(b.channels()[idx], &config);
        joints.push((name, joint_histogram(&ja, &jb)?));
    }

    let text = match args.format {
        JointFormat::Csv => {
            let mut out = String::new();
            for row in joint_rows(&joints[0].1) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", line.join(","));
            }
            out.trim_end().to_string()
        }
        JointFormat::Json => {
            let value_of = |j: &core::JointHistogram| {
                serde_json::json!({ "k": j.config().bins(), "mass": joint_rows(j) })
            };
            if joints.len() == 1 {
                serde_json::to_string(&value_of(&joints[0].1)).expect("valid JSON")
            } else {
                let mut map = serde_json::Map::new();
                for (name, j) in &joints {
                    map.insert(name.to_string(), value_of(j));
                }
                serde_json::to_string(&serde_json::Value::Object(map)).expect("valid JSON")
            }
        }
    };
    write_or_print(args.output.as_deref(), &text)?;
    Ok(0)
}

fn cmd_metrics(args: MetricsArgs) -> Result<u8, CliError> {
    let config = args.binning.build()?;
    let a_rgb = load_image(&args.image_a)?;
    let b_rgb = load_image(&args.image_b)?;
    let a = rgb_to_yuv(&a_rgb, &config);
    let b = rgb_to_yuv(&b_rgb, &config);

    let names = ["y", "u", "v"];
    let mut emd_map = serde_json::Map::new();
    for (idx, name) in names.iter().enumerate() {
        let ha = channel_histogram(a.channels()[idx], &config);
        let hb = channel_histogram(b.channels()[idx], &config);
        emd_map.insert((*name).to_string(), serde_json::json!(emd(&ha, &hb)?));
    }

    let mut out = serde_json::Map::new();
    out.insert("emd".into(), serde_json::Value::Object(emd_map));

    if !args.emd_only {
        if !a.same_shape(&b) {
            return Err(CliError {
                code: EXIT_SHAPE,
                message: format!(
                    "mutual information needs equal dimensions, got {}x{} vs {}x{} (use --emd-only)",
                    a.width(),
                    a.height(),
                    b.width(),
                    b.height()
                ),
            });
        }
        let mut mi_map = serde_json::Map::new();
        for (idx, name) in names.iter().enumerate() {
            let sa = activation_stack(a.channels()[idx], &config);
            let sb = activation_stack(b.channels()[idx], &config);
            let d = d_mi(&joint_histogram(&sa, &sb)?)?;
            mi_map.insert((*name).to_string(), serde_json::json!(d));
        }
        out.insert("d_mi".into(), serde_json::Value::Object(mi_map));
    }

    println!(
        "{}",
        serde_json::to_string(&serde_json::Value::Object(out)).expect("valid JSON")
    );
    Ok(0)
}

fn load_ref_hists(path: &Path, config: &BinningConfig) -> Result<[SoftHistogram; 3], CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {}", path.display(), e),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {}", path.display(), e),
    })?;
    let mut hists = Vec::new();
    for name in ["y", "u", "v"] {
        let channel = value.get(name).ok_or_else(|| {
            CliError::usage(format!(
                "{}: reference histogram JSON must contain keys \"y\", \"u\", \"v\"",
                path.display()
            ))
        })?;
        let hist = SoftHistogram::from_json(&channel.to_string(), config).map_err(|e| {
            CliError::usage(format!(
                "{}: channel {name:?} does not fit the configured binning: {e}",
                path.display()
            ))
        })?;
        hists.push(hist);
    }
    let mut it = hists.into_iter();
    Ok([
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    ])
}

fn cmd_match(args: MatchArgs) -> Result<u8, CliError> {
    let config = args.binning.build()?;
    let src_rgb = load_image(&args.source)?;

    let mut ocfg = OptimizationConfig::new(config.clone());
    ocfg.max_steps = args.steps;
    ocfg.weights = LossWeights::new(args.lambda_emd, args.lambda_mi);
    ocfg.lr = args.lr;
    ocfg.seed = args.seed;
    ocfg.log_every = args.log_every;
    ocfg.init_mode = match args.init {
        InitModeArg::FromSource => InitMode::FromSource,
        InitModeArg::FromNoise => InitMode::FromNoise,
    };

    let src_yuv = rgb_to_yuv(&src_rgb, &config);
    let (out_rgb, trace, refs) = if let Some(ref_path) = &args.ref_image {
        let ref_rgb = load_image(ref_path)?;
        let (out_rgb, trace) = color_transfer(&src_rgb, &ref_rgb, &ocfg).map_err(CliError::from)?;
        let ref_yuv = rgb_to_yuv(&ref_rgb, &config);
        let [ry, ru, rv] = ref_yuv.channels();
        let refs = [
            channel_histogram(ry, &config),
            channel_histogram(ru, &config),
            channel_histogram(rv, &config),
        ];
        (out_rgb, trace, refs)
    } else {
        let ref_path = args.ref_hist.as_ref().expect("clap group");
        let refs = load_ref_hists(ref_path, &config)?;
        let (out_yuv, trace) = optimize(&src_yuv, &refs, &ocfg).map_err(CliError::from)?;
        (yuv_to_rgb(&out_yuv), trace, refs)
    };

    for (step, warning) in trace.warnings() {
        eprintln!("histlayer: step {step}: {warning}");
    }

    out_rgb.save_png(&args.out).map_err(CliError::from)?;
    std::fs::write(&args.trace, trace.to_csv()).map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {}", args.trace.display(), e),
    })?;

    // final report against the reference histograms; MI falls back to null
    // if the final joints are degenerate (e.g. a constant output)
    let out_yuv = rgb_to_yuv(&out_rgb, &config);
    let report_value = match total_loss(&out_yuv, &src_yuv, &refs, &ocfg.weights, &config) {
        Ok(report) => serde_json::json!({
            "total": report.total,
            "emd_per_channel": report.emd_per_channel,
            "mi_per_channel": report.mi_per_channel,
            "l_emd": report.l_emd(),
            "l_mi": report.l_mi(),
            "steps": args.steps,
        }),
        Err(core::Error::DegenerateJoint | core::Error::EmptyDistribution) => {
            let mut emd_pc = [0.0; 3];
            for c in 0..3 {
                let h = channel_histogram(out_yuv.channels()[c], &config);
                emd_pc[c] = emd(&refs[c], &h).map_err(CliError::from)?;
            }
            let l_emd = (emd_pc[0] + emd_pc[1] + emd_pc[2]) / 3.0;
            serde_json::json!({
                "total": ocfg.weights.emd * l_emd,
                "emd_per_channel": emd_pc,
                "mi_per_channel": serde_json::Value::Null,
                "l_emd": l_emd,
                "l_mi": serde_json::Value::Null,
                "steps": args.steps,
            })
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::write(
        &args.report,
        serde_json::to_string_pretty(&report_value).expect("valid JSON"),
    )
    .map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("{}: {}", args.report.display(), e),
    })?;

    eprintln!(
        "histlayer: wrote {}, {}, {}",
        args.out.display(),
        args.trace.display(),
        args.report.display()
    );
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8, CliError> {
    if args.size == 0 {
        return Err(CliError::usage("--size must be positive"));
    }
    let config = BinningConfig::with_bandwidth_ratio(args.bins, args.bandwidth_ratio)
        .map_err(CliError::from)?;
    let (h, w) = (args.size, args.size);
    let n = h * w;
    let (lo, hi) = (config.clamp_min(), config.clamp_max());

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut random_channel = |scale: f64| -> Channel {
        let mid = 0.5 * (lo + hi);
        let values: Vec<f64> = (0..n)
            .map(|_| mid + (rng.random_range(lo..=hi) - mid) * scale)
            .collect();
        Channel::new(h, w, values).expect("sampled within range")
    };
    let mut random_image = |scale: f64| -> ImageYuv {
        ImageYuv::new(
            random_channel(scale),
            random_channel(scale),
            random_channel(scale),
        )
        .expect("equal shapes")
    };
    let out = random_image(1.0);
    let src = random_image(1.0);
    let ref_img = random_image(0.8);
    let refs = [
        channel_histogram(ref_img.y(), &config),
        channel_histogram(ref_img.u(), &config),
        channel_histogram(ref_img.v(), &config),
    ];
    let weights = LossWeights::default();

    let flatten = |img: &ImageYuv| -> Vec<f64> {
        let mut point = Vec::with_capacity(3 * n);
        for c in img.channels() {
            point.extend_from_slice(c.values());
        }
        point
    };
    let unflatten = |point: &[f64]| -> ImageYuv {
        ImageYuv::new(
            Channel::new(h, w, point[..n].to_vec()).expect("clamped"),
            Channel::new(h, w, point[n..2 * n].to_vec()).expect("clamped"),
            Channel::new(h, w, point[2 * n..].to_vec()).expect("clamped"),
        )
        .expect("equal shapes")
    };

    let point = flatten(&out);
    let objective = |p: &[f64]| -> f64 {
        total_loss(&unflatten(p), &src, &refs, &weights, &config)
            .expect("loss is defined on perturbed images")
            .total
    };
    let analytic = |p: &[f64]| -> Vec<f64> {
        let (_, grads) = total_loss_with_grad(&unflatten(p), &src, &refs, &weights, &config)
            .expect("gradient is defined");
        let mut flat = Vec::with_capacity(3 * n);
        for g in &grads {
            flat.extend_from_slice(g.values());
        }
        flat
    };

    let report = check_scalar_fn("total_loss", objective, analytic, &point, args.step)
        .map_err(CliError::from)?;

    let json = serde_json::to_string(&report).expect("valid JSON");
    if args.json {
        println!("{json}");
    } else {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("valid JSON")
        );
        eprintln!(
            "histlayer: gradcheck {}: max_rel_error {:.3e} over {} coordinates (threshold {:.1e})",
            if report.max_rel_error < args.threshold {
                "PASS"
            } else {
                "FAIL"
            },
            report.max_rel_error,
            report.num_points,
            args.threshold
        );
    }
    if report.max_rel_error >= args.threshold {
        return Ok(EXIT_GRADCHECK);
    }
    Ok(0)
}
