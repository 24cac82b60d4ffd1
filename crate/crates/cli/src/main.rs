use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use auxpixel::io::{load_images, png, toy, write_repro, ModelKind, RunConfig};
use auxpixel::sampling::{SampleConfig, SampleMode};
use auxpixel::workflow::{
    bench_flat_vs_pyramid, colorize_images, sample_images, superres_images, train_run, write_sample_grids, BenchSetup,
    Model,
};
use auxpixel::{Error, ErrorCategory};

#[derive(Parser)]
#[command(
    name = "auxpixel",
    version,
    about = "Autoregressive image models with auxiliary variables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model and write checkpoints and loss curves.
    Train(TrainArgs),
    /// Draw unconditional samples into a PNG grid.
    Sample(SampleArgs),
    /// Colorize a grayscale image with a grayscale-aux model.
    Colorize(ConditionalArgs),
    /// Upsample a low-resolution image with a pyramid model.
    Superres(ConditionalArgs),
    /// Report bits per dimension on a dataset split.
    Eval(EvalArgs),
    /// Time per-pixel sampling of a flat model against a pyramid.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Base configuration file (key=value lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["grayscale-aux", "pyramid", "flat"])]
    model: Option<String>,
    /// Square image size (sets height and width).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    embed_blocks: Option<usize>,
    #[arg(long)]
    embed_filters: Option<usize>,
    /// Comma-separated block indices followed by a stride-2 downsample.
    #[arg(long)]
    embed_down: Option<String>,
    /// Comma-separated block indices followed by a 2x upsample.
    #[arg(long)]
    embed_up: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset manifest (`path<TAB>split` lines). Defaults to the generated toy set.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    split: String,
    /// Validation split for best-checkpoint tracking.
    #[arg(long)]
    val_split: Option<String>,
    /// Add horizontally flipped copies of the training images.
    #[arg(long)]
    flip: bool,
    /// Apply the face-crop margins before training.
    #[arg(long)]
    face_crop: bool,
    /// Train the factors on separate threads.
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ancestral,
    Reduced,
    Map,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Log-scale reduction for `--mode reduced`.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-evaluate the full network for every pixel instead of caching.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value = "run/model.ckpt")]
    checkpoint: PathBuf,
    /// Grid layout as ROWSxCOLS.
    #[arg(long, default_value = "4x4")]
    grid: String,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args)]
struct ConditionalArgs {
    #[arg(long, default_value = "run/model.ckpt")]
    checkpoint: PathBuf,
    /// Conditioning image (PNG).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "2x2")]
    grid: String,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "run/model.ckpt")]
    checkpoint: PathBuf,
    /// Dataset manifest. Defaults to the generated toy set.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 24)]
    flat_blocks: usize,
    #[arg(long, default_value_t = 3)]
    pyramid_blocks: usize,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 16)]
    filters: usize,
    #[arg(long, default_value_t = 10)]
    components: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

fn parse_grid(s: &str) -> auxpixel::Result<(usize, usize)> {
    let bad = || Error::Config(format!("grid must look like 4x4, got {s:?}"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    let r: usize = r.parse().map_err(|_| bad())?;
    let c: usize = c.parse().map_err(|_| bad())?;
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

fn sample_config(base: &SampleConfig, args: &SamplingArgs) -> SampleConfig {
    let mode = match args.mode {
        None => base.mode,
        Some(Mode::Ancestral) => SampleMode::Ancestral,
        Some(Mode::Reduced) => SampleMode::Reduced(args.lambda),
        Some(Mode::Map) => SampleMode::Map,
    };
    SampleConfig {
        mode,
        seed: args.seed.unwrap_or(base.seed),
        use_cache: !args.no_cache,
    }
}

fn mkdir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::defaults(ModelKind::GrayscaleAux),
    };
    if let Some(m) = &args.model {
        let kind = ModelKind::parse(m)?;
        if kind != cfg.model && args.config.is_none() {
            cfg = RunConfig::defaults(kind);
        } else {
            cfg.model = kind;
        }
    }
    let size = args.size.map(|s| s.to_string());
    let sets: [(&str, Option<String>); 18] = [
        ("height", size.clone()),
        ("width", size),
        ("blocks", args.blocks.map(|v| v.to_string())),
        ("filters", args.filters.map(|v| v.to_string())),
        ("kernel", args.kernel.map(|v| v.to_string())),
        ("components", args.components.map(|v| v.to_string())),
        ("levels", args.levels.map(|v| v.to_string())),
        ("embed_blocks", args.embed_blocks.map(|v| v.to_string())),
        ("embed_filters", args.embed_filters.map(|v| v.to_string())),
        ("embed_down", args.embed_down.clone()),
        ("embed_up", args.embed_up.clone()),
        ("lr_init", args.lr.map(|v| v.to_string())),
        ("lr_decay", args.lr_decay.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("steps", args.steps.map(|v| v.to_string())),
        ("dropout", args.dropout.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
    ];
    for (k, v) in sets {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    mkdir(&args.out)?;
    let manifest = match &args.data {
        Some(m) => m.clone(),
        None => toy::write_toy_dataset(&args.out.join("toy"), cfg.height)?,
    };
    let mut data = load_images(&manifest, &args.split)?;
    if args.face_crop {
        data = data.face_cropped()?;
    }
    if args.flip {
        data = data.with_flips();
    }
    let validation = match &args.val_split {
        Some(s) => {
            let mut v = load_images(&manifest, s)?;
            if args.face_crop {
                v = v.face_cropped()?;
            }
            v.images
        }
        None => Vec::new(),
    };
    let run = train_run(&cfg, &data.images, &validation, &args.out, args.parallel)?;
    write(&args.out.join("config.txt"), &cfg.to_text())?;
    for (tag, r) in &run.reports {
        println!(
            "{tag}: {} steps, nll {:.4} -> {:.4} nats/image",
            r.steps.len(),
            r.initial_nll().unwrap_or(f64::NAN),
            r.final_nll().unwrap_or(f64::NAN)
        );
    }
    println!("checkpoint: {}", run.checkpoint.display());
    Ok(())
}

fn load(checkpoint: &Path) -> anyhow::Result<(RunConfig, Model)> {
    Model::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))
}

fn sample(args: SampleArgs) -> anyhow::Result<()> {
    let (rows, cols) = parse_grid(&args.grid)?;
    let (cfg, model) = load(&args.checkpoint)?;
    let sc = sample_config(&cfg.sample, &args.sampling);
    let samples = sample_images(&model, &cfg, &sc, rows * cols)?;
    mkdir(&args.out)?;
    write_repro(&args.out, sc.seed, &cfg)?;
    for p in write_sample_grids(&samples, rows, cols, &args.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn colorize(args: ConditionalArgs) -> anyhow::Result<()> {
    let (rows, cols) = parse_grid(&args.grid)?;
    let (cfg, model) = load(&args.checkpoint)?;
    let sc = sample_config(&cfg.sample, &args.sampling);
    let gray = png::read_gray4(&args.input)?;
    let images = colorize_images(&model, &gray, &sc, rows * cols)?;
    mkdir(&args.out)?;
    write_repro(&args.out, sc.seed, &cfg)?;
    let p = args.out.join("colorized.png");
    png::write_rgb(&p, &png::grid(&images, rows, cols)?)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn superres(args: ConditionalArgs) -> anyhow::Result<()> {
    let (rows, cols) = parse_grid(&args.grid)?;
    let (cfg, model) = load(&args.checkpoint)?;
    let sc = sample_config(&cfg.sample, &args.sampling);
    let low = png::read_rgb(&args.input)?;
    let outs = superres_images(&model, &low, &sc, rows * cols)?;
    mkdir(&args.out)?;
    write_repro(&args.out, sc.seed, &cfg)?;
    let finest: Vec<_> = outs.iter().map(|l| l[0].clone()).collect();
    let panels = outs
        .iter()
        .map(|l| png::level_panel(l))
        .collect::<auxpixel::Result<Vec<_>>>()?;
    let p = args.out.join("superres.png");
    png::write_rgb(&p, &png::grid(&finest, rows, cols)?)?;
    png::write_rgb(&args.out.join("levels.png"), &png::grid(&panels, rows, cols)?)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let (cfg, model) = load(&args.checkpoint)?;
    mkdir(&args.out)?;
    let manifest = match &args.data {
        Some(m) => m.clone(),
        None => toy::write_toy_dataset(&args.out.join("toy"), cfg.height)?,
    };
    let data = load_images(&manifest, &args.split)?;
    let (report, nll) = model.evaluate(&data.images, &args.split, args.batch_size)?;
    write_repro(&args.out, cfg.train.seed, &cfg)?;
    write(&args.out.join("report.txt"), &report.to_key_value())?;
    write(&args.out.join("report.csv"), &report.to_csv())?;
    write(&args.out.join("per_image_nll.csv"), &nll.to_csv())?;
    print!("{}", report.to_key_value());
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let setup = BenchSetup {
        size: args.size,
        flat_blocks: args.flat_blocks,
        pyramid_blocks: args.pyramid_blocks,
        levels: args.levels,
        filters: args.filters,
        components: args.components,
        runs: args.runs,
        seed: args.seed,
    };
    let cmp = bench_flat_vs_pyramid(&setup)?;
    mkdir(&args.out)?;
    write(&args.out.join("bench.txt"), &cmp.to_key_value())?;
    write(&args.out.join("bench.csv"), &cmp.to_csv())?;
    print!("{}", cmp.to_key_value());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::category) {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Io) => 3,
        Some(ErrorCategory::Numeric) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Colorize(a) => colorize(a),
        Command::Superres(a) => superres(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let category = match code {
                2 => "config",
                3 => "io",
                4 => "numeric",
                _ => "error",
            };
            eprintln!("{category} error: {e:#}");
            ExitCode::from(code)
        }
    }
}
