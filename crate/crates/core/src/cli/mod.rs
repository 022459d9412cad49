//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::ConfigFile;

use crate::audit::{gradient_audit, AuditOptions};
use crate::error::Error;
use crate::image_io::{self, Image};
use crate::losses::LossConfig;
use crate::metrics::{self, MetricReport};
use crate::net::{self, Model, NetConfig, Variant};
use crate::parallel::map_ordered;
use crate::tensor::Tensor;
use crate::train::{self, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "curvelight", version, about = "Zero-reference low-light enhancement by curve estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a directory of images (no reference images needed).
    ///
    /// Mix under- and over-exposed images: a model trained on dark images alone tends
    /// to over-enhance regions that are already well lit.
    Train(TrainArgs),
    /// Enhance one image or every image in a directory.
    Enhance(EnhanceArgs),
    /// Score predictions against ground truth (PSNR, SSIM, MAE).
    Eval(EvalArgs),
    /// Describe a checkpoint.
    Info(InfoArgs),
    /// Finite-difference audit of all analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Train a grid of (layers, features, iterations) configurations and compare them.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainArgs {
    /// Directory of training images (PNG or PPM).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["plain", "dsc"])]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Training resolution (images are resized to SIZE x SIZE).
    #[arg(long)]
    pub size: Option<usize>,
    /// Well-exposedness level.
    #[arg(long = "e")]
    pub exposure: Option<f64>,
    /// Colour constancy weight.
    #[arg(long)]
    pub wcol: Option<f64>,
    /// Illumination smoothness weight.
    #[arg(long)]
    pub wtv: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Stop after this many updates.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Save a checkpoint every N epochs next to the output.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Downsample factor used inside the training pipeline.
    #[arg(long)]
    pub train_downsample: Option<usize>,
    /// Clip the global gradient norm.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Training log path (default: output path with `.log`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Image file or directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or directory in directory mode.
    #[arg(long)]
    pub output: PathBuf,
    /// Override the checkpoint's downsample factor.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Write each curve map as a min-max normalised grayscale PNG.
    #[arg(long)]
    pub dump_maps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Also report multiply-accumulates for a WxH input.
    #[arg(long, value_parser = parse_dims)]
    pub flops: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_wrong_sign: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Semicolon-separated `layers,features,iterations` triples, e.g. "7,32,8;7,32,1".
    #[arg(long, value_parser = |s: &str| parse_grid(s).map(Grid))]
    pub grid: Grid,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = ["plain", "dsc"], default_value = "plain")]
    pub variant: String,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension {v:?}"));
    Ok((p(w)?, p(h)?))
}

/// Ablation entries as `(layers, features, iterations)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<(usize, usize, usize)>);

/// Parses `"l,f,n;l,f,n"` into triples.
pub fn parse_grid(s: &str) -> Result<Vec<(usize, usize, usize)>, String> {
    let mut out = Vec::new();
    for entry in s.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        let nums: Vec<usize> = entry
            .split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|_| format!("bad number in grid entry {entry:?}")))
            .collect::<Result<_, _>>()?;
        match nums.as_slice() {
            &[l, f, n] => out.push((l, f, n)),
            _ => return Err(format!("grid entry {entry:?} must be layers,features,iterations")),
        }
    }
    if out.is_empty() {
        return Err("empty grid".into());
    }
    Ok(out)
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Info(a) => cmd_info(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "data",
    "out",
    "variant",
    "epochs",
    "batch",
    "lr",
    "size",
    "e",
    "wcol",
    "wtv",
    "seed",
    "val_fraction",
    "max_iterations",
    "checkpoint_every",
    "train_downsample",
    "grad_clip",
    "log",
    "layers",
    "features",
    "iterations",
];

/// Defaults, then the config file, then flags. Returns the config, output path and log path.
pub fn resolve_train_config(a: &TrainArgs) -> Result<(TrainConfig, PathBuf, PathBuf), Error> {
    let file = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.check_keys(TRAIN_KEYS)?;
    let mut cfg = TrainConfig::default();
    let variant: Variant = match a.variant.clone().or(file.get::<String>("variant")?) {
        Some(v) => v.parse()?,
        None => Variant::Plain,
    };
    cfg.net = NetConfig::for_variant(variant);
    macro_rules! pick {
        ($flag:expr, $key:literal) => {
            $flag.clone().or(file.get($key)?)
        };
    }
    if let Some(v) = pick!(a.data, "data") {
        cfg.data_dir = v;
    }
    let out: PathBuf = pick!(a.out, "out").ok_or_else(|| Error::Config("--out is required".into()))?;
    if a.data.is_none() && file.get::<PathBuf>("data")?.is_none() {
        return Err(Error::Config("--data is required".into()));
    }
    if let Some(v) = pick!(a.epochs, "epochs") {
        cfg.epochs = v;
    }
    if let Some(v) = pick!(a.batch, "batch") {
        cfg.batch = v;
    }
    if let Some(v) = pick!(a.lr, "lr") {
        cfg.lr = v;
    }
    if let Some(v) = pick!(a.size, "size") {
        cfg.train_size = v;
    }
    if let Some(v) = pick!(a.exposure, "e") {
        cfg.loss.exposure_level = v;
    }
    if let Some(v) = pick!(a.wcol, "wcol") {
        cfg.loss.color_weight = v;
    }
    if let Some(v) = pick!(a.wtv, "wtv") {
        cfg.loss.smoothness_weight = v;
    }
    if let Some(v) = pick!(a.seed, "seed") {
        cfg.seed = v;
    }
    if let Some(v) = pick!(a.val_fraction, "val_fraction") {
        cfg.val_fraction = v;
    }
    cfg.max_iterations = pick!(a.max_iterations, "max_iterations");
    cfg.checkpoint_every = pick!(a.checkpoint_every, "checkpoint_every");
    if let Some(v) = pick!(a.train_downsample, "train_downsample") {
        cfg.downsample = v;
    }
    cfg.grad_clip = pick!(a.grad_clip, "grad_clip");
    if let Some(v) = file.get("layers")? {
        cfg.net.layers = v;
    }
    if let Some(v) = file.get("features")? {
        cfg.net.features = v;
    }
    if let Some(v) = file.get("iterations")? {
        cfg.net.iterations = v;
    }
    if cfg.checkpoint_every.is_some() {
        cfg.checkpoint_dir = Some(out.with_extension("checkpoints"));
    }
    let log: PathBuf = pick!(a.log, "log").unwrap_or_else(|| out.with_extension("log"));
    cfg.validate()?;
    Ok((cfg, out, log))
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let (cfg, out, log_path) = resolve_train_config(a)?;
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut write_err = None;
    let mut sink = |line: &str| {
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
    };
    let outcome = train::train(&cfg, &mut sink)?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log.flush()?;
    net::save(&outcome.model, &out)?;
    for (p, why) in &outcome.dataset.skipped {
        eprintln!("warning: skipped {}: {why}", p.display());
    }
    println!(
        "trained {} iterations on {} images ({} held out); wrote {}",
        outcome.log.iterations.len(),
        outcome.train_indices.len(),
        outcome.validation_indices.len(),
        out.display()
    );
    Ok(())
}

fn list_images(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && image_io::is_supported(p))
        .collect();
    v.sort();
    Ok(v)
}

/// Min-max normalises one channel of a `[1, C, h, w]` tensor into a grayscale image.
fn map_image(maps: &Tensor<f32>, channel: usize) -> crate::Result<Image> {
    let (_, _, h, w) = maps.dims4()?;
    let plane = maps.plane(0, channel);
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let norm = |v: f32| if span > 0.0 { (v - lo) / span } else { 0.0 };
    Ok(Image::from_fn(w, h, |x, y, _| norm(plane[y * w + x]))?)
}

fn enhance_one(model: &Model<f32>, d: usize, input: &Path, output: &Path, dump: Option<&Path>) -> crate::Result<()> {
    let img = image_io::load(input)?;
    let result = model.enhance_with_maps(&img.to_tensor(), d)?;
    image_io::save(&Image::from_tensor(&result.image, 0)?, output)?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir)?;
        let stem = input.file_stem().unwrap_or_default().to_string_lossy();
        let maps = result.maps.maps();
        for k in 0..result.maps.groups() {
            for (c, name) in ["r", "g", "b"].iter().enumerate() {
                let path = dir.join(format!("{stem}_iter{}_{name}.png", k + 1));
                image_io::save(&map_image(maps, 3 * k + c)?, path)?;
            }
        }
    }
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs) -> CliResult {
    let model: Model<f32> = net::load(&a.model)?;
    let d = a.downsample.unwrap_or(model.downsample());
    NetConfig {
        downsample: d,
        ..*model.config()
    }
    .validate()?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        std::fs::create_dir_all(&a.output)?;
        list_images(&a.input)?
            .into_iter()
            .map(|p| {
                let out = a.output.join(p.file_name().unwrap_or_default());
                (p, out)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.output.clone())]
    };
    if jobs.is_empty() {
        return Err(Failure::Runtime(format!("no images found in {}", a.input.display())));
    }
    let results = map_ordered(&jobs, |(i, o)| enhance_one(&model, d, i, o, a.dump_maps.as_deref()));
    let mut failed = 0;
    for ((input, output), r) in jobs.iter().zip(results) {
        match r {
            Ok(()) => println!("{} -> {}", input.display(), output.display()),
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e}", input.display());
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} images failed", jobs.len())));
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let preds = list_images(&a.pred)?;
    let mut pairs = Vec::new();
    for p in &preds {
        let name = p.file_name().unwrap_or_default();
        let gt = a.gt.join(name);
        if gt.is_file() {
            pairs.push((name.to_string_lossy().into_owned(), p.clone(), gt));
        } else {
            eprintln!("warning: no ground truth for {}; excluded", name.to_string_lossy());
        }
    }
    for g in list_images(&a.gt)? {
        if !a.pred.join(g.file_name().unwrap_or_default()).is_file() {
            eprintln!("warning: no prediction for {}; excluded", g.display());
        }
    }
    if pairs.is_empty() {
        return Err(Failure::Runtime("no matching prediction/ground-truth pairs".into()));
    }
    let scored = map_ordered(&pairs, |(_, p, g)| -> crate::Result<metrics::Scores> {
        metrics::score(&image_io::load(p)?, &image_io::load(g)?)
    });
    let mut report = MetricReport::default();
    let mut failed = 0;
    for ((name, _, _), s) in pairs.iter().zip(scored) {
        match s {
            Ok(s) => report.push(name.clone(), s),
            Err(e) => {
                failed += 1;
                eprintln!("error: {name}: {e}");
            }
        }
    }
    let csv = report.to_csv();
    std::fs::write(&a.out, &csv)?;
    if let Some(last) = csv.lines().last() {
        println!("{last}");
    }
    if report.rows.is_empty() || failed > 0 {
        return Err(Failure::Runtime(format!("{failed} pairs could not be scored")));
    }
    Ok(())
}

fn cmd_info(a: &InfoArgs) -> CliResult {
    let model: Model<f32> = net::load(&a.model)?;
    let c = model.config();
    println!("variant: {}", c.variant);
    println!("layers: {}", c.layers);
    println!("features: {}", c.features);
    println!("iterations: {}", c.iterations);
    println!("downsample: {}", c.downsample);
    println!("parameters: {}", model.param_count());
    if let Some((w, h)) = a.flops {
        let macs = model.flops(h, w)?;
        println!("flops ({w}x{h}): {:.2}G MAC ({macs})", macs as f64 / 1e9);
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult {
    let checks = gradient_audit(&AuditOptions {
        seed: a.seed,
        negate_analytic: a.inject_wrong_sign,
        ..AuditOptions::default()
    })?;
    let mut ok = true;
    for c in &checks {
        ok &= c.passed();
        println!(
            "{:<28} max_rel_error {:.3e}  compared {:>4}  skipped {:>3}  {}",
            c.name,
            c.report.max_rel_error,
            c.report.compared,
            c.report.skipped,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}

fn cmd_ablate(a: &AblateArgs) -> CliResult {
    let variant: Variant = a.variant.parse()?;
    std::fs::create_dir_all(&a.out)?;
    let dataset = train::load_dataset(&a.data, a.size)?;
    let mut table = String::from("config,layers,features,iterations,parameters,flops_1200x900,final_train_total,val_total\n");
    for &(l, f, n) in &a.grid.0 {
        let net = NetConfig {
            layers: l,
            features: f,
            iterations: n,
            ..NetConfig::for_variant(variant)
        };
        let cfg = TrainConfig {
            data_dir: a.data.clone(),
            train_size: a.size,
            batch: a.batch,
            lr: a.lr,
            epochs: a.epochs,
            max_iterations: a.max_iterations,
            seed: a.seed,
            net,
            loss: LossConfig::default(),
            ..TrainConfig::default()
        };
        cfg.validate()?;
        let name = format!("l{l}-f{f}-n{n}");
        eprintln!("training {name}");
        let outcome = train::train_on(&cfg, dataset.clone(), &mut |_| {})?;
        net::save(&outcome.model, a.out.join(format!("{name}.zdce")))?;
        let last = outcome.log.iterations.last().map_or(f64::NAN, |(_, b)| b.total);
        let val = outcome.log.epochs.last().map_or(f64::NAN, |e| e.val_total);
        let line = format!(
            "{name},{l},{f},{n},{},{},{last},{val}",
            outcome.model.param_count(),
            outcome.model.flops(900, 1200)?
        );
        println!("{line}");
        table.push_str(&line);
        table.push('\n');
    }
    std::fs::write(a.out.join("ablation.csv"), table)?;
    Ok(())
}
