use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use dppass::io::{
    load_config, load_dataset, parse_config, read_ppm, save_dataset, write_ppm, Checkpoint, RunConfig,
};
use dppass::resample::{assemble_t2e, sample_erp};
use dppass::synthdata::CLASS_NAMES;
use dppass::trainer::{ablation_csv, evaluate, mean_by_mask, run_ablation, train, EvalMode, LayoutConfig};
use dppass::{Error, Tensor};

#[derive(Parser)]
#[command(name = "dppass", version, about = "Dual-path panoramic semantic segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut an ERP image into the 18 tangent patches.
    Project {
        #[arg(long = "in")]
        input: PathBuf,
        /// Config file whose [layout] section sets the patch geometry.
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        fov_deg: Option<f64>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Reassemble patches written by `project` into an ERP image.
    Backproject {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the synthetic source/target/eval splits.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train both paths and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the eval split of a dataset directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "erp_only")]
        mode: String,
    },
    /// Train every mask × seed combination and write a CSV table.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Io(String),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let cfg = match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

const LAYOUT_FILE: &str = "layout.cfg";

fn project(
    input: &Path,
    layout_file: Option<&Path>,
    fov_deg: Option<f64>,
    patch_size: Option<usize>,
    out_dir: &Path,
) -> Result<(), Failure> {
    let mut layout = match layout_file {
        Some(p) => load_config(p)?.train.layout,
        None => LayoutConfig::default(),
    };
    if let Some(f) = fov_deg {
        layout.fov = f.to_radians();
    }
    if let Some(n) = patch_size {
        layout.patch_size = n;
    }
    let image = read_ppm(input)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let grid = layout.grid(h, w)?;
    let patches = sample_erp(&image, &grid)?;
    fs::create_dir_all(out_dir)?;
    let n = layout.patch_size;
    for p in 0..grid.planes() {
        let patch = patches.batch_item(p)?;
        write_ppm(&out_dir.join(format!("plane_{p:02}.ppm")), &patch)?;
    }
    let meta = format!(
        "[layout]\nfov_deg = {}\npatch_size = {n}\n[data]\nerp_height = {h}\nerp_width = {w}\n",
        layout.fov.to_degrees()
    );
    fs::write(out_dir.join(LAYOUT_FILE), meta)?;
    println!("planes={} patch={n}x{n}", grid.planes());
    Ok(())
}

fn backproject(in_dir: &Path, out: &Path) -> Result<(), Failure> {
    let meta = parse_config(&fs::read_to_string(in_dir.join(LAYOUT_FILE))?)?;
    let (h, w) = meta.data.erp_size;
    let grid = meta.train.layout.grid(h, w)?;
    let patches = (0..grid.planes())
        .map(|p| read_ppm(&in_dir.join(format!("plane_{p:02}.ppm"))))
        .collect::<Result<Vec<_>, _>>()?;
    let (erp, coverage) = assemble_t2e(&Tensor::stack(&patches)?, &grid)?;
    write_ppm(out, &erp)?;
    let covered = coverage.data().iter().filter(|&&c| c > 0.0).count();
    println!("covered_fraction={:.6}", covered as f64 / (h * w) as f64);
    Ok(())
}

fn synth(config: Option<&Path>, out_dir: &Path) -> Result<(), Failure> {
    let cfg = run_config(config)?;
    let data = cfg.data.generate()?;
    save_dataset(out_dir, &data)?;
    println!("source={} target={} eval={}", data.source.len(), data.target.len(), data.eval.len());
    Ok(())
}

fn train_cmd(config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = run_config(config)?;
    let started = Instant::now();
    let data = cfg.load_dataset()?;
    println!("# data ready in {:.2}s", started.elapsed().as_secs_f64());
    let state = train(&cfg.train, &data, |report, eval| {
        println!("{}", report.log_line());
        if let Some(e) = eval {
            println!("eval step={} miou={:.4}", report.step, e.miou.mean);
        }
    })?;
    println!("# trained in {:.2}s", started.elapsed().as_secs_f64());
    Checkpoint::from_models(&state.models(), &cfg.train.layout, cfg.train.erp_size).save(out)?;
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, mode: &str) -> Result<(), Failure> {
    let mode: EvalMode = mode.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let (models, layout, _) = Checkpoint::load(ckpt)?.models()?;
    let data = load_dataset(data)?;
    let report = evaluate(&models, &data.eval, mode, &layout)?;
    println!("miou={:.4}", report.miou.mean);
    for (k, iou) in report.miou.per_class.iter().enumerate() {
        let name = CLASS_NAMES.get(k).copied().unwrap_or("class");
        match iou {
            Some(v) => println!("iou.{k}.{name}={v:.4}"),
            None => println!("iou.{k}.{name}=absent"),
        }
    }
    Ok(())
}

fn ablate(config: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let cfg = run_config(config)?;
    let started = Instant::now();
    let data = cfg.load_dataset()?;
    let rows = run_ablation(&cfg.train, &data, &cfg.ablation_masks, &cfg.ablation_seeds, |row| {
        println!("mask={} seed={} miou={:.4}", row.mask, row.seed, row.report.miou.mean);
        println!("# elapsed {:.1}s", started.elapsed().as_secs_f64());
    })?;
    let names = &CLASS_NAMES[..cfg.train.loss.num_classes.min(CLASS_NAMES.len())];
    fs::write(out, ablation_csv(&rows, names))?;
    for (mask, mean) in mean_by_mask(&rows) {
        println!("mean mask={mask} miou={mean:.4}");
    }
    Ok(())
}

fn gradcheck(instances: usize, seed: u64) -> Result<(), Failure> {
    let started = Instant::now();
    let r = dppass::gradcheck::run_suite(instances, seed)?;
    println!("losses_max_rel_err={:e}", r.losses);
    println!("model_max_rel_err={:e}", r.model);
    println!("classifier_max_rel_err={:e}", r.classifier);
    let worst = r.losses.max(r.model).max(r.classifier);
    println!("max_rel_err={worst:e}");
    println!("# {instances} instances in {:.2}s", started.elapsed().as_secs_f64());
    if r.losses >= 1e-6 || worst >= 1e-5 {
        return Err(Failure::Validation(format!("gradient check failed: max_rel_err={worst:e}")));
    }
    Ok(())
}

fn threads() -> Result<usize, Failure> {
    match std::env::var("DPP_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("DPP_THREADS must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    match cli.command {
        Command::Project { input, layout, fov_deg, patch_size, out_dir } => {
            project(&input, layout.as_deref(), fov_deg, patch_size, &out_dir)
        }
        Command::Backproject { in_dir, out } => backproject(&in_dir, &out),
        Command::Synth { config, out_dir } => synth(config.as_deref(), &out_dir),
        Command::Train { config, out } => train_cmd(config.as_deref(), &out),
        Command::Eval { ckpt, data, mode } => eval_cmd(&ckpt, &data, &mode),
        Command::Ablate { config, out } => ablate(config.as_deref(), &out),
        Command::Gradcheck { instances, seed } => gradcheck(instances, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error kind=usage message=\"{}\"", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, code, msg) = match f {
                Failure::Usage(m) => ("usage", 2, m),
                Failure::Io(m) => ("io", 3, m),
                Failure::Validation(m) => ("validation", 4, m),
            };
            eprintln!("error kind={kind} message=\"{}\"", one_line(&msg).replace('"', "'"));
            ExitCode::from(code)
        }
    }
}
