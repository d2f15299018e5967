use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccdc_core::checkpoint::Checkpoint;
use ccdc_core::config::RunConfig;
use ccdc_core::data::{read_manifest, write_frames_dataset, write_toy_dataset, PairRecipe};
use ccdc_core::diagnostics::{run_gradcheck, GradSuite};
use ccdc_core::io::{read_color_png, read_gray_png, rgb8_to_png_bytes, write_atomic, write_color_png};
use ccdc_core::trainer::{eval_csv, evaluate, loss_csv, Colorization, Model, Trainer};
use ccdc_core::visibility::render_red_green;
use ccdc_core::Error;
use clap::{Args, Parser, Subcommand};

/// Cross-camera colorization: train, evaluate and run the reference-guided
/// colorization network.
#[derive(Parser, Debug)]
#[command(name = "ccdc", version)]
struct Cli {
    /// Flat key = value run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed overriding the configuration's.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write its final checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on every pair of a manifest and write a CSV table.
    Eval(EvalArgs),
    /// Colorize one gray target with a low-resolution color reference.
    Colorize(ColorizeArgs),
    /// Write a dataset directory with a manifest.
    MakeDataset(MakeDatasetArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the flow pyramid (CCFL) and a red/green rendering of v0.
    VisDump(VisDumpArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Final checkpoint path [default: <cache dir>/final.ckpt].
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Per-step loss table.
    #[arg(long, value_name = "CSV")]
    loss_csv: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Dataset root [default: the manifest's directory].
    #[arg(long, value_name = "DIR")]
    root: Option<PathBuf>,
    /// Name written in the dataset column.
    #[arg(long, default_value = "dataset")]
    dataset: String,
}

#[derive(Args, Debug)]
struct PairInputs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Gray target PNG.
    #[arg(long, value_name = "PNG")]
    target: PathBuf,
    /// Color reference PNG, target size divided by the checkpoint's scale.
    #[arg(long, value_name = "PNG")]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct ColorizeArgs {
    #[command(flatten)]
    pair: PairInputs,
    #[arg(long, value_name = "PNG")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MakeDatasetArgs {
    /// Generate procedural toy sequences.
    #[arg(long, conflicts_with = "from_frames", required_unless_present = "from_frames")]
    toy: bool,
    /// Directory of sequence directories holding frame_NNN.png files.
    #[arg(long, value_name = "DIR")]
    from_frames: Option<PathBuf>,
    /// Number of toy sequences [default: toy_pairs from the configuration].
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Toy frame size in pixels [default: toy_size from the configuration].
    #[arg(long, value_name = "N")]
    size: Option<usize>,
    /// Downsampling factor of the reference (1, 2, 4 or 8).
    #[arg(long, value_name = "S")]
    scale: Option<usize>,
    /// Frames between reference and target.
    #[arg(long, value_name = "T")]
    frame_gap: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// warp, losses or encoders [default: all].
    #[arg(long, value_name = "MODULE")]
    module: Option<String>,
}

#[derive(Args, Debug)]
struct VisDumpArgs {
    #[command(flatten)]
    pair: PairInputs,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// |v0| at which the rendering saturates.
    #[arg(long, default_value_t = 0.25)]
    full_scale: f32,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Shape(_) | Error::Argument(_) | Error::Config(_) | Error::Manifest { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Globals {
    config: Option<PathBuf>,
    seed: Option<u64>,
}

impl Globals {
    fn run_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    /// Model from a checkpoint, with `--config`/`--seed` applied on top of
    /// its stored configuration.
    fn model(&self, checkpoint: &Path) -> Result<Model, Error> {
        let ckpt = Checkpoint::load(checkpoint)?;
        let mut cfg = match &self.config {
            Some(p) => {
                let cfg = RunConfig::load(p)?;
                ckpt.check_compatible(&cfg)?;
                cfg
            }
            None => ckpt.config.clone(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let mut model = Model::new(&cfg)?;
        model.load_params(&ckpt.params)?;
        Ok(model)
    }
}

fn split_override(item: &str) -> Result<(&str, &str), Error> {
    item.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))
}

fn cmd_train(g: &Globals, args: TrainArgs) -> Outcome {
    let mut cfg = g.run_config()?;
    for item in &args.overrides {
        let (k, v) = split_override(item)?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    cfg.check_paths()?;
    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(&cfg, &Checkpoint::load(p)?)?,
        None => Trainer::new(&cfg)?,
    };
    println!(
        "training {} ({} parameters) for {} steps on {} pairs",
        trainer.model().variant_name(),
        trainer.model().parameter_count(),
        cfg.steps,
        trainer.data().len()
    );
    let every = (cfg.steps / 10).max(1);
    trainer.run(|row| {
        if row.step % every == 0 || row.step == cfg.steps {
            println!("step {:>6}  total {:.6}  color {:.6}  warp {:.6}", row.step, row.total, row.l_color, row.l_warp);
        }
    })?;
    let out = args.out.unwrap_or_else(|| cfg.cache_dir().join("final.ckpt"));
    trainer.checkpoint().save(&out)?;
    if let Some(csv) = &args.loss_csv {
        write_atomic(csv, loss_csv(trainer.rows()).as_bytes())?;
    }
    if let Some(last) = trainer.rows().last() {
        println!(
            "final loss: total {:.6}, color {:.6}, warp {:.6} (lambda {})",
            last.total,
            last.l_color,
            last.l_warp,
            cfg.effective_lambda()
        );
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn cmd_eval(g: &Globals, args: EvalArgs) -> Outcome {
    let model = g.model(&args.checkpoint)?;
    let entries = read_manifest(&args.manifest)?;
    let root = args
        .root
        .clone()
        .unwrap_or_else(|| args.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let outcome = evaluate(&model, &root, &entries, &args.dataset, None);
    write_atomic(&args.out, eval_csv(&outcome).as_bytes())?;
    let n = outcome.rows.len().max(1) as f64;
    let mean = |f: fn(&ccdc_core::metrics::MetricReport) -> f64| outcome.rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    println!(
        "{} pairs: psnr {:.3} dB, ssim {:.4}, nrmse {:.4}",
        outcome.rows.len(),
        mean(|m| m.psnr),
        mean(|m| m.ssim),
        mean(|m| m.nrmse)
    );
    for (seq, e) in &outcome.failures {
        eprintln!("failed: {seq}: {e}");
    }
    if !outcome.failures.is_empty() {
        return Err(Failure::Runtime(format!("{} of {} pairs failed", outcome.failures.len(), entries.len())));
    }
    Ok(())
}

fn colorize(g: &Globals, pair: &PairInputs) -> Result<Colorization, Error> {
    let model = g.model(&pair.checkpoint)?;
    let target = read_gray_png(&pair.target)?;
    let reference = read_color_png(&pair.reference)?;
    model.colorize(&target, &reference)
}

fn cmd_colorize(g: &Globals, args: ColorizeArgs) -> Outcome {
    let out = colorize(g, &args.pair)?;
    write_color_png(&args.out, &out.output)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_make_dataset(g: &Globals, args: MakeDatasetArgs) -> Outcome {
    let cfg = g.run_config()?;
    let recipe = PairRecipe::video(args.scale.unwrap_or(cfg.scale), args.frame_gap.unwrap_or(cfg.frame_gap));
    recipe.validate()?;
    match &args.from_frames {
        Some(src) => write_frames_dataset(src, &args.out, recipe)?,
        None => {
            let n = args.n.unwrap_or(cfg.toy_pairs);
            let size = args.size.unwrap_or(cfg.toy_size);
            write_toy_dataset(&args.out, cfg.seed, n, size, recipe)?;
        }
    }
    println!("dataset written to {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(g: &Globals, args: GradcheckArgs) -> Outcome {
    let suites = match &args.module {
        Some(m) => vec![m.parse::<GradSuite>()?],
        None => GradSuite::ALL.to_vec(),
    };
    let seed = g.run_config()?.seed;
    let mut failed = 0;
    for suite in suites {
        for case in run_gradcheck(suite, seed)? {
            let verdict = if case.passes() { "ok" } else { "FAILED" };
            if !case.passes() {
                failed += 1;
            }
            println!(
                "{suite}: {}: {verdict} (checked {}, skipped {}, max relative error {:.3e})",
                case.name, case.report.checked, case.report.skipped, case.report.max_relative_error
            );
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn cmd_vis_dump(g: &Globals, args: VisDumpArgs) -> Outcome {
    let out = colorize(g, &args.pair)?;
    let mut summary = String::new();
    for (i, flow) in out.flows.levels().iter().enumerate() {
        let path = args.out.join(format!("flow_{i}.ccfl"));
        write_atomic(&path, &flow.to_ccfl_bytes()?)?;
        let _ = writeln!(summary, "wrote {} ({}x{})", path.display(), flow.width(), flow.height());
    }
    match &out.visibility {
        Some(maps) => {
            let (h, w, rgb) = render_red_green(&maps.v0, args.full_scale)?;
            let path = args.out.join("visibility_v0.png");
            write_atomic(&path, &rgb8_to_png_bytes(w, h, rgb)?)?;
            let _ = writeln!(summary, "wrote {}", path.display());
        }
        None => {
            let _ = writeln!(summary, "visibility is disabled in this model; no map written");
        }
    }
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let globals = Globals { config: cli.config, seed: cli.seed };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&globals, a),
        Command::Eval(a) => cmd_eval(&globals, a),
        Command::Colorize(a) => cmd_colorize(&globals, a),
        Command::MakeDataset(a) => cmd_make_dataset(&globals, a),
        Command::Gradcheck(a) => cmd_gradcheck(&globals, a),
        Command::VisDump(a) => cmd_vis_dump(&globals, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
