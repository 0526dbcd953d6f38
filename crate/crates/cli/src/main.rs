use std::path::PathBuf;
use std::process::ExitCode;

use mvad::config::RunConfig;
use mvad::gradsuite::{run_suite, Objective};
use mvad::metrics::MetricsReport;
use mvad::pipeline::{run_sweep, Pipeline, Stage};
use mvad::{Error, Result};
use clap::{Parser, Subcommand};

/// Gradient relative-error threshold used by `gradcheck`.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "mvad", version, about = "Zero-shot 3D anomaly detection on multi-view renderings")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory, overriding the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads, overriding the config (0 = automatic).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and manifest.
    GenSynth,
    /// Render every sample into multi-view images.
    Render,
    /// Encode rendered views into feature caches.
    Encode,
    /// Stage 1: train the feature aligner.
    TrainAlign,
    /// Stage 2: train the prompt embeddings.
    TrainPrompt,
    /// Score the test samples.
    Infer,
    /// Compute metrics and write the report.
    Eval,
    /// Run several stages in order (all when none are given).
    Run {
        #[arg(value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Render through eval for every sweep point.
    Sweep,
    /// Time single-sample inference.
    Bench,
    /// Check analytic gradients of every objective against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Write per-view semantic-consistency weight maps for the training samples.
    ExportWeights,
}

fn print_reports(reports: &[MetricsReport]) {
    print!("{}", MetricsReport::to_text(reports));
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_overrides(cli.seed, cli.out_dir, cli.threads);
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let pipeline = Pipeline::new(cfg.clone());
    let single = |stage: Stage| pipeline.run(&[stage]);
    match cli.command {
        Command::GenSynth => {
            let entries = pipeline.gen()?;
            println!("wrote {} clouds and {}", entries.len(), pipeline.layout.manifest().display());
        }
        Command::Render => {
            single(Stage::Render)?;
        }
        Command::Encode => {
            single(Stage::Encode)?;
        }
        Command::TrainAlign => {
            let logs = pipeline.align()?;
            if let Some(l) = logs.last() {
                println!("epoch {}: L_g {:.6} L_l {:.6} L_align {:.6}", l.epoch, l.global, l.local, l.total);
            }
        }
        Command::TrainPrompt => {
            let logs = pipeline.prompt()?;
            if let Some(l) = logs.last() {
                println!("epoch {}: L_cls {:.6} L_seg {:.6} L_con {:.6}", l.epoch, l.cls, l.seg, l.con);
            }
        }
        Command::Infer => {
            single(Stage::Infer)?;
        }
        Command::Eval => print_reports(&pipeline.eval()?),
        Command::Run { stages } => {
            let stages: Vec<Stage> = if stages.is_empty() {
                Stage::ALL.to_vec()
            } else {
                stages.iter().map(|s| s.parse()).collect::<Result<_>>()?
            };
            if let Some(reports) = pipeline.run(&stages)? {
                print_reports(&reports);
            }
        }
        Command::Sweep => {
            for point in run_sweep(&cfg)? {
                println!("# views {} prompt_length {}", point.views, point.prompt_length);
                print_reports(&point.reports);
            }
        }
        Command::Bench => print!("{}", pipeline.bench()?.to_text()),
        Command::Gradcheck { instances } => {
            let mut worst: f64 = 0.0;
            for r in run_suite(instances.max(1), cfg.seed)? {
                let status = if r.max_rel_error < GRAD_TOLERANCE { "ok" } else { "FAIL" };
                println!(
                    "{:<10} instances {:>4}  max rel error {:.3e}  {:.2}s  {status}",
                    r.objective.name(),
                    r.instances,
                    r.max_rel_error,
                    r.seconds
                );
                worst = worst.max(r.max_rel_error);
            }
            if !(worst < GRAD_TOLERANCE) {
                return Err(Error::GradientMismatch(format!(
                    "max relative error {worst:.3e} over {} objectives",
                    Objective::ALL.len()
                )));
            }
        }
        Command::ExportWeights => {
            let n = pipeline.export_weights()?;
            println!("wrote {n} weight maps under {}", pipeline.layout.experiment.join("scr").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
