//! Pipeline CLI: generate | prepare | train | enhance | eval | grid.
//!
//! Configuration precedence is CLI `--set` overrides, then `--config` file,
//! then built-in defaults. All outputs land under a run directory named by
//! the config hash.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netalign::config::RunConfig;
use netalign::pipeline;

#[derive(Parser)]
#[command(name = "netalign", version, about = "Cross-network user identity linkage pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set dim=32 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker thread cap; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic paired network and write the dataset files.
    Generate(ConfigArgs),
    /// Build (or refresh) the ground-truth similarity caches.
    Prepare(ConfigArgs),
    /// Train the information fusion component.
    Train(ConfigArgs),
    /// Train the neighborhood enhancement component.
    Enhance(ConfigArgs),
    /// Score the test anchors and report hit-precision.
    Eval(ConfigArgs),
    /// Run the full variant/eta/lambda/seed experiment grid.
    Grid(ConfigArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, args) = match &cli.command {
        Command::Generate(a) => ("generate", a),
        Command::Prepare(a) => ("prepare", a),
        Command::Train(a) => ("train", a),
        Command::Enhance(a) => ("enhance", a),
        Command::Eval(a) => ("eval", a),
        Command::Grid(a) => ("grid", a),
    };
    match run(stage, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{stage}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(stage: &str, args: &ConfigArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.sets)?;
    if args.threads > 0 {
        cfg.threads = args.threads;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }
    let run_dir = pipeline::RunPaths::new(&cfg).root().to_path_buf();
    match stage {
        "generate" => {
            let files = pipeline::stage_generate(&cfg)?;
            println!("run {}: wrote {} dataset files", cfg.hash(), files.len());
        }
        "prepare" => {
            let grounds = pipeline::stage_prepare(&cfg)?;
            println!(
                "run {}: grounds ready (structure {}+{}, profile {}, content {}, label {})",
                cfg.hash(),
                grounds.structure_src.positive_count(),
                grounds.structure_tgt.positive_count(),
                grounds.profile.positive_count(),
                grounds.content.positive_count(),
                grounds.label.positive_count(),
            );
        }
        "train" => {
            pipeline::stage_train(&cfg)?;
            println!("run {}: fusion model trained", cfg.hash());
        }
        "enhance" => {
            pipeline::stage_enhance(&cfg)?;
            println!("run {}: neighborhood encoder trained", cfg.hash());
        }
        "eval" => {
            let report = pipeline::stage_eval(&cfg)?;
            println!(
                "run {}: hit-precision@{} = {:.4} over {} test users",
                cfg.hash(),
                report.k,
                report.hit_precision,
                report.rankings.len()
            );
        }
        "grid" => {
            let rows = pipeline::stage_grid(&cfg)?;
            println!("run {}: grid finished with {} result rows", cfg.hash(), rows.len());
        }
        other => anyhow::bail!("unknown stage {other}"),
    }
    println!("outputs under {}", run_dir.display());
    Ok(())
}
