//! Command-line surface for the automated game-testing stack.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use ppgta::config::RunConfig;
use ppgta::pipeline;
use ppgta::trajectory::ExpertKind;
use ppgta::PpgtaError;

#[derive(Parser)]
#[command(name = "ppgta", about = "Desk-scale automated game-testing agent stack")]
struct Cli {
    /// Path to a key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a single config key, e.g. --set world.seed=7 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world and write its dump file.
    GenWorld,
    /// Record scripted expert demonstrations into the corpus.
    CollectDemos,
    /// Train the few-shot object detector and report its AP.
    TrainDetector,
    /// Train the masked inverse-dynamics feature encoder.
    TrainFe,
    /// Train the path-following and orbit-test imitation policies.
    TrainIl,
    /// Run the PPO exploration agent (online learning) for the configured
    /// agent mode.
    TrainExplore,
    /// Run the full evaluation protocol and write metrics and maps.
    Evaluate,
    /// Re-render the birds-eye map from saved episode reports.
    RenderMap,
    /// Print the aggregated metrics for all evaluated agents.
    Report,
}

fn build_config(cli: &Cli) -> ppgta::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            PpgtaError::Config(format!("--set expects key=value, got {s:?}"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> ppgta::Result<()> {
    let cfg = build_config(cli)?;
    match cli.command {
        Command::GenWorld => {
            let world = pipeline::generate_and_dump(&cfg)?;
            println!(
                "world seed {} written ({} OOIs, {} path tiles)",
                cfg.world_seed,
                world.oois.len(),
                world.path_tiles().len()
            );
        }
        Command::CollectDemos => {
            let world = pipeline::load_world(&cfg)?;
            let trajs = pipeline::collect_demos(&cfg, &world)?;
            println!("collected {} demonstrations", trajs.len());
        }
        Command::TrainDetector => {
            let world = pipeline::load_world(&cfg)?;
            let (_, ap) = pipeline::train_detector(&cfg, &world)?;
            for (ty, v) in &ap {
                println!("type {ty}: AP {v:.3}");
            }
        }
        Command::TrainFe => {
            let model = pipeline::train_fe(&cfg)?;
            let ds = {
                let corpus = pipeline::load_demos(&cfg)?;
                let trajectories: Vec<_> = corpus.into_iter().map(|(t, _)| t).collect();
                ppgta::distill::build_invdyn_dataset(&trajectories)
            };
            let (loss, acc) = model.evaluate(&ds.val);
            println!("feature encoder trained (val loss {loss:.4}, val acc {acc:.3})");
        }
        Command::TrainIl => {
            for kind in [ExpertKind::PathFollow, ExpertKind::OrbitTest] {
                let result = pipeline::train_il(&cfg, kind)?;
                println!(
                    "{} policy: val loss {:.4}, success threshold {:.4}",
                    kind.as_str(),
                    result.val_loss,
                    result.success_threshold
                );
            }
        }
        Command::TrainExplore | Command::Evaluate => {
            let world = pipeline::load_world(&cfg)?;
            let mode = cfg.agent_mode()?;
            let (reports, summary) = pipeline::evaluate(&cfg, &world, mode)?;
            println!(
                "{} episodes: coverage {:.1}%, tested {}/{}, success rate {:.2}",
                reports.len(),
                summary.coverage_pct,
                summary.oois_tested,
                summary.total_oois,
                summary.success_rate
            );
        }
        Command::RenderMap => {
            let world = pipeline::load_world(&cfg)?;
            let slug = pipeline::agent_slug(cfg.agent_mode()?);
            let art = pipeline::Artifacts::new(cfg.out_dir());
            let reports = ppgta::ppo::load_reports(&art.reports(&slug))?;
            let path = pipeline::render_map_for(&cfg, &world, &reports, &slug)?;
            println!("map written to {}", path.display());
        }
        Command::Report => {
            print!("{}", pipeline::report_text(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                PpgtaError::Config(_) | PpgtaError::MissingArtifact(_) => ExitCode::from(2),
                PpgtaError::Diverged(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
