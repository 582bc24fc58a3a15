use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use diffalloc::cli;
use diffalloc::config::{PhaseDist, RetrainMode, SimConfig};

#[derive(Parser)]
#[command(name = "diffalloc", version, about = "Diffusion-model power allocation over parallel channels")]
struct Args {
    /// TOML configuration file. Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample channel states and label them with the water-filling expert.
    Collect {
        #[arg(long)]
        out: PathBuf,
        /// Gain distribution to sample (t1 or t2).
        #[arg(long)]
        phase: Option<PhaseDist>,
        #[arg(long)]
        num_samples: Option<usize>,
    },
    /// Train a diffusion model on a collected dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint path; the loss curve lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against the expert and uniform allocation.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        phase: Option<PhaseDist>,
    },
    /// Train, shift the channel distribution, retrain, and report metrics.
    Lifecycle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        retrain_mode: Option<RetrainMode>,
    },
    /// Print the default configuration as TOML.
    PrintDefaultConfig,
}

fn run(args: Args) -> anyhow::Result<()> {
    if let Command::PrintDefaultConfig = args.command {
        print!("{}", cli::default_config_text());
        return Ok(());
    }
    let mut config: SimConfig = cli::load_config(args.config.as_deref()).context("loading configuration")?;
    let seed = args.seed.unwrap_or(config.seed);
    config.seed = seed;
    match args.command {
        Command::Collect {
            out,
            phase,
            num_samples,
        } => {
            cli::apply_overrides(&mut config, None, phase);
            if let Some(n) = num_samples {
                config.run.num_samples = n;
            }
            let n = cli::cmd_collect(&config, &out, seed)?;
            eprintln!("wrote {n} samples to {}", out.display());
        }
        Command::Train { dataset, out } => {
            let res = cli::cmd_train(&config, &dataset, &out, seed)?;
            eprintln!(
                "validation loss {:.6} -> {:.6} (best {:.6}); checkpoint {}",
                res.initial_val_loss,
                res.final_val_loss,
                res.best_val_loss,
                out.display()
            );
        }
        Command::Evaluate { checkpoint, phase } => {
            cli::apply_overrides(&mut config, None, phase);
            let row = cli::cmd_evaluate(&checkpoint, &config, seed)?;
            println!("{}", cli::EvalRow::HEADER);
            println!("{}", row.to_csv_line());
        }
        Command::Lifecycle { out, retrain_mode } => {
            cli::apply_overrides(&mut config, retrain_mode, None);
            let m = cli::cmd_lifecycle(&config, &out, seed)?;
            println!("t1_ratio_to_expert={:.4}", m.t1.gdm.ratio_to_expert);
            println!("t1_improvement_over_uniform={:.4}", m.improvement_over_uniform);
            println!("t2_degradation={:.4}", m.degradation_t2);
            println!("pre_retrain_gain={:.4}", m.pre_retrain_gain);
            println!("virtuous_gain={:.4}", m.virtuous_gain);
            println!("drl_virtuous_gain={:.4}", m.drl_virtuous_gain);
        }
        Command::PrintDefaultConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
