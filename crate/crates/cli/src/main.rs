use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hotspot_cli::commands::{self, print_error};
use hotspot_cli::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "hotspot", version, about = "Under-reporting-aware crime hotspot prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic city into <out>/data.
    Synth(Common),
    /// Train every configured variant.
    Train(Common),
    /// Predict the test period with each trained variant.
    Predict(Common),
    /// Compute monthly F1 and fairness reports from the predictions.
    Evaluate(Common),
    /// Compare fairness reports between the configured model pairs.
    Compare(Common),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::Synth(c) | Command::Train(c) | Command::Predict(c) | Command::Evaluate(c) | Command::Compare(c) => c,
    };
    let cfg = RunConfig::load(
        &common.config,
        &Overrides {
            seed: common.seed,
            out: common.out.clone(),
        },
    )?;
    match cli.command {
        Command::Synth(_) => {
            let files = commands::cmd_synth(&cfg)?;
            println!("synth: wrote {}", files.crimes.parent().unwrap_or(&cfg.out).display());
        }
        Command::Train(_) => {
            for s in commands::cmd_train(&cfg)? {
                println!(
                    "train: {:<5} lr={:e} epochs={} val_mse={:.6} -> {}",
                    s.variant.as_str(),
                    s.learning_rate,
                    s.epochs,
                    s.best_val_mse,
                    s.checkpoint.display()
                );
            }
        }
        Command::Predict(_) => {
            for p in commands::cmd_predict(&cfg)? {
                println!("predict: wrote {}", p.display());
            }
        }
        Command::Evaluate(_) => {
            for e in commands::cmd_evaluate(&cfg)? {
                println!("evaluate: {:<5} mean monthly F1 {:.4}", e.fairness.model, e.f1.mean);
            }
        }
        Command::Compare(_) => {
            for t in commands::cmd_compare(&cfg)? {
                print!("{}", t.render_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            print_error(&e);
            ExitCode::from(2)
        }
    }
}
