use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use spanet::commands::{self, EvalOptions, SplitFilter};
use spanet::report;
use spanet::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "spanet", version, about = "Train, evaluate and profile SP&A networks on defect images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file; every key left out takes its default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set training.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load_with_overrides(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic defect dataset and its manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a network and fill the run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write loss and accuracy SVG charts.
        #[arg(long)]
        plot: bool,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        /// `SPA1` checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config; defaults to the config.echo beside the checkpoint.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Manifest to score; defaults to the one named in the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// train, val, test or all.
        #[arg(long, default_value = "all")]
        split: SplitFilter,
        /// Output directory; defaults to eval-<split> beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-class metrics SVG chart.
        #[arg(long)]
        plot: bool,
    },
    /// Print the per-layer parameter and FLOP table.
    Profile {
        #[command(flatten)]
        config: ConfigArgs,
        /// Totals over the standard composition-ratio grid instead.
        #[arg(long)]
        sweep: bool,
        /// Where to write the CSV form; defaults to the run directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config } => {
            let cfg = config.load()?;
            println!("{}", commands::gen_data(&cfg)?.line());
        }
        Command::Train { config, plot } => {
            let mut cfg = config.load()?;
            cfg.output.plot |= plot;
            let start = Instant::now();
            let summary = commands::train(&cfg, |r| eprintln!("{}", report::run_row(r)))?;
            let last = summary.records.last().expect("at least one epoch");
            println!(
                "trained {} epochs: train_acc {:.4}, {} accuracy {:.4}, macro F1 {:.4} -> {}",
                last.epoch,
                last.train_acc,
                summary.eval_split,
                summary.report.accuracy,
                summary.report.macro_f1,
                summary.run_dir.display()
            );
            eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
        }
        Command::Eval { checkpoint, config, manifest, split, out, plot } => {
            let s = commands::eval(&EvalOptions { checkpoint, config, manifest, split, out_dir: out, plot })?;
            print!("{}", s.text);
            println!("reports -> {}", s.out_dir.display());
        }
        Command::Profile { config, sweep, csv } => {
            let cfg = config.load()?;
            let out = commands::profile(&cfg, sweep)?;
            print!("{}", out.text);
            let name = if sweep { "profile_sweep.csv" } else { "profile.csv" };
            let path = csv.unwrap_or_else(|| cfg.output.run_dir.join(name));
            commands::write_profile_csv(&path, &out)?;
            println!("csv -> {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
