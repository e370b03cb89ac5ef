use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mrdib_cli::commands;
use mrdib_cli::config::{RunConfig, RunMode, SweepSpec};
use mrdib_core::data::SynthConfig;
use mrdib_core::eval::Split;
use mrdib_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mrdib",
    about = "Multimodal representation-disentangled information bottleneck: training, sweeps, ablations, synthetic data, embedding export",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    MibOnly,
    HostOnly,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => RunMode::Full,
            ModeArg::MibOnly => RunMode::MibOnly,
            ModeArg::HostOnly => RunMode::HostOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate the best checkpoint on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's alpha1 (compression weight).
        #[arg(long)]
        alpha1: Option<f64>,
        /// Override the config's alpha2 (redundancy weight).
        #[arg(long)]
        alpha2: Option<f64>,
        /// Override the config's alpha3 (unique-information weight).
        #[arg(long)]
        alpha3: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Grid-search the loss coefficients, ranked by validation Recall@5.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Allow grids beyond 27 points, up to this many runs.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run the six ablation variants with a shared seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic dataset with planted information classes.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: SplitArg,
    },
    /// Export per-item Z1/Z2 posterior means for external analysis.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            alpha1,
            alpha2,
            alpha3,
            seed,
            mode,
            output_dir,
            max_epochs,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(a) = alpha1 {
                cfg.alphas.alpha1 = a;
            }
            if let Some(a) = alpha2 {
                cfg.alphas.alpha2 = a;
            }
            if let Some(a) = alpha3 {
                cfg.alphas.alpha3 = a;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(dir) = output_dir {
                cfg.paths.output_dir = dir;
            }
            if let Some(e) = max_epochs {
                cfg.optimizer.max_epochs = e;
            }
            let outcome = commands::cmd_train(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome).expect("outcome serializes")
            );
            Ok(())
        }
        Command::Sweep {
            config,
            grid,
            budget,
        } => {
            let cfg = RunConfig::load(&config)?;
            let spec = SweepSpec::load(&grid)?;
            let leaderboard = commands::cmd_sweep(&cfg, &spec, budget)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&leaderboard).expect("leaderboard serializes")
            );
            Ok(())
        }
        Command::Ablate { config } => {
            let cfg = RunConfig::load(&config)?;
            let rows = commands::cmd_ablate(&cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&rows).expect("rows serialize")
            );
            Ok(())
        }
        Command::Synth { config, out } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let synth_cfg: SynthConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let summary = commands::cmd_synth(&synth_cfg, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            config,
            split,
        } => {
            let cfg = config.map(|p| RunConfig::load(&p)).transpose()?;
            let split = match split {
                SplitArg::Valid => Split::Valid,
                SplitArg::Test => Split::Test,
            };
            let report = commands::cmd_eval(&checkpoint, cfg, split)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::ExportEmbeddings { checkpoint, out } => {
            let (z1, z2) = commands::cmd_export_embeddings(&checkpoint, &out)?;
            println!("{{\"z1\": {:?}, \"z2\": {:?}}}", z1, z2);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                // clap's default usage exit code is 2; the interface
                // contract reserves that for data errors and uses 1 for
                // usage problems.
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(mrdib_cli::exit_code(&e) as u8)
        }
    }
}
