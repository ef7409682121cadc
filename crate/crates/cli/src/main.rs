mod analyze;
mod common;
mod config;
mod error;
mod eval;
mod generate;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_override, Command, Layers, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "transvec",
    version,
    about = "Unpaired domain mapping with transformation-vector consistency"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Trailing key=value overrides.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Write the synthetic beads (x) and grid (y) datasets.
    Synth(Common),
    /// Train the generators, discriminators and siamese networks.
    Train(Common),
    /// Translate a folder, or run the nine-frame manipulation sequence.
    Generate(Common),
    /// Compute the evaluation report for a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `all` or a comma-separated subset of ssim,mse,fid,disc,r2_pixel,r2_latent.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Salience maps, siamese-space PCA or pairwise-distance scatters.
    Analyze(Common),
}

fn dispatch(sub: Sub) -> Result<(), CliError> {
    let (command, common, metric) = match sub {
        Sub::Synth(c) => (Command::Synth, c, None),
        Sub::Train(c) => (Command::Train, c, None),
        Sub::Generate(c) => (Command::Generate, c, None),
        Sub::Eval { common, metric } => (Command::Eval, common, metric),
        Sub::Analyze(c) => (Command::Analyze, c, None),
    };
    let mut flags = Vec::new();
    if let Some(seed) = common.seed {
        flags.push(("seed".to_string(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        flags.push(("out".to_string(), out.display().to_string()));
    }
    if let Some(metric) = metric {
        flags.push(("metric".to_string(), metric));
    }
    let layers = Layers {
        file: common.config,
        overrides: common
            .overrides
            .iter()
            .map(|a| parse_override(a))
            .collect::<Result<_, _>>()?,
        flags,
    };
    let cfg = RunConfig::resolve(command, &layers)?;
    let out = cfg.out_dir();
    let fresh = !out.exists();
    common::prepare_out(&out, common.force)?;
    cfg.write_echo(&out)?;
    let result = match command {
        Command::Synth => synth::run(&cfg),
        Command::Train => train::run(&cfg),
        Command::Generate => generate::run(&cfg),
        Command::Eval => eval::run(&cfg),
        Command::Analyze => analyze::run(&cfg),
    };
    if result.as_ref().is_err_and(|e| e.code == error::EXIT_USAGE) && fresh {
        // a rejected run should not leave a directory that needs --force on
        // the corrected rerun; remove_dir only succeeds if nothing else landed
        // there
        let _ = std::fs::remove_file(out.join("resolved_config.txt"));
        let _ = std::fs::remove_dir(&out);
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
