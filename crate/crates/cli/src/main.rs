//! `seget`: synthesize data, train, predict, evaluate, fuse and self-check.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use seget_core::data::Structure;

use config::{resolve, FlagOverrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "seget", version, about = "SegET segmentation of electron tomography slices")]
struct Cli {
    /// TOML run configuration layered over the defaults or the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the hyperparameters of one structure.
    #[arg(long, global = true)]
    preset: Option<Structure>,
    /// Override any config field, e.g. `--set train.lr=0.002`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Foreground threshold on probabilities (strict >).
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic volume and per-structure masks as MRC files.
    Synth {
        #[arg(long, default_value_t = 8)]
        slices: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 0.08)]
        noise: f64,
        /// Comma-separated structures; all five by default.
        #[arg(long, value_delimiter = ',')]
        structures: Vec<Structure>,
    },
    /// Train on a volume/mask pair and keep the best checkpoint.
    Train {
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Directory written by `synth`; picks the mask of `data.structure`.
        #[arg(long, conflicts_with_all = ["volume", "mask"])]
        data_dir: Option<PathBuf>,
    },
    /// Segment every slice of a volume.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: Option<PathBuf>,
    },
    /// Compare predicted and reference masks (MRC, PGM, or a PGM directory).
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Fuse five probability volumes, given in the order synapse, mts,
    /// centriole, granules, golgi.
    Fuse {
        #[arg(long, num_args = 5, required = true)]
        probs: Vec<PathBuf>,
    },
    /// Run the operator and tiny-network gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, hide = true, default_value = "none")]
        mutate: String,
    },
}

fn resolve_config(cli: &Cli) -> Result<(RunConfig, bool), CliError> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(CliError::io(p))?),
        None => None,
    };
    let network_given = text
        .as_deref()
        .is_some_and(|t| t.parse::<toml::Table>().is_ok_and(|t| t.contains_key("network")))
        || cli.sets.iter().any(|s| s.trim_start().starts_with("network."));
    let flags = FlagOverrides {
        seed: cli.seed,
        threshold: cli.threshold,
        out_dir: cli.out_dir.clone(),
    };
    let mut cfg = resolve(cli.preset, text.as_deref(), &cli.sets, &flags)?;
    if let Some(Command::Train {
        volume,
        mask,
        data_dir,
    }) = &cli.command
    {
        if let Some(d) = data_dir {
            cfg.data.volume = Some(d.join("volume.mrc"));
            cfg.data.mask = Some(d.join(commands::mask_file_name(cfg.structure()?)));
        }
        if volume.is_some() {
            cfg.data.volume = volume.clone();
        }
        if mask.is_some() {
            cfg.data.mask = mask.clone();
        }
    }
    if let Some(Command::Predict { volume: Some(v), .. }) = &cli.command {
        cfg.data.volume = Some(v.clone());
    }
    Ok((cfg, network_given))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, network_given) = resolve_config(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Synth {
            slices,
            height,
            width,
            noise,
            structures,
        } => {
            let structures = if structures.is_empty() {
                Structure::ALL.to_vec()
            } else {
                structures
            };
            let args = commands::SynthArgs {
                slices,
                height,
                width,
                noise,
                structures,
            };
            commands::synth(args, cfg.train.seed, &cfg.data.out_dir)
        }
        Command::Train { .. } => commands::train(&cfg),
        Command::Predict { checkpoint, .. } => {
            let volume = cfg
                .data
                .volume
                .clone()
                .ok_or_else(|| CliError::Config("no volume to predict (data.volume or --volume)".into()))?;
            commands::predict(&cfg, &checkpoint, &volume, network_given)
        }
        Command::Evaluate { pred, gt } => {
            print!("{}", commands::evaluate(&pred, &gt)?);
            Ok(())
        }
        Command::Fuse { probs } => commands::fuse(&probs, cfg.train.threshold, &cfg.data.out_dir),
        Command::Gradcheck { seeds, tol, mutate } => {
            let (report, ok) = commands::gradcheck(seeds, tol, commands::parse_mutation(&mutate)?)?;
            print!("{report}");
            if ok {
                Ok(())
            } else {
                Err(CliError::Runtime("gradient check failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seget: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
