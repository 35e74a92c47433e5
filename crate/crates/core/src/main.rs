use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ofgcn::harness::commands::{
    cmd_ablate, cmd_eval, cmd_spectral, cmd_sweep, cmd_train, parse_kinds, parse_ratios, spectral_params, train_dir,
    CHECKPOINT_FILE,
};
use ofgcn::harness::config;
use ofgcn::harness::experiment::RunConfig;
use ofgcn::harness::manifest::{eval_csv, out_root};
use ofgcn::simdata::{gen_split, write_dump, Split};
use ofgcn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ofgcn",
    version,
    about = "Order-free sparse graph classifier for corrupted feature sequences",
    after_help = "Outputs go under ./ofgcn-out unless OFGCN_OUT_DIR is set."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes checkpoint, manifest and history.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint under masking ratios and corruption kinds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated masking ratios.
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
        mr: String,
        /// Comma-separated kinds: black, background, sunglass, blur, noise, adversarial.
        #[arg(long, default_value = "black,background")]
        kinds: String,
        #[arg(long, default_value_t = 1000)]
        eval_seed: u64,
        /// Magnitude for the local corruption kinds.
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
    },
    /// Train every ablation variant for K seeds and report stress metrics.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Train one model per grid cell; resumable.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid file: `key = v1,v2,...` per line.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Write the generated train/val/test splits as binary dumps.
    Dump {
        #[arg(long)]
        config: PathBuf,
    },
    /// Laplacian spectra, cascade responses and smoothness ratios of test graphs.
    Spectral {
        #[arg(long)]
        config: PathBuf,
        /// Use this checkpoint's weights instead of a fresh initialisation.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        graphs: usize,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let out = out_root();
    match cli.command {
        Command::Train { config: path, seed } => {
            let mut cfg = config::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let manifest = cmd_train(&cfg, &out)?;
            let dir = train_dir(&out, cfg.seed);
            println!("wrote {}", dir.join(CHECKPOINT_FILE).display());
            println!("checkpoint hash {}", manifest.checkpoint_hash);
            for row in &manifest.metrics {
                let r = &row.report;
                println!(
                    "clean test: accuracy {} macro_f1 {} auc {}",
                    r.accuracy,
                    r.macro_f1,
                    r.auc_field()
                );
            }
        }
        Command::Eval {
            checkpoint,
            mr,
            kinds,
            eval_seed,
            strength,
        } => {
            let ratios = parse_ratios(&mr)?;
            let kinds = parse_kinds(&kinds)?;
            let rows = cmd_eval(&checkpoint, &ratios, &kinds, eval_seed, strength, &out)?;
            print!("{}", eval_csv(&rows));
        }
        Command::Ablate { config: path, seeds } => {
            let cfg = config::load(&path)?;
            let cells = cmd_ablate(&cfg, seeds, &out)?;
            println!("wrote {} ({} cells)", out.join("ablation.csv").display(), cells.len());
        }
        Command::Sweep { config: path, grid } => {
            let cfg = config::load(&path)?;
            let rows = cmd_sweep(&cfg, &read_text(&grid)?, &out)?;
            println!("wrote {} ({} cells)", out.join("sweep.csv").display(), rows.len());
        }
        Command::Dump { config: path } => {
            let cfg = config::load(&path)?;
            for split in [Split::Train, Split::Val, Split::Test] {
                let file = out.join("data").join(format!("{}.bin", split.name()));
                std::fs::create_dir_all(out.join("data"))?;
                write_dump(&file, &cfg.generator, split, &gen_split(&cfg.generator, split))?;
                println!("wrote {}", file.display());
            }
        }
        Command::Spectral {
            config: path,
            checkpoint,
            graphs,
        } => {
            let cfg: RunConfig = config::load(&path)?;
            let (cfg, params) = spectral_params(&cfg, checkpoint.as_deref())?;
            let spectra = cmd_spectral(&cfg, &params, graphs, &out)?;
            println!("wrote spectral reports for {} graphs to {}", spectra.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

