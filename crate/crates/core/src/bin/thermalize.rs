use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use thermalize::runner::{emit, scenario_preset, scenario_presets, ExperimentConfig, Runner};
use thermalize::{linalg, Error, Result};

#[derive(Parser)]
#[command(
    name = "thermalize",
    version,
    about = "Spin-chain thermalization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV tables and JSON sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides both the disorder and the trajectory seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the named scenario presets, or print one as a config file.
    Presets { name: Option<String> },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(o) = out {
                cfg.output_dir = Some(o);
            }
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                if n == 0 {
                    return Err(Error::Config("--threads must be at least 1".into()));
                }
                pool = pool.num_threads(n);
            }
            pool.build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            linalg::set_blas_threads(1);
            let dir = cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("results"));
            let output = Runner::new().run(&cfg)?;
            for path in emit(&output, &dir)? {
                println!("{}", path.display());
            }
            for note in &output.metadata.notes {
                log::warn!("{note}");
            }
            Ok(())
        }
        Command::Presets { name: None } => {
            for (name, about, _) in scenario_presets() {
                println!("{name:<24}{about}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => {
            println!("{}", scenario_preset(&name)?.to_json()?);
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("ok {} {}", cfg.scenario.name(), cfg.hash()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
