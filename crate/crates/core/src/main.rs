use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fkchi::cli::config::{BathSpec, OutputFormat, RunConfig};
use fkchi::cli::{emit, exit, run, run_oracle, run_sweep, structured, Emit};

/// Falicov-Kimball dynamical charge susceptibilities on the Matsubara axis.
#[derive(Parser)]
#[command(name = "fkchi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline for one configuration point.
    Run(Common),
    /// Finite-difference verification only.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Seed for additional randomized parameter draws.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of randomized draws when a seed is given.
        #[arg(long, default_value_t = 10)]
        draws: usize,
    },
    /// Cartesian product over the `[sweep]` lists.
    Sweep(Common),
    /// Check a configuration and print it with all defaults filled in.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn load(common: &Common) -> Result<RunConfig, ExitCode> {
    let mut config = RunConfig::from_path(&common.config).map_err(|err| {
        eprintln!("error: {err}");
        ExitCode::from(exit::CONFIG as u8)
    })?;
    // Bath tables are looked up next to the config file.
    if let BathSpec::File { path } = &mut config.bath {
        if path.is_relative() {
            if let Some(dir) = common.config.parent() {
                *path = dir.join(&*path);
            }
        }
    }
    if let Some(format) = common.format {
        config.output.format = format;
    }
    if let Some(out) = &common.out {
        config.output.dir = Some(out.clone());
    }
    Ok(config)
}

fn write_out<R: Emit>(record: &R, config: &RunConfig, status: i32) -> ExitCode {
    let dir = config
        .output
        .dir
        .clone()
        .unwrap_or_else(|| Path::new("fkchi-out").to_owned());
    match emit(record, &dir, config.output.format) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::from(status as u8)
        }
        Err(err) => {
            eprintln!("error: {err}; record follows on stdout");
            if let Ok(json) = structured(record) {
                print!("{json}");
            }
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(common) => match load(&common) {
            Ok(config) => {
                match toml::to_string(&config) {
                    Ok(text) => print!("{text}"),
                    Err(err) => eprintln!("warning: cannot echo config: {err}"),
                }
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run(common) => {
            let config = match load(&common) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(common.workers.max(1))
                .build();
            let record = match pool {
                Ok(pool) => pool.install(|| run(&config)),
                Err(_) => run(&config),
            };
            for failure in &record.failures {
                eprintln!("failure ({:?}): {}", failure.stage, failure.message);
            }
            write_out(&record, &config, record.exit_code())
        }
        Command::Sweep(common) => {
            let config = match load(&common) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let record = run_sweep(&config, common.workers);
            write_out(&record, &config, record.exit_code())
        }
        Command::Oracle { common, seed, draws } => {
            let mut config = match load(&common) {
                Ok(c) => c,
                Err(code) => return code,
            };
            config.oracle.enabled = true;
            let record = run_oracle(&config, seed, draws, common.workers);
            write_out(&record, &config, record.exit_code())
        }
    }
}
