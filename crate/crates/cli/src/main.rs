use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atom_diode_cli::{cmd_ensemble, cmd_oracle, cmd_scan, cmd_vmax, CliError, ExperimentConfig, ResultTable};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atom-diode", version, about = "Atom diode scattering and quantum-jump experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reflection, transmission and failure over a velocity grid.
    Scan(Common),
    /// Operating-window edge over a grid of Rabi frequencies and barriers.
    Vmax(Common),
    /// Quantum-jump ensembles for a list of initial velocities.
    Ensemble(Common),
    /// Trajectory ensemble against the density-matrix integrator on a small grid.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV; overrides the config. Standard output when neither is given.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn density_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.density.{index}.csv"))
}

fn emit(table: &ResultTable, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => table.save(path),
        None => table
            .write_to(std::io::stdout().lock())
            .map_err(|e| CliError::Output(e.to_string())),
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let (Command::Scan(args) | Command::Vmax(args) | Command::Ensemble(args) | Command::Oracle(args)) = &command;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(CliError::Config("`--threads`: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("`--threads`: {e}")))?;
    }
    let out = args.out.clone().or_else(|| cfg.output.as_ref().map(|o| o.path.clone()));
    match command {
        Command::Scan(_) => emit(&cmd_scan(&cfg)?, out.as_deref()),
        Command::Vmax(_) => emit(&cmd_vmax(&cfg)?, out.as_deref()),
        Command::Oracle(_) => emit(&cmd_oracle(&cfg)?, out.as_deref()),
        Command::Ensemble(_) => {
            let dump = cfg.ensemble.as_ref().is_some_and(|e| e.density_dump);
            if dump && out.is_none() {
                return Err(CliError::Config("`ensemble.density_dump`: needs --out or output.path".into()));
            }
            let result = cmd_ensemble(&cfg)?;
            emit(&result.table, out.as_deref())?;
            if let Some(out) = &out {
                for (i, (_, table)) in result.densities.iter().enumerate() {
                    table.save(&density_path(out, i))?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("atom-diode: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
