use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtl_sparse_opt::cli::{self, Axis, COMPARISON_FILE};

#[derive(Parser)]
#[command(
    name = "mtl-sparse-opt",
    version,
    about = "Sparse training for multi-task learning experiments"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its run artifacts.
    Run { config: PathBuf },
    /// Run a grid of overrides over several seeds and aggregate `sweep.csv`.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`; repeat for a cartesian product.
        #[arg(long = "axis", required = true)]
        axes: Vec<Axis>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare finished runs, pairing dense and sparse runs of each method.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write the comparison CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.command {
        Command::Run { config } => cli::cmd_run(&config).map(|dir| {
            println!("wrote {}", dir.display());
        }),
        Command::Sweep {
            config,
            axes,
            seeds,
            jobs,
        } => cli::cmd_sweep(&config, &axes, &seeds, jobs).map(|path| {
            println!("wrote {}", path.display());
        }),
        Command::Report { dirs, out } => {
            let out =
                out.unwrap_or_else(|| cli::resolve_output_dir(&PathBuf::from(COMPARISON_FILE)));
            cli::cmd_report(&dirs, &out).map(|table| print!("{table}"))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
