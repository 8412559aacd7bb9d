use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ogmm_cli::{
    cmd_bench, cmd_genpairs, cmd_register, cmd_report, load_bench_config, load_pipeline_config, CliResult, Profile,
};

#[derive(Parser)]
#[command(name = "ogmm", version, about = "Overlap-guided GMM point cloud registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config overlaid on the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Paper)]
    profile: Profile,
}

#[derive(Subcommand)]
enum Command {
    /// Write the sweep's synthetic pairs and a manifest.
    Genpairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register a source cloud onto a target cloud (.ply or .xyz).
    Register {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Result JSON path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark sweep and write CSV rows plus a summary JSON.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Aggregate a benchmark CSV per sweep axis and draw SVG charts.
    Report {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Genpairs { common, out } => {
            let cfg = load_bench_config(common.config.as_deref(), common.profile)?;
            let m = cmd_genpairs(&cfg, &out)?;
            println!("{} pairs written to {}", m.pairs.len(), out.display());
        }
        Command::Register {
            common,
            source,
            target,
            out,
        } => {
            let cfg = load_pipeline_config(common.config.as_deref(), common.profile)?;
            let res = cmd_register(&source, &target, &cfg, out.as_deref())?;
            if out.is_none() {
                println!("{}", res.to_json()?);
            }
        }
        Command::Bench { common, out, workers } => {
            let cfg = load_bench_config(common.config.as_deref(), common.profile)?;
            let s = cmd_bench(&cfg, &out, workers)?;
            println!("{} rows ({} errors) written to {}", s.rows, s.error_rows, out.display());
        }
        Command::Report { csv, out } => {
            let dir = out.unwrap_or_else(|| csv.with_extension("report"));
            let files = cmd_report(&csv, &dir)?;
            println!("{} files written to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
