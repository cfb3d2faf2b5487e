use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qns_cli::{run_campaign, tabulate, CampaignConfig, RunOptions, Table, TabulateConfig};

#[derive(Parser)]
#[command(name = "qns", version, about = "Multi-level spin-locking noise spectroscopy campaigns")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Added to every realization seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a spectroscopy campaign.
    Run { config: PathBuf },
    /// Emit static curve tables.
    Tabulate {
        #[arg(value_parser = ["rabi", "participation", "pumpprobe"])]
        table: String,
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match CampaignConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let opts = RunOptions {
                workers: cli.workers,
                seed_offset: cli.seed_offset,
            };
            match run_campaign(&cfg, &opts, cli.out.as_deref()) {
                Ok((result, manifest, dir)) => {
                    for w in &result.warnings {
                        eprintln!("warning: {w}");
                    }
                    let failed = result.failures();
                    for p in &failed {
                        eprintln!(
                            "point failed: target {} index {}: {}",
                            p.target,
                            p.index,
                            p.error.as_deref().unwrap_or("")
                        );
                    }
                    println!(
                        "{} points ({} failed), {} files written to {}",
                        result.points.len(),
                        failed.len(),
                        manifest.files.len() + 1,
                        dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Tabulate { table, config } => {
            let run = || -> qns_cli::Result<Vec<PathBuf>> {
                let table: Table = table.parse()?;
                let cfg = TabulateConfig::from_path(&config)?;
                let dir = cli
                    .out
                    .clone()
                    .or_else(|| cfg.output_dir.clone())
                    .unwrap_or_else(|| PathBuf::from("."));
                std::fs::create_dir_all(&dir)?;
                let mut written = Vec::new();
                for (name, csv) in tabulate(table, &cfg)? {
                    let path = dir.join(name);
                    std::fs::write(&path, csv)?;
                    written.push(path);
                }
                Ok(written)
            };
            match run() {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
