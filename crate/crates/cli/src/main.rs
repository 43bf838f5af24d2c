use std::path::PathBuf;

use clap::Parser;
use vsmargin_cli::{execute, Command};

/// Experiments for VS-loss and cost/group-sensitive max-margin classifiers.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON config for the subcommand.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let manifest = execute(args.command, &args.config, &args.out)?;
    for name in manifest.outputs.keys() {
        println!("{}", args.out.join(name).display());
    }
    Ok(())
}
