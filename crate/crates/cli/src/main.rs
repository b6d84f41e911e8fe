use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bbm_lab::config::parse_override;
use bbm_lab::{execute, CliError};

/// Monte Carlo and PDE experiments on the extremal process of branching
/// Brownian motion.
#[derive(Parser)]
#[command(name = "bbm-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicas; write run records, thinned points and trees.
    Simulate(Common),
    /// Thin stored trees on a q grid and check the matrix oracle.
    Thin(Common),
    /// Poissonianity suite with positive and negative controls.
    Stats(Common),
    /// Mean counts of the cluster process.
    Cluster(Common),
    /// Drift-off probabilities of the tidal process.
    Tidal(Common),
    /// Solve the F-KPP equation and fit the front.
    Fkpp(Common),
    /// Collect the JSON reports of an output directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Plain-text key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; may be repeated. Flags win over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Output directory (default: $BBM_LAB_OUT, else ./bbm-out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut v = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(s) = self.seed {
            v.push(("seed".into(), s.to_string()));
        }
        if let Some(n) = self.replicas {
            v.push(("replicas".into(), n.to_string()));
        }
        if let Some(o) = &self.out {
            v.push(("out".into(), o.to_string_lossy().into_owned()));
        }
        if let Some(t) = self.threads {
            v.push(("threads".into(), t.to_string()));
        }
        Ok(v)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Thin(c) => ("thin", c),
        Command::Stats(c) => ("stats", c),
        Command::Cluster(c) => ("cluster", c),
        Command::Tidal(c) => ("tidal", c),
        Command::Fkpp(c) => ("fkpp", c),
        Command::Report(c) => ("report", c),
    };
    let result = common
        .overrides()
        .and_then(|o| execute(name, common.config.as_deref(), &o));
    match result {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bbm-lab {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
