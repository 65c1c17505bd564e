use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvh_cli::{commands, CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "mvh", version, about = "Mean-variance hedging under partial information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, Riccati coefficients and the time-zero value functions.
    Solve(Common),
    /// Simulated hedging error against the predicted quadratic.
    Hedge(Common),
    /// Histograms of the terminal hedging error.
    Hist {
        #[command(flatten)]
        common: Common,
        /// Repeat for every `β` in the study section.
        #[arg(long)]
        beta_sweep: bool,
    },
    /// Expansion orders of `V1` and `V0` for every `β` in the study section.
    Table1(Common),
    /// Monte Carlo self-tests.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    ode_step: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    antithetic: Option<bool>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    /// Comma-separated initial capitals.
    #[arg(long, value_delimiter = ',')]
    w: Option<Vec<f64>>,
    /// Comma-separated CEV exponents.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            ode_step: self.ode_step,
            mc_paths: self.paths,
            mc_dt: self.dt,
            seed: self.seed,
            antithetic: self.antithetic,
            particle_lambda: self.lambda,
            expansion_order: self.order,
            horizon: self.horizon,
            w: self.w.clone(),
            betas: self.betas.clone(),
            directory: self.out.clone(),
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    match cli.command {
        Command::Solve(c) => commands::solve(&c.load()?),
        Command::Hedge(c) => commands::hedge(&c.load()?),
        Command::Hist { common, beta_sweep } => commands::hist(&common.load()?, beta_sweep),
        Command::Table1(c) => commands::table1(&c.load()?),
        Command::Check(c) => commands::check(&c.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
