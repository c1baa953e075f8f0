use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdbem_cli::config::RunConfig;
use fdbem_cli::run::{benchmark, benchmark_header, benchmark_line, cmd_solve};
use fdbem_cli::verify::{self, Suite};
use fdbem_cli::CliError;

/// Exterior Helmholtz solver with a fast directional matvec.
#[derive(Parser)]
#[command(name = "fdbem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set k=2pi`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Same as `--set mesh=PATH`.
    #[arg(long)]
    mesh: Option<String>,
    /// Same as `--set k=K`.
    #[arg(long, short)]
    k: Option<String>,
    /// Same as `--set epsilon=EPS`.
    #[arg(long)]
    epsilon: Option<String>,
    /// Same as `--set threads=N`.
    #[arg(long)]
    threads: Option<String>,
    /// Same as `--set csv=PATH`.
    #[arg(long)]
    csv: Option<String>,
    /// Same as `--set summary=PATH`.
    #[arg(long)]
    summary: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let mut all = Vec::new();
        for (key, v) in [("mesh", &self.mesh), ("k", &self.k), ("epsilon", &self.epsilon), ("threads", &self.threads), ("csv", &self.csv), ("summary", &self.summary)] {
            if let Some(v) = v {
                all.push(format!("{key}={v}"));
            }
        }
        all.extend(self.overrides.iter().cloned());
        cfg.apply_overrides(&all)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one exterior problem and write the surface field.
    Solve(ConfigArgs),
    /// Run a verification suite; exits with 1 if any check fails.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Pulsating spheres with N = 8 4^n and k = pi 2^(n-3); fits the
    /// per-iteration time exponent.
    Benchmark {
        #[arg(long, default_value_t = 3)]
        n_min: u32,
        #[arg(long, default_value_t = 5)]
        n_max: u32,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(args) => {
            let cfg = args.load()?;
            print!("{}", cmd_solve(&cfg)?);
        }
        Command::Verify { suite } => {
            let checks = verify::run(suite)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(CliError::Verification(failed));
            }
        }
        Command::Benchmark { n_min, n_max, config } => {
            let cfg = config.load()?;
            println!("{}", benchmark_header());
            let (_, slope) = benchmark(&cfg, n_min, n_max, |row| println!("{}", benchmark_line(row)))?;
            match slope {
                Some(s) => println!("fitted exponent of T_it vs N: {s:.3}"),
                None => println!("fitted exponent of T_it vs N: n/a (fewer than two rows)"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
