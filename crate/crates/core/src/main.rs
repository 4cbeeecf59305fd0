use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kinetic_market::agents::InitKind;
use kinetic_market::run::{self, Mode, RunConfig, RunSummary};
use kinetic_market::Error;

const OUT_ENV: &str = "KINETIC_MARKET_OUT";

#[derive(Parser)]
#[command(name = "kinetic-market", version, about = "Kinetic wealth-exchange simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation. Flags override values from the config file.
    Run {
        /// TOML configuration; defaults are used for absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gamma values, comma separated or repeated.
        #[arg(long = "gamma", value_delimiter = ',')]
        gamma_list: Vec<f64>,
        #[arg(long = "steps")]
        n_steps: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        init: Option<InitKind>,
        #[arg(long = "out", env = OUT_ENV)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sample_every: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        #[arg(long)]
        r_agents: Option<usize>,
        #[arg(long)]
        bin_width: Option<f64>,
        #[arg(long)]
        n_bins: Option<usize>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Continue a branch from a checkpoint file.
    Restore {
        #[arg(long)]
        from: PathBuf,
        /// Steps to run beyond the checkpoint.
        #[arg(long)]
        steps: u64,
        #[arg(long = "out", env = OUT_ENV)]
        output_dir: Option<PathBuf>,
    },
}

fn report(summary: &RunSummary) -> ExitCode {
    for b in &summary.branches {
        match &b.error {
            None => eprintln!("gamma = {}: {} steps", b.gamma, b.steps_completed),
            Some(e) => eprintln!("gamma = {}: failed after {} steps: {e}", b.gamma, b.steps_completed),
        }
    }
    if summary.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            gamma_list,
            n_steps,
            mode,
            init,
            output_dir,
            seed,
            sample_every,
            checkpoint_every,
            r_agents,
            bin_width,
            n_bins,
            print_config,
        } => {
            let mut cfg = match config {
                Some(path) => match RunConfig::load(&path) {
                    Ok(c) => c,
                    Err(e) => return fail(e),
                },
                None => RunConfig::default(),
            };
            if !gamma_list.is_empty() {
                cfg.gamma_list = gamma_list;
            }
            cfg.n_steps = n_steps.unwrap_or(cfg.n_steps);
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.init = init.unwrap_or(cfg.init);
            cfg.output_dir = output_dir.unwrap_or(cfg.output_dir);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.sample_every = sample_every.unwrap_or(cfg.sample_every);
            cfg.checkpoint_every = checkpoint_every.or(cfg.checkpoint_every);
            cfg.r_agents = r_agents.unwrap_or(cfg.r_agents);
            cfg.bin_width = bin_width.unwrap_or(cfg.bin_width);
            cfg.n_bins = n_bins.unwrap_or(cfg.n_bins);
            if print_config {
                return match cfg.to_toml_string() {
                    Ok(text) => {
                        print!("{text}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e),
                };
            }
            match run::run(&cfg) {
                Ok(summary) => report(&summary),
                Err(e) => fail(e),
            }
        }
        Command::Restore { from, steps, output_dir } => match run::restore(&from, steps, output_dir) {
            Ok(summary) => report(&summary),
            Err(e) => fail(e),
        },
    }
}
