use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use risbench::{
    cmd_detect, cmd_trace, cmd_wsr, load_config, parse_policies, write_output, CliError,
};

/// Link-level simulation workbench for a blockage-aware multi-panel
/// reflective mmWave downlink.
#[derive(Parser)]
#[command(name = "risbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Panel blockage detection accuracy over a sweep.
    Detect {
        /// JSON scenario config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `[axis=]start:stop:step` or `[axis=]v1,v2,...`; axes
        /// pilot_snr_db (default), p_block, alpha.
        #[arg(long)]
        sweep: Option<String>,
        /// Trials per sweep point (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Realized weighted sum-rate per panel-set policy over a sweep.
    Wsr {
        /// JSON scenario config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `[axis=]start:stop:step` or `[axis=]v1,v2,...`; axes snr_db
        /// (default), pilot_snr_db.
        #[arg(long)]
        sweep: Option<String>,
        /// Comma list from estimated, genie, oblivious, none,
        /// random-phase; all five when omitted.
        #[arg(long)]
        policies: Option<String>,
        /// Trials per sweep point (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-iteration optimizer trace for a single instance.
    Trace {
        /// JSON scenario config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Data SNR in dB for the traced instance.
        #[arg(long, default_value_t = 15.0)]
        snr_db: f64,
        /// Base seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Detect {
            config,
            sweep,
            trials,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let csv = cmd_detect(&cfg, sweep.as_deref())?;
            write_output(out.as_deref(), &csv)
        }
        Command::Wsr {
            config,
            sweep,
            policies,
            trials,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let policies = parse_policies(policies.as_deref())?;
            let csv = cmd_wsr(&cfg, sweep.as_deref(), &policies)?;
            write_output(out.as_deref(), &csv)
        }
        Command::Trace {
            config,
            snr_db,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let csv = cmd_trace(&cfg, snr_db)?;
            write_output(out.as_deref(), &csv)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
