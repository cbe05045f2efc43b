use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nvmag::io::{
    cmd_fit_decay, cmd_fit_odmr, cmd_fit_saturation, cmd_reconstruct, cmd_sensitivity,
    cmd_simulate_decay, cmd_simulate_odmr, CommandOutput, IoError, RunConfig,
};
use nvmag::synth::DecayKind;

/// NV-ensemble magnetometry: simulate and fit ODMR spectra, reconstruct field
/// vectors, fit coherence decays and compute sensitivity budgets.
///
/// Every command prints a JSON result document on stdout. Exit status is 0 on
/// success, 1 for input or configuration errors and 2 when a fit does not
/// converge or the data are degenerate.
#[derive(Parser, Debug)]
#[command(name = "nvmag", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for synthetic noise (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path: the data file for simulate commands, a copy of the
    /// result document otherwise.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic ODMR spectrum plus a `.truth.json` sidecar.
    SimulateOdmr,
    /// Write a synthetic decay record plus a `.truth.json` sidecar.
    SimulateDecay,
    /// Fit Lorentzian dips to a `freq_mhz,pl_norm[,counts]` CSV.
    FitOdmr {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Write freq, data, model and residual columns here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Reconstruct the field vector from a peaks JSON or a fit-odmr document.
    Reconstruct {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit a `time_us,signal` CSV with one of rabi, fid, hahn, t1.
    FitDecay {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        kind: Option<DecayKind>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Shot-noise DC/AC sensitivity, baseline and enhanced collection.
    Sensitivity,
    /// Fit C(P) = c_sat·P/(P + p_sat) to a `power_mw,rate_hz` CSV.
    FitSaturation {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn required(
    cli: Option<PathBuf>,
    configured: &Option<String>,
    what: &str,
) -> Result<PathBuf, IoError> {
    cli.or_else(|| configured.as_ref().map(PathBuf::from))
        .ok_or_else(|| IoError::Config(format!("missing --{what} (or paths.{what} in the config)")))
}

fn optional(cli: Option<PathBuf>, configured: &Option<String>) -> Option<PathBuf> {
    cli.or_else(|| configured.as_ref().map(PathBuf::from))
}

fn run(cli: Cli) -> Result<CommandOutput, IoError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let paths = &config.paths;
    let output = optional(cli.output, &paths.output);
    let out = match cli.command {
        Command::SimulateOdmr => {
            let path = required(output.clone(), &None, "output")?;
            return cmd_simulate_odmr(&config, seed, &path);
        }
        Command::SimulateDecay => {
            let path = required(output.clone(), &None, "output")?;
            return cmd_simulate_decay(&config, seed, &path);
        }
        Command::FitOdmr { input, plot } => {
            let input = required(input, &paths.input, "input")?;
            cmd_fit_odmr(&config, &input, optional(plot, &paths.plot).as_deref())?
        }
        Command::Reconstruct { input } => {
            let input = required(input, &paths.input, "input")?;
            cmd_reconstruct(&config, &input)?
        }
        Command::FitDecay { input, kind, plot } => {
            let input = required(input, &paths.input, "input")?;
            let kind = match (kind, &config.fit.decay_kind) {
                (Some(k), _) => k,
                (None, Some(name)) => name
                    .parse()
                    .map_err(|e| IoError::Config(format!("fit.decay_kind: {e}")))?,
                (None, None) => {
                    return Err(IoError::Config(
                        "missing --kind (or fit.decay_kind in the config)".into(),
                    ))
                }
            };
            cmd_fit_decay(
                &config,
                &input,
                kind,
                optional(plot, &paths.plot).as_deref(),
            )?
        }
        Command::Sensitivity => cmd_sensitivity(&config)?,
        Command::FitSaturation { input, plot } => {
            let input = required(input, &paths.input, "input")?;
            cmd_fit_saturation(&config, &input, optional(plot, &paths.plot).as_deref())?
        }
    };
    if let Some(path) = output {
        write_document(&path, &out)?;
    }
    Ok(out)
}

fn write_document(path: &Path, out: &CommandOutput) -> Result<(), IoError> {
    std::fs::write(path, out.document.to_json() + "\n")
        .map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            for w in &out.document.warnings {
                eprintln!("warning: {w}");
            }
            // a closed stdout (e.g. piped into `head`) is not an error
            let _ = writeln!(std::io::stdout().lock(), "{}", out.document.to_json());
            ExitCode::from(out.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
