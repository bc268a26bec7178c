use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rydsig::cli::commands::{self, EstimateInputs, Format, Overrides};
use rydsig::cli::config::ExperimentConfig;
use rydsig::estimator::Measurement;
use rydsig::peakfit::PeakModel;
use rydsig::{Error, Result};

#[derive(Parser)]
#[command(name = "rydsig", version, about = "Post-selected multiatom Rydberg collision signals: simulate, predict, invert")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides run.shots (shots per grid point).
    #[arg(long, global = true)]
    shots: Option<u64>,
    /// Output directory; overrides output.directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; changes speed only, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Structured,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Sinc2,
    Lorentzian,
    Cusp,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo spectra, histogram and amplitude table.
    Simulate,
    /// Analytic spectra from the closed-form signal model.
    Predict,
    /// Recover n̄, T and ρ₂ from spectra and a pulse-height histogram.
    Estimate(EstimateArgs),
    /// Tabulate the inversion over (α, β) or the forward model over (n̄, T).
    Sweep(SweepArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Spectrum files, one per atom number.
    #[arg(long, num_args = 1..)]
    spectra: Vec<PathBuf>,
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Peak model for fitting; sinc2 by default.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Known background; replaces the fitted baseline.
    #[arg(long)]
    rho1: Option<f64>,
    /// One-atom resonance amplitude S₁ − ρ₁, instead of spectra.
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    a1_err: f64,
    /// Two-atom resonance amplitude S₂ − ρ₁, instead of spectra.
    #[arg(long)]
    a2: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    a2_err: f64,
    /// Mean detected atoms per pulse, instead of a histogram.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    beta_err: f64,
    /// Take β from raw window counts, without undoing peak overlap.
    #[arg(long)]
    no_unfold: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// α values as start:stop:points.
    #[arg(long)]
    alpha: Option<String>,
    /// β values as start:stop:points.
    #[arg(long)]
    beta: Option<String>,
    /// n̄ values as start:stop:points (needs --config).
    #[arg(long)]
    nbar: Option<String>,
    /// T values as start:stop:points (needs --config).
    #[arg(long)]
    efficiency: Option<String>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Config { line, message } => Error::Config {
                line,
                message: format!("{}: {message}", p.display()),
            },
            other => other,
        }),
        None => Err(Error::Domain("this command needs --config".into())),
    }
}

fn run(cli: Cli) -> Result<String> {
    let format = match cli.format {
        FormatArg::Text => Format::Text,
        FormatArg::Structured => Format::Structured,
    };
    let overrides = Overrides {
        seed: cli.seed,
        shots: cli.shots,
        out: cli.out.clone(),
        threads: cli.threads,
    };
    match cli.command {
        Command::Simulate => {
            let cfg = load_config(&cli.config)?;
            Ok(commands::simulate(&cfg, &overrides)?.render(format))
        }
        Command::Predict => {
            let cfg = load_config(&cli.config)?;
            Ok(commands::predict(&cfg, &overrides)?.render(format))
        }
        Command::Estimate(a) => {
            let inputs = EstimateInputs {
                spectra: a.spectra,
                histogram: a.histogram,
                model: a.model.map(|m| match m {
                    ModelArg::Sinc2 => PeakModel::Sinc2,
                    ModelArg::Lorentzian => PeakModel::Lorentzian,
                    ModelArg::Cusp => PeakModel::Cusp,
                }),
                rho1: a.rho1,
                a1: a.a1.map(|v| Measurement::new(v, a.a1_err)),
                a2: a.a2.map(|v| Measurement::new(v, a.a2_err)),
                beta: a.beta.map(|v| Measurement::new(v, a.beta_err)),
                no_unfold: a.no_unfold,
            };
            Ok(commands::estimate(&inputs)?.render(format))
        }
        Command::Sweep(s) => {
            let table = match (&s.alpha, &s.beta, &s.nbar, &s.efficiency) {
                (Some(a), Some(b), None, None) => {
                    commands::sweep_inverse(&commands::parse_range(a)?, &commands::parse_range(b)?)
                }
                (None, None, Some(n), Some(t)) => {
                    let cfg = load_config(&cli.config)?;
                    let cfg = overrides.apply(&cfg);
                    commands::sweep_forward(&cfg, &commands::parse_range(n)?, &commands::parse_range(t)?)?
                }
                _ => {
                    return Err(Error::Domain(
                        "sweep takes either --alpha and --beta, or --nbar and --efficiency with --config".into(),
                    ))
                }
            };
            let text = commands::render_table(&table, format);
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    let name = match format {
                        Format::Text => "sweep.tsv",
                        Format::Structured => "sweep.json",
                    };
                    let path = dir.join(name);
                    std::fs::write(&path, text)?;
                    Ok(format!("wrote {}\n", path.display()))
                }
                None => Ok(text),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
