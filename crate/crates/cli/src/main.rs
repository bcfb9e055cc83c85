use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use selflc::config::ExperimentConfig;
use selflc::harness;
use selflc::{ConfidenceMode, Error};

#[derive(Parser)]
#[command(name = "selflc", version, about = "Target-modification losses on synthetic noisy-label data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write data.csv and test.csv for the configured dataset.
    GenData(Common),
    /// Train one configuration.
    Run(Common),
    /// Run the ProSelfLC (B, T) grid from the config's [sweep] section.
    Sweep(Common),
    /// Compare constant, g, g*conf_top and g*conf_all self trust, all with AT.
    CompareSchemes(Common),
    /// ECE/GSCE table of a logits file over temperatures.
    Audit(AuditArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the training seed (the dataset seed for gen-data).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides output_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for sweep and compare-schemes.
    #[arg(long, value_name = "N", default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Top,
    All,
    Both,
}

#[derive(Args)]
struct AuditArgs {
    /// CSV with columns z_0..z_{c-1},label.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Number of ECE bins.
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    temps: Vec<f64>,
    #[arg(long, value_name = "DIR", default_value = "audit")]
    out: PathBuf,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if error.is_config() { 2 } else { 3 };
        Failure { code, error }
    }
}

/// Load the config; any failure here, including an unreadable file, is a config error.
fn load(args: &Common, for_data: bool) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|error| Failure { code: 2, error })?;
    if let Some(seed) = args.seed {
        if for_data {
            cfg.dataset.seed = seed;
        } else {
            cfg.seed = seed;
        }
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn report(out: &Path, what: &str) {
    println!("{what} written to {}", out.display());
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData(args) => {
            let (cfg, out) = load(&args, true)?;
            let (train, test) = harness::gen_dataset(&cfg, &out)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Run(args) => {
            let (cfg, out) = load(&args, false)?;
            let r = harness::run(&cfg, &out)?;
            let m = &r.metrics;
            println!(
                "method={} test_acc={:.4} conf_all={:.4} gsce_all={:.4} ece_top={:.4}",
                m.method, m.test_accuracy, m.test_conf_all, m.gsce_all, m.ece_top
            );
            report(&out, "artifacts");
        }
        Command::Sweep(args) => {
            let (cfg, out) = load(&args, false)?;
            let rows = harness::sweep(&cfg, &out, args.jobs)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            for r in rows.iter().filter(|r| r.outcome.is_err()) {
                eprintln!("cell B={} T={} failed: {}", r.growth, r.temperature, r.outcome.as_ref().unwrap_err());
            }
            println!("{} cells, {failed} failed", rows.len());
            report(&out, "sweep.csv");
        }
        Command::CompareSchemes(args) => {
            let (cfg, out) = load(&args, false)?;
            for r in harness::compare_schemes(&cfg, &out, args.jobs)? {
                println!(
                    "{:<11} noisy_fit={:.4} test_acc={:.4}",
                    r.scheme.name(),
                    r.metrics.wrong_fitting.unwrap_or(f64::NAN),
                    r.metrics.test_accuracy
                );
            }
            report(&out, "schemes.csv");
        }
        Command::Audit(a) => {
            let modes: &[ConfidenceMode] = match a.mode {
                ModeArg::Top => &[ConfidenceMode::Top],
                ModeArg::All => &[ConfidenceMode::All],
                ModeArg::Both => &ConfidenceMode::BOTH,
            };
            let table = harness::audit(&a.input, modes, &a.temps, a.m, &a.out)?;
            println!("{:>6} {:>4} {:>9} {:>9} {:>9}", "T", "mode", "ece", "gsce", "accuracy");
            for r in &table {
                println!(
                    "{:>6} {:>4} {:>9.5} {:>9.5} {:>9.5}",
                    r.temperature,
                    r.mode.name(),
                    r.ece,
                    r.gsce,
                    r.accuracy
                );
            }
            report(&a.out, "audit.csv");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
