use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sft_experiments::{commands, ExperimentSpec, Result};

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an
/// error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "sft", version, about = "Fluctuation-based sample selection under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test splits and the noise audit CSV.
    Generate(SpecArgs),
    /// Run an experiment and write metrics and a summary.
    Train(SpecArgs),
    /// Histogram of fluctuation counts for clean vs noisy examples.
    Histogram(HistogramArgs),
    /// Train once per value of one config key.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Config key to vary, e.g. loss.gamma.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct SpecArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets data, noise and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct HistogramArgs {
    /// Run directory holding prediction_log.csv and audit.csv.
    #[arg(long, conflicts_with_all = ["log", "audit"])]
    run: Option<PathBuf>,
    /// Full prediction log CSV.
    #[arg(long, requires = "audit")]
    log: Option<PathBuf>,
    /// Audit CSV with given labels and the noise mask.
    #[arg(long, requires = "log")]
    audit: Option<PathBuf>,
    /// Histogram CSV to write.
    #[arg(long)]
    out: PathBuf,
}

impl SpecArgs {
    fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| sft_experiments::ExperimentError::Io { path: path.clone(), source: e })?;
            spec.apply_text(&text)?;
        }
        for o in &self.overrides {
            spec.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            spec.set_seed(seed);
        }
        if let Some(out) = &self.out {
            spec.out = out.clone();
        }
        if let Some(r) = self.repeats {
            spec.repeats = r;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn print_summary(out: &Path, s: &sft_experiments::report::Summary) {
    say!(
        "final test accuracy {:.4} ± {:.4}, selection F-score {:.4} ± {:.4} over {} run(s)",
        s.test_acc.mean, s.test_acc.std, s.sel_f1.mean, s.sel_f1.std, s.repeats
    );
    say!("wrote {}", out.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let spec = args.resolve()?;
            let out = commands::generate(&spec, &spec.out)?;
            say!(
                "{} train / {} test examples, realized noise fraction {:.4}",
                out.train.len(),
                out.test.len(),
                out.train.noise_fraction()
            );
            say!("wrote {}", spec.out.display());
        }
        Command::Train(args) => {
            let spec = args.resolve()?;
            let summary = commands::train(&spec)?;
            print_summary(&spec.out, &summary);
        }
        Command::Histogram(args) => {
            let (log, audit) = match (&args.run, &args.log, &args.audit) {
                (Some(dir), _, _) => (dir.join(commands::PREDICTION_LOG_FILE), dir.join(commands::AUDIT_FILE)),
                (None, Some(l), Some(a)) => (l.clone(), a.clone()),
                _ => {
                    return Err(sft_experiments::ExperimentError::Config(
                        "histogram needs --run or both --log and --audit".into(),
                    ))
                }
            };
            let h = commands::histogram(&log, &audit, &args.out)?;
            let fmt = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            say!(
                "mean fluctuations: clean {}, noisy {}",
                fmt(h.clean_mean()),
                fmt(h.noisy_mean())
            );
            say!("wrote {}", args.out.display());
        }
        Command::Sweep { spec, param, values } => {
            let spec = spec.resolve()?;
            for p in commands::sweep(&spec, &param, &values)? {
                say!(
                    "{param}={}: accuracy {:.4} ± {:.4}, F-score {:.4} ± {:.4}",
                    p.value, p.test_acc.mean, p.test_acc.std, p.sel_f1.mean, p.sel_f1.std
                );
            }
            say!("wrote {}", spec.out.join(commands::SWEEP_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
