use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pkf::experiment::{load_config, run_experiment, threads_from_env, write_outputs};
use pkf::metrics::MetricsSeries;
use pkf::Error;

#[derive(Parser)]
#[command(
    name = "pkf",
    version,
    about = "Monte Carlo comparison of converted-measurement and baseline tracking filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write metrics.csv, summary.csv and config.txt.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observed coordinates: rb (range, bearing) or rbd (plus range rate).
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated subset of pkf, spkf, ekf.
    #[arg(long)]
    filters: Option<String>,
    /// closed, mult or add.
    #[arg(long)]
    debias: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    n_updates: Option<String>,
    #[arg(long)]
    update_period: Option<String>,
    #[arg(long)]
    sigma_r: Option<String>,
    #[arg(long)]
    sigma_alpha: Option<String>,
    #[arg(long)]
    sigma_rdot: Option<String>,
    #[arg(long)]
    sigma_cdot: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    q: Option<String>,
    /// Position error in metres beyond which a track counts as lost.
    #[arg(long)]
    loss_threshold: Option<String>,
    /// Leave lost tracks out of ANEES.
    #[arg(long)]
    anees_excludes_lost: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let mut out = Vec::new();
        let fields = [
            ("case", &self.case),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("filters", &self.filters),
            ("debias", &self.debias),
            ("output_dir", &self.out),
            ("n_updates", &self.n_updates),
            ("update_period", &self.update_period),
            ("sigma_r", &self.sigma_r),
            ("sigma_alpha", &self.sigma_alpha),
            ("sigma_rdot", &self.sigma_rdot),
            ("sigma_cdot", &self.sigma_cdot),
            ("rho", &self.rho),
            ("q", &self.q),
            ("track_loss_threshold", &self.loss_threshold),
        ];
        for (key, value) in fields {
            if let Some(v) = value {
                out.push((key, v.as_str()));
            }
        }
        if self.anees_excludes_lost {
            out.push(("anees_excludes_lost", "true"));
        }
        out
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e @ Error::Config(_)) => {
                eprintln!("pkf: {e}");
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("pkf: {e}");
                ExitCode::FAILURE
            }
        },
    }
}

fn run(args: &RunArgs) -> pkf::Result<()> {
    let config = load_config(args.config.as_deref(), &args.overrides())?;
    let threads = threads_from_env()?;
    let output = run_experiment(&config, threads)?;
    write_outputs(&config.output_dir, &config, &output.series)?;
    for s in &output.series {
        println!("{}", summary_line(s));
    }
    println!("wrote {}", config.output_dir.display());
    Ok(())
}

fn summary_line(s: &MetricsSeries) -> String {
    let tail = s.len().saturating_sub(10);
    let mean = |v: &[Option<f64>]| {
        let xs: Vec<f64> = v[tail..].iter().flatten().copied().collect();
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let ci = match s.loss_ci {
        Some((lo, hi)) => format!(" [{lo}, {hi}]"),
        None => String::new(),
    };
    format!(
        "{:<5} lost {}/{}{ci}  final-10 ANEES {:.3}  position MSE {:.1}",
        s.filter.name(),
        s.lost,
        s.trials,
        mean(&s.anees),
        mean(&s.mse_pos),
    )
}
