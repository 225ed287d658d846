//! Monte Carlo experiment driver: configuration, trial execution and CSV
//! output.
//!
//! Configuration is a flat `key = value` text file with `#` comments.
//! Resolution order is defaults, then the file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::convert::DebiasMode;
use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::metrics::{aggregate, AggregateOptions, LossCriterion, MetricsSeries};
use crate::sigma::SigmaRule;
use crate::sim::{run_trial, ObservedCase, ScenarioParams, TrialRecord, TrialSetup};

/// Range-rate noise used when the range-rate case is selected and no
/// explicit `sigma_rdot` is given.
pub const MEASURED_RANGE_RATE_SIGMA: f64 = 0.1;

/// Environment variable that caps the worker-thread count.
pub const THREADS_ENV: &str = "PKF_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioParams,
    pub trials: usize,
    pub seed: u64,
    pub filters: Vec<FilterKind>,
    pub debias: DebiasMode,
    pub track_loss_threshold: f64,
    pub anees_excludes_lost: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            trials: 1000,
            seed: 1,
            filters: FilterKind::ALL.to_vec(),
            debias: DebiasMode::ClosedForm,
            track_loss_threshold: 1000.0,
            anees_excludes_lost: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("at least one filter must be selected".into()));
        }
        if !(self.track_loss_threshold.is_finite() && self.track_loss_threshold > 0.0) {
            return Err(Error::Config(format!(
                "track_loss_threshold must be positive, got {}",
                self.track_loss_threshold
            )));
        }
        Ok(())
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions {
            loss: LossCriterion {
                threshold: self.track_loss_threshold,
                ..LossCriterion::default()
            },
            anees_excludes_lost: self.anees_excludes_lost,
            level: 0.95,
        }
    }

    /// Resolved settings as config-file text. Re-parsing it reproduces
    /// `self` apart from the output directory, which is left out so runs
    /// written to different places echo identically.
    pub fn echo(&self) -> String {
        let s = &self.scenario;
        let filters: Vec<&str> = self.filters.iter().map(|f| f.name()).collect();
        let lines = [
            ("case", s.case.to_string()),
            ("update_period", s.update_period.to_string()),
            ("n_updates", s.n_updates.to_string()),
            ("sigma_r", s.sigma_r.to_string()),
            ("sigma_alpha", s.sigma_alpha.to_string()),
            ("sigma_rdot", s.sigma_rdot.to_string()),
            ("sigma_cdot", s.sigma_cdot.to_string()),
            ("rho", s.rho.to_string()),
            ("q", s.q.to_string()),
            ("init_range_mean", s.init_range_mean.to_string()),
            ("init_range_std", s.init_range_std.to_string()),
            ("speed_scale", s.speed_scale.to_string()),
            ("trials", self.trials.to_string()),
            ("seed", self.seed.to_string()),
            ("filters", filters.join(",")),
            ("debias", debias_name(self.debias).to_string()),
            (
                "track_loss_threshold",
                self.track_loss_threshold.to_string(),
            ),
            ("anees_excludes_lost", self.anees_excludes_lost.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn debias_name(mode: DebiasMode) -> &'static str {
    match mode {
        DebiasMode::ClosedForm => "closed",
        DebiasMode::NumericalMultiplicative => "mult",
        DebiasMode::NumericalAdditive => "add",
    }
}

fn parse_debias(v: &str) -> Result<DebiasMode> {
    match v {
        "closed" | "closed_form" => Ok(DebiasMode::ClosedForm),
        "mult" | "numerical_multiplicative" => Ok(DebiasMode::NumericalMultiplicative),
        "add" | "numerical_additive" => Ok(DebiasMode::NumericalAdditive),
        other => Err(Error::Config(format!(
            "unknown debias mode `{other}` (expected closed, mult or add)"
        ))),
    }
}

fn parse_filters(v: &str) -> Result<Vec<FilterKind>> {
    let chosen = v
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<FilterKind>>>()?;
    Ok(FilterKind::ALL
        .into_iter()
        .filter(|k| chosen.contains(k))
        .collect())
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

/// Splits config text into `(key, value, line)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                i + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

struct Builder {
    config: ExperimentConfig,
    rdot_explicit: bool,
}

impl Builder {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let c = &mut self.config;
        let s = &mut c.scenario;
        match key {
            "case" => s.case = v.parse::<ObservedCase>()?,
            "update_period" => s.update_period = number(key, v)?,
            "n_updates" => s.n_updates = number(key, v)?,
            "sigma_r" => s.sigma_r = number(key, v)?,
            "sigma_alpha" => s.sigma_alpha = number(key, v)?,
            "sigma_rdot" => {
                s.sigma_rdot = number(key, v)?;
                self.rdot_explicit = true;
            }
            "sigma_cdot" => s.sigma_cdot = number(key, v)?,
            "rho" => s.rho = number(key, v)?,
            "q" => s.q = number(key, v)?,
            "init_range_mean" => s.init_range_mean = number(key, v)?,
            "init_range_std" => s.init_range_std = number(key, v)?,
            "speed_scale" => s.speed_scale = number(key, v)?,
            "trials" => c.trials = number(key, v)?,
            "seed" => c.seed = number(key, v)?,
            "filters" => c.filters = parse_filters(v)?,
            "debias" => c.debias = parse_debias(v)?,
            "track_loss_threshold" => c.track_loss_threshold = number(key, v)?,
            "anees_excludes_lost" => c.anees_excludes_lost = number(key, v)?,
            "output_dir" => c.output_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

/// Builds a configuration from optional file text and `(key, value)`
/// overrides. With the range-rate case and no explicit `sigma_rdot`, the
/// range-rate noise becomes [`MEASURED_RANGE_RATE_SIGMA`].
pub fn parse_config(
    file_text: Option<&str>,
    overrides: &[(&str, &str)],
) -> Result<ExperimentConfig> {
    let mut b = Builder {
        config: ExperimentConfig::default(),
        rdot_explicit: false,
    };
    if let Some(text) = file_text {
        for (k, v, line) in parse_pairs(text)? {
            b.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {line}: {}", strip_prefix(&e))))?;
        }
    }
    for (k, v) in overrides {
        b.set(k, v)?;
    }
    if b.config.scenario.case == ObservedCase::RangeBearingRangeRate && !b.rdot_explicit {
        b.config.scenario.sigma_rdot = MEASURED_RANGE_RATE_SIGMA;
    }
    b.config.validate()?;
    Ok(b.config)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

pub fn load_config(path: Option<&Path>, overrides: &[(&str, &str)]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => {
            Some(fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    parse_config(text.as_deref(), overrides)
}

/// Worker count from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub series: Vec<MetricsSeries>,
    pub records: Vec<TrialRecord>,
}

impl ExperimentOutput {
    pub fn series(&self, kind: FilterKind) -> Option<&MetricsSeries> {
        self.series.iter().find(|s| s.filter == kind)
    }
}

/// Runs every trial, in parallel when `threads` allows, and reduces the
/// records in trial order.
pub fn run_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let rule = SigmaRule::degree5(4)?;
    let setup = TrialSetup {
        params: &config.scenario,
        filters: &config.filters,
        debias: config.debias,
        rule: &rule,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| run_trial(&setup, config.seed, t))
            .collect::<Result<Vec<_>>>()
    })?;
    let opts = config.aggregate_options();
    let series = config
        .filters
        .iter()
        .map(|&kind| aggregate(&records, kind, &opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput { series, records })
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros
/// dropped, exponent form outside `[1e-4, 1e9)`.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

pub const METRICS_HEADER: [&str; 13] = [
    "k",
    "filter",
    "anees",
    "anees_lo",
    "anees_hi",
    "mse_pos",
    "mse_pos_lo",
    "mse_pos_hi",
    "mse_vel",
    "mse_vel_lo",
    "mse_vel_hi",
    "pcrlb_pos",
    "pcrlb_vel",
];

pub const SUMMARY_HEADER: [&str; 5] = ["filter", "trials", "lost", "loss_ci_lo", "loss_ci_hi"];

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `metrics.csv`, `summary.csv` and `config.txt` into `dir`.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    series: &[MetricsSeries],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;

    let mut w = csv_writer(&dir.join("metrics.csv"))?;
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    let n = series.first().map_or(0, MetricsSeries::len);
    for i in 0..n {
        for s in series {
            let (a_lo, a_hi) = split(s.anees_ci[i]);
            let (p_lo, p_hi) = split(s.mse_pos_ci[i]);
            let (v_lo, v_hi) = split(s.mse_vel_ci[i]);
            w.write_record([
                (i + 1).to_string(),
                s.filter.name().to_string(),
                opt(s.anees[i]),
                opt(a_lo),
                opt(a_hi),
                opt(s.mse_pos[i]),
                opt(p_lo),
                opt(p_hi),
                opt(s.mse_vel[i]),
                opt(v_lo),
                opt(v_hi),
                format_sig(s.pcrlb_pos[i]),
                format_sig(s.pcrlb_vel[i]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("summary.csv"))?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for s in series {
        let (lo, hi) = match s.loss_ci {
            Some((lo, hi)) => (lo.to_string(), hi.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            s.filter.name().to_string(),
            s.trials.to_string(),
            s.lost.to_string(),
            lo,
            hi,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    fs::write(dir.join("config.txt"), config.echo())?;
    Ok(())
}

fn split(v: Option<(f64, f64)>) -> (Option<f64>, Option<f64>) {
    match v {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    }
}
