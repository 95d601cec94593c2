//! Subcommand implementations.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nestmc::harness::{nested_mc_split, run_experiment};
use nestmc::partition::{width_diagnostic_with, RankTransform};
use nestmc::{
    build_partitions, make_stream, nested_mc_estimate, simple_estimate, sparse_grid_estimate,
    InnerBudget, Method,
};
use serde_json::json;

use crate::config::{parse_inner, parse_m_values, ConfigError, Settings};
use crate::output::{write_diagnostics, write_estimates, write_summary};
use crate::plot::{read_summary, render_svg};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_BOUND_VIOLATED: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl ToString) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e)
    }
}

impl From<nestmc::Error> for CliError {
    fn from(e: nestmc::Error) -> Self {
        CliError::config(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "nestmc",
    version,
    about = "Nested expectation estimators and MSE benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one estimator once and print a JSON record.
    Estimate(RunArgs),
    /// Replicated MSE sweep; writes estimates.csv, summary.csv and report.json.
    Bench(RunArgs),
    /// Partition width diagnostics for every level of one batch.
    Diagnose(RunArgs),
    /// Render a summary CSV as a log-log SVG chart.
    Plot {
        summary_csv: PathBuf,
        out_svg: PathBuf,
    },
}

/// Flags shared by the estimation subcommands. Each overrides the
/// matching key of the `--config` JSON file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `p1` or `p2`.
    #[arg(long)]
    pub problem: Option<String>,
    /// Number of signals for p1.
    #[arg(long = "M")]
    pub signals: Option<u32>,
    /// Signal accuracy for p1.
    #[arg(long)]
    pub p: Option<f64>,
    /// `EvSvG` or `EvSvGvA` for p2.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Trial size for p2.
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated methods for `bench`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Depth: the estimator uses 2^m samples.
    #[arg(long, allow_negative_numbers = true)]
    pub m: Option<i64>,
    /// Depths for `bench`, e.g. `8..14` or `8,10,12`.
    #[arg(long = "m-values", allow_hyphen_values = true)]
    pub m_values: Option<String>,
    /// Replications per cell.
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<i64>,
    /// Master seed (default: $NESTMC_SEED, else 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// `analytic` or `nested_mc`.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub ref_outer: Option<usize>,
    /// Inner draws per reference outer sample, or `exact`.
    #[arg(long, value_parser = parse_inner)]
    pub ref_inner: Option<InnerBudget>,
    /// Outer samples for `estimate --method nested_mc`.
    #[arg(long)]
    pub outer: Option<usize>,
    /// Inner samples (or `exact`) for `estimate --method nested_mc`.
    #[arg(long, value_parser = parse_inner)]
    pub inner: Option<InnerBudget>,
    /// Harness worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory for `bench`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Output file for `diagnose` (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl RunArgs {
    pub fn flag_settings(&self) -> Result<Settings, ConfigError> {
        Ok(Settings {
            problem: self.problem.clone(),
            signals: self.signals,
            p: self.p,
            scenario: self.scenario.clone(),
            n: self.n,
            method: self.method.clone(),
            methods: self.methods.clone(),
            m: self.m,
            m_values: self.m_values.as_deref().map(parse_m_values).transpose()?,
            r: self.r,
            seed: self.seed,
            reference: self.reference.clone(),
            ref_outer: self.ref_outer,
            ref_inner: self.ref_inner,
            outer: self.outer,
            inner: self.inner,
            threads: self.threads,
            out_dir: self.out_dir.clone(),
            output: self.output.clone(),
        })
    }

    /// Flags layered over the config file, if any.
    pub fn settings(&self) -> Result<Settings, ConfigError> {
        let flags = self.flag_settings()?;
        let file = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        Ok(flags.over(file))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(&args.settings()?),
        Command::Bench(args) => cmd_bench(&args.settings()?),
        Command::Diagnose(args) => cmd_diagnose(&args.settings()?),
        Command::Plot {
            summary_csv,
            out_svg,
        } => cmd_plot(&summary_csv, &out_svg),
    }
}

pub fn cmd_estimate(settings: &Settings) -> Result<(), CliError> {
    let spec = settings.problem_spec()?;
    let method = settings.method_value()?;
    let seed = settings.seed_or_default()?;
    let problem = spec.build()?;
    let mut rng = make_stream(seed);

    let (record, m) = match method {
        Method::SparseGrid | Method::Simple => {
            let m = settings.depth()?;
            let batch = problem.sample_joint(1 << m, &mut rng);
            let f = problem.outer_function();
            let rec = if method == Method::SparseGrid {
                sparse_grid_estimate(&batch, f)?
            } else {
                simple_estimate(&batch, f)?
            };
            (rec, Some(m))
        }
        Method::NestedMc => {
            let (outer, inner, m) = if settings.outer.is_some() || settings.inner.is_some() {
                (
                    settings.outer.unwrap_or(1024),
                    settings.inner.unwrap_or(InnerBudget::Samples(1024)),
                    None,
                )
            } else {
                let m = settings.depth()?;
                let (o, i) = nested_mc_split(m);
                (o, InnerBudget::Samples(i), Some(m))
            };
            let rec = nested_mc_estimate(problem.as_ref(), outer, inner, &mut rng)?;
            (rec, m)
        }
    };

    let out = json!({
        "method": method.name(),
        "m": m,
        "N": record.samples_used,
        "estimate": record.value,
        "samples_used": record.samples_used,
        "f_evals": record.f_evals,
        "seed": seed,
    });
    println!("{out}");
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn cmd_bench(settings: &Settings) -> Result<(), CliError> {
    let cfg = settings.experiment()?;
    let out_dir = settings
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"));
    let report = run_experiment(&cfg)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let estimates = out_dir.join("estimates.csv");
    let summary = out_dir.join("summary.csv");
    let mirror = out_dir.join("report.json");

    write_estimates(&report, create(&estimates)?).map_err(|e| CliError::io(&estimates, e))?;
    write_summary(&report, create(&summary)?).map_err(|e| CliError::io(&summary, e))?;
    let mut w = create(&mirror)?;
    serde_json::to_writer_pretty(&mut w, &json!({ "config": cfg, "report": report }))
        .map_err(|e| CliError::io(&mirror, e))?;
    w.flush().map_err(|e| CliError::io(&mirror, e))?;

    for path in [&estimates, &summary, &mirror] {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn cmd_diagnose(settings: &Settings) -> Result<(), CliError> {
    let spec = settings.problem_spec()?;
    let m = settings.depth()?;
    let seed = settings.seed_or_default()?;
    let problem = spec.build()?;
    let batch = problem.sample_joint(1 << m, &mut make_stream(seed));
    let plan = build_partitions(&batch)?;
    let transform = RankTransform::new(&batch);
    let levels = (0..=m as usize)
        .map(|d| width_diagnostic_with(&transform, &plan, d))
        .collect::<nestmc::Result<Vec<_>>>()?;

    match &settings.output {
        Some(path) => {
            write_diagnostics(&levels, create(path)?).map_err(|e| CliError::io(path, e))?
        }
        None => write_diagnostics(&levels, io::stdout().lock())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
    }

    if levels.iter().all(|d| d.satisfied()) {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_BOUND_VIOLATED,
            message: "width bound violated".into(),
        })
    }
}

pub fn cmd_plot(summary_csv: &Path, out_svg: &Path) -> Result<(), CliError> {
    let input = File::open(summary_csv).map_err(|e| CliError::io(summary_csv, e))?;
    let series = read_summary(input).map_err(|e| CliError::io(summary_csv, e))?;
    std::fs::write(out_svg, render_svg(&series)).map_err(|e| CliError::io(out_svg, e))?;
    Ok(())
}
