use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use certsynth::experiment::{self, ExperimentConfig, RunReport};
use certsynth::{bounds, SavedCertificate};

#[derive(Parser)]
#[command(name = "certsynth", version, about = "Neural certificate synthesis with compression-based risk bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, synthesize with discarding, bound the risk and validate.
    Synth {
        #[command(flatten)]
        source: ConfigSource,
        /// Independent repetitions with shifted sample and validation seeds.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Evaluate a risk bound, or a comparison table with --table.
    Bound {
        #[arg(long, value_enum, default_value_t = BoundKind::Compression)]
        kind: BoundKind,
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long, default_value_t = 1e-5)]
        beta: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Emit `N,eps_compression,eps_direct` rows for these comma-separated N.
        #[arg(long, value_delimiter = ',')]
        table: Option<Vec<usize>>,
    },
    /// Re-validate a stored run on fresh samples.
    Validate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// CSV of a planar certificate over a uniform grid of the domain.
    ExportSurface {
        /// Run report; its config and parameters are used.
        #[arg(long)]
        run: PathBuf,
        /// Certificate file to use instead of the report's parameters.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize across sample sizes and compare both risk bounds (CSV).
    CompareBounds {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, value_delimiter = ',', default_value = "100,250,500,1000")]
        ns: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out trajectories of the configured system (CSV).
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Start state, comma separated; otherwise draw from the initial set.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a preset's configuration as JSON.
    ShowPreset { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundKind {
    Compression,
    Direct,
}

#[derive(Args)]
struct ConfigSource {
    /// JSON configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Override a configuration key, e.g. `--set samples.N=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => experiment::preset(name)?,
            (None, None) => bail!("pass --config <file> or --preset <name> (one of: {})", experiment::PRESETS.join(", ")),
        };
        Ok(base.with_overrides(&self.overrides)?)
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth(cfg: &ExperimentConfig, repeats: usize) -> Result<bool> {
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let root = cfg.output_root().join(&cfg.name);
    let mut reports = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let c = experiment::repeat_config(cfg, r);
        let report = experiment::run(&c)?;
        let dir = root.join(format!("seed-{}", c.samples.seed));
        report.write(&dir)?;
        eprintln!(
            "{} seed {}: certified={} R_N={} eps={:.5} cert_risk={} prop_risk={} eps_direct={:.5} ({:.1}s) -> {}",
            c.name,
            c.samples.seed,
            report.certified,
            report.r_n,
            report.epsilon,
            report.validation.certificate_risk,
            report.validation.property_risk,
            report.direct.epsilon,
            report.wall_time_s,
            dir.display()
        );
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        reports.push(report);
    }
    let summary = experiment::summarize(&reports);
    let text = serde_json::to_string_pretty(&summary)?;
    if repeats > 1 {
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        fs::write(root.join("summary.json"), &text)?;
    }
    println!("{text}");
    Ok(reports.iter().all(|r| r.certified))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { source, repeats } => {
            let cfg = source.load()?;
            let ok = synth(&cfg, repeats)?;
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) });
        }
        Command::Bound { kind, k, beta, n, table } => match table {
            Some(ns) => {
                let rows = bounds::bound_comparison_table(beta, &ns, k)?;
                println!("N,eps_compression,eps_direct");
                for r in rows {
                    println!("{},{},{}", r.n, r.eps_compression, r.eps_direct);
                }
            }
            None => {
                let eps = match kind {
                    BoundKind::Compression => bounds::epsilon_compression(k, beta, n)?,
                    BoundKind::Direct => bounds::epsilon_direct(k, beta, n)?,
                };
                println!("{eps}");
            }
        },
        Command::Validate { run, m, seed } => {
            let report = RunReport::load(&run)?;
            let seed = seed.unwrap_or(report.config.validation.seed);
            let v = report.revalidate(m, seed)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::ExportSurface { run, theta, resolution, out } => {
            let report = RunReport::load(&run)?;
            let cert: SavedCertificate = match theta {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => report.certificate(),
            };
            emit(&experiment::surface_csv(&report.config, &cert, resolution)?, out.as_deref())?;
        }
        Command::CompareBounds { source, ns, out } => {
            let cfg = source.load()?;
            let rows = experiment::compare_bounds(&cfg, &ns)?;
            emit(&experiment::comparison_csv(&rows), out.as_deref())?;
        }
        Command::Simulate { source, x0, count, steps, out } => {
            let cfg = source.load()?;
            let steps = steps.unwrap_or(cfg.horizon);
            emit(&experiment::simulate_csv(&cfg, x0.as_deref(), count, steps)?, out.as_deref())?;
        }
        Command::ShowPreset { name } => {
            println!("{}", serde_json::to_string_pretty(&experiment::preset(&name)?)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
