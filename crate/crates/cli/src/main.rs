use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sqlab_core::assumptions::{check_assumptions, AcKey, CheckOptions};
use sqlab_core::integrator::Scheme;
use sqlab_core::runner::{
    load_config, output_dir, parse_config, report_summary, run_in, violation_ladder, ExperimentConfig, ExperimentKind,
    RunManifest, REPORT_FILE,
};
use sqlab_core::systems::registry;

/// Spectral-Galerkin laboratory for parabolic SPDEs.
#[derive(Parser)]
#[command(name = "sqlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the system registry with assumption statuses.
    ListSystems {
        /// Truncation size used for the status checks.
        #[arg(long)]
        modes: Option<usize>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check the assumptions of the configured system and print the report as JSON.
    Check(RunArgs),
    /// Integrate an ensemble and write diagnostics.
    Simulate(RunArgs),
    /// Estimate the long-time limit of the spectral quotient.
    SpectralLimit(RunArgs),
    /// Track distances from zero and hitting times.
    BackwardProbe(RunArgs),
    /// Measure the strong order of a scheme on a refinement ladder.
    Convergence {
        /// euler-maruyama, milstein or drift-implicit.
        #[arg(long)]
        scheme: Scheme,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare the derivative kernels with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 6)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarise one run directory, or the dt ladder over several.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and the output root.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let cfg = load_config(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        let mut cfg = cfg.with_kind(kind)?;
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        Ok(cfg)
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<(PathBuf, RunManifest)> {
    let dir = output_dir(cfg)?;
    let manifest = run_in(cfg, &dir).with_context(|| format!("running into {}", dir.display()))?;
    eprintln!("wrote {}", dir.display());
    Ok((dir, manifest))
}

fn run_and_summarise(cfg: &ExperimentConfig) -> Result<()> {
    let (dir, _) = execute(cfg)?;
    print!("{}", report_summary(&dir)?);
    Ok(())
}

fn list_systems(modes: Option<usize>, json: bool) -> Result<()> {
    let keys = [AcKey::Ac0, AcKey::Ac2, AcKey::Ac3, AcKey::Ac4, AcKey::Ac5, AcKey::Ac6, AcKey::Ac7, AcKey::K6];
    let mut rows = Vec::new();
    for entry in registry() {
        let system = entry.example.build(modes)?;
        let report = check_assumptions(&system, &CheckOptions::default())?;
        let statuses: serde_json::Map<String, serde_json::Value> = keys
            .iter()
            .map(|k| (serde_json::to_value(k).unwrap().as_str().unwrap().to_string(), serde_json::to_value(report.status(*k)).unwrap()))
            .collect();
        rows.push(serde_json::json!({
            "name": entry.name,
            "summary": entry.summary,
            "dim": system.basis.dim(),
            "statuses": statuses,
            "example": entry.example,
        }));
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    for row in &rows {
        println!("{}  (dim {})  {}", row["name"].as_str().unwrap(), row["dim"], row["summary"].as_str().unwrap());
        let line: Vec<String> = row["statuses"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, v)| format!("{k}={}", v.as_str().unwrap()))
            .collect();
        println!("    {}", line.join(" "));
    }
    Ok(())
}

fn report(dirs: &[PathBuf]) -> Result<()> {
    let summaries = dirs.iter().map(report_summary).collect::<sqlab_core::Result<Vec<_>>>()?;
    if let [one] = summaries.as_slice() {
        print!("{one}");
        return Ok(());
    }
    let ladder = violation_ladder(&summaries)?;
    println!("{:>12}  {:>12}  {:>12}", "dt", "x-bound", "envelope");
    let rate = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.3e}"));
    for row in &ladder.rows {
        println!("{:>12.3e}  {:>12}  {:>12}", row.dt, rate(row.x_violation_rate), rate(row.envelope_violation_rate));
    }
    if ladder.flagged {
        println!("flagged: a violation rate did not decrease under refinement");
    }
    Ok(())
}

fn check(args: &RunArgs) -> Result<()> {
    let (dir, _) = execute(&args.load(ExperimentKind::Check)?)?;
    let report = read_report(&dir)?;
    println!("{}", serde_json::to_string_pretty(&report["assumptions"])?);
    Ok(())
}

fn read_report(dir: &Path) -> Result<serde_json::Value> {
    let path = dir.join(REPORT_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ListSystems { modes, json } => list_systems(modes, json),
        Command::Check(args) => check(&args),
        Command::Simulate(args) => run_and_summarise(&args.load(ExperimentKind::Simulate)?),
        Command::SpectralLimit(args) => run_and_summarise(&args.load(ExperimentKind::SpectralLimit)?),
        Command::BackwardProbe(args) => run_and_summarise(&args.load(ExperimentKind::BackwardProbe)?),
        Command::Convergence { scheme, run } => {
            let mut cfg = run.load(ExperimentKind::Convergence)?;
            match cfg.discretization.as_mut() {
                Some(d) => d.scheme = scheme,
                None => bail!("convergence needs a [discretization] block"),
            }
            run_and_summarise(&cfg)
        }
        Command::Gradcheck { trials, dim, seed, output } => {
            let mut cfg = parse_config("kind = \"gradcheck\"\n")?;
            cfg.gradcheck.trials = trials;
            cfg.gradcheck.dim = dim;
            cfg.ensemble.master_seed = seed;
            cfg.output = output;
            let cfg = cfg.with_kind(ExperimentKind::Gradcheck)?;
            run_and_summarise(&cfg)
        }
        Command::Report { run_dirs } => report(&run_dirs),
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
