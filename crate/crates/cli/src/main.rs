//! `qcurve`: runs configured experiments and writes check results, CSV tables
//! and a run manifest into a directory named by the configuration hash.
//!
//! Exit codes: 0 all checks pass, 1 a check fails or cannot decide,
//! 2 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use qcurve_core::report::write_json;
use qcurve_core::verify::{self, CheckResult, ExperimentConfig};
use qcurve_core::Error;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "qcurve", version, about = "Experiments on quasiconformal curves and their image surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distortion scan, analytic definition and upper-gradient checks.
    Analyze(RunArgs),
    /// Discrete modulus of the configured family and the lower modulus inequality.
    Modulus(RunArgs),
    /// Regularity, LLC and metric-definition checks for the counterexample.
    Counterexample(RunArgs),
    /// Measure equality, metric differentials and upper Ahlfors regularity of the image surface.
    Intrinsic(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Modulus(_) => "modulus",
            Command::Counterexample(_) => "counterexample",
            Command::Intrinsic(_) => "intrinsic",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Analyze(a) | Command::Modulus(a) | Command::Counterexample(a) | Command::Intrinsic(a) => a,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the grid resolution (cells per axis).
    #[arg(long)]
    resolution: Option<usize>,
    /// Reuse an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Serialize)]
struct CheckSummary {
    name: String,
    pass: bool,
    inconclusive: bool,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_path: String,
    output_dir: String,
    config_hash: String,
    started_unix: f64,
    finished_unix: f64,
    checks: Vec<CheckSummary>,
    exit_code: u8,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let usage = |e: Error| Failure::Usage(e.to_string());
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(cells) = args.resolution {
        cfg = cfg.with_resolution(cells).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn prepare_dir(cfg: &ExperimentConfig, command: &str, args: &RunArgs) -> Result<PathBuf, Failure> {
    // One directory per config hash; commands sharing a config get their own subdirectory.
    let dir = cfg.run_dir(&args.out)?.join(command);
    if dir.exists() && !args.force {
        return Err(Failure::Usage(format!(
            "run directory {} already exists for this configuration; pass --force to reuse it",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn analyze(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>, Failure> {
    let (analytic, _) = verify::check_analytic_definition(cfg)?;
    let gradient = verify::check_upper_gradient(cfg, cfg.analyze.paths)?;
    Ok(vec![analytic, gradient])
}

fn modulus(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>, Failure> {
    let Some(section) = &cfg.modulus else {
        return Err(Failure::Usage("invalid configuration at `modulus`: section missing".into()));
    };
    let mut out = vec![verify::check_modulus(cfg)?];
    if section.lower_bound {
        out.push(verify::check_lower_modulus(cfg)?);
    }
    Ok(out)
}

fn counterexample(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>, Failure> {
    if cfg.map.phi().is_none() {
        return Err(Failure::Usage("invalid configuration at `map.kind`: expected the counterexample map".into()));
    }
    let section = cfg.counterexample.clone().unwrap_or_default();
    let [lo, hi] = section.n_range;
    Ok(vec![
        verify::check_counterexample_regularity(cfg, section.strips)?,
        verify::check_counterexample_llc(cfg, lo, hi)?,
        verify::check_metric_definition(cfg, &verify::default_metric_radii(&cfg.grid))?,
    ])
}

fn intrinsic(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>, Failure> {
    if cfg.map.n() != 2 {
        return Err(Failure::Usage("invalid configuration at `map`: intrinsic checks need n = 2".into()));
    }
    let region = cfg.intrinsic.as_ref().and_then(|s| s.region.clone()).unwrap_or_else(|| cfg.grid.bbox.clone());
    Ok(vec![verify::check_measure_equality(cfg, &region)?, verify::check_upper_regularity_bound(cfg)?])
}

fn run(command: &Command) -> Result<u8, Failure> {
    let args = command.args();
    let started = now();
    let cfg = load(args)?;
    let dir = prepare_dir(&cfg, command.name(), args)?;
    let checks = match command {
        Command::Analyze(_) => analyze(&cfg)?,
        Command::Modulus(_) => modulus(&cfg)?,
        Command::Counterexample(_) => counterexample(&cfg)?,
        Command::Intrinsic(_) => intrinsic(&cfg)?,
    };
    let mut code = 0;
    for c in &checks {
        c.write(&dir)?;
        let status = if c.inconclusive {
            "INCONCLUSIVE"
        } else if c.pass {
            "PASS"
        } else {
            "FAIL"
        };
        println!("{status:<12} {:<26} lhs = {:<12.6e} rhs = {:<12.6e}", c.name, c.lhs, c.rhs);
        for note in &c.notes {
            println!("             {note}");
        }
        if !c.ok() {
            code = 1;
        }
    }
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_path: args.config.display().to_string(),
        output_dir: dir.display().to_string(),
        config_hash: cfg.hash()?,
        started_unix: started,
        finished_unix: now(),
        checks: checks
            .iter()
            .map(|c| CheckSummary { name: c.name.clone(), pass: c.pass, inconclusive: c.inconclusive })
            .collect(),
        exit_code: code,
    };
    write_json(&dir.join("run-manifest.json"), &manifest)?;
    println!("results in {}", dir.display());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
