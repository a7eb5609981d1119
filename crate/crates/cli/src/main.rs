use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use stormcrew_core::model::{validate_snapshot, SchemaMode};
use stormcrew_core::planner::plan_pipelines;
use stormcrew_core::replay::metrics::{catr_csv, metrics_csv, metrics_report, route_csv, MetricsConfig, RuntimeStats};
use stormcrew_core::replay::{
    generate_scenario, policy_registry, replay, GenParams, ReplayConfig, ReplayFailure, Scenario,
};
use stormcrew_core::travel::provider_from_config;
use stormcrew_service::ServiceConfig;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Bad or unreadable input.
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<ReplayFailure> for CliError {
    fn from(f: ReplayFailure) -> Self {
        use stormcrew_core::replay::ReplayError;
        match f.error {
            ReplayError::Scenario(_) => CliError::Data(f.error.to_string()),
            ReplayError::UnknownPolicy(_) => CliError::Usage(f.error.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

/// Storm damage-assessment crew allocation.
#[derive(Debug, Parser)]
#[command(name = "stormcrew", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic storm scenario.
    Gen {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        crews: usize,
        #[arg(long, default_value_t = 90)]
        outages: usize,
        #[arg(long, default_value_t = 6.0)]
        hours: f64,
        #[arg(long)]
        fps_fraction: Option<f64>,
        /// Radius of the service area around the yard.
        #[arg(long)]
        area_km: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a scenario under one policy and write the route log.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        /// `bau` or `opt`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        out: PathBuf,
        /// Write every planning record here as well.
        #[arg(long)]
        plans_out: Option<PathBuf>,
        #[command(flatten)]
        opts: ReplayOpts,
    },
    /// Replay both policies and write the metrics report and CSVs.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Include planner solve times in the report.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        opts: ReplayOpts,
    },
    /// Plan pipelines for one snapshot and print them.
    SolveOnce {
        #[arg(long)]
        snapshot: PathBuf,
        /// TOML file with planner settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Run the dispatch service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ReplayOpts {
    /// TOML file with replay and planner settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cadence_minutes: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    solver: Option<String>,
    /// Re-plan when a crew runs dry instead of waiting for the cadence.
    #[arg(long)]
    event_triggers: bool,
}

impl ReplayOpts {
    fn resolve(&self) -> Result<ReplayConfig, CliError> {
        let mut cfg: ReplayConfig = match &self.config {
            Some(p) => toml::from_str(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
            None => ReplayConfig::default(),
        };
        if let Some(c) = self.cadence_minutes {
            cfg.cadence_minutes = c;
        }
        if let Some(b) = self.beta {
            cfg.planner.beta_dist = b;
        }
        if let Some(s) = &self.solver {
            cfg.planner.solver = s.clone();
        }
        cfg.event_triggers |= self.event_triggers;
        if !(cfg.cadence_minutes.is_finite() && cfg.cadence_minutes > 0.0) {
            return Err(CliError::Usage("cadence must be positive".into()));
        }
        cfg.planner.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(|e| CliError::Data(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { seed, crews, outages, hours, fps_fraction, area_km, out } => {
            let mut params = GenParams { n_crews: crews, n_outages: outages, horizon_hours: hours, ..GenParams::default() };
            if let Some(f) = fps_fraction {
                params.fps_fraction = f;
            }
            if let Some(a) = area_km {
                params.area_km = a;
            }
            let s = generate_scenario(seed, &params).map_err(|e| CliError::Usage(e.to_string()))?;
            write(&out, &to_json(&s))?;
            println!("{}: {} outages, {} crews -> {}", s.scenario_id, outages, crews, out.display());
        }
        Command::Replay { scenario, policy, out, plans_out, opts } => {
            let cfg = opts.resolve()?;
            policy_registry().get(&policy).map_err(|e| CliError::Usage(e.to_string()))?;
            let s = load_scenario(&scenario)?;
            let result = replay(&s, &policy, &cfg)?;
            write(&out, &to_json(&result.log))?;
            if let Some(p) = plans_out {
                write(&p, &to_json(&result.plans))?;
            }
            println!(
                "{} {}: {} visits, {} unfinished -> {}",
                s.scenario_id,
                policy,
                result.log.visit_count(),
                result.log.unfinished.len(),
                out.display()
            );
        }
        Command::Compare { scenario, out_dir, timings, opts } => {
            let cfg = opts.resolve()?;
            let s = load_scenario(&scenario)?;
            let opt = replay(&s, "opt", &cfg)?;
            let bau = replay(&s, "bau", &cfg)?;
            let mut report = metrics_report(&opt.log, Some(&bau.log), &MetricsConfig::default())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            if timings {
                report.runtime = Some(RuntimeStats::from_plans(&opt.plans));
            }
            write(&out_dir.join("metrics.json"), &to_json(&report))?;
            write(&out_dir.join("metrics.csv"), &metrics_csv(&report))?;
            write(&out_dir.join("routes_opt.csv"), &route_csv(&opt.log))?;
            write(&out_dir.join("routes_bau.csv"), &route_csv(&bau.log))?;
            write(&out_dir.join("catr.csv"), &catr_csv(&[&opt.log, &bau.log]))?;
            write(&out_dir.join("routelog_opt.json"), &to_json(&opt.log))?;
            write(&out_dir.join("routelog_bau.json"), &to_json(&bau.log))?;
            let base = report.base.as_ref().expect("compare has a baseline");
            let pct = report
                .comparison
                .as_ref()
                .and_then(|c| c.percent_reduction)
                .map_or_else(|| "n/a".to_string(), |p| format!("{p:.1}%"));
            println!("scenario      {}", report.scenario_id);
            println!("miles         opt {:.1}  bau {:.1}  reduction {pct}", report.test.total_miles, base.total_miles);
            println!("crossovers    opt {}  bau {}", report.test.crossover_count, base.crossover_count);
            println!("overlap       opt {:.3}  bau {:.3}", report.test.overlap_index, base.overlap_index);
            println!("completed     opt {}  bau {}", report.test.outages_completed, base.outages_completed);
            if let Some(rt) = &report.runtime {
                println!("solves        {} (mean {:.2} ms, max {:.2} ms)", rt.solves, rt.mean_ms, rt.max_ms);
            }
        }
        Command::SolveOnce { snapshot, config, solver, beta } => {
            let mut cfg: stormcrew_core::planner::PlannerConfig = match &config {
                Some(p) => toml::from_str(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
                None => Default::default(),
            };
            if let Some(s) = solver {
                cfg.solver = s;
            }
            if let Some(b) = beta {
                cfg.beta_dist = b;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let raw: serde_json::Value = serde_json::from_str(&read(&snapshot)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", snapshot.display())))?;
            let validated = validate_snapshot(&raw, SchemaMode::Strict).map_err(|e| CliError::Data(e.to_string()))?;
            for w in &validated.warnings {
                eprintln!("warning: {w}");
            }
            let provider = provider_from_config(&cfg.travel).map_err(|e| CliError::Usage(e.to_string()))?;
            let plan = plan_pipelines(&validated.snapshot, &cfg, provider.as_ref())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{}", to_json(&plan));
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config).map_err(|e| CliError::Data(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(stormcrew_service::serve(cfg)).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.label());
            ExitCode::from(e.exit_code())
        }
    }
}
