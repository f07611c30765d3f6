use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use trilevel::bounds::total_bound;
use trilevel::config::{apply_overrides, load_config_with_overrides, validate_conditions, ConditionStatus};
use trilevel::report::{
    bounds_table, counterexample_report, format_base_quantities, format_bounds_table, format_counterexample,
    format_sensitivity, format_verification, sensitivity_rows,
};
use trilevel::trace_io::write_trace;
use trilevel::verify::{verify, VerificationReport};
use trilevel::{run, Scenario, ScenarioKind, SystemConfig};

/// Exit status when a counterexample's expected breakdown is confirmed.
const EXPECTED_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "trilevel", version, about = "Bounds, simulations and runtime monitors for a three-timescale learning stack")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for machine-readable outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Seed; defaults to the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bound table for one or more swarm sizes.
    Bounds {
        /// Comma-separated swarm sizes; empty for a header-only table.
        #[arg(long = "n", value_name = "LIST", default_value = "10,30,100")]
        n: String,
    },
    /// Run one scenario and write its trace.
    Simulate {
        #[arg(long, default_value = "baseline")]
        scenario: String,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Elasticity sweep of the total bound.
    Sensitivity,
    /// Replay a scenario next to its analytic predictions.
    Counterexample {
        #[arg(value_name = "NAME", required_unless_present = "scenario")]
        name: Option<String>,
        #[arg(long, conflicts_with = "name")]
        scenario: Option<String>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Multi-seed dominance verification.
    Verify {
        #[arg(long, default_value = "baseline")]
        scenario: String,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Check the start-up boundedness conditions.
    Conditions,
}

fn load(cli: &Cli) -> Result<SystemConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            load_config_with_overrides(&text, &cli.overrides).with_context(|| format!("loading {}", path.display()))?
        }
        None => {
            let c = apply_overrides(&SystemConfig::default(), &cli.overrides)?;
            c.validate()?;
            c
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    for w in config.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn scenario(name: &str, duration: Option<f64>) -> Result<Scenario> {
    let s = Scenario::by_name(name)?;
    Ok(match duration {
        Some(d) if !(d.is_finite() && d >= 0.0) => bail!("duration must be a nonnegative number of seconds"),
        Some(d) => s.with_duration(d),
        None => s,
    })
}

fn cmd_bounds(cli: &Cli, config: &SystemConfig, ns: &[usize]) -> Result<u8> {
    let rows = bounds_table(config, ns)?;
    if let Some(first) = rows.first() {
        println!("{}", format_base_quantities(first));
    }
    print!("{}", format_bounds_table(&rows));
    let path = write_json(&cli.out, "bounds.json", &rows)?;
    eprintln!("wrote {}", path.display());
    Ok(0)
}

fn cmd_simulate(cli: &Cli, config: &SystemConfig, sc: &Scenario) -> Result<u8> {
    let cfg = sc.configure(config);
    let trace = run(sc, &cfg, cfg.seed)?;
    let report = verify(&trace, &total_bound(&cfg)?)?;
    let m = &trace.metadata;
    println!(
        "scenario {} seed {}: {} ticks, {} coordination cycles, {} meta cycles",
        m.scenario, m.seed, m.ticks, m.marl_cycles, m.meta_cycles
    );
    if let Some(h) = &m.halted {
        println!("halted: {h}");
    }
    println!("contract failures {}, alarms {}", trace.failures(), trace.alarms());
    print!("{}", format_verification(&report));
    let dir = cli.out.join(format!("{}-seed{}", m.scenario, m.seed));
    let files = write_trace(&trace, &dir)?;
    write_json(&dir, "verification.json", &report)?;
    eprintln!("wrote {} files to {}", files.len() + 1, dir.display());
    Ok(if report.pass && trace.failures() == 0 {
        0
    } else if sc.kind != ScenarioKind::Baseline {
        EXPECTED_VIOLATION
    } else {
        1
    })
}

fn cmd_sensitivity(cli: &Cli, config: &SystemConfig) -> Result<u8> {
    let base = total_bound(config)?;
    let rows = sensitivity_rows(config)?;
    print!("{}", format_sensitivity(base.eps_total, &rows));
    let path = write_json(&cli.out, "sensitivity.json", &rows)?;
    eprintln!("wrote {}", path.display());
    Ok(0)
}

fn cmd_counterexample(cli: &Cli, config: &SystemConfig, sc: &Scenario) -> Result<u8> {
    let (report, _) = counterexample_report(sc, config, config.seed)?;
    print!("{}", format_counterexample(&report));
    let path = write_json(&cli.out, &format!("counterexample-{}.json", report.scenario), &report)?;
    eprintln!("wrote {}", path.display());
    Ok(report.exit_code() as u8)
}

#[derive(Serialize)]
struct VerifySummary {
    scenario: String,
    duration: f64,
    seeds: Vec<u64>,
    passed: usize,
    pass_rate: f64,
    runs: Vec<VerificationReport>,
}

fn cmd_verify(cli: &Cli, config: &SystemConfig, sc: &Scenario, count: u64) -> Result<u8> {
    if count == 0 {
        bail!("--seeds must be at least 1");
    }
    let cfg = sc.configure(config);
    let bounds = total_bound(&cfg)?;
    let seeds: Vec<u64> = (0..count).map(|i| cfg.seed.wrapping_add(i)).collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| verify(&run(sc, &cfg, seed)?, &bounds))
        .collect::<trilevel::Result<Vec<_>>>()?;
    let passed = runs.iter().filter(|r| r.pass).count();
    for r in &runs {
        let failing: Vec<&str> = r
            .checks
            .iter()
            .filter(|c| c.status == trilevel::verify::CheckStatus::Fail)
            .map(|c| c.name.as_str())
            .collect();
        println!("seed {:>20}  {}  {}", r.seed, if r.pass { "pass" } else { "FAIL" }, failing.join(" "));
    }
    let summary = VerifySummary {
        scenario: sc.name().to_string(),
        duration: sc.duration,
        seeds,
        passed,
        pass_rate: passed as f64 / count as f64,
        runs,
    };
    println!("{} / {} runs pass ({:.1}%)", passed, count, 100.0 * summary.pass_rate);
    let path = write_json(&cli.out, &format!("verify-{}.json", summary.scenario), &summary)?;
    eprintln!("wrote {}", path.display());
    Ok(if passed as u64 == count {
        0
    } else if sc.kind != ScenarioKind::Baseline {
        EXPECTED_VIOLATION
    } else {
        1
    })
}

fn cmd_conditions(cli: &Cli, config: &SystemConfig) -> Result<u8> {
    let report = validate_conditions(config);
    for c in &report.conditions {
        println!("{:<3} {:<8} {}", c.id, format!("{:?}", c.status).to_lowercase(), c.note);
        for k in &c.checks {
            println!("      {:<12} {:>12.6e} <= {:>12.6e}  {}", k.quantity, k.measured, k.threshold, if k.pass { "ok" } else { "violated" });
        }
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let path = write_json(&cli.out, "conditions.json", &report)?;
    eprintln!("wrote {}", path.display());
    Ok(if report.conditions.iter().any(|c| c.status == ConditionStatus::Fail) {
        1
    } else {
        0
    })
}

fn parse_sizes(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().with_context(|| format!("invalid swarm size `{s}`")))
        .collect()
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let config = load(cli)?;
    match &cli.command {
        Command::Bounds { n } => cmd_bounds(cli, &config, &parse_sizes(n)?),
        Command::Simulate { scenario: name, duration } => cmd_simulate(cli, &config, &scenario(name, *duration)?),
        Command::Sensitivity => cmd_sensitivity(cli, &config),
        Command::Counterexample { name, scenario: flag, duration } => {
            let name = name.as_deref().or(flag.as_deref()).unwrap_or_default();
            cmd_counterexample(cli, &config, &scenario(name, *duration)?)
        }
        Command::Verify { scenario: name, duration, seeds } => cmd_verify(cli, &config, &scenario(name, *duration)?, *seeds),
        Command::Conditions => cmd_conditions(cli, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Usage errors share the generic failure status; 2 is reserved.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
