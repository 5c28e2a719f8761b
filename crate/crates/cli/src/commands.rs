use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use thiserror::Error;

use oppsim_core::report::{fmt_sig6, rd_timeline_csv, ReportError};
use oppsim_core::trace::{
    generate_community_trace, parse_contact_trace, write_contact_trace, CommunityParams,
    GeneratorError,
};
use oppsim_core::{
    compare as compare_reports, parse_config, run as run_scenario, ConfigError, ContactTrace,
    RunConfig, RunReport, ScenarioError, StrategyKind, TraceError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {}: {source}", path.display())]
    MissingInput { path: PathBuf, source: io::Error },
    #[error("config {}: {source}", path.display())]
    Config { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("trace {}: {source}", path.display())]
    Trace { path: PathBuf, source: TraceError },
    #[error("trace generator: {0}")]
    Generator(#[from] GeneratorError),
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Report(#[from] ReportError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::MissingInput { .. } | CliError::Generator(_) => 2,
            CliError::Config { .. } | CliError::Scenario(_) => 3,
            CliError::Trace { .. } => 4,
            CliError::Output { .. } | CliError::Report(_) => 1,
        }
    }
}

/// Inclusive data size range in bytes, written `min-max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeRange(pub u64, pub u64);

impl FromStr for SizeRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once('-')
            .ok_or_else(|| format!("size range `{s}` is not `min-max`"))?;
        let lo: u64 = lo.trim().parse().map_err(|_| format!("bad size `{lo}`"))?;
        let hi: u64 = hi.trim().parse().map_err(|_| format!("bad size `{hi}`"))?;
        if lo == 0 || lo > hi {
            return Err(format!("size range `{s}` must satisfy 0 < min <= max"));
        }
        Ok(SizeRange(lo, hi))
    }
}

/// Parses `1,2,7` and `1..5` (inclusive), mixed freely.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("--seeds `{text}`: expected e.g. `1,2,3` or `1..5`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.parse().map_err(|_| bad())?;
                let b: u64 = b.parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::MissingInput {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(path) => parse_config(&read_input(path)?).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        }),
    }
}

fn load_trace(path: &Path) -> Result<ContactTrace, CliError> {
    parse_contact_trace(&read_input(path)?).map_err(|source| CliError::Trace {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn parse_strategy(name: &str, config: &RunConfig) -> Result<StrategyKind, CliError> {
    let default_limit = match config.strategy {
        StrategyKind::StaticSpray(l) => l,
        _ => 10,
    };
    match name {
        "epidemic" => Ok(StrategyKind::Epidemic),
        "controlled" => Ok(StrategyKind::Controlled),
        "static_spray" => Ok(StrategyKind::StaticSpray(default_limit)),
        other => other
            .strip_prefix("static_spray:")
            .and_then(|l| l.parse().ok())
            .filter(|&l| l >= 1)
            .map(StrategyKind::StaticSpray)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "--strategy `{name}`: expected epidemic, controlled, static_spray or static_spray:<limit>"
                ))
            }),
    }
}

pub fn run(
    config: Option<&Path>,
    trace: &Path,
    seed: u64,
    strategy: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(name) = strategy {
        cfg.strategy = parse_strategy(name, &cfg)?;
    }
    let trace = load_trace(trace)?;
    let report = run_scenario(&cfg.scenario(trace, seed))?;
    create_dir(out)?;
    write_file(&out.join("report.csv"), &report.to_csv())?;
    write_file(&out.join("report.json"), &report.to_json())?;
    write_file(
        &out.join("rd_timeline.csv"),
        &rd_timeline_csv(&report.rd_timeline),
    )?;
    println!(
        "{}: delivered {}/{} (ratio {}), control overhead {}",
        report.strategy,
        report.delivered_data,
        report.created_data,
        fmt_sig6(report.delivery_ratio),
        fmt_sig6(report.control_overhead)
    );
    Ok(())
}

pub const COMPARISON_HEADER: &str = "size_min,size_max,seeds,\
control_delivery,epidemic_delivery,static_delivery,\
control_latency,epidemic_latency,static_latency,\
control_overhead,epidemic_overhead,static_overhead,\
improvement_vs_epidemic,improvement_vs_static";

pub fn compare(
    config: Option<&Path>,
    trace: &Path,
    seeds: &[u64],
    sizes: &[SizeRange],
    out: &Path,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let trace = load_trace(trace)?;
    let sizes = if sizes.is_empty() {
        vec![SizeRange(cfg.params.data_size.0, cfg.params.data_size.1)]
    } else {
        sizes.to_vec()
    };
    let static_kind = parse_strategy("static_spray", &cfg)?;
    let strategies = [
        ("control", StrategyKind::Controlled),
        ("epidemic", StrategyKind::Epidemic),
        ("static", static_kind),
    ];

    // every (size, strategy, seed) cell is an independent simulation
    let mut cells = Vec::new();
    for size in &sizes {
        for (label, strategy) in strategies {
            for &seed in seeds {
                let mut c = cfg.clone();
                c.strategy = strategy;
                c.params.data_size = (size.0, size.1);
                cells.push((*size, label, c.scenario(trace.clone(), seed)));
            }
        }
    }
    let results: Vec<Result<RunReport, ScenarioError>> = thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|(_, _, scenario)| s.spawn(move || run_scenario(scenario)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });

    let mut grouped: BTreeMap<(u64, u64), BTreeMap<String, Vec<RunReport>>> = BTreeMap::new();
    for ((size, label, _), result) in cells.iter().zip(results) {
        grouped
            .entry((size.0, size.1))
            .or_default()
            .entry(label.to_string())
            .or_default()
            .push(result?);
    }

    let opt = |x: Option<f64>| x.map(fmt_sig6).unwrap_or_default();
    let mut csv = String::new();
    writeln!(csv, "{COMPARISON_HEADER}").unwrap();
    for size in &sizes {
        let table = compare_reports(&grouped[&(size.0, size.1)], "control")?;
        let s = |l: &str| table.summary(l).expect("every label ran");
        let (c, e, st) = (s("control"), s("epidemic"), s("static"));
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            size.0,
            size.1,
            seeds.len(),
            fmt_sig6(c.median_delivery_ratio),
            fmt_sig6(e.median_delivery_ratio),
            fmt_sig6(st.median_delivery_ratio),
            opt(c.median_latency),
            opt(e.median_latency),
            opt(st.median_latency),
            fmt_sig6(c.median_overhead),
            fmt_sig6(e.median_overhead),
            fmt_sig6(st.median_overhead),
            opt(table.improvement_over("epidemic")),
            opt(table.improvement_over("static")),
        )
        .unwrap();
    }
    create_dir(out)?;
    write_file(&out.join("comparison.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn gen_trace(params: &CommunityParams, out: &Path) -> Result<(), CliError> {
    let trace = generate_community_trace(params)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(out, &write_contact_trace(&trace))?;
    println!(
        "{} events, {} nodes, duration {} s",
        trace.events.len(),
        trace.node_count,
        trace.duration
    );
    Ok(())
}

pub fn validate_trace(path: &Path) -> Result<(), CliError> {
    let trace = load_trace(path)?;
    println!(
        "ok: {} events, {} contacts, {} nodes, duration {} s",
        trace.events.len(),
        trace.contact_count(),
        trace.node_count,
        trace.duration
    );
    Ok(())
}
