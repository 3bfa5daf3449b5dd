use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fockx::harness::{
    report_json, run, scaling_series, HarnessError, Mode, Ordering, Regime, RunConfig, SystemSpec,
};
use fockx::{DensityModel, ScreeningMode};

/// Hierarchical Fock exchange builds over synthetic water clusters or XYZ
/// geometries.
#[derive(Parser, Debug)]
#[command(name = "fockx", version)]
struct Args {
    /// Integral threshold, or `off` to disable bound-based culling.
    #[arg(long = "tau-2e", default_value = "1e-8", value_parser = parse_threshold)]
    tau_2e: Threshold,
    /// Overlap threshold for shell-pair pruning.
    #[arg(long = "tau-ovlp", default_value_t = 1e-11)]
    tau_ovlp: f64,
    #[arg(long = "leaf-size", default_value_t = 10)]
    leaf_size: usize,
    /// naive | symmetry | dense | dense-screened
    #[arg(long, default_value = "symmetry")]
    mode: Mode,
    /// Second mode to run for a comparison report.
    #[arg(long)]
    reference: Option<Mode>,
    /// literal | schwarz
    #[arg(long, default_value = "schwarz")]
    bound: ScreeningMode,
    /// hilbert | input
    #[arg(long, default_value = "hilbert")]
    order: Ordering,
    /// water:N | blob:N | xyz:PATH
    #[arg(long, default_value = "water:10")]
    system: SystemSpec,
    /// exp:gamma=G | file:PATH
    #[arg(long, default_value = "exp:gamma=0.4")]
    density: DensityModel,
    /// Per-element shell table file; the built-in table otherwise.
    #[arg(long = "shell-table")]
    shell_table: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Report (or series CSV) destination; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-case occurrence CSV destination (symmetry mode).
    #[arg(long = "cases-csv")]
    cases_csv: Option<PathBuf>,
    /// Comma-separated molecule counts; runs naive and symmetry for each.
    #[arg(long)]
    series: Option<String>,
    /// Extra screening regimes for a series, `tau_2e:tau_ovlp` comma-separated.
    #[arg(long)]
    regimes: Option<String>,
    /// 1 = sequential (default), 0 = all cores, N = N worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Clone, Copy, Debug)]
struct Threshold(Option<f64>);

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    parse_tau(s).map(Threshold)
}

fn parse_tau(s: &str) -> Result<Option<f64>, String> {
    if s == "off" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("expected a number or 'off', got '{s}'"))
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &'static str) -> Result<Vec<T>, HarnessError> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim().parse::<T>().map_err(|_| HarnessError::Config {
                flag,
                message: format!("bad entry '{t}'"),
            })
        })
        .collect()
}

fn parse_regimes(s: &str) -> Result<Vec<Regime>, HarnessError> {
    s.split(',')
        .map(|r| {
            let (a, b) = r.split_once(':').ok_or_else(|| HarnessError::Config {
                flag: "--regimes",
                message: format!("expected tau_2e:tau_ovlp, got '{r}'"),
            })?;
            let t2 = parse_tau(a).map_err(|m| HarnessError::Config {
                flag: "--regimes",
                message: m,
            })?;
            let to = b.parse::<f64>().map_err(|_| HarnessError::Config {
                flag: "--regimes",
                message: format!("bad tau_ovlp '{b}'"),
            })?;
            Ok((t2, to))
        })
        .collect()
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, HarnessError> {
    match path {
        Some(p) => Ok(Box::new(File::create(p).map_err(|e| {
            HarnessError::Runtime(format!("{}: {e}", p.display()))
        })?)),
        None => Ok(Box::new(io::stdout())),
    }
}

fn execute(args: Args) -> Result<(), HarnessError> {
    let config = RunConfig {
        system: args.system,
        tau_2e: args.tau_2e.0,
        tau_ovlp: args.tau_ovlp,
        leaf_size: args.leaf_size,
        mode: args.mode,
        bound: args.bound,
        order: args.order,
        density: args.density,
        seed: args.seed,
        threads: args.threads,
        reference: args.reference,
        shell_table: args.shell_table,
    };
    config.validate()?;
    if let Some(series) = &args.series {
        let sizes: Vec<usize> = parse_list(series, "--series")?;
        let mut regimes = vec![(config.tau_2e, config.tau_ovlp)];
        if let Some(r) = &args.regimes {
            regimes.extend(parse_regimes(r)?);
        }
        scaling_series(
            &config,
            &sizes,
            &[Mode::Naive, Mode::Symmetry],
            &regimes,
            sink(&args.out)?,
        )?;
        return Ok(());
    }
    let output = run(&config)?;
    let mut w = sink(&args.out)?;
    writeln!(w, "{}", report_json(&output.report))
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    if let Some(path) = &args.cases_csv {
        std::fs::write(path, output.case_counts.to_csv())
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fockx: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
