//! Run configuration, single runs with JSON reports, and scaling series
//! written as CSV.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{hilbert_order, load_xyz, BasisSystem, ClusterModel, ShellTable};
use crate::density::{build_density, DensityModel};
use crate::exchange_naive::{build_exchange_naive, ExchangeOptions, TraversalCounters};
use crate::exchange_symmetry::{build_exchange_symmetric, symmetrize_final, CaseCounts, CaseShare};
use crate::integrals::ScreeningMode;
use crate::oracle::{
    compare, dense_exchange_screened_with, dense_exchange_with, frobenius, ComparisonReport,
};
use crate::quadtree::{build_matrix_tree, build_partition, PairTable, DEFAULT_LEAF_SIZE};

/// Bits per axis of the Hilbert lattice used for shell ordering.
pub const HILBERT_BITS: u32 = 10;

pub const REPORT_SCHEMA: &str = include_str!("../schema/run_report.schema.json");

/// Fixed column set of the scaling-series CSV.
pub const SERIES_COLUMNS: [&str; 21] = [
    "n",
    "n_functions",
    "mode",
    "tau_2e",
    "tau_ovlp",
    "wall_seconds",
    "eri_quartets",
    "leaf_contractions",
    "tasks_culled",
    "case_A",
    "case_B",
    "case_C",
    "case_D",
    "case_E",
    "case_F1",
    "case_F2",
    "case_H",
    "case_SPARSE",
    "naive_symmetry_time_ratio",
    "naive_symmetry_eri_ratio",
    "error",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid value for {flag}: {message}")]
    Config { flag: &'static str, message: String },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    fn config(flag: &'static str, message: impl Into<String>) -> Self {
        HarnessError::Config {
            flag,
            message: message.into(),
        }
    }

    fn runtime(e: impl fmt::Display) -> Self {
        HarnessError::Runtime(e.to_string())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemSpec {
    Water { n: usize },
    Blob { n: usize },
    Xyz { path: PathBuf },
}

impl SystemSpec {
    pub fn n_molecules(&self) -> Option<usize> {
        match self {
            SystemSpec::Water { n } | SystemSpec::Blob { n } => Some(*n),
            SystemSpec::Xyz { .. } => None,
        }
    }

    pub fn with_size(&self, n: usize) -> SystemSpec {
        match self {
            SystemSpec::Blob { .. } => SystemSpec::Blob { n },
            _ => SystemSpec::Water { n },
        }
    }
}

impl FromStr for SystemSpec {
    type Err = String;

    /// `water:N`, `blob:N` or `xyz:PATH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("expected water:N or xyz:PATH, got '{s}'"))?;
        let count = || {
            arg.parse::<usize>()
                .map_err(|_| format!("bad molecule count '{arg}'"))
        };
        match kind {
            "water" => Ok(SystemSpec::Water { n: count()? }),
            "blob" => Ok(SystemSpec::Blob { n: count()? }),
            "xyz" if !arg.is_empty() => Ok(SystemSpec::Xyz {
                path: PathBuf::from(arg),
            }),
            _ => Err(format!("expected water:N or xyz:PATH, got '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Naive,
    Symmetry,
    Dense,
    DenseScreened,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Symmetry => "symmetry",
            Mode::Dense => "dense",
            Mode::DenseScreened => "dense-screened",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Mode::Naive),
            "symmetry" => Ok(Mode::Symmetry),
            "dense" => Ok(Mode::Dense),
            "dense-screened" => Ok(Mode::DenseScreened),
            _ => Err(format!(
                "unknown mode '{s}' (naive|symmetry|dense|dense-screened)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Hilbert,
    Input,
}

impl FromStr for Ordering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hilbert" => Ok(Ordering::Hilbert),
            "input" => Ok(Ordering::Input),
            _ => Err(format!("unknown ordering '{s}' (hilbert|input)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSpec,
    /// `None` turns bound-based culling off.
    pub tau_2e: Option<f64>,
    pub tau_ovlp: f64,
    pub leaf_size: usize,
    pub mode: Mode,
    pub bound: ScreeningMode,
    pub order: Ordering,
    pub density: DensityModel,
    pub seed: u64,
    /// 1 runs sequentially; 0 uses every core.
    pub threads: usize,
    /// Second mode run on the same inputs for a comparison report.
    pub reference: Option<Mode>,
    pub shell_table: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemSpec::Water { n: 10 },
            tau_2e: Some(1e-8),
            tau_ovlp: 1e-11,
            leaf_size: DEFAULT_LEAF_SIZE,
            mode: Mode::Symmetry,
            bound: ScreeningMode::Schwarz,
            order: Ordering::Hilbert,
            density: DensityModel::default(),
            seed: 1,
            threads: 1,
            reference: None,
            shell_table: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if let Some(t) = self.tau_2e {
            if !(t >= 0.0) {
                return Err(HarnessError::config(
                    "--tau-2e",
                    format!("must be >= 0, got {t}"),
                ));
            }
        }
        if !(self.tau_ovlp >= 0.0) {
            return Err(HarnessError::config(
                "--tau-ovlp",
                format!("must be >= 0, got {}", self.tau_ovlp),
            ));
        }
        if self.leaf_size < 1 {
            return Err(HarnessError::config("--leaf-size", "must be >= 1"));
        }
        if self.system.n_molecules() == Some(0) {
            return Err(HarnessError::config(
                "--system",
                "molecule count must be >= 1",
            ));
        }
        self.density
            .validate()
            .map_err(|e| HarnessError::config("--density", e.to_string()))?;
        if self.threads != 1 && !crate::traversal::parallel_available() {
            return Err(HarnessError::config(
                "--threads",
                "built without the `parallel` feature",
            ));
        }
        Ok(())
    }

    fn options(&self) -> ExchangeOptions {
        ExchangeOptions {
            tau_2e: self.tau_2e,
            mode: self.bound,
            log_quartets: false,
            parallel: self.threads != 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub setup_seconds: f64,
    /// Partition, pair-tree and density-tree construction.
    pub tree_seconds: f64,
    /// Driver traversal only.
    pub wall_seconds: f64,
    pub reference_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub n_atoms: usize,
    pub n_shells: usize,
    pub n_functions: usize,
    pub partition_depth: usize,
    pub counters: TraversalCounters,
    pub cases: Vec<CaseShare>,
    /// Frobenius norm of K.
    pub k_checksum: f64,
    pub culled_bound: Option<f64>,
    pub comparison: Option<ComparisonReport>,
    pub timing: Timing,
}

/// Everything a run produces; the report plus the matrices behind it.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub k: Array2<f64>,
    pub case_counts: CaseCounts,
}

struct Prepared {
    system: BasisSystem,
    density: Array2<f64>,
}

fn prepare(config: &RunConfig) -> Result<Prepared, HarnessError> {
    let table = match &config.shell_table {
        Some(path) => ShellTable::load(path)
            .map_err(|e| HarnessError::config("--shell-table", e.to_string()))?,
        None => ShellTable::builtin(),
    };
    let system = match &config.system {
        SystemSpec::Water { n } => {
            crate::basis::generate_cluster_with(*n, config.seed, ClusterModel::WaterLike, &table)
        }
        SystemSpec::Blob { n } => {
            crate::basis::generate_cluster_with(*n, config.seed, ClusterModel::UniformBlob, &table)
        }
        SystemSpec::Xyz { path } => load_xyz(path, &table),
    }
    .map_err(|e| HarnessError::config("--system", e.to_string()))?;
    let system = match config.order {
        Ordering::Hilbert => {
            hilbert_order(&system, HILBERT_BITS)
                .map_err(HarnessError::runtime)?
                .system
        }
        Ordering::Input => system,
    };
    let density = build_density(&system, &config.density)
        .map_err(|e| HarnessError::config("--density", e.to_string()))?;
    Ok(Prepared { system, density })
}

struct ModeResult {
    k: Array2<f64>,
    counters: TraversalCounters,
    cases: CaseCounts,
    culled_bound: Option<f64>,
    tree_seconds: f64,
}

fn run_mode(
    config: &RunConfig,
    mode: Mode,
    prep: &Prepared,
    table: &PairTable,
) -> Result<ModeResult, HarnessError> {
    let sys = &prep.system;
    match mode {
        Mode::Dense => {
            let k =
                dense_exchange_with(sys, table, &prep.density).map_err(HarnessError::runtime)?;
            let n = sys.n_functions() as u64;
            let counters = TraversalCounters {
                eri_shell_quartets: n.pow(4),
                ..Default::default()
            };
            Ok(ModeResult {
                k,
                counters,
                cases: CaseCounts::default(),
                culled_bound: None,
                tree_seconds: 0.0,
            })
        }
        Mode::DenseScreened => {
            let r = dense_exchange_screened_with(
                sys,
                table,
                &prep.density,
                config.tau_2e.unwrap_or(0.0),
                config.bound,
                true,
            )
            .map_err(HarnessError::runtime)?;
            let kept = r.kept.as_ref().map_or(0, |v| v.len() as u64);
            let n = sys.n_functions() as u64;
            let counters = TraversalCounters {
                eri_shell_quartets: kept,
                quartets_skipped: n.pow(4) - kept,
                ..Default::default()
            };
            Ok(ModeResult {
                k: r.k,
                counters,
                cases: CaseCounts::default(),
                culled_bound: Some(r.skipped_bound),
                tree_seconds: 0.0,
            })
        }
        Mode::Naive | Mode::Symmetry => {
            let t = Instant::now();
            let part = build_partition(sys, config.leaf_size)
                .map_err(|e| HarnessError::config("--leaf-size", e.to_string()))?;
            let pairs =
                crate::quadtree::build_pair_tree_with(sys, &part, config.tau_ovlp, table.clone())
                    .map_err(HarnessError::runtime)?;
            let pt = build_matrix_tree(&prep.density, &part, 0.0).map_err(HarnessError::runtime)?;
            let tree_seconds = t.elapsed().as_secs_f64();
            let opts = config.options();
            if mode == Mode::Naive {
                let r =
                    build_exchange_naive(sys, &pairs, &pt, &opts).map_err(HarnessError::runtime)?;
                Ok(ModeResult {
                    k: r.k,
                    counters: r.counters,
                    cases: CaseCounts::default(),
                    culled_bound: Some(r.culled_bound),
                    tree_seconds,
                })
            } else {
                let r = build_exchange_symmetric(sys, &pairs, &pt, &opts)
                    .map_err(HarnessError::runtime)?;
                let k = symmetrize_final(&r.result.k).map_err(HarnessError::runtime)?;
                Ok(ModeResult {
                    k,
                    counters: r.result.counters,
                    cases: r.cases,
                    culled_bound: Some(r.result.culled_bound),
                    tree_seconds,
                })
            }
        }
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    #[cfg(feature = "parallel")]
    if threads != 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(HarnessError::runtime)?;
        return Ok(pool.install(f));
    }
    let _ = threads;
    Ok(f())
}

/// Executes the configured driver and, if requested, a reference mode.
pub fn run(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let t0 = Instant::now();
    let prep = prepare(config)?;
    let table = PairTable::new(&prep.system);
    let setup_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let main = with_threads(config.threads, || {
        run_mode(config, config.mode, &prep, &table)
    })??;
    let wall_seconds = (t1.elapsed().as_secs_f64() - main.tree_seconds).max(0.0);
    let (comparison, reference_seconds) = match config.reference {
        Some(mode) => {
            let t2 = Instant::now();
            let r = with_threads(config.threads, || run_mode(config, mode, &prep, &table))??;
            let cmp = compare(&main.k, &r.k).map_err(HarnessError::runtime)?;
            (Some(cmp), Some(t2.elapsed().as_secs_f64()))
        }
        None => (None, None),
    };
    let depth = build_partition(&prep.system, config.leaf_size)
        .map(|p| p.depth())
        .unwrap_or(0);
    let report = RunReport {
        config: config.clone(),
        n_atoms: prep.system.atoms.len(),
        n_shells: prep.system.n_shells(),
        n_functions: prep.system.n_functions(),
        partition_depth: depth,
        counters: main.counters,
        cases: main.cases.shares(),
        k_checksum: frobenius(&main.k),
        culled_bound: main.culled_bound,
        comparison,
        timing: Timing {
            setup_seconds,
            tree_seconds: main.tree_seconds,
            wall_seconds,
            reference_seconds,
        },
    };
    Ok(RunOutput {
        report,
        k: main.k,
        case_counts: main.cases,
    })
}

pub fn report_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// One CSV row of a scaling series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub n: usize,
    pub n_functions: usize,
    pub mode: String,
    pub tau_2e: Option<f64>,
    pub tau_ovlp: f64,
    pub wall_seconds: f64,
    pub eri_quartets: u64,
    pub leaf_contractions: u64,
    pub tasks_culled: u64,
    pub case_a: u64,
    pub case_b: u64,
    pub case_c: u64,
    pub case_d: u64,
    pub case_e: u64,
    pub case_f1: u64,
    pub case_f2: u64,
    pub case_h: u64,
    pub case_sparse: u64,
    pub naive_symmetry_time_ratio: Option<f64>,
    pub naive_symmetry_eri_ratio: Option<f64>,
    pub error: Option<String>,
}

/// Screening regime `(tau_2e, tau_ovlp)`.
pub type Regime = (Option<f64>, f64);

fn row_from(n: usize, out: &RunOutput, regime: Regime) -> SeriesRow {
    let c = &out.report.counters;
    let t = out.case_counts.tasks;
    SeriesRow {
        n,
        n_functions: out.report.n_functions,
        mode: out.report.config.mode.name().to_string(),
        tau_2e: regime.0,
        tau_ovlp: regime.1,
        wall_seconds: out.report.timing.wall_seconds,
        eri_quartets: c.eri_shell_quartets,
        leaf_contractions: c.leaf_contractions,
        tasks_culled: c.tasks_culled_screening + c.tasks_culled_absent,
        case_a: t[0],
        case_b: t[1],
        case_c: t[2],
        case_d: t[3],
        case_e: t[4],
        case_f1: t[5],
        case_f2: t[6],
        case_h: t[7],
        case_sparse: t[8],
        naive_symmetry_time_ratio: None,
        naive_symmetry_eri_ratio: None,
        error: None,
    }
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, r: &SeriesRow) -> Result<(), HarnessError> {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
    w.write_record([
        r.n.to_string(),
        r.n_functions.to_string(),
        r.mode.clone(),
        r.tau_2e.map_or("off".to_string(), |v| format!("{v:e}")),
        format!("{:e}", r.tau_ovlp),
        format!("{:.6}", r.wall_seconds),
        r.eri_quartets.to_string(),
        r.leaf_contractions.to_string(),
        r.tasks_culled.to_string(),
        r.case_a.to_string(),
        r.case_b.to_string(),
        r.case_c.to_string(),
        r.case_d.to_string(),
        r.case_e.to_string(),
        r.case_f1.to_string(),
        r.case_f2.to_string(),
        r.case_h.to_string(),
        r.case_sparse.to_string(),
        opt(r.naive_symmetry_time_ratio),
        opt(r.naive_symmetry_eri_ratio),
        r.error.clone().unwrap_or_default(),
    ])
    .map_err(HarnessError::runtime)?;
    w.flush().map_err(HarnessError::runtime)
}

/// Runs `modes` for every size and regime, streaming rows to `out`.
///
/// The symmetry row carries the naive/symmetry time and quartet ratios
/// when both modes are in `modes`. A failing run ends the series with an
/// error record after the rows already written, and the error is
/// returned.
pub fn scaling_series<W: Write>(
    base: &RunConfig,
    sizes: &[usize],
    modes: &[Mode],
    regimes: &[Regime],
    out: W,
) -> Result<Vec<SeriesRow>, HarnessError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::config(
            "--series",
            "sizes must be non-empty and strictly ascending",
        ));
    }
    if sizes[0] == 0 {
        return Err(HarnessError::config("--series", "sizes must be >= 1"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_COLUMNS)
        .map_err(HarnessError::runtime)?;
    let mut rows = Vec::new();
    for &(tau_2e, tau_ovlp) in regimes {
        for &n in sizes {
            let mut naive: Option<SeriesRow> = None;
            for &mode in modes {
                let cfg = RunConfig {
                    system: base.system.with_size(n),
                    tau_2e,
                    tau_ovlp,
                    mode,
                    reference: None,
                    ..base.clone()
                };
                match run(&cfg) {
                    Ok(outp) => {
                        let mut row = row_from(n, &outp, (tau_2e, tau_ovlp));
                        if mode == Mode::Naive {
                            naive = Some(row.clone());
                        }
                        if let (Mode::Symmetry, Some(nv)) = (mode, naive.as_ref()) {
                            if row.wall_seconds > 0.0 {
                                row.naive_symmetry_time_ratio =
                                    Some(nv.wall_seconds / row.wall_seconds);
                            }
                            if row.eri_quartets > 0 {
                                row.naive_symmetry_eri_ratio =
                                    Some(nv.eri_quartets as f64 / row.eri_quartets as f64);
                            }
                        }
                        write_row(&mut w, &row)?;
                        rows.push(row);
                    }
                    Err(e) => {
                        let record = SeriesRow {
                            n,
                            n_functions: 0,
                            mode: "error".into(),
                            tau_2e,
                            tau_ovlp,
                            wall_seconds: 0.0,
                            eri_quartets: 0,
                            leaf_contractions: 0,
                            tasks_culled: 0,
                            case_a: 0,
                            case_b: 0,
                            case_c: 0,
                            case_d: 0,
                            case_e: 0,
                            case_f1: 0,
                            case_f2: 0,
                            case_h: 0,
                            case_sparse: 0,
                            naive_symmetry_time_ratio: None,
                            naive_symmetry_eri_ratio: None,
                            error: Some(format!("{} failed: {e}", mode.name())),
                        };
                        write_row(&mut w, &record)?;
                        return Err(e);
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Checks a series CSV against [`SERIES_COLUMNS`]: exact header, numeric
/// fields where expected, and an `error` row only as the final record.
pub fn validate_series_csv(text: &str) -> Result<usize, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != SERIES_COLUMNS {
        return Err(format!("unexpected header {header:?}"));
    }
    let records: Vec<csv::StringRecord> = r
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        if rec.len() != SERIES_COLUMNS.len() {
            return Err(format!("line {line}: {} fields", rec.len()));
        }
        if &rec[2] == "error" {
            if i + 1 != records.len() {
                return Err(format!("line {line}: error record before the end"));
            }
            if rec[20].is_empty() {
                return Err(format!("line {line}: error record without message"));
            }
            continue;
        }
        if Mode::from_str(&rec[2]).is_err() {
            return Err(format!("line {line}: bad mode '{}'", &rec[2]));
        }
        for (col, name) in SERIES_COLUMNS.iter().enumerate() {
            let v = &rec[col];
            let ok = match *name {
                "mode" | "error" => true,
                "tau_2e" => v == "off" || v.parse::<f64>().is_ok(),
                "naive_symmetry_time_ratio" | "naive_symmetry_eri_ratio" => {
                    v.is_empty() || v.parse::<f64>().is_ok()
                }
                "tau_ovlp" | "wall_seconds" => v.parse::<f64>().is_ok(),
                _ => v.parse::<u64>().is_ok(),
            };
            if !ok {
                return Err(format!("line {line}: bad {name} '{v}'"));
            }
        }
    }
    Ok(records.len())
}

/// Incremental log-log slopes of `y` against `x` between consecutive
/// points.
pub fn incremental_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (ys[1] / ys[0]).ln() / (xs[1] / xs[0]).ln())
        .collect()
}
