//! Naive hextree recursion over (bra pair, density block, ket pair) with
//! hierarchical screening and no permutational symmetry.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisSystem;
use crate::integrals::{eri_from_pairs, ScreeningMode};
use crate::quadtree::{slot, MatrixQuadtree, PairTree};
use crate::traversal::{execute, Accumulator};

#[derive(Debug, Error, PartialEq)]
pub enum ExchangeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("logic error: {0}")]
    Logic(String),
}

/// Cull iff the bound of the block is at or below `tau_2e`.
///
/// `literal` multiplies the diagonal norms as given, `schwarz` takes their
/// square roots (the Cauchy-Schwarz form).
pub fn screening_test(
    bra_norm: f64,
    p_norm: f64,
    ket_norm: f64,
    tau_2e: f64,
    mode: ScreeningMode,
) -> bool {
    mode.factor(bra_norm) * p_norm * mode.factor(ket_norm) <= tau_2e
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeOptions {
    /// Integral threshold; `None` disables bound-based culling entirely.
    pub tau_2e: Option<f64>,
    pub mode: ScreeningMode,
    /// Record every evaluated quartet `(μ, ν, λ, σ)`.
    pub log_quartets: bool,
    pub parallel: bool,
}

impl ExchangeOptions {
    pub fn new(tau_2e: f64) -> Self {
        ExchangeOptions {
            tau_2e: Some(tau_2e),
            ..Default::default()
        }
    }

    pub fn unscreened() -> Self {
        ExchangeOptions {
            tau_2e: None,
            ..Default::default()
        }
    }

    pub(crate) fn culls(&self, bra: f64, p: f64, ket: f64) -> bool {
        match self.tau_2e {
            Some(tau) => screening_test(bra, p, ket, tau, self.mode),
            None => false,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), ExchangeError> {
        match self.tau_2e {
            Some(t) if !(t >= 0.0) => Err(ExchangeError::InvalidArgument(format!(
                "tau_2e must be >= 0, got {t}"
            ))),
            _ => Ok(()),
        }
    }
}

impl Default for ExchangeOptions {
    fn default() -> Self {
        ExchangeOptions {
            tau_2e: Some(0.0),
            mode: ScreeningMode::Schwarz,
            log_quartets: false,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalCounters {
    pub tasks_visited: u64,
    pub tasks_expanded: u64,
    pub tasks_culled_screening: u64,
    /// Tasks dropped because a density block is absent or a pair node is
    /// pruned.
    pub tasks_culled_absent: u64,
    pub leaf_contractions: u64,
    pub eri_shell_quartets: u64,
    /// Quartet updates skipped by the per-quartet test inside leaves.
    pub quartets_skipped: u64,
    /// Individual density links dropped by screening while their task
    /// survived (symmetric driver only).
    pub links_culled_screening: u64,
}

impl TraversalCounters {
    pub fn merge(&mut self, o: &TraversalCounters) {
        self.tasks_visited += o.tasks_visited;
        self.tasks_expanded += o.tasks_expanded;
        self.tasks_culled_screening += o.tasks_culled_screening;
        self.tasks_culled_absent += o.tasks_culled_absent;
        self.leaf_contractions += o.leaf_contractions;
        self.eri_shell_quartets += o.eri_shell_quartets;
        self.quartets_skipped += o.quartets_skipped;
        self.links_culled_screening += o.links_culled_screening;
    }

    /// `visited = expanded + culled + leaves`.
    pub fn is_conserved(&self) -> bool {
        self.tasks_visited
            == self.tasks_expanded
                + self.tasks_culled_screening
                + self.tasks_culled_absent
                + self.leaf_contractions
    }
}

#[derive(Clone, Debug)]
pub struct ExchangeResult {
    pub k: Array2<f64>,
    pub counters: TraversalCounters,
    /// Sum of rigorous max-abs bounds on every contribution that was
    /// culled or skipped; `|K - K_exact|_max` never exceeds it.
    pub culled_bound: f64,
    pub quartet_log: Option<Vec<[u32; 4]>>,
}

/// Largest screening product and ledger sum over a run of ket quartets that
/// share a bra pair. A bra pair whose factor times `max` clears the bulk
/// threshold skips the whole run with the same outcome as the per-quartet
/// test; the margin absorbs the different rounding of the two products.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct KetRun {
    pub max: f64,
    pub sum: f64,
    pub count: u64,
}

impl KetRun {
    pub(crate) fn add(&mut self, p_abs: f64, d_ket: f64, mode: ScreeningMode) {
        self.max = self.max.max(p_abs * mode.factor(d_ket));
        self.sum += p_abs * d_ket.sqrt();
        self.count += 1;
    }

    /// Skips the run if every quartet in it would be culled.
    pub(crate) fn skip(&self, d_bra: f64, opts: &ExchangeOptions, acc: &mut Acc) -> bool {
        let Some(tau) = opts.tau_2e else { return false };
        if opts.mode.factor(d_bra) * self.max > tau * (1.0 - 1e-12) {
            return false;
        }
        acc.counters.quartets_skipped += self.count;
        acc.culled_bound += 0.5 * d_bra.sqrt() * self.sum;
        true
    }
}

pub(crate) struct Acc {
    pub k: Array2<f64>,
    pub counters: TraversalCounters,
    pub culled_bound: f64,
    pub log: Option<Vec<[u32; 4]>>,
}

impl Acc {
    pub(crate) fn new(n: usize, log: bool) -> Self {
        Acc {
            k: Array2::zeros((n, n)),
            counters: TraversalCounters::default(),
            culled_bound: 0.0,
            log: log.then(Vec::new),
        }
    }

    pub(crate) fn into_result(self) -> ExchangeResult {
        let mut log = self.log;
        if let Some(l) = log.as_mut() {
            l.sort_unstable();
        }
        ExchangeResult {
            k: self.k,
            counters: self.counters,
            culled_bound: self.culled_bound,
            quartet_log: log,
        }
    }
}

impl Accumulator for Acc {
    fn merge(mut self, other: Self) -> Self {
        self.k += &other.k;
        self.counters.merge(&other.counters);
        self.culled_bound += other.culled_bound;
        if let (Some(a), Some(b)) = (self.log.as_mut(), other.log) {
            a.extend(b);
        }
        self
    }
}

/// Rigorous max-abs bound on `½ Σ P_νλ (μν|λσ)` over a block, from the
/// density norm and the diagonal-integral traces of the two pair spans.
#[inline]
pub(crate) fn block_bound(p_norm: f64, bra_trace: f64, ket_trace: f64) -> f64 {
    0.5 * p_norm * (bra_trace * ket_trace).sqrt()
}

pub(crate) fn check_inputs(
    system: &BasisSystem,
    pairs: &PairTree,
    p: &MatrixQuadtree,
) -> Result<(), ExchangeError> {
    if system.n_functions() != system.n_shells() {
        return Err(ExchangeError::InvalidArgument(
            "only s shells are supported".into(),
        ));
    }
    if pairs.partition != p.partition || pairs.partition.n_functions != system.n_functions() {
        return Err(ExchangeError::InvalidArgument(
            "pair tree, density tree and system use different partitions".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Task {
    bra: usize,
    p: Option<usize>,
    ket: usize,
}

/// `K_μσ = -½ Σ_νλ P_νλ (μν|λσ)` by hextree recursion.
///
/// Each task `(bra (M,N), P(N,L), ket (L,S))` feeding `K(M,S)` expands into
/// the child triples over all child spans, in bra, density, ket order.
/// Inside leaves every quartet passes the same per-quartet test as
/// [`crate::oracle::dense_exchange_screened`].
pub fn build_exchange_naive(
    system: &BasisSystem,
    pairs: &PairTree,
    p: &MatrixQuadtree,
    opts: &ExchangeOptions,
) -> Result<ExchangeResult, ExchangeError> {
    check_inputs(system, pairs, p)?;
    opts.validate()?;
    let n = system.n_functions();
    let part = &pairs.partition;
    let table = &pairs.table;
    let visit = |t: &Task, acc: &mut Acc| -> Vec<Task> {
        acc.counters.tasks_visited += 1;
        let bra = pairs.node(t.bra);
        let ket = pairs.node(t.ket);
        let Some(pid) = t.p else {
            acc.counters.tasks_culled_absent += 1;
            return Vec::new();
        };
        let pv = p.view(pid);
        if bra.pruned || ket.pruned {
            acc.counters.tasks_culled_absent += 1;
            acc.culled_bound += block_bound(pv.norm(), bra.trace, ket.trace);
            return Vec::new();
        }
        if opts.culls(bra.diag_norm, pv.norm(), ket.diag_norm) {
            acc.counters.tasks_culled_screening += 1;
            acc.culled_bound += block_bound(pv.norm(), bra.trace, ket.trace);
            return Vec::new();
        }
        let level = bra.level;
        let m = part.span(level, bra.row);
        let nu = part.span(level, bra.col);
        let l = part.span(level, ket.row);
        let s = part.span(level, ket.col);
        if part.is_leaf_level(level) {
            acc.counters.leaf_contractions += 1;
            let (nu0, l0) = (nu.functions.start, l.functions.start);
            let runs: Vec<Vec<KetRun>> = nu
                .shells
                .clone()
                .map(|nv| {
                    l.shells
                        .clone()
                        .map(|la| {
                            let pa = pv.get(nv - nu0, la - l0).abs();
                            let mut run = KetRun::default();
                            for sg in s.shells.clone() {
                                run.add(pa, table.diag(la, sg), opts.mode);
                            }
                            run
                        })
                        .collect()
                })
                .collect();
            for mu in m.shells.clone() {
                for nv in nu.shells.clone() {
                    let d_bra = table.diag(mu, nv);
                    for la in l.shells.clone() {
                        if runs[nv - nu0][la - l0].skip(d_bra, opts, acc) {
                            continue;
                        }
                        let pval = pv.get(nv - nu0, la - l0);
                        for sg in s.shells.clone() {
                            let d_ket = table.diag(la, sg);
                            if opts.culls(d_bra, pval.abs(), d_ket) {
                                acc.counters.quartets_skipped += 1;
                                acc.culled_bound += 0.5 * pval.abs() * (d_bra * d_ket).sqrt();
                                continue;
                            }
                            let eri = eri_from_pairs(table.pair(mu, nv), table.pair(la, sg));
                            acc.counters.eri_shell_quartets += 1;
                            acc.k[[mu, sg]] -= 0.5 * pval * eri;
                            if let Some(log) = acc.log.as_mut() {
                                log.push([mu as u32, nv as u32, la as u32, sg as u32]);
                            }
                        }
                    }
                }
            }
            return Vec::new();
        }
        acc.counters.tasks_expanded += 1;
        let mut children = Vec::with_capacity(16);
        for i in 0..m.children.len() {
            for j in 0..nu.children.len() {
                let bc = bra.children[slot(i, j)].expect("pair child");
                for k in 0..l.children.len() {
                    let pc = pv.child(j, k).map(|v| v.node);
                    for q in 0..s.children.len() {
                        let kc = ket.children[slot(k, q)].expect("pair child");
                        children.push(Task {
                            bra: bc,
                            p: pc,
                            ket: kc,
                        });
                    }
                }
            }
        }
        children
    };
    let root = Task {
        bra: pairs.root(),
        p: Some(0),
        ket: pairs.root(),
    };
    let acc = execute(
        root,
        opts.parallel,
        || Acc::new(n, opts.log_quartets),
        visit,
    );
    Ok(acc.into_result())
}
