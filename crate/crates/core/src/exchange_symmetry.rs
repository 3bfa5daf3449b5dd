//! Symmetry-enhanced recursion over canonical bra and ket pairs.
//!
//! Tasks pair a bra node `(X0, X1)` with a ket node `(Y0, Y1)`, both with
//! `X0 ≤ X1`, `Y0 ≤ Y1` in span order. Each quartet `(x0 x1|y0 y1)` is
//! evaluated once and feeds up to four updates, indexed by the bits
//! `(b, k)`:
//!
//! ```text
//! K[x_b, y_(1-k)] -= ½ P[x_(1-b), y_k] (x0 x1|y0 y1)
//! ```
//!
//! `b = 1` needs `x0 ≠ x1` and `k = 1` needs `y0 ≠ y1`. A density link is
//! one such update at span granularity; a diagonal bra or ket node folds
//! its swapped updates into the `b = 0` (or `k = 0`) link, since both read
//! the same density block.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::exchange_naive::{
    block_bound, check_inputs, Acc, ExchangeError, ExchangeOptions, ExchangeResult, KetRun,
    TraversalCounters,
};
use crate::integrals::eri_from_pairs;
use crate::quadtree::{slot, MatrixQuadtree, PairTree, Partition};
use crate::traversal::{execute, Accumulator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseId {
    /// Four distinct spans, bra and ket not interleaved: four updates.
    A,
    /// Four distinct spans with the bra interleaving or nesting the ket.
    B,
    /// Bra and ket share a span across the bar (`X1 = Y0` or `X0 = Y1`).
    C,
    /// Bra equals ket.
    D,
    /// Bra and ket share a span on the same side (`X0 = Y0` or `X1 = Y1`).
    E,
    /// Off-diagonal bra, diagonal ket: two updates.
    F1,
    /// Diagonal bra, off-diagonal ket: two updates.
    F2,
    /// Diagonal bra and ket: one update.
    H,
    /// Some density link of the full set is absent.
    Sparse,
}

impl CaseId {
    pub const ALL: [CaseId; 9] = [
        CaseId::A,
        CaseId::B,
        CaseId::C,
        CaseId::D,
        CaseId::E,
        CaseId::F1,
        CaseId::F2,
        CaseId::H,
        CaseId::Sparse,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::A => "A",
            CaseId::B => "B",
            CaseId::C => "C",
            CaseId::D => "D",
            CaseId::E => "E",
            CaseId::F1 => "F1",
            CaseId::F2 => "F2",
            CaseId::H => "H",
            CaseId::Sparse => "SPARSE",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One update of a task at span granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub bits: (u8, u8),
    /// `(row span, col span)` of the K block written.
    pub sink: (usize, usize),
    /// `(row span, col span)` of the density block read.
    pub source: (usize, usize),
    /// The density block lies below the diagonal and is read transposed
    /// from upper-triangle storage.
    pub source_transposed: bool,
    /// Updates folded into this link: 2 when a diagonal bra or ket
    /// contributes both orientations through one density block.
    pub weight: u8,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryCase {
    pub id: CaseId,
    pub links: Vec<Link>,
}

/// Span relation of a canonical task; spans are indices within one
/// partition level.
pub fn relation_case(bra: (usize, usize), ket: (usize, usize)) -> CaseId {
    let (x0, x1) = bra;
    let (y0, y1) = ket;
    debug_assert!(x0 <= x1 && y0 <= y1);
    match (x0 == x1, y0 == y1) {
        (true, true) => CaseId::H,
        (false, true) => CaseId::F1,
        (true, false) => CaseId::F2,
        (false, false) => {
            if bra == ket {
                CaseId::D
            } else if x1 == y0 || x0 == y1 {
                CaseId::C
            } else if x0 == y0 || x1 == y1 {
                CaseId::E
            } else if x1 < y0 || y1 < x0 {
                CaseId::A
            } else {
                CaseId::B
            }
        }
    }
}

/// Links `(b, k)` a task with these spans carries.
pub fn expected_links(bra: (usize, usize), ket: (usize, usize)) -> Vec<(u8, u8)> {
    let bs: &[u8] = if bra.0 == bra.1 { &[0] } else { &[0, 1] };
    let ks: &[u8] = if ket.0 == ket.1 { &[0] } else { &[0, 1] };
    bs.iter()
        .flat_map(|&b| ks.iter().map(move |&k| (b, k)))
        .collect()
}

/// Classifies a canonical task. `valid(b, k)` reports whether the density
/// block of link `(b, k)` is present.
pub fn classify_quartet(
    bra: (usize, usize),
    ket: (usize, usize),
    valid: impl Fn(u8, u8) -> bool,
) -> Result<SymmetryCase, ExchangeError> {
    if bra.0 > bra.1 || ket.0 > ket.1 {
        return Err(ExchangeError::Logic(format!(
            "non-canonical task bra {bra:?} ket {ket:?}"
        )));
    }
    let x = [bra.0, bra.1];
    let y = [ket.0, ket.1];
    let links: Vec<Link> = expected_links(bra, ket)
        .into_iter()
        .map(|(b, k)| {
            let source = (x[1 - b as usize], y[k as usize]);
            let mut weight = 1;
            if bra.0 == bra.1 {
                weight *= 2;
            }
            if ket.0 == ket.1 {
                weight *= 2;
            }
            Link {
                bits: (b, k),
                sink: (x[b as usize], y[1 - k as usize]),
                source,
                source_transposed: source.0 > source.1,
                weight,
                valid: valid(b, k),
            }
        })
        .collect();
    let id = if links.iter().all(|l| l.valid) {
        relation_case(bra, ket)
    } else {
        CaseId::Sparse
    };
    Ok(SymmetryCase { id, links })
}

/// Per-case occurrences: tasks dispatched and leaf contractions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub tasks: [u64; 9],
    pub leaf_contractions: [u64; 9],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseShare {
    pub case: String,
    pub tasks: u64,
    pub task_percent: f64,
    pub leaf_contractions: u64,
    pub leaf_percent: f64,
}

impl CaseCounts {
    pub fn total_tasks(&self) -> u64 {
        self.tasks.iter().sum()
    }

    pub fn merge(&mut self, o: &CaseCounts) {
        for i in 0..9 {
            self.tasks[i] += o.tasks[i];
            self.leaf_contractions[i] += o.leaf_contractions[i];
        }
    }

    pub fn get(&self, case: CaseId) -> u64 {
        self.tasks[case.index()]
    }

    pub fn shares(&self) -> Vec<CaseShare> {
        let tt = self.total_tasks().max(1) as f64;
        let tl = self.leaf_contractions.iter().sum::<u64>().max(1) as f64;
        CaseId::ALL
            .iter()
            .map(|&c| CaseShare {
                case: c.name().to_string(),
                tasks: self.tasks[c.index()],
                task_percent: 100.0 * self.tasks[c.index()] as f64 / tt,
                leaf_contractions: self.leaf_contractions[c.index()],
                leaf_percent: 100.0 * self.leaf_contractions[c.index()] as f64 / tl,
            })
            .collect()
    }

    /// `case,count,percent` over dispatched tasks.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["case", "count", "percent", "leaf_count", "leaf_percent"])
            .expect("in-memory write");
        for s in self.shares() {
            w.write_record([
                s.case.clone(),
                s.tasks.to_string(),
                format!("{:.4}", s.task_percent),
                s.leaf_contractions.to_string(),
                format!("{:.4}", s.leaf_percent),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }
}

#[derive(Clone, Debug)]
pub struct SymmetricResult {
    pub result: ExchangeResult,
    pub cases: CaseCounts,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LinkState {
    p: Option<usize>,
    active: bool,
}

const NO_LINK: LinkState = LinkState {
    p: None,
    active: false,
};

#[derive(Clone, Copy, Debug)]
struct Task {
    bra: usize,
    ket: usize,
    /// Indexed by `b * 2 + k`.
    links: [LinkState; 4],
}

struct SymAcc {
    inner: Acc,
    cases: CaseCounts,
}

impl Accumulator for SymAcc {
    fn merge(mut self, other: Self) -> Self {
        self.inner = self.inner.merge(other.inner);
        self.cases.merge(&other.cases);
        self
    }
}

/// Child link `(b, k)` reads through the parent link returned here.
#[inline]
fn parent_link(b: usize, k: usize, bra_diag: bool, ket_diag: bool) -> usize {
    let pb = if bra_diag { 0 } else { b };
    let pk = if ket_diag { 0 } else { k };
    pb * 2 + pk
}

/// Canonical children of a pair node: all combinations off the diagonal,
/// `i ≤ j` on it.
fn canonical_children(part: &Partition, pairs: &PairTree, node: usize) -> Vec<usize> {
    let n = pairs.node(node);
    let rows = part.span(n.level, n.row).children.len();
    let cols = part.span(n.level, n.col).children.len();
    let mut out = Vec::with_capacity(4);
    for i in 0..rows {
        for j in 0..cols {
            if n.row == n.col && i > j {
                continue;
            }
            out.push(n.children[slot(i, j)].expect("pair child"));
        }
    }
    out
}

/// Exchange matrix using 4-fold permutational symmetry.
///
/// Every quartet in the canonical space is evaluated at most once. The
/// density block of each link is screened on its own; a task is dropped
/// once no link survives, which is the level test on the largest
/// participating density norm. Inside leaves each update passes the same
/// per-quartet test as the naive driver, so both produce the same K.
pub fn build_exchange_symmetric(
    system: &BasisSystem,
    pairs: &PairTree,
    p: &MatrixQuadtree,
    opts: &ExchangeOptions,
) -> Result<SymmetricResult, ExchangeError> {
    check_inputs(system, pairs, p)?;
    opts.validate()?;
    let n = system.n_functions();
    let part = &pairs.partition;
    let visit = |t: &Task, acc: &mut SymAcc| -> Vec<Task> {
        let c = &mut acc.inner.counters;
        c.tasks_visited += 1;
        let bra = pairs.node(t.bra);
        let ket = pairs.node(t.ket);
        let level = bra.level;
        let bra_spans = (bra.row, bra.col);
        let ket_spans = (ket.row, ket.col);
        let expected = expected_links(bra_spans, ket_spans);
        if bra.pruned || ket.pruned {
            c.tasks_culled_absent += 1;
            for &(b, k) in &expected {
                let l = t.links[b as usize * 2 + k as usize];
                if let (Some(pid), true) = (l.p, l.active) {
                    acc.inner.culled_bound += block_bound(p.view(pid).norm(), bra.trace, ket.trace);
                }
            }
            return Vec::new();
        }
        let mut links = t.links;
        let mut any_valid = false;
        let mut any_active = false;
        for &(b, k) in &expected {
            let l = &mut links[b as usize * 2 + k as usize];
            let Some(pid) = l.p else { continue };
            any_valid = true;
            if !l.active {
                continue;
            }
            let pn = p.view(pid).norm();
            if opts.culls(bra.diag_norm, pn, ket.diag_norm) {
                l.active = false;
                c.links_culled_screening += 1;
                acc.inner.culled_bound += block_bound(pn, bra.trace, ket.trace);
            } else {
                any_active = true;
            }
        }
        if !any_valid {
            c.tasks_culled_absent += 1;
            return Vec::new();
        }
        if !any_active {
            c.tasks_culled_screening += 1;
            // the links just culled were counted per link as well
            return Vec::new();
        }
        let case = match classify_quartet(bra_spans, ket_spans, |b, k| {
            links[b as usize * 2 + k as usize].p.is_some()
        }) {
            Ok(case) => case.id,
            Err(e) => panic!("{e}"),
        };
        acc.cases.tasks[case.index()] += 1;
        let bra_diag = bra.row == bra.col;
        let ket_diag = ket.row == ket.col;
        if part.is_leaf_level(level) {
            c.leaf_contractions += 1;
            acc.cases.leaf_contractions[case.index()] += 1;
            contract_leaf(
                part,
                pairs,
                p,
                opts,
                level,
                bra_spans,
                ket_spans,
                &links,
                &mut acc.inner,
            );
            return Vec::new();
        }
        c.tasks_expanded += 1;
        let bra_kids = canonical_children(part, pairs, t.bra);
        let ket_kids = canonical_children(part, pairs, t.ket);
        let mut children = Vec::with_capacity(bra_kids.len() * ket_kids.len());
        for &bc in &bra_kids {
            let bn = pairs.node(bc);
            let x = [bn.row, bn.col];
            for &kc in &ket_kids {
                let kn = pairs.node(kc);
                let y = [kn.row, kn.col];
                let mut child_links = [NO_LINK; 4];
                for (b, k) in expected_links((x[0], x[1]), (y[0], y[1])) {
                    let (b, k) = (b as usize, k as usize);
                    let parent = links[parent_link(b, k, bra_diag, ket_diag)];
                    let pc = parent.p.and_then(|pid| {
                        let r = part.span(level + 1, x[1 - b]).index_in_parent;
                        let cc = part.span(level + 1, y[k]).index_in_parent;
                        p.view(pid).child(r, cc).map(|v| v.node)
                    });
                    child_links[b * 2 + k] = LinkState {
                        p: pc,
                        active: parent.active && pc.is_some(),
                    };
                }
                children.push(Task {
                    bra: bc,
                    ket: kc,
                    links: child_links,
                });
            }
        }
        children
    };
    let root_links = [
        LinkState {
            p: Some(0),
            active: true,
        },
        NO_LINK,
        NO_LINK,
        NO_LINK,
    ];
    let root = Task {
        bra: pairs.root(),
        ket: pairs.root(),
        links: root_links,
    };
    let acc = execute(
        root,
        opts.parallel,
        || SymAcc {
            inner: Acc::new(n, opts.log_quartets),
            cases: CaseCounts::default(),
        },
        visit,
    );
    Ok(SymmetricResult {
        result: acc.inner.into_result(),
        cases: acc.cases,
    })
}

#[allow(clippy::too_many_arguments)]
fn contract_leaf(
    part: &Partition,
    pairs: &PairTree,
    p: &MatrixQuadtree,
    opts: &ExchangeOptions,
    level: usize,
    bra: (usize, usize),
    ket: (usize, usize),
    links: &[LinkState; 4],
    acc: &mut Acc,
) {
    let table = &pairs.table;
    let bra_diag = bra.0 == bra.1;
    let ket_diag = ket.0 == ket.1;
    let xs = [
        part.span(level, bra.0).shells.clone(),
        part.span(level, bra.1).shells.clone(),
    ];
    let ys = [
        part.span(level, ket.0).shells.clone(),
        part.span(level, ket.1).shells.clone(),
    ];
    // density view, row origin and column origin per link
    let views: Vec<Option<(crate::quadtree::MatrixView<'_>, usize, usize)>> = (0..4)
        .map(|li| {
            let l = links[li];
            if !l.active {
                return None;
            }
            let v = p.view(l.p?);
            Some((
                v,
                v.row_span().functions.start,
                v.col_span().functions.start,
            ))
        })
        .collect();
    let ny = [ys[0].len(), ys[1].len()];
    let ket_pair = |k: usize, yk: usize, yo: usize| if k == 0 { (yk, yo) } else { (yo, yk) };
    let ket_valid =
        |k: usize, y0: usize, y1: usize| !((ket_diag && y1 < y0) || (k == 1 && y0 == y1));
    // per link, source row and fixed ket index: the run over the other ket index
    let mut runs: [Vec<KetRun>; 4] = Default::default();
    if opts.tau_2e.is_some() {
        for b in 0..2 {
            for k in 0..2 {
                let Some((v, r0, c0)) = views[parent_link(b, k, bra_diag, ket_diag)] else {
                    continue;
                };
                let mut rs = Vec::with_capacity(xs[1 - b].len() * ny[k]);
                for r in xs[1 - b].clone() {
                    for yk in ys[k].clone() {
                        let pa = v.get(r - r0, yk - c0).abs();
                        let mut run = KetRun::default();
                        for yo in ys[1 - k].clone() {
                            let (y0, y1) = ket_pair(k, yk, yo);
                            if ket_valid(k, y0, y1) {
                                run.add(pa, table.diag(y0, y1), opts.mode);
                            }
                        }
                        rs.push(run);
                    }
                }
                runs[b * 2 + k] = rs;
            }
        }
    }
    let mut masks = vec![0u8; ny[0] * ny[1]];
    let mut pvals = vec![[0.0f64; 4]; ny[0] * ny[1]];
    for x0 in xs[0].clone() {
        for x1 in xs[1].clone() {
            if bra_diag && x1 < x0 {
                continue;
            }
            let d_bra = table.diag(x0, x1);
            let x = [x0, x1];
            masks.fill(0);
            let mut any = false;
            for b in 0..2 {
                if b == 1 && x0 == x1 {
                    continue;
                }
                for k in 0..2 {
                    let Some((v, r0, c0)) = views[parent_link(b, k, bra_diag, ket_diag)] else {
                        continue;
                    };
                    let li = b * 2 + k;
                    let r = x[1 - b];
                    for yk in ys[k].clone() {
                        let run = runs[li].get((r - xs[1 - b].start) * ny[k] + yk - ys[k].start);
                        if run.is_some_and(|run| run.skip(d_bra, opts, acc)) {
                            continue;
                        }
                        let pval = v.get(r - r0, yk - c0);
                        for yo in ys[1 - k].clone() {
                            let (y0, y1) = ket_pair(k, yk, yo);
                            if !ket_valid(k, y0, y1) {
                                continue;
                            }
                            let d_ket = table.diag(y0, y1);
                            if opts.culls(d_bra, pval.abs(), d_ket) {
                                acc.counters.quartets_skipped += 1;
                                acc.culled_bound += 0.5 * pval.abs() * (d_bra * d_ket).sqrt();
                                continue;
                            }
                            let q = (y0 - ys[0].start) * ny[1] + y1 - ys[1].start;
                            masks[q] |= 1 << li;
                            pvals[q][li] = pval;
                            any = true;
                        }
                    }
                }
            }
            if !any {
                continue;
            }
            for y0 in ys[0].clone() {
                for y1 in ys[1].clone() {
                    let q = (y0 - ys[0].start) * ny[1] + y1 - ys[1].start;
                    let mask = masks[q];
                    if mask == 0 {
                        continue;
                    }
                    let eri = eri_from_pairs(table.pair(x0, x1), table.pair(y0, y1));
                    acc.counters.eri_shell_quartets += 1;
                    if let Some(log) = acc.log.as_mut() {
                        log.push([x0 as u32, x1 as u32, y0 as u32, y1 as u32]);
                    }
                    let y = [y0, y1];
                    for li in 0..4 {
                        if mask & (1 << li) != 0 {
                            acc.k[[x[li / 2], y[1 - li % 2]]] -= 0.5 * pvals[q][li] * eri;
                        }
                    }
                }
            }
        }
    }
}

/// `(K + Kᵀ)/2`, refusing inputs whose asymmetry exceeds `1e-10`.
pub fn symmetrize_final(k_raw: &Array2<f64>) -> Result<Array2<f64>, ExchangeError> {
    let n = k_raw.nrows();
    if k_raw.ncols() != n {
        return Err(ExchangeError::InvalidArgument("K must be square".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((k_raw[[i, j]] - k_raw[[j, i]]).abs());
        }
    }
    if worst > 1e-10 {
        return Err(ExchangeError::Logic(format!(
            "K asymmetric by {worst:e}; a symmetry update is missing"
        )));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        0.5 * (k_raw[[i, j]] + k_raw[[j, i]])
    }))
}

/// Quartets in the canonical space with screening off: `(T(T+1)/2)²` with
/// `T` the number of functions.
pub fn canonical_quartet_count(n_functions: u64) -> u64 {
    let pairs = n_functions * (n_functions + 1) / 2;
    pairs * pairs
}

impl SymmetricResult {
    pub fn counters(&self) -> &TraversalCounters {
        &self.result.counters
    }
}
