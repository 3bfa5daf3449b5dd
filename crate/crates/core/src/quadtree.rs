//! Ragged-bisection partitions, matrix quadtrees and the shell-pair
//! quadtree used for hierarchical screening.

use std::fmt::Write as _;
use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use thiserror::Error;

use crate::basis::BasisSystem;
use crate::integrals::{block_norm_from_pairs, overlap, ShellPairData};

/// Default maximum number of functions in a leaf span.
pub const DEFAULT_LEAF_SIZE: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A contiguous run of shells and the functions they carry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub shells: Range<usize>,
    pub functions: Range<usize>,
    /// Index of the enclosing span one level up.
    pub parent: Option<usize>,
    /// Position inside the parent's child list.
    pub index_in_parent: usize,
    /// Indices one level down; a span that cannot be split has itself as
    /// its only child.
    pub children: Vec<usize>,
}

impl Span {
    pub fn n_functions(&self) -> usize {
        self.functions.len()
    }

    /// `first-last` function range, inclusive.
    pub fn label(&self) -> String {
        format!("{}-{}", self.functions.start, self.functions.end - 1)
    }
}

/// Level-synchronous bisection of the shell list. Every level covers all
/// shells; leaves are the last level.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub levels: Vec<Vec<Span>>,
    pub leaf_size: usize,
    pub n_functions: usize,
}

impl Partition {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn span(&self, level: usize, index: usize) -> &Span {
        &self.levels[level][index]
    }

    pub fn leaves(&self) -> &[Span] {
        &self.levels[self.depth()]
    }

    pub fn is_leaf_level(&self, level: usize) -> bool {
        level == self.depth()
    }
}

/// Bisects spans until every span holds at most `leaf_size` functions.
///
/// A span of `n` functions is cut at the shell boundary nearest to
/// `⌈n/2⌉` functions, the left boundary winning ties, so 13 single-function
/// shells split 7/6. All spans of a level are split together so leaves sit
/// at a common depth.
pub fn build_partition(system: &BasisSystem, leaf_size: usize) -> Result<Partition, TreeError> {
    if system.shells.is_empty() {
        return Err(TreeError::InvalidArgument("system has no shells".into()));
    }
    let max_shell = system.max_shell_size();
    if leaf_size < max_shell.max(1) {
        return Err(TreeError::InvalidArgument(format!(
            "leaf_size {leaf_size} is smaller than the largest shell ({max_shell} functions)"
        )));
    }
    let offsets: Vec<usize> = system
        .shells
        .iter()
        .map(|s| s.function_offset)
        .chain(std::iter::once(system.n_functions()))
        .collect();
    let root = Span {
        shells: 0..system.shells.len(),
        functions: 0..system.n_functions(),
        parent: None,
        index_in_parent: 0,
        children: Vec::new(),
    };
    let mut levels = vec![vec![root]];
    while levels
        .last()
        .unwrap()
        .iter()
        .any(|s| s.n_functions() > leaf_size)
    {
        let current = levels.last_mut().unwrap();
        let mut next = Vec::with_capacity(2 * current.len());
        for (pi, span) in current.iter_mut().enumerate() {
            let pieces = match split_point(&span.shells, &offsets) {
                Some(cut) => vec![span.shells.start..cut, cut..span.shells.end],
                None => vec![span.shells.clone()],
            };
            for (ci, shells) in pieces.into_iter().enumerate() {
                span.children.push(next.len());
                next.push(Span {
                    functions: offsets[shells.start]..offsets[shells.end],
                    shells,
                    parent: Some(pi),
                    index_in_parent: ci,
                    children: Vec::new(),
                });
            }
        }
        levels.push(next);
    }
    Ok(Partition {
        levels,
        leaf_size,
        n_functions: system.n_functions(),
    })
}

fn split_point(shells: &Range<usize>, offsets: &[usize]) -> Option<usize> {
    if shells.len() < 2 {
        return None;
    }
    let first = offsets[shells.start];
    let n = offsets[shells.end] - first;
    let target = n.div_ceil(2);
    // strict < keeps the leftmost boundary on ties
    let mut best: Option<(usize, usize)> = None;
    for cut in shells.start + 1..shells.end {
        let left = offsets[cut] - first;
        let dist = left.abs_diff(target);
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((cut, dist));
        }
    }
    best.map(|(cut, _)| cut)
}

/// Child slot of the pair `(i, j)` of row/column child positions.
#[inline]
pub fn slot(i: usize, j: usize) -> usize {
    i * 2 + j
}

#[derive(Clone, Debug)]
pub struct MatrixNode {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub norm: f64,
    pub children: [Option<usize>; 4],
    /// Dense block, present on leaf-level nodes only.
    pub block: Option<Array2<f64>>,
}

/// Quadtree over a dense matrix following a [`Partition`] on both axes.
/// An absent child stands for an exactly zero block (or one dropped by the
/// build threshold).
#[derive(Clone, Debug)]
pub struct MatrixQuadtree {
    pub nodes: Vec<MatrixNode>,
    pub partition: Partition,
    pub zero_drop: f64,
}

pub fn build_matrix_tree(
    dense: &Array2<f64>,
    partition: &Partition,
    zero_drop: f64,
) -> Result<MatrixQuadtree, TreeError> {
    let n = partition.n_functions;
    if dense.dim() != (n, n) {
        return Err(TreeError::InvalidArgument(format!(
            "matrix is {}x{}, partition covers {n} functions",
            dense.nrows(),
            dense.ncols()
        )));
    }
    if !(zero_drop >= 0.0) {
        return Err(TreeError::InvalidArgument(format!(
            "zero_drop must be >= 0, got {zero_drop}"
        )));
    }
    let mut tree = MatrixQuadtree {
        nodes: Vec::new(),
        partition: partition.clone(),
        zero_drop,
    };
    let root = tree.build_node(dense.view(), 0, 0, 0, true);
    debug_assert_eq!(root, Some(0));
    Ok(tree)
}

impl MatrixQuadtree {
    fn build_node(
        &mut self,
        dense: ArrayView2<f64>,
        level: usize,
        row: usize,
        col: usize,
        keep: bool,
    ) -> Option<usize> {
        let rs = self.partition.span(level, row).clone();
        let cs = self.partition.span(level, col).clone();
        let id = self.nodes.len();
        self.nodes.push(MatrixNode {
            level,
            row,
            col,
            norm: 0.0,
            children: [None; 4],
            block: None,
        });
        let norm = if self.partition.is_leaf_level(level) {
            let block = dense
                .slice(s![rs.functions.clone(), cs.functions.clone()])
                .to_owned();
            let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            self.nodes[id].block = Some(block);
            norm
        } else {
            let mut sum = 0.0;
            for (i, &r) in rs.children.iter().enumerate() {
                for (j, &c) in cs.children.iter().enumerate() {
                    if let Some(child) = self.build_node(dense, level + 1, r, c, false) {
                        sum += self.nodes[child].norm * self.nodes[child].norm;
                        self.nodes[id].children[slot(i, j)] = Some(child);
                    }
                }
            }
            sum.sqrt()
        };
        if !keep && norm <= self.zero_drop {
            self.nodes.truncate(id);
            return None;
        }
        self.nodes[id].norm = norm;
        Some(id)
    }

    pub fn root(&self) -> MatrixView<'_> {
        MatrixView {
            tree: self,
            node: 0,
            transposed: false,
        }
    }

    pub fn view(&self, node: usize) -> MatrixView<'_> {
        MatrixView {
            tree: self,
            node,
            transposed: false,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.root().to_dense()
    }

    /// Constant-cost logical transpose of the whole tree.
    pub fn transpose_view(&self) -> MatrixView<'_> {
        self.root().transpose_view()
    }

    pub fn dump_csv(&self) -> String {
        let mut out = String::from("level,row_span,col_span,norm,pruned\n");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{:e},false",
                n.level,
                self.partition.span(n.level, n.row).label(),
                self.partition.span(n.level, n.col).label(),
                n.norm
            );
        }
        out
    }

    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        self.dump_node(0, &mut out);
        out
    }

    fn dump_node(&self, id: usize, out: &mut String) {
        let n = &self.nodes[id];
        let _ = writeln!(
            out,
            "{}[{} x {}] norm={:e}",
            "  ".repeat(n.level),
            self.partition.span(n.level, n.row).label(),
            self.partition.span(n.level, n.col).label(),
            n.norm
        );
        for c in n.children.iter().flatten() {
            self.dump_node(*c, out);
        }
    }
}

/// A node of a [`MatrixQuadtree`], possibly read transposed.
#[derive(Clone, Copy, Debug)]
pub struct MatrixView<'a> {
    pub tree: &'a MatrixQuadtree,
    pub node: usize,
    pub transposed: bool,
}

impl<'a> MatrixView<'a> {
    fn raw(&self) -> &'a MatrixNode {
        &self.tree.nodes[self.node]
    }

    pub fn norm(&self) -> f64 {
        self.raw().norm
    }

    pub fn level(&self) -> usize {
        self.raw().level
    }

    pub fn row_span(&self) -> &'a Span {
        let n = self.raw();
        self.tree
            .partition
            .span(n.level, if self.transposed { n.col } else { n.row })
    }

    pub fn col_span(&self) -> &'a Span {
        let n = self.raw();
        self.tree
            .partition
            .span(n.level, if self.transposed { n.row } else { n.col })
    }

    pub fn transpose_view(self) -> MatrixView<'a> {
        MatrixView {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Child at row position `i`, column position `j` of this view.
    pub fn child(&self, i: usize, j: usize) -> Option<MatrixView<'a>> {
        let k = if self.transposed {
            slot(j, i)
        } else {
            slot(i, j)
        };
        self.raw().children[k].map(|node| MatrixView {
            tree: self.tree,
            node,
            transposed: self.transposed,
        })
    }

    pub fn is_leaf(&self) -> bool {
        self.raw().block.is_some()
    }

    /// Leaf block element in view coordinates relative to the block corner.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let b = self.raw().block.as_ref().expect("not a leaf");
        if self.transposed {
            b[[c, r]]
        } else {
            b[[r, c]]
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.tree.partition.n_functions;
        let mut out = Array2::zeros((n, n));
        self.scatter(&mut out);
        out
    }

    fn scatter(&self, out: &mut Array2<f64>) {
        if self.is_leaf() {
            let r0 = self.row_span().functions.start;
            let c0 = self.col_span().functions.start;
            for r in 0..self.row_span().n_functions() {
                for c in 0..self.col_span().n_functions() {
                    out[[r0 + r, c0 + c]] = self.get(r, c);
                }
            }
            return;
        }
        for i in 0..2 {
            for j in 0..2 {
                if let Some(ch) = self.child(i, j) {
                    ch.scatter(out);
                }
            }
        }
    }
}

/// Precomputed pair data for every shell pair plus the diagonal integrals
/// `d_ij = (ij|ij)`, indexed `i * n + j`.
#[derive(Clone, Debug)]
pub struct PairTable {
    pub n: usize,
    pub pairs: Vec<ShellPairData>,
    pub diag: Vec<f64>,
    pub overlap: Vec<f64>,
}

impl PairTable {
    pub fn new(system: &BasisSystem) -> Self {
        let n = system.n_shells();
        let mut pairs = vec![ShellPairData::default(); n * n];
        let mut diag = vec![0.0; n * n];
        let mut ovl = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let pd = ShellPairData::new(&system.shells[i], &system.shells[j]);
                let d = crate::integrals::eri_from_pairs(&pd, &pd);
                let s = overlap(&system.shells[i], &system.shells[j]);
                diag[i * n + j] = d;
                diag[j * n + i] = d;
                ovl[i * n + j] = s;
                ovl[j * n + i] = s;
                if i != j {
                    pairs[j * n + i] = ShellPairData::new(&system.shells[j], &system.shells[i]);
                }
                pairs[i * n + j] = pd;
            }
        }
        PairTable {
            n,
            pairs,
            diag,
            overlap: ovl,
        }
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> &ShellPairData {
        &self.pairs[i * self.n + j]
    }

    #[inline]
    pub fn diag(&self, i: usize, j: usize) -> f64 {
        self.diag[i * self.n + j]
    }

    #[inline]
    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.overlap[i * self.n + j]
    }
}

#[derive(Clone, Debug)]
pub struct ShellPairNode {
    pub level: usize,
    /// μ-span index at `level`.
    pub row: usize,
    /// ν-span index at `level`.
    pub col: usize,
    /// Frobenius norm of the diagonal ERI block; root-sum-square of the
    /// surviving children on interior nodes, zero on pruned nodes.
    pub diag_norm: f64,
    /// `Σ (μν|μν)` over the span, used for error bounds of culled work.
    pub trace: f64,
    pub pruned: bool,
    pub children: [Option<usize>; 4],
}

/// Shell-pair quadtree over all ordered span pairs. Node `(a, b)` and its
/// mirror `(b, a)` carry bitwise-identical norms.
#[derive(Clone, Debug)]
pub struct PairTree {
    pub nodes: Vec<ShellPairNode>,
    pub partition: Partition,
    pub tau_ovlp: f64,
    pub table: PairTable,
}

pub fn build_pair_tree(
    system: &BasisSystem,
    partition: &Partition,
    tau_ovlp: f64,
) -> Result<PairTree, TreeError> {
    build_pair_tree_with(system, partition, tau_ovlp, PairTable::new(system))
}

pub fn build_pair_tree_with(
    system: &BasisSystem,
    partition: &Partition,
    tau_ovlp: f64,
    table: PairTable,
) -> Result<PairTree, TreeError> {
    if !(tau_ovlp >= 0.0) {
        return Err(TreeError::InvalidArgument(format!(
            "tau_ovlp must be >= 0, got {tau_ovlp}"
        )));
    }
    if partition.n_functions != system.n_functions() || table.n != system.n_shells() {
        return Err(TreeError::InvalidArgument(
            "partition does not match system".into(),
        ));
    }
    let mut tree = PairTree {
        nodes: Vec::new(),
        partition: partition.clone(),
        tau_ovlp,
        table,
    };
    let mut memo = std::collections::HashMap::new();
    tree.build_node(0, 0, 0, &mut memo);
    Ok(tree)
}

impl PairTree {
    fn build_node(
        &mut self,
        level: usize,
        row: usize,
        col: usize,
        memo: &mut std::collections::HashMap<(usize, usize, usize), usize>,
    ) -> usize {
        let id = self.nodes.len();
        let rs = self.partition.span(level, row).clone();
        let cs = self.partition.span(level, col).clone();
        let mut max_overlap: f64 = 0.0;
        let mut trace = 0.0;
        for i in rs.shells.clone() {
            for j in cs.shells.clone() {
                max_overlap = max_overlap.max(self.table.overlap(i, j).abs());
                trace += self.table.diag(i, j);
            }
        }
        let pruned = max_overlap < self.tau_ovlp;
        self.nodes.push(ShellPairNode {
            level,
            row,
            col,
            diag_norm: 0.0,
            trace,
            pruned,
            children: [None; 4],
        });
        if pruned {
            return id;
        }
        // the mirror of an already built node reuses its norm so both
        // orientations screen identically
        let mirror = memo.get(&(level, col, row)).copied();
        let diag_norm = if self.partition.is_leaf_level(level) {
            match mirror {
                Some(m) => self.nodes[m].diag_norm,
                None => {
                    let pairs: Vec<ShellPairData> = rs
                        .shells
                        .clone()
                        .flat_map(|i| cs.shells.clone().map(move |j| (i, j)))
                        .map(|(i, j)| self.table.pair(i, j).clone())
                        .collect();
                    block_norm_from_pairs(&pairs)
                }
            }
        } else {
            let mut sum = 0.0;
            for (i, &r) in rs.children.iter().enumerate() {
                for (j, &c) in cs.children.iter().enumerate() {
                    let child = self.build_node(level + 1, r, c, memo);
                    if !self.nodes[child].pruned {
                        sum += self.nodes[child].diag_norm * self.nodes[child].diag_norm;
                    }
                    self.nodes[id].children[slot(i, j)] = Some(child);
                }
            }
            match mirror {
                Some(m) => self.nodes[m].diag_norm,
                None => sum.sqrt(),
            }
        };
        self.nodes[id].diag_norm = diag_norm;
        memo.insert((level, row, col), id);
        id
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &ShellPairNode {
        &self.nodes[id]
    }

    /// Leaf-level nodes that were not pruned, as `(μ-span, ν-span)` indices.
    pub fn surviving_leaves(&self) -> Vec<(usize, usize)> {
        let depth = self.partition.depth();
        let mut out: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .filter(|n| n.level == depth && !n.pruned)
            .map(|n| (n.row, n.col))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn dump_csv(&self) -> String {
        let mut out = String::from("level,row_span,col_span,norm,pruned\n");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{}",
                n.level,
                self.partition.span(n.level, n.row).label(),
                self.partition.span(n.level, n.col).label(),
                n.diag_norm,
                n.pruned
            );
        }
        out
    }

    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            let _ = writeln!(
                out,
                "{}[{} x {}] diag_norm={:e}{}",
                "  ".repeat(n.level),
                self.partition.span(n.level, n.row).label(),
                self.partition.span(n.level, n.col).label(),
                n.diag_norm,
                if n.pruned { " pruned" } else { "" }
            );
            stack.extend(n.children.iter().rev().flatten());
        }
        out
    }
}
