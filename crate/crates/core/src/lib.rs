//! Hierarchical Fock exchange over s-type Gaussian basis sets.
//!
//! The exchange matrix `K_μσ = -½ Σ_νλ P_νλ (μν|λσ)` is built by recursive
//! traversal of shell-pair and density quadtrees, culling blocks whose
//! Almlöf-Ahlrichs bound falls below a threshold. Two drivers are
//! provided: [`exchange_naive`] visits every ordered quartet block and
//! [`exchange_symmetry`] restricts the traversal to canonical quartets.

// `!(x > 0.0)` style checks reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod density;
pub mod exchange_naive;
pub mod exchange_symmetry;
pub mod harness;
pub mod integrals;
pub mod oracle;
pub mod quadtree;
pub mod traversal;

pub use basis::{
    generate_cluster, hilbert_order, load_xyz, BasisSystem, ClusterModel, GaussianShell, ShellTable,
};
pub use density::{build_density, DensityModel};
pub use exchange_naive::{
    build_exchange_naive, screening_test, ExchangeOptions, ExchangeResult, TraversalCounters,
};
pub use exchange_symmetry::{
    build_exchange_symmetric, classify_quartet, symmetrize_final, CaseId, SymmetryCase,
};
pub use integrals::{boys_f0, eri_quartet, overlap, ScreeningMode};
pub use oracle::{compare, dense_exchange, dense_exchange_screened, ComparisonReport};
pub use quadtree::{
    build_matrix_tree, build_pair_tree, build_partition, MatrixQuadtree, PairTree, Partition,
};
