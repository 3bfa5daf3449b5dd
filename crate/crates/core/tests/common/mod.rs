//! Checks shared by the property suites and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use fockx::basis::{Atom, BasisSystem, GaussianShell, ShellTable, SplitMix64, Vec3};
use fockx::density::exp_decay;
use fockx::exchange_symmetry::{build_exchange_symmetric, CaseId};
use fockx::integrals::{eri_quartet, overlap, ScreeningMode};
use fockx::oracle::{compare, dense_exchange, max_abs};
use fockx::quadtree::{
    build_matrix_tree, build_pair_tree, build_partition, slot, MatrixView, PairTree,
};
use fockx::{build_exchange_naive, ExchangeOptions};
use ndarray::Array2;
use proptest::prelude::*;

pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

pub fn random_atoms(seed: u64, n: usize, box_half: f64) -> BasisSystem {
    let mut rng = SplitMix64::new(seed);
    let atoms = (0..n)
        .map(|_| Atom {
            element: if rng.next_f64() < 0.5 {
                "H".into()
            } else {
                "O".into()
            },
            position: [
                rng.uniform(-box_half, box_half),
                rng.uniform(-box_half, box_half),
                rng.uniform(-box_half, box_half),
            ],
        })
        .collect();
    BasisSystem::from_atoms(atoms, &ShellTable::builtin()).unwrap()
}

pub fn random_density(n: usize, seed: u64, zero_frac: f64) -> Array2<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut p = Array2::from_shape_fn((n, n), |_| rng.uniform(-1.0, 1.0));
    for i in 0..n {
        for j in 0..n {
            if rng.next_f64() < zero_frac {
                p[[i, j]] = 0.0;
            }
        }
    }
    p
}

pub fn shell_strategy() -> impl Strategy<Value = GaussianShell> {
    (
        prop::array::uniform3(-3.0f64..3.0),
        prop::collection::vec((0.1f64..100.0, 0.05f64..1.0), 1..4),
    )
        .prop_map(|(c, prims)| GaussianShell::new(c, &prims).unwrap())
}

pub fn check_matrix_node(view: MatrixView<'_>, dense: &Array2<f64>) -> Result<(), TestCaseError> {
    let rs = view.row_span().functions.clone();
    let cs = view.col_span().functions.clone();
    let block = dense.slice(ndarray::s![rs.clone(), cs.clone()]);
    let fro = block.iter().map(|x| x * x).sum::<f64>().sqrt();
    prop_assert!((view.norm() - fro).abs() <= 1e-12 * fro.max(1e-300));
    if view.is_leaf() {
        return Ok(());
    }
    let node = &view.tree.nodes[view.node];
    let part = &view.tree.partition;
    let row = part.span(node.level, node.row);
    let col = part.span(node.level, node.col);
    let mut sum = 0.0;
    for (i, &r) in row.children.iter().enumerate() {
        for (j, &c) in col.children.iter().enumerate() {
            match view.child(i, j) {
                Some(child) => {
                    sum += child.norm() * child.norm();
                    check_matrix_node(child, dense)?;
                }
                None => {
                    let rs = &part.span(node.level + 1, r).functions;
                    let cs = &part.span(node.level + 1, c).functions;
                    prop_assert!(dense
                        .slice(ndarray::s![rs.clone(), cs.clone()])
                        .iter()
                        .all(|&x| x == 0.0));
                }
            }
        }
    }
    let n2 = view.norm() * view.norm();
    prop_assert!((n2 - sum).abs() <= 1e-10 * n2.max(1e-300));
    Ok(())
}

pub fn check_pair_node(tree: &PairTree, id: usize, sys: &BasisSystem) -> Result<(), TestCaseError> {
    let node = tree.node(id);
    let part = &tree.partition;
    let rs = part.span(node.level, node.row).shells.clone();
    let cs = part.span(node.level, node.col).shells.clone();
    if node.pruned {
        for i in rs.clone() {
            for j in cs.clone() {
                prop_assert!(overlap(&sys.shells[i], &sys.shells[j]).abs() < tree.tau_ovlp);
            }
        }
        return Ok(());
    }
    if part.is_leaf_level(node.level) {
        return Ok(());
    }
    let mut sum = 0.0;
    for c in node.children.iter().flatten() {
        let child = tree.node(*c);
        if !child.pruned {
            sum += child.diag_norm * child.diag_norm;
        }
        check_pair_node(tree, *c, sys)?;
    }
    let n2 = node.diag_norm * node.diag_norm;
    prop_assert!((n2 - sum).abs() <= 1e-10 * n2.max(1e-300));
    Ok(())
}

pub fn bound(mode: ScreeningMode, bra: f64, p: f64, ket: f64) -> f64 {
    mode.factor(bra) * p * mode.factor(ket)
}

/// Every child task's screening bound stays under its parent's.
pub fn check_descendant_bounds(
    tree: &PairTree,
    pv: MatrixView<'_>,
    bra: usize,
    ket: usize,
    mode: ScreeningMode,
) -> Result<usize, TestCaseError> {
    let (b, k) = (tree.node(bra), tree.node(ket));
    if b.pruned || k.pruned || tree.partition.is_leaf_level(b.level) {
        return Ok(0);
    }
    let parent = bound(mode, b.diag_norm, pv.norm(), k.diag_norm);
    let part = &tree.partition;
    let (nm, nn) = (
        part.span(b.level, b.row).children.len(),
        part.span(b.level, b.col).children.len(),
    );
    let (nl, ns) = (
        part.span(k.level, k.row).children.len(),
        part.span(k.level, k.col).children.len(),
    );
    let mut checked = 0;
    for i in 0..nm {
        for j in 0..nn {
            let bc = b.children[slot(i, j)].unwrap();
            for l in 0..nl {
                let Some(pc) = pv.child(j, l) else { continue };
                for s in 0..ns {
                    let kc = k.children[slot(l, s)].unwrap();
                    let (bn, kn) = (tree.node(bc), tree.node(kc));
                    if bn.pruned || kn.pruned {
                        continue;
                    }
                    prop_assert!(
                        bound(mode, bn.diag_norm, pc.norm(), kn.diag_norm)
                            <= parent * (1.0 + 1e-12)
                    );
                    checked += 1 + check_descendant_bounds(tree, pc, bc, kc, mode)?;
                }
            }
        }
    }
    Ok(checked)
}

pub fn small_case() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 1usize..7, 1usize..5, -14.0f64..-2.0)
}

pub fn prop_cauchy_schwarz(
    a: &GaussianShell,
    b: &GaussianShell,
    c: &GaussianShell,
    d: &GaussianShell,
) -> Result<(), TestCaseError> {
    let v = eri_quartet(a, b, c, d).abs();
    let bound = (eri_quartet(a, b, a, b) * eri_quartet(c, d, c, d)).sqrt();
    // far-apart tight pairs square to below the f64 range; the slack
    // only covers that underflow
    prop_assert!(v <= bound * (1.0 + 1e-12) + 1e-150, "{} > {}", v, bound);
    Ok(())
}

pub fn prop_matrix_telescoping(
    seed: u64,
    atoms: usize,
    leaf: usize,
    zeros: f64,
) -> Result<(), TestCaseError> {
    let sys = random_atoms(seed, atoms, 4.0);
    let n = sys.n_functions();
    let p = random_density(n, seed ^ 0x5a5a, zeros);
    let part = build_partition(&sys, leaf).unwrap();
    let tree = build_matrix_tree(&p, &part, 0.0).unwrap();
    check_matrix_node(tree.root(), &p)?;
    prop_assert_eq!(tree.to_dense(), p.clone());
    prop_assert_eq!(tree.transpose_view().to_dense(), p.t().to_owned());
    Ok(())
}

pub fn prop_pair_tree(
    (seed, atoms, leaf, lg_tau): (u64, usize, usize, f64),
) -> Result<(), TestCaseError> {
    let sys = random_atoms(seed, atoms, 6.0);
    let part = build_partition(&sys, leaf).unwrap();
    let tree = build_pair_tree(&sys, &part, 10f64.powf(lg_tau)).unwrap();
    check_pair_node(&tree, tree.root(), &sys)
}

pub fn prop_hierarchical_bounds(
    (seed, atoms, leaf, lg_tau): (u64, usize, usize, f64),
    literal: bool,
) -> Result<(), TestCaseError> {
    let sys = random_atoms(seed, atoms, 5.0);
    let part = build_partition(&sys, leaf).unwrap();
    let tree = build_pair_tree(&sys, &part, 10f64.powf(lg_tau)).unwrap();
    let p = random_density(sys.n_functions(), seed, 0.3);
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let mode = if literal {
        ScreeningMode::Literal
    } else {
        ScreeningMode::Schwarz
    };
    check_descendant_bounds(&tree, pt.root(), tree.root(), tree.root(), mode)?;
    Ok(())
}

pub fn prop_conservation(
    (seed, atoms, leaf, lg_tau): (u64, usize, usize, f64),
    lg_tau2: f64,
) -> Result<(), TestCaseError> {
    let sys = random_atoms(seed, atoms, 5.0);
    let n = sys.n_functions();
    let mut p = random_density(n, seed ^ 7, 0.2);
    p = &p + &p.t();
    let part = build_partition(&sys, leaf).unwrap();
    let pairs = build_pair_tree(&sys, &part, 10f64.powf(lg_tau)).unwrap();
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let opts = ExchangeOptions::new(10f64.powf(lg_tau2));
    let naive = build_exchange_naive(&sys, &pairs, &pt, &opts).unwrap();
    let sym = build_exchange_symmetric(&sys, &pairs, &pt, &opts).unwrap();
    for c in [&naive.counters, &sym.result.counters] {
        prop_assert!(c.is_conserved());
        prop_assert!(c.tasks_visited >= c.leaf_contractions);
    }
    let sc = &sym.result.counters;
    prop_assert_eq!(
        sym.cases.total_tasks(),
        sc.tasks_expanded + sc.leaf_contractions
    );
    let leaf_cases: u64 = CaseId::ALL
        .iter()
        .map(|c| sym.cases.leaf_contractions[c.index()])
        .sum();
    prop_assert_eq!(leaf_cases, sc.leaf_contractions);
    let scale = max_abs(&naive.k).max(1.0);
    prop_assert!(compare(&naive.k, &sym.result.k).unwrap().max_abs_diff <= 1e-11 * scale);
    let exact = dense_exchange(&sys, &p).unwrap();
    let err = compare(&naive.k, &exact).unwrap().max_abs_diff;
    prop_assert!(err <= naive.culled_bound * (1.0 + 1e-9) + 1e-13 * scale);
    let err = compare(&sym.result.k, &exact).unwrap().max_abs_diff;
    prop_assert!(err <= sym.result.culled_bound * (1.0 + 1e-9) + 1e-13 * scale);
    Ok(())
}

pub fn prop_determinism(
    (seed, atoms, leaf, lg_tau): (u64, usize, usize, f64),
) -> Result<(), TestCaseError> {
    let sys = random_atoms(seed, atoms, 5.0);
    let p = exp_decay(&sys, 0.4, 1.0);
    let part = build_partition(&sys, leaf).unwrap();
    let pairs = build_pair_tree(&sys, &part, 10f64.powf(lg_tau)).unwrap();
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let opts = ExchangeOptions::new(1e-9);
    let a = build_exchange_naive(&sys, &pairs, &pt, &opts).unwrap();
    let b = build_exchange_naive(&sys, &pairs, &pt, &opts).unwrap();
    prop_assert_eq!(&a.k, &b.k);
    prop_assert_eq!(a.counters, b.counters);
    let c = build_exchange_symmetric(&sys, &pairs, &pt, &opts).unwrap();
    let d = build_exchange_symmetric(&sys, &pairs, &pt, &opts).unwrap();
    prop_assert_eq!(&c.result.k, &d.result.k);
    prop_assert_eq!(c.result.counters, d.result.counters);
    prop_assert_eq!(c.cases, d.cases);
    let par = ExchangeOptions {
        parallel: true,
        ..opts
    };
    let e = build_exchange_symmetric(&sys, &pairs, &pt, &par).unwrap();
    prop_assert_eq!(e.result.counters, c.result.counters);
    prop_assert!(
        compare(&e.result.k, &c.result.k).unwrap().max_abs_diff
            <= 1e-13 * max_abs(&c.result.k).max(1.0)
    );
    Ok(())
}

pub fn boys_grid() -> Vec<(f64, f64)> {
    let mut rdr = csv::Reader::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/boys_f0.csv"
    ))
    .unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect()
}

fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// (ab|cd) through 1/r = 2/√π ∫ exp(-s² r²) ds: the Gaussian integrals are
/// done in closed form and the s integral numerically, with no Boys function.
pub fn eri_by_quadrature(
    a: &GaussianShell,
    b: &GaussianShell,
    c: &GaussianShell,
    d: &GaussianShell,
) -> f64 {
    let gaussian_product = |x: &GaussianShell, y: &GaussianShell| {
        let mut out = Vec::new();
        for pa in &x.primitives {
            for pb in &y.primitives {
                let p = pa.exponent + pb.exponent;
                let r2: f64 = (0..3).map(|i| (x.center[i] - y.center[i]).powi(2)).sum();
                let k =
                    pa.coefficient * pb.coefficient * (-pa.exponent * pb.exponent / p * r2).exp();
                let center: Vec3 = std::array::from_fn(|i| {
                    (pa.exponent * x.center[i] + pb.exponent * y.center[i]) / p
                });
                out.push((p, k, center));
            }
        }
        out
    };
    let mut total = 0.0;
    for (p, kp, cp) in gaussian_product(a, b) {
        for &(q, kq, cq) in &gaussian_product(c, d) {
            let r2: f64 = (0..3).map(|i| (cp[i] - cq[i]).powi(2)).sum();
            let g = |u: f64| {
                if u >= 1.0 {
                    return 0.0;
                }
                let s = u / (1.0 - u);
                let s2 = s * s;
                let den = p * q + s2 * (p + q);
                (p * q / den).powf(1.5) * (-p * q * s2 * r2 / den).exp() / (1.0 - u).powi(2)
            };
            let radial = integrate(&g, 0.0, 1.0, 1e-13);
            total += kp * kq * (PI * PI / (p * q)).powf(1.5) * 2.0 / PI.sqrt() * radial;
        }
    }
    total
}

pub fn random_shell(rng: &mut SplitMix64) -> GaussianShell {
    let center = [
        rng.uniform(-1.0, 1.0),
        rng.uniform(-1.0, 1.0),
        rng.uniform(-1.0, 1.0),
    ];
    let n = 1 + (rng.next_u64() % 3) as usize;
    let contraction: Vec<(f64, f64)> = (0..n)
        .map(|_| (10f64.powf(rng.uniform(-1.0, 1.0)), rng.uniform(0.1, 1.0)))
        .collect();
    GaussianShell::new(center, &contraction).unwrap()
}
