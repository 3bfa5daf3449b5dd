use fockx::basis::{generate_cluster, Atom, BasisSystem, ClusterModel, ShellTable, SplitMix64};
use fockx::density::exp_decay;
use fockx::exchange_symmetry::{build_exchange_symmetric, symmetrize_final, CaseId};
use fockx::oracle::{compare, dense_exchange, dense_exchange_screened, max_abs};
use fockx::quadtree::{build_matrix_tree, build_pair_tree, build_partition};
use fockx::{build_exchange_naive, ExchangeOptions, ScreeningMode};
use ndarray::Array2;

fn water(n: usize, seed: u64) -> BasisSystem {
    generate_cluster(n, seed, ClusterModel::WaterLike).unwrap()
}

#[test]
fn naive_and_symmetric_match_dense_at_zero_threshold() {
    for n in [1, 2, 3] {
        let sys = water(n, 11);
        let p = exp_decay(&sys, 0.4, 1.0);
        let exact = dense_exchange(&sys, &p).unwrap();
        for leaf in [1, 3, 10] {
            let part = build_partition(&sys, leaf).unwrap();
            let pairs = build_pair_tree(&sys, &part, 0.0).unwrap();
            let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
            let opts = ExchangeOptions::new(0.0);
            let naive = build_exchange_naive(&sys, &pairs, &pt, &opts).unwrap();
            let sym = build_exchange_symmetric(&sys, &pairs, &pt, &opts).unwrap();
            assert!(
                compare(&naive.k, &exact).unwrap().max_abs_diff <= 1e-11,
                "naive n={n} leaf={leaf}"
            );
            assert!(
                compare(&sym.result.k, &exact).unwrap().max_abs_diff <= 1e-11,
                "sym n={n} leaf={leaf}"
            );
            assert!(naive.counters.is_conserved());
            assert!(sym.result.counters.is_conserved());
        }
    }
}

#[test]
fn symmetric_raw_k_is_symmetric_for_one_water() {
    let sys = water(1, 3);
    let p = exp_decay(&sys, 0.4, 1.0);
    let part = build_partition(&sys, 2).unwrap();
    let pairs = build_pair_tree(&sys, &part, 0.0).unwrap();
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let sym = build_exchange_symmetric(&sys, &pairs, &pt, &ExchangeOptions::new(0.0)).unwrap();
    let k = &sym.result.k;
    assert!(max_abs(&(k - &k.t())) <= 1e-12);
    assert!(symmetrize_final(k).is_ok());
}

fn random_chain(n: usize, rng: &mut SplitMix64) -> BasisSystem {
    let atoms = (0..n)
        .map(|_| Atom {
            element: if rng.next_f64() < 0.5 {
                "H".into()
            } else {
                "O".into()
            },
            position: [
                rng.uniform(-3.0, 3.0),
                rng.uniform(-3.0, 3.0),
                rng.uniform(-3.0, 3.0),
            ],
        })
        .collect();
    BasisSystem::from_atoms(atoms, &ShellTable::builtin()).unwrap()
}

/// Every span-relation class, including sparse links, checked against the
/// brute-force sum with an asymmetric density that has zero blocks.
#[test]
fn exhaustive_small_systems_cover_every_case() {
    let mut rng = SplitMix64::new(2024);
    let mut seen = [0u64; 9];
    for trial in 0..40 {
        let sys = random_chain(1 + trial % 4, &mut rng);
        let n = sys.n_functions();
        if n > 6 {
            continue;
        }
        let mut p = Array2::from_shape_fn((n, n), |_| rng.uniform(-1.0, 1.0));
        for i in 0..n {
            for j in 0..n {
                if (i + 2 * j + trial) % 5 == 0 {
                    p[[i, j]] = 0.0;
                }
            }
        }
        let exact = dense_exchange(&sys, &p).unwrap();
        for leaf in 1..=3 {
            let part = build_partition(&sys, leaf).unwrap();
            let pairs = build_pair_tree(&sys, &part, 0.0).unwrap();
            let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
            let opts = ExchangeOptions::unscreened();
            let naive = build_exchange_naive(&sys, &pairs, &pt, &opts).unwrap();
            let sym = build_exchange_symmetric(&sys, &pairs, &pt, &opts).unwrap();
            let scale = max_abs(&exact).max(1.0);
            assert!(compare(&naive.k, &exact).unwrap().max_abs_diff <= 1e-12 * scale);
            assert!(
                compare(&sym.result.k, &exact).unwrap().max_abs_diff <= 1e-12 * scale,
                "trial {trial} leaf {leaf}"
            );
            for c in CaseId::ALL {
                seen[c.index()] += sym.cases.get(c);
            }
        }
    }
    for c in CaseId::ALL {
        assert!(seen[c.index()] > 0, "case {c} never exercised");
    }
}

#[test]
fn screened_quartet_sets_agree() {
    let sys = water(3, 5);
    let p = exp_decay(&sys, 0.4, 1.0);
    let part = build_partition(&sys, 4).unwrap();
    let pairs = build_pair_tree(&sys, &part, 0.0).unwrap();
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let opts = ExchangeOptions {
        log_quartets: true,
        ..ExchangeOptions::new(1e-6)
    };
    let naive = build_exchange_naive(&sys, &pairs, &pt, &opts).unwrap();
    let reference = dense_exchange_screened(&sys, &p, 1e-6, ScreeningMode::Schwarz, true).unwrap();
    assert_eq!(naive.quartet_log, reference.kept);
    assert!(compare(&naive.k, &reference.k).unwrap().max_abs_diff <= 1e-13);
}

#[test]
fn infinite_threshold_culls_at_root() {
    let sys = water(2, 5);
    let p = exp_decay(&sys, 0.4, 1.0);
    let part = build_partition(&sys, 2).unwrap();
    let pairs = build_pair_tree(&sys, &part, 0.0).unwrap();
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let r = build_exchange_naive(&sys, &pairs, &pt, &ExchangeOptions::new(f64::INFINITY)).unwrap();
    assert!(r.k.iter().all(|&x| x == 0.0));
    assert_eq!(r.counters.tasks_visited, 1);
    assert_eq!(r.counters.tasks_culled_screening, 1);
}

#[test]
fn zero_density_contracts_nothing() {
    let sys = water(2, 5);
    let part = build_partition(&sys, 2).unwrap();
    let pairs = build_pair_tree(&sys, &part, 0.0).unwrap();
    let pt = build_matrix_tree(&Array2::zeros((8, 8)), &part, 0.0).unwrap();
    let r = build_exchange_naive(&sys, &pairs, &pt, &ExchangeOptions::new(0.0)).unwrap();
    assert!(r.k.iter().all(|&x| x == 0.0));
    assert_eq!(r.counters.leaf_contractions, 0);
}

#[test]
fn parallel_matches_sequential() {
    let sys = water(6, 8);
    let p = exp_decay(&sys, 0.4, 1.0);
    let part = build_partition(&sys, 4).unwrap();
    let pairs = build_pair_tree(&sys, &part, 1e-11).unwrap();
    let pt = build_matrix_tree(&p, &part, 0.0).unwrap();
    let seq = ExchangeOptions::new(1e-8);
    let par = ExchangeOptions {
        parallel: true,
        ..seq
    };
    let a = build_exchange_naive(&sys, &pairs, &pt, &seq).unwrap();
    let b = build_exchange_naive(&sys, &pairs, &pt, &par).unwrap();
    assert_eq!(a.counters, b.counters);
    assert!(compare(&a.k, &b.k).unwrap().max_abs_diff <= 1e-13);
    let c = build_exchange_symmetric(&sys, &pairs, &pt, &seq).unwrap();
    let d = build_exchange_symmetric(&sys, &pairs, &pt, &par).unwrap();
    assert_eq!(c.result.counters, d.result.counters);
    assert_eq!(c.cases, d.cases);
    assert!(compare(&c.result.k, &d.result.k).unwrap().max_abs_diff <= 1e-13);
}
