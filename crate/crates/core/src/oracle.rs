//! Brute-force exchange references and matrix comparison.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::exchange_naive::{screening_test, ExchangeError};
use crate::integrals::{eri_from_pairs, ScreeningMode};
use crate::quadtree::PairTable;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub max_abs_diff: f64,
    pub frobenius_diff: f64,
    /// `‖A - B‖_F / ‖B‖_F`, or the absolute difference when `B` is zero.
    pub relative_frobenius: f64,
    pub worst_row: usize,
    pub worst_col: usize,
}

pub fn compare(a: &Array2<f64>, b: &Array2<f64>) -> Result<ComparisonReport, ExchangeError> {
    if a.dim() != b.dim() {
        return Err(ExchangeError::InvalidArgument(format!(
            "dimension mismatch {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut report = ComparisonReport {
        max_abs_diff: 0.0,
        frobenius_diff: 0.0,
        relative_frobenius: 0.0,
        worst_row: 0,
        worst_col: 0,
    };
    let mut sq = 0.0;
    let mut ref_sq = 0.0;
    for ((idx, x), y) in a.indexed_iter().zip(b.iter()) {
        let d = (x - y).abs();
        sq += d * d;
        ref_sq += y * y;
        if d > report.max_abs_diff {
            report.max_abs_diff = d;
            report.worst_row = idx.0;
            report.worst_col = idx.1;
        }
    }
    report.frobenius_diff = sq.sqrt();
    report.relative_frobenius = if ref_sq > 0.0 {
        (sq / ref_sq).sqrt()
    } else {
        report.frobenius_diff
    };
    Ok(report)
}

/// Frobenius norm; used as the K checksum in reports.
pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Output of [`dense_exchange_screened`].
#[derive(Clone, Debug)]
pub struct ScreenedReference {
    pub k: Array2<f64>,
    /// Sorted `(μ, ν, λ, σ)` of every evaluated quartet, when requested.
    pub kept: Option<Vec<[u32; 4]>>,
    /// Sum of `½|P_νλ| √((μν|μν)(λσ|λσ))` over skipped quartets.
    pub skipped_bound: f64,
}

fn check(system: &BasisSystem, p: &Array2<f64>) -> Result<(), ExchangeError> {
    let n = system.n_functions();
    if p.dim() != (n, n) {
        return Err(ExchangeError::InvalidArgument(format!(
            "density is {:?}, system has {n} functions",
            p.dim()
        )));
    }
    if n != system.n_shells() {
        return Err(ExchangeError::InvalidArgument(
            "only s shells are supported".into(),
        ));
    }
    Ok(())
}

/// `K_μσ = -½ Σ_νλ P_νλ (μν|λσ)` over every quartet.
pub fn dense_exchange(system: &BasisSystem, p: &Array2<f64>) -> Result<Array2<f64>, ExchangeError> {
    dense_exchange_with(system, &PairTable::new(system), p)
}

pub fn dense_exchange_with(
    system: &BasisSystem,
    table: &PairTable,
    p: &Array2<f64>,
) -> Result<Array2<f64>, ExchangeError> {
    Ok(screened(system, table, p, None, ScreeningMode::Schwarz, false)?.k)
}

/// Per-quartet direct-SCF reference: a quartet is skipped iff
/// [`screening_test`] culls `((μν|μν), |P_νλ|, (λσ|λσ))`.
pub fn dense_exchange_screened(
    system: &BasisSystem,
    p: &Array2<f64>,
    tau_2e: f64,
    mode: ScreeningMode,
    log: bool,
) -> Result<ScreenedReference, ExchangeError> {
    if !(tau_2e >= 0.0) {
        return Err(ExchangeError::InvalidArgument(format!(
            "tau_2e must be >= 0, got {tau_2e}"
        )));
    }
    screened(system, &PairTable::new(system), p, Some(tau_2e), mode, log)
}

pub fn dense_exchange_screened_with(
    system: &BasisSystem,
    table: &PairTable,
    p: &Array2<f64>,
    tau_2e: f64,
    mode: ScreeningMode,
    log: bool,
) -> Result<ScreenedReference, ExchangeError> {
    screened(system, table, p, Some(tau_2e), mode, log)
}

fn screened(
    system: &BasisSystem,
    table: &PairTable,
    p: &Array2<f64>,
    tau: Option<f64>,
    mode: ScreeningMode,
    log: bool,
) -> Result<ScreenedReference, ExchangeError> {
    check(system, p)?;
    let n = system.n_functions();
    let mut k = Array2::zeros((n, n));
    let mut kept = log.then(Vec::new);
    let mut skipped_bound = 0.0;
    for mu in 0..n {
        for nu in 0..n {
            let d_bra = table.diag(mu, nu);
            for la in 0..n {
                let pv = p[[nu, la]];
                for sg in 0..n {
                    let d_ket = table.diag(la, sg);
                    if let Some(t) = tau {
                        if screening_test(d_bra, pv.abs(), d_ket, t, mode) {
                            skipped_bound += 0.5 * pv.abs() * (d_bra * d_ket).sqrt();
                            continue;
                        }
                    }
                    let eri = eri_from_pairs(table.pair(mu, nu), table.pair(la, sg));
                    k[[mu, sg]] -= 0.5 * pv * eri;
                    if let Some(v) = kept.as_mut() {
                        v.push([mu as u32, nu as u32, la as u32, sg as u32]);
                    }
                }
            }
        }
    }
    Ok(ScreenedReference {
        k,
        kept,
        skipped_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{generate_cluster, Atom, ClusterModel, ShellTable};
    use crate::density::exp_decay;
    use crate::integrals::eri_quartet;

    #[test]
    fn compare_identical_is_zero() {
        let a = Array2::from_shape_fn((3, 3), |(i, j)| (i + 2 * j) as f64);
        let r = compare(&a, &a).unwrap();
        assert_eq!(r.max_abs_diff, 0.0);
        assert_eq!(r.frobenius_diff, 0.0);
        assert_eq!(r.relative_frobenius, 0.0);
    }

    #[test]
    fn compare_zero_against_identity() {
        let r = compare(&Array2::zeros((4, 4)), &Array2::eye(4)).unwrap();
        assert_eq!(r.max_abs_diff, 1.0);
        assert_eq!(r.frobenius_diff, 2.0);
        assert!(compare(&Array2::zeros((4, 4)), &Array2::eye(3)).is_err());
    }

    #[test]
    fn zero_density_gives_zero_exchange() {
        let sys = generate_cluster(1, 1, ClusterModel::WaterLike).unwrap();
        let k = dense_exchange(&sys, &Array2::zeros((4, 4))).unwrap();
        assert!(k.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_shell_is_one_term() {
        let atoms = vec![Atom {
            element: "H".into(),
            position: [0.0; 3],
        }];
        let sys = BasisSystem::from_atoms(atoms, &ShellTable::builtin()).unwrap();
        let p = Array2::from_elem((1, 1), 0.7);
        let k = dense_exchange(&sys, &p).unwrap();
        let s = &sys.shells[0];
        let expected = -0.5 * 0.7 * eri_quartet(s, s, s, s);
        assert!((k[[0, 0]] - expected).abs() <= 1e-15 * expected.abs());
    }

    #[test]
    fn water_exchange_is_symmetric() {
        let sys = generate_cluster(1, 4, ClusterModel::WaterLike).unwrap();
        let k = dense_exchange(&sys, &exp_decay(&sys, 0.4, 1.0)).unwrap();
        assert!(max_abs(&(&k - &k.t())) <= 1e-13);
    }

    #[test]
    fn screened_limits() {
        let sys = generate_cluster(2, 4, ClusterModel::WaterLike).unwrap();
        let p = exp_decay(&sys, 0.4, 1.0);
        let exact = dense_exchange(&sys, &p).unwrap();
        let zero = dense_exchange_screened(&sys, &p, 0.0, ScreeningMode::Schwarz, false).unwrap();
        assert_eq!(zero.k, exact);
        let inf = dense_exchange_screened(&sys, &p, f64::INFINITY, ScreeningMode::Schwarz, false)
            .unwrap();
        assert!(inf.k.iter().all(|&x| x == 0.0));
        let mid = dense_exchange_screened(&sys, &p, 1e-6, ScreeningMode::Schwarz, false).unwrap();
        assert!(compare(&mid.k, &exact).unwrap().max_abs_diff <= mid.skipped_bound);
    }
}
