//! Overlap and electron-repulsion integrals over contracted s-type Gaussians.
//!
//! Every routine works on [`GaussianShell`]s whose primitive coefficients
//! already carry the primitive normalization and the contraction
//! renormalization (see [`GaussianShell::new`]). With s shells every
//! shell contributes one function, so the "blocks" below are 1x1 and
//! are returned as plain scalars.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{distance_sq, GaussianShell, Vec3};

/// Below this argument the Boys function is summed as a power series,
/// above it the error-function closed form is used.
pub const BOYS_SWITCH: f64 = 12.0;

#[derive(Debug, Error, PartialEq)]
pub enum IntegralError {
    #[error("invalid argument: Boys function argument must be >= 0, got {0}")]
    NegativeBoysArgument(f64),
}

/// Zeroth-order Boys function `F0(t) = ∫₀¹ exp(-t u²) du`.
pub fn boys_f0(t: f64) -> Result<f64, IntegralError> {
    if !(t >= 0.0) {
        return Err(IntegralError::NegativeBoysArgument(t));
    }
    Ok(boys_f0_unchecked(t))
}

/// Boys function without the argument check; `t` must be non-negative.
#[inline]
pub(crate) fn boys_f0_unchecked(t: f64) -> f64 {
    if t < BOYS_SWITCH {
        // F0(t) = exp(-t) Σ_k (2t)^k / (2k+1)!!, all terms positive.
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= 2.0 * t / (2.0 * k + 1.0);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        (-t).exp() * sum
    } else {
        let x = t.sqrt();
        0.5 * (PI / t).sqrt() * libm::erf(x)
    }
}

/// Which norm form enters the blocked screening product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreeningMode {
    /// `‖(μν|μν)‖ · ‖P‖ · ‖(λσ|λσ)‖`, diagonal norms used as-is.
    Literal,
    /// `√‖(μν|μν)‖ · ‖P‖ · √‖(λσ|λσ)‖`, the Cauchy-Schwarz form.
    #[default]
    Schwarz,
}

impl ScreeningMode {
    /// Factor that a diagonal ERI norm contributes to the screening product.
    #[inline]
    pub fn factor(self, diag_norm: f64) -> f64 {
        match self {
            ScreeningMode::Literal => diag_norm,
            ScreeningMode::Schwarz => diag_norm.sqrt(),
        }
    }
}

impl std::str::FromStr for ScreeningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(ScreeningMode::Literal),
            "schwarz" => Ok(ScreeningMode::Schwarz),
            other => Err(format!(
                "unknown screening form '{other}' (expected literal|schwarz)"
            )),
        }
    }
}

/// Bra and ket diagonal norms of one screening product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScreeningEstimate {
    pub bra_norm: f64,
    pub ket_norm: f64,
    pub mode: ScreeningMode,
}

impl ScreeningEstimate {
    /// The screening product for a density block of norm `p_norm`.
    pub fn bound(&self, p_norm: f64) -> f64 {
        self.mode.factor(self.bra_norm) * p_norm * self.mode.factor(self.ket_norm)
    }
}

/// Contracted overlap `(a|b)`.
pub fn overlap(a: &GaussianShell, b: &GaussianShell) -> f64 {
    let r2 = distance_sq(&a.center, &b.center);
    let mut s = 0.0;
    for pa in &a.primitives {
        for pb in &b.primitives {
            let p = pa.exponent + pb.exponent;
            let xi = pa.exponent * pb.exponent / p;
            s += pa.coefficient * pb.coefficient * (PI / p).powf(1.5) * (-xi * r2).exp();
        }
    }
    s
}

/// One primitive Gaussian product `c·exp(-p|r-P|²)` of a shell pair.
#[derive(Clone, Copy, Debug)]
pub struct PrimitivePair {
    pub exponent: f64,
    pub center: Vec3,
    /// Contraction coefficients times the Gaussian-product prefactor.
    pub prefactor: f64,
}

/// Gaussian-product data of a contracted shell pair, reused across every
/// quartet the pair takes part in.
#[derive(Clone, Debug, Default)]
pub struct ShellPairData {
    pub primitives: Vec<PrimitivePair>,
}

impl ShellPairData {
    pub fn new(a: &GaussianShell, b: &GaussianShell) -> Self {
        let r2 = distance_sq(&a.center, &b.center);
        let mut primitives = Vec::with_capacity(a.primitives.len() * b.primitives.len());
        for pa in &a.primitives {
            for pb in &b.primitives {
                let p = pa.exponent + pb.exponent;
                let xi = pa.exponent * pb.exponent / p;
                let center = [
                    (pa.exponent * a.center[0] + pb.exponent * b.center[0]) / p,
                    (pa.exponent * a.center[1] + pb.exponent * b.center[1]) / p,
                    (pa.exponent * a.center[2] + pb.exponent * b.center[2]) / p,
                ];
                primitives.push(PrimitivePair {
                    exponent: p,
                    center,
                    prefactor: pa.coefficient * pb.coefficient * (-xi * r2).exp(),
                });
            }
        }
        ShellPairData { primitives }
    }
}

/// `(ab|cd)` from precomputed pair data.
pub fn eri_from_pairs(bra: &ShellPairData, ket: &ShellPairData) -> f64 {
    let two_pi_52 = 2.0 * PI.powf(2.5);
    let mut v = 0.0;
    for pp in &bra.primitives {
        for qq in &ket.primitives {
            let p = pp.exponent;
            let q = qq.exponent;
            let t = p * q / (p + q) * distance_sq(&pp.center, &qq.center);
            v += pp.prefactor * qq.prefactor / (p * q * (p + q).sqrt()) * boys_f0_unchecked(t);
        }
    }
    two_pi_52 * v
}

/// One contracted `(μν|λσ)` block together with the shells it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EriQuartetBlock {
    /// (μν|λσ) in Hartree; one element for s shells.
    pub value: f64,
    pub shells: [usize; 4],
}

/// Contracted `(μν|λσ)` over four s shells.
pub fn eri_quartet(
    mu: &GaussianShell,
    nu: &GaussianShell,
    lam: &GaussianShell,
    sig: &GaussianShell,
) -> f64 {
    eri_from_pairs(&ShellPairData::new(mu, nu), &ShellPairData::new(lam, sig))
}

/// Frobenius norm of the diagonal ERI block `(μν|μ'ν')` for μ, μ' over
/// `mu_shells` and ν, ν' over `nu_shells`.
pub fn pair_diagonal_norm(
    shells: &[GaussianShell],
    mu_shells: std::ops::Range<usize>,
    nu_shells: std::ops::Range<usize>,
) -> f64 {
    let pairs: Vec<ShellPairData> = mu_shells
        .clone()
        .flat_map(|m| nu_shells.clone().map(move |n| (m, n)))
        .map(|(m, n)| ShellPairData::new(&shells[m], &shells[n]))
        .collect();
    block_norm_from_pairs(&pairs)
}

/// Frobenius norm of the ERI block between every pair of entries in `pairs`.
pub(crate) fn block_norm_from_pairs(pairs: &[ShellPairData]) -> f64 {
    let mut sum = 0.0;
    for (i, a) in pairs.iter().enumerate() {
        let d = eri_from_pairs(a, a);
        sum += d * d;
        for b in &pairs[i + 1..] {
            let v = eri_from_pairs(a, b);
            sum += 2.0 * v * v;
        }
    }
    sum.sqrt()
}

/// Upper bound on `(μν|μν)` from primitive overlaps, for pairs whose
/// integrals are never computed.
///
/// Each primitive diagonal is `S² √(2p/π)`, and Cauchy-Schwarz over the
/// primitive quartets gives `(μν|μν) ≤ (Σ |S_ij| (2p_ij/π)^¼)²`.
pub fn pair_diagonal_bound(pair: &ShellPairData) -> f64 {
    let s: f64 = pair
        .primitives
        .iter()
        .map(|pp| {
            let overlap = pp.prefactor.abs() * (PI / pp.exponent).powf(1.5);
            overlap * (2.0 * pp.exponent / PI).powf(0.25)
        })
        .sum();
    s * s
}
