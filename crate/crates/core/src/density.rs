//! Symmetric density matrices: a distance-decay model or a matrix file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{distance, BasisSystem};

pub const DEFAULT_GAMMA: f64 = 0.4;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityModel {
    /// `P_ij = diagonal · exp(-gamma |r_i - r_j|)`.
    ExpDecay {
        gamma: f64,
        diagonal: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for DensityModel {
    fn default() -> Self {
        DensityModel::ExpDecay {
            gamma: DEFAULT_GAMMA,
            diagonal: 1.0,
        }
    }
}

impl FromStr for DensityModel {
    type Err = DensityError;

    /// `exp:gamma=G[,diagonal=D]` or `file:PATH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(DensityError::InvalidArgument(
                    "empty density file path".into(),
                ));
            }
            return Ok(DensityModel::File {
                path: PathBuf::from(path),
            });
        }
        let body = s
            .strip_prefix("exp")
            .ok_or_else(|| DensityError::InvalidArgument(format!("unknown density spec '{s}'")))?;
        let mut gamma = DEFAULT_GAMMA;
        let mut diagonal = 1.0;
        let body = body.strip_prefix(':').unwrap_or(body);
        for kv in body.split(',').filter(|t| !t.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                DensityError::InvalidArgument(format!("expected key=value, got '{kv}'"))
            })?;
            let v: f64 = v
                .parse()
                .map_err(|_| DensityError::InvalidArgument(format!("bad number '{v}'")))?;
            match k {
                "gamma" => gamma = v,
                "diagonal" => diagonal = v,
                other => {
                    return Err(DensityError::InvalidArgument(format!(
                        "unknown density parameter '{other}'"
                    )))
                }
            }
        }
        let model = DensityModel::ExpDecay { gamma, diagonal };
        model.validate()?;
        Ok(model)
    }
}

impl DensityModel {
    pub fn validate(&self) -> Result<(), DensityError> {
        match self {
            DensityModel::ExpDecay { gamma, diagonal } => {
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(DensityError::InvalidArgument(format!(
                        "gamma must be > 0, got {gamma}"
                    )));
                }
                if !diagonal.is_finite() {
                    return Err(DensityError::InvalidArgument(format!(
                        "non-finite diagonal {diagonal}"
                    )));
                }
                Ok(())
            }
            DensityModel::File { .. } => Ok(()),
        }
    }
}

pub fn build_density(
    system: &BasisSystem,
    model: &DensityModel,
) -> Result<Array2<f64>, DensityError> {
    model.validate()?;
    match model {
        DensityModel::ExpDecay { gamma, diagonal } => Ok(exp_decay(system, *gamma, *diagonal)),
        DensityModel::File { path } => {
            let p = read_matrix(path)?;
            if p.nrows() != system.n_functions() {
                return Err(DensityError::InvalidArgument(format!(
                    "density file has N = {}, system has {} functions",
                    p.nrows(),
                    system.n_functions()
                )));
            }
            Ok(symmetrize(&p))
        }
    }
}

pub fn exp_decay(system: &BasisSystem, gamma: f64, diagonal: f64) -> Array2<f64> {
    let centers = system.function_centers();
    let n = centers.len();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        p[[i, i]] = diagonal;
        for j in 0..i {
            let v = diagonal * (-gamma * distance(&centers[i], &centers[j])).exp();
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
    }
    p
}

fn symmetrize(p: &Array2<f64>) -> Array2<f64> {
    let n = p.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (p[[i, j]] + p[[j, i]]))
}

/// Plain-text matrix: first line `N`, then `N·N` whitespace-separated
/// values in row-major order.
pub fn parse_matrix(text: &str) -> Result<Array2<f64>, DensityError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(DensityError::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let n: usize = first.trim().parse().map_err(|_| DensityError::Format {
        line: 1,
        message: format!("expected dimension, got '{}'", first.trim()),
    })?;
    let mut values = Vec::with_capacity(n * n);
    for (i, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| DensityError::Format {
                line: i + 1,
                message: format!("bad number '{tok}'"),
            })?;
            values.push(v);
        }
    }
    if values.len() != n * n {
        return Err(DensityError::Format {
            line: text.lines().count(),
            message: format!("expected {} values, found {}", n * n, values.len()),
        });
    }
    Ok(Array2::from_shape_vec((n, n), values).expect("length checked"))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>, DensityError> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<(), DensityError> {
    let mut out = format!("{}\n", m.nrows());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
