//! Pairwise utilities, utility matrices and the MBR objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::error::{Error, Result};

/// Cosine similarity `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_utility(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector { candidate_id: None });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense `n x n` matrix of pairwise utilities, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl UtilityMatrix {
    /// Wraps arbitrary finite utilities. Cosine-specific invariants are not
    /// checked here, so callers may supply any utility function's values.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n}x{n} matrix",
                values.len()
            )));
        }
        if n == 0 {
            return Err(Error::EmptySet);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                candidate_id: 0,
                field: "utility matrix".into(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("utility rows are not square".into()));
        }
        Self::from_values(n, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Top-left `k x k` block: the utility matrix of the first `k` candidates.
    pub fn leading(&self, k: usize) -> Result<Self> {
        if k > self.n || k == 0 {
            return Err(Error::NExceedsCandidates {
                n: k,
                available: self.n,
            });
        }
        let values = (0..k).flat_map(|i| self.row(i)[..k].iter().copied()).collect();
        Ok(Self { n: k, values })
    }

    /// Transport costs `C = -U`, row-major.
    pub fn negated(&self) -> Vec<f64> {
        self.values.iter().map(|v| -v).collect()
    }
}

/// Cosine utility matrix of a validated set. Rows are computed in parallel;
/// every entry is produced by the same arithmetic regardless of scheduling.
pub fn utility_matrix(set: &CandidateSet) -> Result<UtilityMatrix> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let unit: Vec<Vec<f64>> = set
        .candidates
        .iter()
        .map(|c| {
            let nrm = norm(&c.embedding);
            if nrm == 0.0 {
                Err(Error::ZeroVector {
                    candidate_id: Some(c.id),
                })
            } else {
                Ok(c.embedding.iter().map(|v| v / nrm).collect())
            }
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| match i.cmp(&j) {
                    std::cmp::Ordering::Equal => 1.0,
                    // evaluate each unordered pair in one fixed order so the matrix is exactly symmetric
                    std::cmp::Ordering::Less => dot(&unit[i], &unit[j]).clamp(-1.0, 1.0),
                    std::cmp::Ordering::Greater => dot(&unit[j], &unit[i]).clamp(-1.0, 1.0),
                })
                .collect()
        })
        .collect();
    UtilityMatrix::from_values(n, rows.concat())
}

/// Per-candidate MBR objective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrScores {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl MbrScores {
    /// Min-max normalized copy. Already-normalized scores are returned as is.
    pub fn normalized(&self) -> MbrScores {
        if self.normalized {
            return self.clone();
        }
        MbrScores {
            values: normalize_unit_interval(&self.values),
            normalized: true,
        }
    }
}

/// `values[i] = (1/n) * sum_j U[i][j]`, self-utility included.
pub fn mbr_objectives(m: &UtilityMatrix) -> MbrScores {
    let n = m.n() as f64;
    MbrScores {
        values: (0..m.n()).map(|i| m.row(i).iter().sum::<f64>() / n).collect(),
        normalized: false,
    }
}

/// Min-max rescaling to [0, 1]; a constant vector maps to all 0.5.
pub fn normalize_unit_interval(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if hi <= lo || hi.is_nan() || lo.is_nan() {
        return vec![0.5; v.len()];
    }
    let span = hi - lo;
    v.iter().map(|x| ((x - lo) / span).clamp(0.0, 1.0)).collect()
}
