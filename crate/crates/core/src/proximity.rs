//! Principal-component view of a candidate set and how the MBR objective (or
//! the log-probability) tracks distance from the center of that view.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::error::{Error, Result};
use crate::stats::{mean, spearman_rho, std_dev};
use crate::utility::{mbr_objectives, normalize_unit_interval, utility_matrix};

/// Eigenvalues below this fraction of the largest one count as zero variance.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentProjection {
    /// Number of retained components `k`.
    pub dim: usize,
    /// `N x k` coordinates of the centered points.
    pub coords: Vec<Vec<f64>>,
    /// Sample variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// `k` orthonormal directions of length `d`.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Set when some retained component has zero variance (k exceeds the data rank).
    pub rank_deficient: bool,
}

impl ComponentProjection {
    /// Maps coordinates back to the original space.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        self.coords
            .iter()
            .map(|c| {
                let mut x = self.mean.clone();
                for (coef, dir) in c.iter().zip(&self.components) {
                    for (xi, di) in x.iter_mut().zip(dir) {
                        *xi += coef * di;
                    }
                }
                x
            })
            .collect()
    }
}

/// Centers the rows and projects them onto the top-`k` principal directions.
///
/// Uses the `d x d` covariance when `d <= N` and the `N x N` Gram matrix
/// otherwise, so cost is governed by `min(N, d)`. Each direction is signed so
/// that its largest-magnitude coordinate is positive.
pub fn pca_project(embeddings: &[Vec<f64>], k: usize) -> Result<ComponentProjection> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::TooFewCandidates(n));
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::ShapeMismatch("embeddings differ in dimension".into()));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={} (min of N = {n} and d = {d})",
            n.min(d)
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| embeddings.iter().map(|e| e[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let mut pairs: Vec<(f64, Vec<f64>)> = if d <= n {
        let cov = (x.transpose() * &x) / denom;
        let eig = SymmetricEigen::new(cov);
        (0..d)
            .map(|c| (eig.eigenvalues[c], eig.eigenvectors.column(c).iter().copied().collect()))
            .collect()
    } else {
        let gram = (&x * x.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|c| {
                let lambda = eig.eigenvalues[c];
                let dir = x.transpose() * eig.eigenvectors.column(c);
                (lambda, dir.iter().copied().collect())
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = pairs.first().map_or(0.0, |p| p.0.max(0.0));
    let floor = RANK_TOL * top.max(f64::MIN_POSITIVE);

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variance = Vec::with_capacity(k);
    let mut rank_deficient = false;
    for (lambda, dir) in pairs.into_iter().take(k) {
        if lambda <= floor {
            rank_deficient = true;
            variance.push(0.0);
            components.push(orthogonal_complement_vector(&components, d));
        } else {
            variance.push(lambda);
            // re-orthogonalize: Gram-path directions only agree to rounding
            let v = gram_schmidt(&components, dir).unwrap_or_else(|| orthogonal_complement_vector(&components, d));
            components.push(v);
        }
    }
    for c in &mut components {
        orient(c);
    }
    let coords = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|dir| (0..d).map(|j| x[(i, j)] * dir[j]).sum())
                .collect()
        })
        .collect();
    Ok(ComponentProjection {
        dim: k,
        coords,
        explained_variance: variance,
        components,
        mean,
        rank_deficient,
    })
}

fn gram_schmidt(basis: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
    for _ in 0..2 {
        for b in basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
    }
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm < 1e-10 {
        return None;
    }
    Some(v.into_iter().map(|x| x / nrm).collect())
}

fn orthogonal_complement_vector(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .find_map(|axis| {
            let mut e = vec![0.0; d];
            e[axis] = 1.0;
            gram_schmidt(basis, e)
        })
        .expect("fewer than d directions always leave a complement")
}

fn orient(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

/// Per-point norm of its component coordinates; the projection is centered,
/// so this is the distance to the center.
pub fn distance_to_center(proj: &ComponentProjection, norm: Norm) -> Vec<f64> {
    proj.coords
        .iter()
        .map(|c| match norm {
            Norm::L1 => c.iter().map(|x| x.abs()).sum(),
            Norm::L2 => c.iter().map(|x| x * x).sum::<f64>().sqrt(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProximitySignal {
    Mbr,
    Logprob,
}

/// Rank correlation between distance to center and `signal` for one instruction.
pub fn instruction_rho(embeddings: &[Vec<f64>], signal: &[f64], k: usize, norm: Norm) -> Result<f64> {
    let proj = pca_project(embeddings, k)?;
    spearman_rho(&distance_to_center(&proj, norm), signal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRho {
    pub instruction_id: String,
    /// `None` when the instruction was skipped as degenerate.
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub mean_rho: f64,
    pub std_rho: f64,
    pub skipped: usize,
    pub per_instruction: Vec<InstructionRho>,
}

fn signal_of(set: &CandidateSet, signal: ProximitySignal) -> Result<Vec<f64>> {
    match signal {
        ProximitySignal::Mbr => {
            let mbr = mbr_objectives(&utility_matrix(set)?);
            Ok(normalize_unit_interval(&mbr.values))
        }
        ProximitySignal::Logprob => set.logprobs(),
    }
}

/// Mean and (population) standard deviation across instructions of the
/// Spearman correlation between distance to center and the signal. Instructions
/// whose signal or distances are constant are skipped and counted.
pub fn proximity_correlation(
    sets: &[CandidateSet],
    k: usize,
    signal: ProximitySignal,
    norm: Norm,
) -> Result<ProximityReport> {
    if let Some(small) = sets.iter().find(|s| s.len() < 3) {
        return Err(Error::Validation {
            instruction_id: small.instruction_id.clone(),
            source: Box::new(Error::InvalidArgument(format!(
                "proximity analysis needs N >= 3, got {}",
                small.len()
            ))),
        });
    }
    let per: Vec<InstructionRho> = sets
        .par_iter()
        .map(|set| {
            let values = signal_of(set, signal)?;
            let embeddings: Vec<Vec<f64>> = set.candidates.iter().map(|c| c.embedding.clone()).collect();
            let rho = match instruction_rho(&embeddings, &values, k, norm) {
                Ok(r) => Some(r),
                Err(Error::DegenerateInput(_)) => None,
                Err(e) => {
                    return Err(Error::Validation {
                        instruction_id: set.instruction_id.clone(),
                        source: Box::new(e),
                    })
                }
            };
            Ok(InstructionRho {
                instruction_id: set.instruction_id.clone(),
                rho,
            })
        })
        .collect::<Result<_>>()?;
    let rhos: Vec<f64> = per.iter().filter_map(|r| r.rho).collect();
    if rhos.is_empty() {
        return Err(Error::DegenerateInput("every instruction was degenerate".into()));
    }
    Ok(ProximityReport {
        mean_rho: mean(&rhos),
        std_rho: std_dev(&rhos),
        skipped: per.len() - rhos.len(),
        per_instruction: per,
    })
}

/// One candidate located in the first two principal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityPoint {
    pub instruction_id: String,
    pub candidate_id: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub normalized_mbr: f64,
}

/// `(pc1, pc2, normalized MBR)` for every candidate; pc2 is 0 for 1-D embeddings.
pub fn proximity_points(set: &CandidateSet) -> Result<Vec<ProximityPoint>> {
    let embeddings: Vec<Vec<f64>> = set.candidates.iter().map(|c| c.embedding.clone()).collect();
    let k = 2.min(set.dim()).min(set.len());
    let proj = pca_project(&embeddings, k)?;
    let mbr = signal_of(set, ProximitySignal::Mbr)?;
    Ok(proj
        .coords
        .iter()
        .zip(mbr)
        .enumerate()
        .map(|(i, (c, m))| ProximityPoint {
            instruction_id: set.instruction_id.clone(),
            candidate_id: i,
            pc1: c[0],
            pc2: c.get(1).copied().unwrap_or(0.0),
            normalized_mbr: m,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{power_iteration, sample_covariance};
    use proptest::prelude::*;

    #[test]
    fn one_dimensional_line() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        let p = pca_project(&pts, 1).unwrap();
        // variance of (-1, 0, 1) with divisor N - 1 = 1
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-12);
        let coords: Vec<f64> = p.coords.iter().map(|c| c[0]).collect();
        for (a, b) in coords.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(p.components[0], vec![1.0, 0.0]);
        let dist = distance_to_center(&p, Norm::L1);
        for (a, b) in dist.iter().zip([1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_norms() {
        let p = ComponentProjection {
            dim: 2,
            coords: vec![vec![0.0, 0.0], vec![3.0, -4.0]],
            explained_variance: vec![1.0, 1.0],
            components: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            mean: vec![0.0, 0.0],
            rank_deficient: false,
        };
        assert_eq!(distance_to_center(&p, Norm::L1), vec![0.0, 7.0]);
        assert_eq!(distance_to_center(&p, Norm::L2), vec![0.0, 5.0]);
    }

    #[test]
    fn rotated_anisotropic_cloud_aligns_with_rotation() {
        // points spread along (1, 1)/sqrt(2) with a small orthogonal spread
        let t: Vec<f64> = (0..21).map(|i| i as f64 - 10.0).collect();
        let pts: Vec<Vec<f64>> = t
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let o = if i % 2 == 0 { 0.3 } else { -0.3 };
                vec![(s - o) / 2f64.sqrt(), (s + o) / 2f64.sqrt()]
            })
            .collect();
        let p = pca_project(&pts, 2).unwrap();
        let (lambda, v) = power_iteration(&sample_covariance(&pts), 500);
        assert!((p.explained_variance[0] - lambda).abs() < 1e-9);
        let align: f64 = p.components[0].iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((align.abs() - 1.0).abs() < 1e-9);
        let h = 1.0 / 2f64.sqrt();
        assert!((p.components[0][0] - h).abs() < 1e-6 && (p.components[0][1] - h).abs() < 1e-6);
    }

    #[test]
    fn full_basis_reconstructs() {
        let pts = vec![
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.2, -0.7, 1.1],
            vec![3.0, 1.0, -2.0],
        ];
        let p = pca_project(&pts, 3).unwrap();
        for (a, b) in p.reconstruct().iter().zip(&pts) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
        assert!(!p.rank_deficient);
    }

    #[test]
    fn rank_deficiency_is_flagged_and_padded() {
        // collinear points in 3-D, N = 3 < d would use the Gram path
        let pts = vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![2.0, 2.0, 0.0, 0.0],
        ];
        let p = pca_project(&pts, 3).unwrap();
        assert!(p.rank_deficient);
        assert_eq!(p.explained_variance[1], 0.0);
        assert_eq!(p.explained_variance[2], 0.0);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.components[a].iter().zip(&p.components[b]).map(|(x, y)| x * y).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_k() {
        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(pca_project(&pts, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(pca_project(&pts[..1], 1), Err(Error::TooFewCandidates(1))));
    }

    #[test]
    fn identical_signal_correlates_perfectly() {
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * (1.0 + t), t.cos() * 0.5, (t * 0.7).sin()]
            })
            .collect();
        let proj = pca_project(&pts, 2).unwrap();
        let signal = distance_to_center(&proj, Norm::L1);
        assert!((instruction_rho(&pts, &signal, 2, Norm::L1).unwrap() - 1.0).abs() < 1e-12);
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (3usize..12, 2usize..7).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n))
    }

    proptest! {
        #[test]
        fn variance_ordered_and_total(pts in matrix()) {
            let n = pts.len();
            let d = pts[0].len();
            let k = n.min(d);
            let p = pca_project(&pts, k).unwrap();
            for w in p.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-12);
            }
            let cov = sample_covariance(&pts);
            let total: f64 = (0..d).map(|i| cov[i][i]).sum();
            prop_assert!((p.explained_variance.iter().sum::<f64>() - total).abs() <= 1e-6);
            for j in 0..k {
                let col_mean = p.coords.iter().map(|c| c[j]).sum::<f64>() / n as f64;
                prop_assert!(col_mean.abs() <= 1e-6);
            }
        }
    }
}
