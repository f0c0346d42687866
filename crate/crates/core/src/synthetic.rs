//! Seeded synthetic candidate sets with a controllable proxy/gold mismatch,
//! and the N-sweep that exposes reward hacking.
//!
//! Generative model for candidate `i` of an instruction:
//!
//! * latent quality `q_i ~ N(0, 1)`; the gold reward is `q_i`;
//! * proxy reward `q_i + s * t_i` with `t_i` Student-t distributed
//!   (`noise_dof` degrees of freedom). The heavy tail is what makes the
//!   highest proxy scores increasingly likely to be noise as N grows;
//! * embedding `c + r_i * u_i + jitter * xi_i`, where `c` is the instruction
//!   centroid, `u_i` a random unit direction inside a low-rank subspace and
//!   `r_i = spread * exp(-q_i / 2)`. Worse candidates sit farther from the
//!   centroid, so the MBR objective carries information about quality. With
//!   `couple_quality = false` the radius uses an independent draw instead;
//! * `logprob_i = -(10 + 10 * e_i)`, `e_i ~ Exp(1)`, independent of all else.
//!
//! Every instruction draws from its own ChaCha stream keyed by `(seed, index)`.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::{Candidate, CandidateSet};
use crate::error::{Error, Result};
use crate::selection::{Beta, Selector};
use crate::stats::{mean, spearman_rho};
use crate::tuning::{sweep_scored, ScoredSet, SweepReport};
use crate::utility::{utility_matrix, UtilityMatrix};

pub const PROXY: &str = "proxy";
pub const GOLD: &str = "gold";

const CALIBRATION_SALT: u64 = 0x5bd1_e995_9e37_79b9;
const CALIBRATION_INSTRUCTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_instructions: usize,
    pub n_candidates: usize,
    pub embed_dim: usize,
    /// Desired mean per-instruction Spearman correlation of proxy and gold.
    pub target_rho: f64,
    /// Scale of the proxy noise. See [`BenchConfig::calibrated`].
    pub noise_scale: f64,
    pub seed: u64,
    pub noise_dof: f64,
    pub latent_rank: usize,
    pub jitter: f64,
    pub spread: f64,
    pub couple_quality: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_instructions: 200,
            n_candidates: 128,
            embed_dim: 16,
            target_rho: 0.3,
            noise_scale: 0.0,
            seed: 0,
            noise_dof: 3.0,
            latent_rank: 3,
            jitter: 0.1,
            spread: 1.0,
            couple_quality: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n_instructions == 0 || self.n_candidates == 0 || self.embed_dim == 0 {
            return bad("instruction, candidate and dimension counts must be at least 1");
        }
        if !(self.target_rho > 0.0 && self.target_rho <= 1.0) {
            return bad("target_rho must lie in (0, 1]");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and non-negative");
        }
        if !(self.noise_dof > 0.0 && self.noise_dof.is_finite()) {
            return bad("noise_dof must be positive");
        }
        if self.latent_rank == 0 {
            return bad("latent_rank must be at least 1");
        }
        if !(self.jitter >= 0.0 && self.spread > 0.0) {
            return bad("jitter must be non-negative and spread positive");
        }
        Ok(())
    }

    /// Copy with `noise_scale` set by [`calibrate_noise_scale`].
    pub fn calibrated(&self) -> Result<Self> {
        Ok(Self {
            noise_scale: calibrate_noise_scale(self)?,
            ..self.clone()
        })
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Quality and raw (unscaled) proxy noise. Always the first draws of a stream,
/// so calibration sees exactly the values generation will use.
fn draw_rewards(rng: &mut ChaCha8Rng, n: usize, dof: f64) -> (Vec<f64>, Vec<f64>) {
    let t = StudentT::new(dof).expect("positive degrees of freedom");
    let quality: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let noise: Vec<f64> = (0..n).map(|_| t.sample(rng)).collect();
    (quality, noise)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    v
}

fn orthonormal_basis(rng: &mut ChaCha8Rng, rank: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            basis.push(unit(v));
        }
    }
    basis
}

/// Candidate set for instruction `index`; bit-identical for equal `(cfg, index)`.
pub fn generate_instance(cfg: &BenchConfig, index: usize) -> Result<CandidateSet> {
    cfg.validate()?;
    let n = cfg.n_candidates;
    let d = cfg.embed_dim;
    let mut rng = stream(cfg.seed, index as u64);
    let (quality, noise) = draw_rewards(&mut rng, n, cfg.noise_dof);

    let centroid = unit((0..d).map(|_| normal(&mut rng)).collect());
    let rank = cfg.latent_rank.min(d);
    let basis = orthonormal_basis(&mut rng, rank, d);

    let candidates = (0..n)
        .map(|i| {
            let nuisance = normal(&mut rng);
            let direction = unit((0..rank).map(|_| normal(&mut rng)).collect());
            let radius_driver = if cfg.couple_quality { quality[i] } else { nuisance };
            let radius = cfg.spread * (-radius_driver / 2.0).exp();
            let mut embedding = centroid.clone();
            for (coef, b) in direction.iter().zip(&basis) {
                embedding.iter_mut().zip(b).for_each(|(e, bj)| *e += radius * coef * bj);
            }
            for e in embedding.iter_mut() {
                *e += cfg.jitter * normal(&mut rng);
            }
            let tail: f64 = Exp1.sample(&mut rng);
            let proxy = if cfg.noise_scale == 0.0 {
                quality[i]
            } else {
                quality[i] + cfg.noise_scale * noise[i]
            };
            Candidate {
                id: i,
                text: format!("synthetic response {i} to instruction {index}"),
                rewards: [(PROXY.to_string(), proxy), (GOLD.to_string(), quality[i])]
                    .into_iter()
                    .collect(),
                embedding,
                logprob: Some(-(10.0 + 10.0 * tail)),
            }
        })
        .collect();

    Ok(CandidateSet {
        instruction_id: format!("syn-{index:05}"),
        instruction_text: format!("synthetic instruction {index}"),
        candidates,
    })
}

/// Instances for a range of instruction indices, generated in parallel.
pub fn generate_sets(cfg: &BenchConfig, indices: Range<usize>) -> Result<Vec<CandidateSet>> {
    indices.into_par_iter().map(|i| generate_instance(cfg, i)).collect()
}

/// Mean per-instruction Spearman correlation of proxy and gold; degenerate
/// instructions (constant rewards) are skipped.
pub fn realized_spearman(sets: &[CandidateSet], proxy: &str, gold: &str) -> Result<f64> {
    let mut rhos = Vec::with_capacity(sets.len());
    for s in sets {
        match spearman_rho(&s.rewards(proxy)?, &s.rewards(gold)?) {
            Ok(r) => rhos.push(r),
            Err(Error::DegenerateInput(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if rhos.is_empty() {
        return Err(Error::DegenerateInput(
            "no instruction has a defined rank correlation".into(),
        ));
    }
    Ok(mean(&rhos))
}

/// Noise scale whose realized mean Spearman correlation matches `target_rho`,
/// found by bisection on a calibration sample drawn from a salted seed.
pub fn calibrate_noise_scale(cfg: &BenchConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.target_rho >= 1.0 {
        return Ok(0.0);
    }
    if cfg.n_candidates < 2 {
        return Err(Error::InvalidArgument("calibration needs at least 2 candidates".into()));
    }
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..CALIBRATION_INSTRUCTIONS)
        .map(|i| {
            let mut rng = stream(cfg.seed ^ CALIBRATION_SALT, i as u64);
            draw_rewards(&mut rng, cfg.n_candidates, cfg.noise_dof)
        })
        .collect();
    let rho_at = |s: f64| -> f64 {
        let rhos: Vec<f64> = samples
            .iter()
            .filter_map(|(q, t)| {
                let proxy: Vec<f64> = q.iter().zip(t).map(|(a, b)| a + s * b).collect();
                spearman_rho(&proxy, q).ok()
            })
            .collect();
        mean(&rhos)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while rho_at(hi) > cfg.target_rho {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidArgument(format!(
                "target_rho {} is unreachable",
                cfg.target_rho
            )));
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if rho_at(mid) > cfg.target_rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `1, 2, 4, ...` up to and including `max` (which is appended if not a power of two).
pub fn power_of_two_grid(max: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|n| *n <= max)
        .collect();
    if grid.last() != Some(&max) && max > 0 {
        grid.push(max);
    }
    grid
}

/// Generated instructions together with their full utility matrices.
#[derive(Debug, Clone)]
pub struct BenchData {
    pub sets: Vec<CandidateSet>,
    pub matrices: Vec<UtilityMatrix>,
}

impl BenchData {
    pub fn generate(cfg: &BenchConfig, indices: Range<usize>) -> Result<Self> {
        let sets = generate_sets(cfg, indices)?;
        let matrices = sets.par_iter().map(utility_matrix).collect::<Result<_>>()?;
        Ok(Self { sets, matrices })
    }

    /// The evaluation split: instructions `0..n_instructions`.
    pub fn test_split(cfg: &BenchConfig) -> Result<Self> {
        Self::generate(cfg, 0..cfg.n_instructions)
    }

    /// A disjoint development split of the same size:
    /// instructions `n_instructions..2 * n_instructions`.
    pub fn dev_split(cfg: &BenchConfig) -> Result<Self> {
        Self::generate(cfg, cfg.n_instructions..2 * cfg.n_instructions)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn n_candidates(&self) -> usize {
        self.sets.iter().map(CandidateSet::len).min().unwrap_or(0)
    }

    /// Mean gold reward of `selector` when every instruction is restricted to
    /// its first `n` candidates.
    pub fn mean_gold_at(&self, n: usize, selector: &Selector) -> Result<f64> {
        let available = self.n_candidates();
        if n == 0 || n > available {
            return Err(Error::NExceedsCandidates { n, available });
        }
        let golds: Vec<f64> = self
            .sets
            .par_iter()
            .zip(&self.matrices)
            .map(|(set, m)| {
                let prefix = set.prefix(n)?;
                let sub = if selector.needs_matrix() {
                    Some(m.leading(n)?)
                } else {
                    None
                };
                let chosen = selector.select(&prefix, sub.as_ref())?.chosen_id;
                prefix.candidates[chosen].reward(GOLD)
            })
            .collect::<Result<_>>()?;
        Ok(mean(&golds))
    }

    /// `(N, mean gold)` for each N of `n_grid`.
    pub fn curve(&self, n_grid: &[usize], selector: &Selector) -> Result<Vec<CurvePoint>> {
        n_grid
            .iter()
            .map(|&n| {
                Ok(CurvePoint {
                    n,
                    mean_gold: self.mean_gold_at(n, selector)?,
                })
            })
            .collect()
    }
    /// Beta sweep for MBR-BoN over all candidates, reusing the stored matrices.
    pub fn sweep(&self, grid: &[Beta], normalize_mbr: bool) -> Result<SweepReport> {
        let scored: Vec<ScoredSet> = self
            .sets
            .par_iter()
            .zip(&self.matrices)
            .map(|(s, m)| ScoredSet::from_matrix(s, m, PROXY, GOLD, normalize_mbr))
            .collect::<Result<_>>()?;
        sweep_scored(&scored, grid)
    }
}

/// Full reward-hacking study: calibrate unless a noise scale is set, tune beta
/// on the development split, then trace BoN, MBR and tuned MBR-BoN over N on
/// the evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HackingStudy {
    pub config: BenchConfig,
    pub realized_rho: f64,
    pub dev_sweep: SweepReport,
    pub tuned_beta: Beta,
    pub bon: Vec<CurvePoint>,
    pub mbr: Vec<CurvePoint>,
    pub mbr_bon: Vec<CurvePoint>,
}

impl HackingStudy {
    pub fn run(cfg: &BenchConfig, calibrate: bool, grid: &[Beta]) -> Result<Self> {
        cfg.validate()?;
        let config = if calibrate { cfg.calibrated()? } else { cfg.clone() };
        let dev = BenchData::dev_split(&config)?;
        let dev_sweep = dev.sweep(grid, false)?;
        drop(dev);
        let tuned_beta = dev_sweep.best_beta;
        let test = BenchData::test_split(&config)?;
        let n_grid = power_of_two_grid(config.n_candidates);
        Ok(Self {
            realized_rho: realized_spearman(&test.sets, PROXY, GOLD)?,
            bon: test.curve(&n_grid, &Selector::bon(PROXY))?,
            mbr: test.curve(&n_grid, &Selector::mbr())?,
            mbr_bon: test.curve(&n_grid, &Selector::mbr_bon(PROXY, tuned_beta))?,
            config,
            dev_sweep,
            tuned_beta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean_gold: f64,
}

/// Mean gold reward against N for one selection rule on the evaluation split.
pub fn run_hacking_benchmark(cfg: &BenchConfig, n_grid: &[usize], selector: &Selector) -> Result<Vec<CurvePoint>> {
    if let Some(&n) = n_grid.iter().find(|n| **n > cfg.n_candidates || **n == 0) {
        return Err(Error::NExceedsCandidates {
            n,
            available: cfg.n_candidates,
        });
    }
    BenchData::test_split(cfg)?.curve(n_grid, selector)
}
