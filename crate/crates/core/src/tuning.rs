//! Beta tuning on a development split, proxy-vs-gold evaluation and the
//! development-set-size ablation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::error::{Error, Result};
use crate::selection::{argmax_regularized, Beta, Selector};
use crate::stats::{mean, std_dev};
use crate::utility::{mbr_objectives, normalize_unit_interval, utility_matrix, UtilityMatrix};

pub use crate::stats::spearman_rho;

/// `0` followed by the 1-2-5 grid `1e-6, 2e-6, 5e-6, 1e-5, ..., 1e1, 2e1`.
pub fn default_beta_grid() -> Vec<Beta> {
    let mut grid = vec![Beta::ZERO];
    for exp in -6..=1 {
        for mantissa in [1, 2, 5] {
            if exp == 1 && mantissa == 5 {
                break;
            }
            // parse the decimal literal so e.g. 2e-6 is the nearest double, not 2 * 1e-6
            let v: f64 = format!("{mantissa}e{exp}").parse().expect("valid literal");
            grid.push(Beta::new(v).expect("positive"));
        }
    }
    grid
}

/// Proxy, gold and MBR values of one instruction, ready for repeated selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub instruction_id: String,
    pub proxy: Vec<f64>,
    pub gold: Vec<f64>,
    pub mbr: Vec<f64>,
}

impl ScoredSet {
    pub fn from_matrix(
        set: &CandidateSet,
        m: &UtilityMatrix,
        proxy: &str,
        gold: &str,
        normalize_mbr: bool,
    ) -> Result<Self> {
        if m.n() != set.len() {
            return Err(Error::MatrixShapeMismatch {
                expected: set.len(),
                found: m.n(),
            });
        }
        let mut mbr = mbr_objectives(m).values;
        if normalize_mbr {
            mbr = normalize_unit_interval(&mbr);
        }
        Ok(Self {
            instruction_id: set.instruction_id.clone(),
            proxy: set.rewards(proxy)?,
            gold: set.rewards(gold)?,
            mbr,
        })
    }

    /// The same instruction restricted to its first `n` candidates, with the
    /// MBR objective recomputed over that prefix from the full utility matrix.
    pub fn prefix_from_matrix(
        set: &CandidateSet,
        m: &UtilityMatrix,
        n: usize,
        proxy: &str,
        gold: &str,
        normalize_mbr: bool,
    ) -> Result<Self> {
        Self::from_matrix(&set.prefix(n)?, &m.leading(n)?, proxy, gold, normalize_mbr)
    }

    pub fn select(&self, beta: Beta) -> usize {
        argmax_regularized(&self.proxy, &self.mbr, beta)
    }
}

/// Builds [`ScoredSet`]s for every instruction in parallel, preserving order.
pub fn score_sets(sets: &[CandidateSet], proxy: &str, gold: &str, normalize_mbr: bool) -> Result<Vec<ScoredSet>> {
    sets.par_iter()
        .map(|s| {
            let m = utility_matrix(s).map_err(|e| with_instruction(s, e))?;
            ScoredSet::from_matrix(s, &m, proxy, gold, normalize_mbr).map_err(|e| with_instruction(s, e))
        })
        .collect()
}

fn with_instruction(set: &CandidateSet, e: Error) -> Error {
    Error::Validation {
        instruction_id: set.instruction_id.clone(),
        source: Box::new(e),
    }
}

/// Mean gold reward of the candidates `selector` picks.
pub fn evaluate_selection(sets: &[CandidateSet], selector: &Selector, gold: &str) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    let golds: Vec<f64> = sets
        .par_iter()
        .map(|s| {
            let m = if selector.needs_matrix() {
                Some(utility_matrix(s)?)
            } else {
                None
            };
            let chosen = selector.select(s, m.as_ref())?.chosen_id;
            s.candidates[chosen].reward(gold)
        })
        .collect::<Result<_>>()?;
    Ok(mean(&golds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: Beta,
    pub mean_proxy: f64,
    pub mean_gold: f64,
    pub mean_mbr: f64,
    pub n_instructions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub selection_rule: String,
    pub points: Vec<SweepPoint>,
    pub best_beta: Beta,
    /// The optimum sits on the largest beta of a multi-point grid; the true
    /// optimum may lie beyond it.
    pub best_at_upper_edge: bool,
}

impl SweepReport {
    pub fn betas(&self) -> Vec<Beta> {
        self.points.iter().map(|p| p.beta).collect()
    }

    pub fn point(&self, beta: Beta) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.beta == beta)
    }

    pub fn best(&self) -> &SweepPoint {
        self.point(self.best_beta).expect("best beta is on the grid")
    }
}

fn sorted_grid(grid: &[Beta]) -> Result<Vec<Beta>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("beta grid is empty".into()));
    }
    let mut g = grid.to_vec();
    g.sort_by(|a, b| a.value().total_cmp(&b.value()));
    g.dedup();
    Ok(g)
}

/// MBR-BoN at one beta: means of proxy, gold and MBR objective of the picks.
pub fn sweep_point(scored: &[ScoredSet], beta: Beta) -> SweepPoint {
    let picks: Vec<(f64, f64, f64)> = scored
        .par_iter()
        .map(|s| {
            let c = s.select(beta);
            (s.proxy[c], s.gold[c], s.mbr[c])
        })
        .collect();
    let n = picks.len() as f64;
    let (p, g, m) = picks
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    SweepPoint {
        beta,
        mean_proxy: p / n,
        mean_gold: g / n,
        mean_mbr: m / n,
        n_instructions: picks.len(),
    }
}

/// Sweeps MBR-BoN over `grid` on pre-scored instructions. The grid is sorted
/// ascending; ties in mean gold go to the smaller beta.
pub fn sweep_scored(scored: &[ScoredSet], grid: &[Beta]) -> Result<SweepReport> {
    if scored.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    let grid = sorted_grid(grid)?;
    let points: Vec<SweepPoint> = grid.iter().map(|b| sweep_point(scored, *b)).collect();
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean_gold > points[best].mean_gold {
            best = i;
        }
    }
    Ok(SweepReport {
        selection_rule: "mbr-bon".into(),
        best_beta: points[best].beta,
        best_at_upper_edge: points.len() > 1 && best == points.len() - 1,
        points,
    })
}

/// Tunes beta for MBR-BoN on a development split by maximizing mean gold reward.
pub fn beta_sweep(
    dev: &[CandidateSet],
    proxy: &str,
    gold: &str,
    grid: &[Beta],
    normalize_mbr: bool,
) -> Result<SweepReport> {
    if dev.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    let mut report = sweep_scored(&score_sets(dev, proxy, gold, normalize_mbr)?, grid)?;
    if normalize_mbr {
        report.selection_rule = "mbr-bon (normalized mbr)".into();
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub size: usize,
    pub mean_gold: f64,
    pub std_gold: f64,
    pub seeds: Vec<u64>,
    pub tuned_betas: Vec<Beta>,
}

/// Indices of a seeded subsample without replacement, in ascending order.
pub fn subsample_indices(len: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > len {
        return Err(Error::SizeExceedsDev { size, dev: len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// For each size and seed: tune beta on a subsample of `dev`, then report the
/// mean gold reward at that beta on the held-out `eval` split.
pub fn dev_size_ablation_scored(
    dev: &[ScoredSet],
    eval: &[ScoredSet],
    sizes: &[usize],
    seeds: &[u64],
    grid: &[Beta],
) -> Result<Vec<AblationRow>> {
    if dev.is_empty() || eval.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    if let Some(&size) = sizes.iter().find(|s| **s > dev.len() || **s == 0) {
        return Err(Error::SizeExceedsDev { size, dev: dev.len() });
    }
    sizes
        .iter()
        .map(|&size| {
            let mut golds = Vec::with_capacity(seeds.len());
            let mut betas = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let idx = subsample_indices(dev.len(), size, seed)?;
                let sub: Vec<ScoredSet> = idx.iter().map(|&i| dev[i].clone()).collect();
                let beta = sweep_scored(&sub, grid)?.best_beta;
                golds.push(sweep_point(eval, beta).mean_gold);
                betas.push(beta);
            }
            Ok(AblationRow {
                size,
                mean_gold: mean(&golds),
                std_gold: std_dev(&golds),
                seeds: seeds.to_vec(),
                tuned_betas: betas,
            })
        })
        .collect()
}

/// [`dev_size_ablation_scored`] starting from raw candidate sets.
#[allow(clippy::too_many_arguments)]
pub fn dev_size_ablation(
    dev: &[CandidateSet],
    eval: &[CandidateSet],
    sizes: &[usize],
    seeds: &[u64],
    proxy: &str,
    gold: &str,
    grid: &[Beta],
    normalize_mbr: bool,
) -> Result<Vec<AblationRow>> {
    if dev.is_empty() || eval.is_empty() {
        return Err(Error::EmptyDevSet);
    }
    if let Some(&size) = sizes.iter().find(|s| **s > dev.len()) {
        return Err(Error::SizeExceedsDev { size, dev: dev.len() });
    }
    let dev = score_sets(dev, proxy, gold, normalize_mbr)?;
    let eval = score_sets(eval, proxy, gold, normalize_mbr)?;
    dev_size_ablation_scored(&dev, &eval, sizes, seeds, grid)
}
