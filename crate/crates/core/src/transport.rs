//! Exact discrete optimal transport and the MBR / Wasserstein equivalence.
//!
//! [`exact_wd`] solves the transportation linear program with the primal
//! transportation simplex (MODI potentials on a spanning-tree basis). Pricing
//! is Dantzig's most-negative rule; after a run of degenerate pivots it falls
//! back to Bland's rule until progress resumes, which rules out cycling.

use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::error::{Error, Result};
use crate::utility::{mbr_objectives, UtilityMatrix};

pub const MAX_SUPPORT: usize = 256;
pub const MAX_ORACLE_SUPPORT: usize = 64;
pub const MARGINAL_TOL: f64 = 1e-7;
/// Values closer than this to the optimum count as tied in argmax/argmin sets.
pub const TIE_TOL: f64 = 1e-9;

const SUM_TOL: f64 = 1e-9;

/// Probability vector over a shared finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::NotADistribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::NotADistribution(format!("invalid mass {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::NotADistribution(format!("masses sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::IndexOutOfRange { index: at, n });
        }
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// A coupling `mu` (row-major, `n x n`) and its total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub n: usize,
    pub couplings: Vec<f64>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.couplings[i * self.n..(i + 1) * self.n].iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n).map(|j| (0..self.n).map(|i| self.get(i, j)).sum()).collect()
    }

    /// Largest marginal residual against `p` (rows) and `q` (columns).
    pub fn marginal_error(&self, p: &DiscreteDistribution, q: &DiscreteDistribution) -> f64 {
        let (row_sums, col_sums) = (self.row_sums(), self.col_sums());
        let rows = row_sums.iter().zip(p.probs()).map(|(a, b)| (a - b).abs());
        let cols = col_sums.iter().zip(q.probs()).map(|(a, b)| (a - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// `min_{mu in J(P, Q)} sum_ij mu_ij C_ij`, solved exactly. `cost` is row-major `n x n`.
pub fn exact_wd(p: &DiscreteDistribution, q: &DiscreteDistribution, cost: &[f64]) -> Result<(f64, TransportPlan)> {
    let n = p.len();
    if q.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "distributions have support sizes {n} and {}",
            q.len()
        )));
    }
    if cost.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            n * n
        )));
    }
    if n > MAX_SUPPORT {
        return Err(Error::SupportTooLarge { n, max: MAX_SUPPORT });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            candidate_id: 0,
            field: "cost matrix".into(),
        });
    }
    let mut solver = Simplex::new(n, cost, p.probs(), q.probs());
    solver.solve()?;
    Ok(solver.into_plan())
}

struct Simplex<'a> {
    n: usize,
    cost: &'a [f64],
    flow: Vec<f64>,
    basic: Vec<bool>,
    basis: Vec<usize>,
}

/// Spanning tree over 2n nodes: rows are `0..n`, columns `n..2n`.
struct Tree {
    u: Vec<f64>,
    v: Vec<f64>,
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
}

impl<'a> Simplex<'a> {
    /// Northwest-corner start: exactly 2n - 1 basic cells, degenerate ones included.
    fn new(n: usize, cost: &'a [f64], supply: &[f64], demand: &[f64]) -> Self {
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let mut flow = vec![0.0; n * n];
        let mut basic = vec![false; n * n];
        let mut basis = Vec::with_capacity(2 * n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = if i == n - 1 && j == n - 1 {
                // absorbs the (at most 1e-9) imbalance between the two totals
                a[i].max(b[j]).max(0.0)
            } else {
                a[i].min(b[j]).max(0.0)
            };
            let cell = i * n + j;
            flow[cell] = x;
            basic[cell] = true;
            basis.push(cell);
            a[i] -= x;
            b[j] -= x;
            if i == n - 1 && j == n - 1 {
                break;
            } else if i == n - 1 {
                j += 1;
            } else if j == n - 1 || a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            n,
            cost,
            flow,
            basic,
            basis,
        }
    }

    fn tree(&self) -> Tree {
        let n = self.n;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 2 * n];
        for &cell in &self.basis {
            let (i, j) = (cell / n, cell % n);
            adj[i].push((n + j, cell));
            adj[n + j].push((i, cell));
        }
        let mut t = Tree {
            u: vec![0.0; n],
            v: vec![0.0; n],
            parent: vec![usize::MAX; 2 * n],
            parent_cell: vec![usize::MAX; 2 * n],
            depth: vec![0; 2 * n],
        };
        let mut seen = vec![false; 2 * n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &(next, cell) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                t.parent[next] = node;
                t.parent_cell[next] = cell;
                t.depth[next] = t.depth[node] + 1;
                if next >= n {
                    t.v[next - n] = self.cost[cell] - t.u[node];
                } else {
                    t.u[next] = self.cost[cell] - t.v[node - n];
                }
                stack.push(next);
            }
        }
        debug_assert!(seen.iter().all(|s| *s), "basis is not a spanning tree");
        t
    }

    /// Cells on the tree path from column node of `j` to row node `i`,
    /// ordered starting at the column end.
    fn path(&self, t: &Tree, i: usize, j: usize) -> Vec<usize> {
        let mut a = self.n + j;
        let mut b = i;
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while t.depth[a] > t.depth[b] {
            from_a.push(t.parent_cell[a]);
            a = t.parent[a];
        }
        while t.depth[b] > t.depth[a] {
            from_b.push(t.parent_cell[b]);
            b = t.parent[b];
        }
        while a != b {
            from_a.push(t.parent_cell[a]);
            a = t.parent[a];
            from_b.push(t.parent_cell[b]);
            b = t.parent[b];
        }
        from_b.reverse();
        from_a.extend(from_b);
        from_a
    }

    fn solve(&mut self) -> Result<()> {
        let n = self.n;
        let scale = 1.0 + self.cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let eps = 1e-12 * scale;
        let max_iters = 100 * n * n + 1000;
        let mut degenerate_run = 0usize;

        for _ in 0..max_iters {
            let t = self.tree();
            let bland = degenerate_run > 2 * n;
            let mut entering = None;
            let mut best = -eps;
            'pricing: for i in 0..n {
                for j in 0..n {
                    let cell = i * n + j;
                    if self.basic[cell] {
                        continue;
                    }
                    let reduced = self.cost[cell] - t.u[i] - t.v[j];
                    if reduced < best {
                        entering = Some(cell);
                        if bland {
                            break 'pricing;
                        }
                        best = reduced;
                    }
                }
            }
            let Some(enter) = entering else {
                return Ok(());
            };

            let (ei, ej) = (enter / n, enter % n);
            let path = self.path(&t, ei, ej);
            // path[0], path[2], ... lose flow; path[1], path[3], ... gain it
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for &cell in path.iter().step_by(2) {
                let f = self.flow[cell].max(0.0);
                if f < theta || (f == theta && cell < leave) {
                    theta = f;
                    leave = cell;
                }
            }
            for (k, &cell) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[cell] = (self.flow[cell] - theta).max(0.0);
                } else {
                    self.flow[cell] += theta;
                }
            }
            self.flow[enter] = theta;
            self.flow[leave] = 0.0;
            self.basic[leave] = false;
            self.basic[enter] = true;
            let pos = self
                .basis
                .iter()
                .position(|c| *c == leave)
                .expect("leaving cell is basic");
            self.basis[pos] = enter;

            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
        Err(Error::InvalidArgument(format!(
            "transport simplex did not converge in {max_iters} pivots"
        )))
    }

    fn into_plan(self) -> (f64, TransportPlan) {
        let cost = self.basis.iter().map(|&c| self.flow[c] * self.cost[c]).sum::<f64>();
        (
            cost,
            TransportPlan {
                n: self.n,
                couplings: self.flow,
                cost,
            },
        )
    }
}

/// Closed form of `exact_wd(point mass at y, uniform, -U)`: minus the MBR objective of `y`.
pub fn wd_point_mass(y_index: usize, m: &UtilityMatrix) -> Result<f64> {
    if y_index >= m.n() {
        return Err(Error::IndexOutOfRange {
            index: y_index,
            n: m.n(),
        });
    }
    Ok(-mbr_objectives(m).values[y_index])
}

/// Outcome of checking MBR decoding against WD minimization on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub instruction_id: String,
    pub n: usize,
    pub mbr_argmax: Vec<usize>,
    pub wd_argmin: Vec<usize>,
    /// `max_i |exact_wd_i - wd_point_mass_i|`.
    pub max_abs_gap: f64,
    /// Largest deviation of any optimal plan from the forced plan `mu_{y,j} = 1/N`.
    pub max_plan_error: f64,
    pub exact_wd: Vec<f64>,
}

impl PropositionReport {
    pub fn holds(&self) -> bool {
        self.mbr_argmax == self.wd_argmin && self.max_abs_gap <= MARGINAL_TOL && self.max_plan_error <= MARGINAL_TOL
    }
}

fn near_optimal(values: &[f64], maximize: bool) -> Vec<usize> {
    let best = if maximize {
        values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        values.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| (**v - best).abs() <= TIE_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// Solves the transport problem from every point mass to the empirical
/// distribution and compares with the MBR objective. Never fails on a mismatch;
/// see [`verify_proposition1`] for the erroring variant.
pub fn check_proposition1(set: &CandidateSet, m: &UtilityMatrix) -> Result<PropositionReport> {
    let n = set.len();
    if m.n() != n {
        return Err(Error::MatrixShapeMismatch {
            expected: n,
            found: m.n(),
        });
    }
    if n > MAX_ORACLE_SUPPORT {
        return Err(Error::SupportTooLarge {
            n,
            max: MAX_ORACLE_SUPPORT,
        });
    }
    let cost = m.negated();
    let empirical = DiscreteDistribution::uniform(n)?;
    let mbr = mbr_objectives(m).values;
    let mut exact = Vec::with_capacity(n);
    let mut gap = 0.0f64;
    let mut plan_error = 0.0f64;
    for y in 0..n {
        let point = DiscreteDistribution::point_mass(n, y)?;
        let (wd, plan) = exact_wd(&point, &empirical, &cost)?;
        gap = gap.max((wd - wd_point_mass(y, m)?).abs());
        for i in 0..n {
            for j in 0..n {
                let forced = if i == y { 1.0 / n as f64 } else { 0.0 };
                plan_error = plan_error.max((plan.get(i, j) - forced).abs());
            }
        }
        exact.push(wd);
    }
    Ok(PropositionReport {
        instruction_id: set.instruction_id.clone(),
        n,
        mbr_argmax: near_optimal(&mbr, true),
        wd_argmin: near_optimal(&exact, false),
        max_abs_gap: gap,
        max_plan_error: plan_error,
        exact_wd: exact,
    })
}

/// Like [`check_proposition1`] but a mismatch is an error.
pub fn verify_proposition1(set: &CandidateSet, m: &UtilityMatrix) -> Result<PropositionReport> {
    let report = check_proposition1(set, m)?;
    if !report.holds() {
        return Err(Error::PropositionViolation(format!(
            "instruction `{}`: mbr argmax {:?}, wd argmin {:?}, gap {:e}, plan error {:e}",
            report.instruction_id, report.mbr_argmax, report.wd_argmin, report.max_abs_gap, report.max_plan_error
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::fixtures::set_with;
    use crate::oracles::brute_force_wd;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(p.to_vec()).unwrap()
    }

    const SWAP: [f64; 4] = [0.0, 1.0, 1.0, 0.0];

    #[test]
    fn two_point_examples() {
        let (wd, plan) = exact_wd(&dist(&[0.5, 0.5]), &dist(&[0.5, 0.5]), &SWAP).unwrap();
        assert_eq!(wd, 0.0);
        assert_eq!(plan.couplings, vec![0.5, 0.0, 0.0, 0.5]);

        let (wd, _) = exact_wd(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0]), &SWAP).unwrap();
        assert_eq!(wd, 1.0);

        // couplings: mu_01 = 0.5 is forced, so cost 0.5
        let (wd, plan) = exact_wd(&dist(&[0.5, 0.5]), &dist(&[0.0, 1.0]), &SWAP).unwrap();
        assert!((wd - 0.5).abs() < 1e-12);
        assert!((wd - brute_force_wd(&[0.5, 0.5], &[0.0, 1.0], &SWAP)).abs() < 1e-12);
        assert!(plan.marginal_error(&dist(&[0.5, 0.5]), &dist(&[0.0, 1.0])) < 1e-12);
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(DiscreteDistribution::point_mass(3, 3).is_err());
    }

    #[test]
    fn shape_errors() {
        let p = dist(&[0.5, 0.5]);
        assert!(matches!(
            exact_wd(&p, &dist(&[1.0]), &SWAP),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(exact_wd(&p, &p, &[0.0; 3]), Err(Error::ShapeMismatch(_))));
        let big = DiscreteDistribution::uniform(257).unwrap();
        assert!(matches!(
            exact_wd(&big, &big, &vec![0.0; 257 * 257]),
            Err(Error::SupportTooLarge { n: 257, .. })
        ));
    }

    #[test]
    fn point_mass_closed_form() {
        let m = UtilityMatrix::from_rows(&[vec![1.0, 0.5, 0.2], vec![0.5, 1.0, 0.4], vec![0.2, 0.4, 1.0]]).unwrap();
        assert!((wd_point_mass(0, &m).unwrap() + 1.7 / 3.0).abs() < 1e-12);
        assert_eq!(
            wd_point_mass(0, &UtilityMatrix::from_rows(&[vec![1.0]]).unwrap()).unwrap(),
            -1.0
        );
        let ones = UtilityMatrix::from_values(4, vec![1.0; 16]).unwrap();
        assert_eq!(wd_point_mass(3, &ones).unwrap(), -1.0);
        assert!(matches!(
            wd_point_mass(3, &m),
            Err(Error::IndexOutOfRange { index: 3, n: 3 })
        ));

        let set = set_with(&[0.0; 3], &[0.0; 3], &vec![vec![1.0]; 3]);
        let report = verify_proposition1(&set, &m).unwrap();
        assert_eq!(report.mbr_argmax, vec![1]);
        assert_eq!(report.wd_argmin, vec![1]);
        assert!(report.max_abs_gap <= 1e-9);
    }

    #[test]
    fn single_candidate_proposition() {
        let set = set_with(&[0.0], &[0.0], &[vec![1.0]]);
        let m = UtilityMatrix::from_rows(&[vec![1.0]]).unwrap();
        let report = verify_proposition1(&set, &m).unwrap();
        assert_eq!(report.mbr_argmax, vec![0]);
        assert_eq!(report.wd_argmin, vec![0]);
        assert_eq!(report.max_abs_gap, 0.0);
    }

    #[test]
    fn large_degenerate_instance_converges() {
        // uniform marginals with a permutation-like cost are highly degenerate
        let n = 40;
        let cost: Vec<f64> = (0..n * n)
            .map(|c| {
                if (c / n + 3) % n == c % n {
                    -1.0
                } else {
                    ((c * 7919) % 13) as f64 / 13.0
                }
            })
            .collect();
        let u = DiscreteDistribution::uniform(n).unwrap();
        let (wd, plan) = exact_wd(&u, &u, &cost).unwrap();
        assert!((wd + 1.0).abs() < 1e-9);
        assert!(plan.marginal_error(&u, &u) < MARGINAL_TOL);
    }

    fn simplex_point(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|w| {
            let mut w = w;
            w[0] += 1e-3;
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
    }

    fn problem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..5).prop_flat_map(|n| {
            (
                simplex_point(n),
                simplex_point(n),
                prop::collection::vec(-1.0f64..1.0, n * n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_enumeration_oracle((p, q, c) in problem()) {
            let pd = DiscreteDistribution::new(p.clone()).unwrap();
            let qd = DiscreteDistribution::new(q.clone()).unwrap();
            let (wd, plan) = exact_wd(&pd, &qd, &c).unwrap();
            prop_assert!((wd - brute_force_wd(&p, &q, &c)).abs() <= 1e-9);
            prop_assert!(plan.marginal_error(&pd, &qd) <= MARGINAL_TOL);
            prop_assert!(plan.couplings.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn identity_coupling_bound((p, _q, c) in problem()) {
            let n = p.len();
            let pd = DiscreteDistribution::new(p.clone()).unwrap();
            let (wd, _) = exact_wd(&pd, &pd, &c).unwrap();
            let diag: f64 = (0..n).map(|i| p[i] * c[i * n + i]).sum();
            prop_assert!(wd <= diag + 1e-12);
        }

        #[test]
        fn transpose_symmetry((p, q, c) in problem()) {
            let n = p.len();
            let ct: Vec<f64> = (0..n * n).map(|k| c[(k % n) * n + k / n]).collect();
            let pd = DiscreteDistribution::new(p).unwrap();
            let qd = DiscreteDistribution::new(q).unwrap();
            let (a, _) = exact_wd(&pd, &qd, &c).unwrap();
            let (b, _) = exact_wd(&qd, &pd, &ct).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
