//! Slow reference implementations used only by tests. Each one follows a
//! different computational route from the production code it checks.

/// Optimal transport cost by enumerating every spanning-tree basis of the
/// transportation polytope (every vertex has one), solving its unique flow and
/// keeping the cheapest feasible one. Exponential; intended for `n <= 5`.
pub fn brute_force_wd(p: &[f64], q: &[f64], cost: &[f64]) -> f64 {
    let n = p.len();
    assert_eq!(q.len(), n);
    assert_eq!(cost.len(), n * n);
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(2 * n - 1);
    let parent: Vec<usize> = (0..2 * n).collect();
    enumerate_trees(n, 0, &parent, &mut chosen, &mut |tree| {
        if let Some(flow) = tree_flow(n, tree, p, q) {
            let c: f64 = tree.iter().zip(&flow).map(|(cell, f)| f * cost[*cell]).sum();
            if c < best {
                best = c;
            }
        }
    });
    best
}

fn find(parent: &[usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

fn enumerate_trees(n: usize, next: usize, parent: &[usize], chosen: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    let need = 2 * n - 1;
    if chosen.len() == need {
        visit(chosen);
        return;
    }
    let cells = n * n;
    if cells - next < need - chosen.len() {
        return;
    }
    for cell in next..cells {
        if cells - cell < need - chosen.len() {
            break;
        }
        let (ri, cj) = (find(parent, cell / n), find(parent, n + cell % n));
        if ri == cj {
            continue;
        }
        let mut merged = parent.to_vec();
        merged[ri] = cj;
        chosen.push(cell);
        enumerate_trees(n, cell + 1, &merged, chosen, visit);
        chosen.pop();
    }
}

/// Unique flow on a spanning tree by peeling leaves; `None` if any flow is negative.
fn tree_flow(n: usize, tree: &[usize], p: &[f64], q: &[f64]) -> Option<Vec<f64>> {
    let mut residual: Vec<f64> = p.iter().chain(q).copied().collect();
    let mut degree = vec![0usize; 2 * n];
    for cell in tree {
        degree[cell / n] += 1;
        degree[n + cell % n] += 1;
    }
    let mut flow = vec![f64::NAN; tree.len()];
    let mut done = vec![false; tree.len()];
    for _ in 0..tree.len() {
        let (k, leaf, other) = tree
            .iter()
            .enumerate()
            .filter(|(k, _)| !done[*k])
            .find_map(|(k, cell)| {
                let (r, c) = (cell / n, n + cell % n);
                if degree[r] == 1 {
                    Some((k, r, c))
                } else if degree[c] == 1 {
                    Some((k, c, r))
                } else {
                    None
                }
            })?;
        let f = residual[leaf];
        flow[k] = f;
        done[k] = true;
        residual[leaf] = 0.0;
        residual[other] -= f;
        degree[leaf] -= 1;
        degree[other] -= 1;
    }
    if flow.iter().any(|f| *f < -1e-12) {
        None
    } else {
        Some(flow)
    }
}

/// Spearman correlation from quadratic-time average ranks:
/// `rank_i = #{x_j < x_i} + (#{x_j = x_i} + 1) / 2`, followed by a textbook Pearson.
pub fn brute_force_spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = quadratic_ranks(a);
    let rb = quadratic_ranks(b);
    pearson(&ra, &rb)
}

pub fn quadratic_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            let less = x.iter().filter(|xj| *xj < xi).count() as f64;
            let equal = x.iter().filter(|xj| *xj == xi).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Sample covariance (divisor `N - 1`) of row-vector data.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    cov
}

/// Leading eigenpair of a symmetric positive semi-definite matrix by power iteration.
pub fn power_iteration(m: &[Vec<f64>], iters: usize) -> (f64, Vec<f64>) {
    let d = m.len();
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + k as f64 * 0.1).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| m[a][b] * v[b]).sum()).collect();
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return (0.0, v);
        }
        lambda = nrm;
        v = w.iter().map(|x| x / nrm).collect();
    }
    (lambda, v)
}
