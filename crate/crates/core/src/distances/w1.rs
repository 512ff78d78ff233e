use std::collections::VecDeque;

use ndarray::Array2;

use super::DiscreteDist;
use crate::error::{check_dim, DroError, Result};

/// Largest support size handled by the exact transport solver.
pub const W1_MAX_POINTS: usize = 512;

/// Exact 1-Wasserstein distance with Euclidean ground cost.
pub fn w1(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    if p.len() > W1_MAX_POINTS || q.len() > W1_MAX_POINTS {
        return Err(DroError::Capability(format!(
            "exact transport limited to {W1_MAX_POINTS} support points, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    if p.dim() == 1 {
        return Ok(w1_sorted(p, q));
    }
    let rows: Vec<usize> = (0..p.len()).filter(|&i| p.probs[i] > 0.0).collect();
    let cols: Vec<usize> = (0..q.len()).filter(|&j| q.probs[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| p.probs[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| q.probs[j]).collect();
    let mut cost = Array2::zeros((rows.len(), cols.len()));
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            let d2: f64 = p.points.row(i).iter().zip(q.points.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            cost[[r, c]] = d2.sqrt();
        }
    }
    Ok(transport(&a, &b, &cost)?.cost)
}

/// `int |F_P - F_Q|` for one-dimensional supports.
fn w1_sorted(p: &DiscreteDist, q: &DiscreteDist) -> f64 {
    let mut events: Vec<(f64, f64)> = p
        .points
        .column(0)
        .iter()
        .zip(&p.probs)
        .map(|(&x, &w)| (x, w))
        .chain(q.points.column(0).iter().zip(&q.probs).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

pub(crate) struct TransportPlan {
    pub cost: f64,
    /// Basic cells `(i, j, flow)`.
    #[cfg_attr(not(test), allow(dead_code))]
    pub cells: Vec<(usize, usize, f64)>,
}

/// Transportation simplex with northwest-corner start and u-v potentials.
///
/// Stops once every reduced cost is at least `-1e-11` times the cost scale,
/// which certifies optimality of the final basis.
pub(crate) fn transport(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<TransportPlan> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(DroError::Validation("transport needs nonempty marginals".into()));
    }
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    // absorb round-off imbalance in the last demand
    let imbalance = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    demand[n - 1] = (demand[n - 1] + imbalance).max(0.0);

    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = supply[i].min(demand[j]);
        cells.push((i, j));
        flow.push(f);
        supply[i] -= f;
        demand[j] -= f;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || supply[i] <= demand[j] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().fold(1.0f64, |s, c| s.max(c.abs()));
    let tol = 1e-11 * scale;
    let mut basic = Array2::<bool>::from_elem((m, n), false);
    for &(i, j) in &cells {
        basic[[i, j]] = true;
    }
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let max_pivots = 50 * m * n + 100;

    for _ in 0..max_pivots {
        potentials(m, n, &cells, cost, &mut u, &mut v);
        let mut best = (-tol, usize::MAX, usize::MAX);
        for i in 0..m {
            for j in 0..n {
                if !basic[[i, j]] {
                    let rc = cost[[i, j]] - u[i] - v[j];
                    if rc < best.0 {
                        best = (rc, i, j);
                    }
                }
            }
        }
        if best.1 == usize::MAX {
            let total = cells.iter().zip(&flow).map(|(&(i, j), f)| f * cost[[i, j]]).sum();
            return Ok(TransportPlan {
                cost: total,
                cells: cells.iter().zip(&flow).map(|(&(i, j), &f)| (i, j, f)).collect(),
            });
        }
        let (_, ei, ej) = best;
        let path = tree_path(m, n, &cells, ei, ej);
        // path cells alternate -, +, -, ... starting next to row ei
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 && flow[c] < theta {
                theta = flow[c];
                leave = c;
            }
        }
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[c] -= theta;
            } else {
                flow[c] += theta;
            }
        }
        let (li, lj) = cells[leave];
        basic[[li, lj]] = false;
        basic[[ei, ej]] = true;
        cells[leave] = (ei, ej);
        flow[leave] = theta;
    }
    Err(DroError::Solver("transport simplex exceeded its pivot budget".into()))
}

fn adjacency(m: usize, n: usize, cells: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m + n];
    for (k, &(i, j)) in cells.iter().enumerate() {
        adj[i].push(k);
        adj[m + j].push(k);
    }
    adj
}

fn potentials(m: usize, n: usize, cells: &[(usize, usize)], cost: &Array2<f64>, u: &mut [f64], v: &mut [f64]) {
    let adj = adjacency(m, n, cells);
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::new();
    // the basis is a spanning tree, so one root reaches every node
    seen[0] = true;
    u[0] = 0.0;
    queue.push_back(0);
    while let Some(node) = queue.pop_front() {
        for &k in &adj[node] {
            let (i, j) = cells[k];
            let other = if node < m { m + j } else { i };
            if seen[other] {
                continue;
            }
            seen[other] = true;
            if other >= m {
                v[j] = cost[[i, j]] - u[i];
            } else {
                u[i] = cost[[i, j]] - v[j];
            }
            queue.push_back(other);
        }
    }
}

/// Basis cells on the tree path from row `ei` to column `ej`, in order.
fn tree_path(m: usize, n: usize, cells: &[(usize, usize)], ei: usize, ej: usize) -> Vec<usize> {
    let adj = adjacency(m, n, cells);
    let mut via = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::new();
    seen[ei] = true;
    queue.push_back(ei);
    let target = m + ej;
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &k in &adj[node] {
            let (i, j) = cells[k];
            let other = if node < m { m + j } else { i };
            if !seen[other] {
                seen[other] = true;
                via[other] = k;
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = target;
    while node != ei {
        let k = via[node];
        path.push(k);
        let (i, j) = cells[k];
        node = if node >= m { i } else { m + j };
    }
    path.reverse();
    path
}
