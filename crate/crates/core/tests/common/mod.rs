//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use hinge::hingraph::{GraphRecords, HeteroGraph};
use hinge::hypergraph::Hypergraph;
use hinge::DenseMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random hypergraph with distinct, non-empty hyperedges. Nodes may be
/// left uncovered.
pub fn random_hypergraph(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize, unit_weights: bool) -> Hypergraph {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let mut edges: Vec<Vec<usize>> = Vec::new();
    for _ in 0..m {
        let size = rng.random_range(1..=n.min(6));
        let mut members: Vec<usize> = (0..size).map(|_| rng.random_range(0..n)).collect();
        members.sort_unstable();
        members.dedup();
        if !edges.contains(&members) {
            edges.push(members);
        }
    }
    let weights = edges
        .iter()
        .map(|_| if unit_weights { 1.0 } else { 3.0 - rng.random_range(0.0..3.0) })
        .collect();
    let prov = vec!["rand".to_string(); edges.len()];
    Hypergraph::new(n, edges, weights, prov).unwrap()
}

/// Dense `N^{-1/2} S W A^{-1} Sᵀ N^{-1/2}` from explicit matrices, with a
/// weight-1 singleton for every uncovered node.
pub fn dense_adjacency_oracle(h: &Hypergraph) -> DenseMatrix {
    let n = h.num_nodes();
    let mut edges: Vec<Vec<usize>> = h.hyperedges().to_vec();
    let mut weights = h.weights().to_vec();
    for v in 0..n {
        if !edges.iter().any(|e| e.contains(&v)) {
            edges.push(vec![v]);
            weights.push(1.0);
        }
    }
    let m = edges.len();
    let s = DenseMatrix::from_fn(n, m, |v, e| if edges[e].contains(&v) { 1.0 } else { 0.0 });
    let node_deg: Vec<f64> = (0..n).map(|v| (0..m).map(|e| s[(v, e)]).sum()).collect();
    let edge_deg: Vec<f64> = (0..m).map(|e| edges[e].len() as f64).collect();
    let n_inv_sqrt = DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / node_deg[i].sqrt() } else { 0.0 });
    let w = DenseMatrix::from_fn(m, m, |i, j| if i == j { weights[i] } else { 0.0 });
    let a_inv = DenseMatrix::from_fn(m, m, |i, j| if i == j { 1.0 / edge_deg[i] } else { 0.0 });
    n_inv_sqrt
        .matmul(&s)
        .unwrap()
        .matmul(&w)
        .unwrap()
        .matmul(&a_inv)
        .unwrap()
        .matmul(&s.transpose())
        .unwrap()
        .matmul(&n_inv_sqrt)
        .unwrap()
}

pub fn eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let dm = nalgebra::DMatrix::from_row_slice(n, n, m.values());
    let mut ev: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Whether every node is reachable from node 0 through shared hyperedges.
pub fn is_connected(h: &Hypergraph) -> bool {
    let n = h.num_nodes();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for e in h.hyperedges().iter().filter(|e| e.contains(&v)) {
            for &u in e {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// A random `P`/`A`/`S` graph over `total` nodes. Every edge type
/// (`P-A`, `P-S`, `A-S`) has at least one edge.
pub fn random_hin(rng: &mut ChaCha8Rng, total: usize, density: f64) -> HeteroGraph {
    let types: Vec<&str> = (0..total)
        .map(|i| match i {
            0 => "P",
            1 => "A",
            2 => "S",
            _ => ["P", "A", "S"][rng.random_range(0..3)],
        })
        .collect();
    let nodes = types.iter().enumerate().map(|(i, t)| (i as u64, t.to_string())).collect();
    let mut edges = vec![(0, 1, "P-A".to_string()), (0, 2, "P-S".to_string()), (1, 2, "A-S".to_string())];
    for u in 0..total {
        for v in 0..total {
            let name = match (types[u], types[v]) {
                ("P", "A") => "P-A",
                ("P", "S") => "P-S",
                ("A", "S") => "A-S",
                _ => continue,
            };
            if (u, v) != (0, 1) && (u, v) != (0, 2) && (u, v) != (1, 2) && rng.random::<f64>() < density {
                edges.push((u as u64, v as u64, name.to_string()));
            }
        }
    }
    let features = (0..total)
        .filter(|&i| types[i] == "P")
        .map(|i| (i as u64, vec![rng.random::<f64>(), rng.random::<f64>()]))
        .collect();
    HeteroGraph::from_records(GraphRecords {
        nodes,
        edges,
        features,
        labels: None,
    })
    .unwrap()
}

/// Walk counts along `types` from dense typed adjacency blocks:
/// `C = B(t0,t1) · B(t1,t2) · …`, with `B` the undirected 0/1 block.
pub fn walk_count_oracle(g: &HeteroGraph, types: &[&str]) -> Vec<Vec<u64>> {
    let block = |a: usize, b: usize| -> Vec<Vec<u64>> {
        let (ra, rb) = (g.type_range(a), g.type_range(b));
        let mut m = vec![vec![0u64; rb.len()]; ra.len()];
        for e in g.edges() {
            for (x, y) in [(e.src, e.dst), (e.dst, e.src)] {
                if ra.contains(&x) && rb.contains(&y) {
                    m[x - ra.start][y - rb.start] = 1;
                }
            }
        }
        m
    };
    let idx: Vec<usize> = types.iter().map(|t| g.type_index(t).unwrap()).collect();
    let mut acc = block(idx[0], idx[1]);
    for w in idx[1..].windows(2) {
        let b = block(w[0], w[1]);
        acc = acc
            .iter()
            .map(|row| {
                (0..b[0].len())
                    .map(|j| row.iter().zip(&b).map(|(&x, brow)| x * brow[j]).sum())
                    .collect()
            })
            .collect();
    }
    acc
}

pub fn numeric_gradient(x: &DenseMatrix, step: f64, mut f: impl FnMut(&DenseMatrix) -> f64) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.values().len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + step;
        let up = f(&probe);
        probe.values_mut()[i] = orig - step;
        let down = f(&probe);
        probe.values_mut()[i] = orig;
        grad.values_mut()[i] = (up - down) / (2.0 * step);
    }
    grad
}

pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = a.zip_map(b, |x, y| x - y).unwrap().frobenius_norm();
    diff / a.frobenius_norm().max(b.frobenius_norm()).max(1e-8)
}

/// Scalar-loop contrastive loss with `pos_i = {i}` and every other node
/// negative, averaged over both view directions.
pub fn contrastive_oracle(a: &DenseMatrix, b: &DenseMatrix, tau: f64) -> f64 {
    let n = a.rows();
    let cos = |x: &[f64], y: &[f64]| {
        let mut dot = 0.0;
        let mut nx = 0.0;
        let mut ny = 0.0;
        for k in 0..x.len() {
            dot += x[k] * y[k];
            nx += x[k] * x[k];
            ny += y[k] * y[k];
        }
        dot / (nx.sqrt() * ny.sqrt())
    };
    let direction = |u: &DenseMatrix, v: &DenseMatrix| {
        let mut total = 0.0;
        for i in 0..n {
            let num = (cos(u.row(i), v.row(i)) / tau).exp();
            let mut den = 0.0;
            for k in 0..n {
                den += (cos(u.row(i), v.row(k)) / tau).exp();
            }
            total += -(num / den).ln();
        }
        total / n as f64
    };
    0.5 * (direction(a, b) + direction(b, a))
}

pub fn soft_assignment_oracle(z: &DenseMatrix, c: &DenseMatrix) -> DenseMatrix {
    let mut q = DenseMatrix::zeros(z.rows(), c.rows());
    for i in 0..z.rows() {
        let mut total = 0.0;
        for j in 0..c.rows() {
            let mut d = 0.0;
            for k in 0..z.cols() {
                d += (z[(i, k)] - c[(j, k)]).powi(2);
            }
            q[(i, j)] = 1.0 / (1.0 + d);
            total += q[(i, j)];
        }
        for j in 0..c.rows() {
            q[(i, j)] /= total;
        }
    }
    q
}

pub fn target_oracle(q: &DenseMatrix) -> DenseMatrix {
    let mut f = vec![0.0; q.cols()];
    for i in 0..q.rows() {
        for j in 0..q.cols() {
            f[j] += q[(i, j)];
        }
    }
    let mut p = DenseMatrix::zeros(q.rows(), q.cols());
    for i in 0..q.rows() {
        let mut total = 0.0;
        for j in 0..q.cols() {
            p[(i, j)] = q[(i, j)] * q[(i, j)] / f[j];
            total += p[(i, j)];
        }
        for j in 0..q.cols() {
            p[(i, j)] /= total;
        }
    }
    p
}

pub fn kl_oracle(p: &DenseMatrix, q: &DenseMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            if p[(i, j)] > 0.0 {
                total += p[(i, j)] * (p[(i, j)] / q[(i, j)]).ln();
            }
        }
    }
    total / p.rows() as f64
}

/// Random row-stochastic matrix with strictly positive entries.
pub fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let mut m = DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.01..1.0));
    for r in 0..rows {
        let total: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|v| *v /= total);
    }
    m
}
