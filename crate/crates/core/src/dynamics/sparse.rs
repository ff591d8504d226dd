//! Sparse symmetric matrices and an envelope (profile) Cholesky factorization
//! under reverse Cuthill-McKee ordering.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as full rows (both triangles).
#[derive(Debug, Clone, Default)]
pub struct SparseSym {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SparseSym {
    pub fn new(n: usize) -> Self {
        SparseSym {
            rows: vec![BTreeMap::new(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Add `v` at `(i, j)` only; callers keep the matrix symmetric.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        *self.rows[i].entry(j).or_insert(0.0) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].get(&j).copied().unwrap_or(0.0)
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[i].iter().map(|(&j, &v)| (j, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(&j, &v)| v * x[j]).sum()).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `A * diag(d) * A` for symmetric `A`.
    pub fn sandwich(&self, d: &[f64]) -> SparseSym {
        let n = self.dim();
        let mut out = SparseSym::new(n);
        for (k, row) in self.rows.iter().enumerate() {
            let dk = d[k];
            for (&i, &a) in row {
                for (&j, &b) in row {
                    out.add(i, j, a * dk * b);
                }
            }
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering of the sub-graph on `nodes`.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_order(a: &SparseSym, nodes: &[usize]) -> Vec<usize> {
    let n = a.dim();
    let mut local = vec![usize::MAX; n];
    for (k, &v) in nodes.iter().enumerate() {
        local[v] = k;
    }
    let adj: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&v| a.row(v).filter(|&(j, _)| j != v && local[j] != usize::MAX).map(|(j, _)| local[j]).collect())
        .collect();
    let m = nodes.len();
    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let bfs = |start: usize, visited: &mut Vec<bool>, record: Option<&mut Vec<usize>>| -> (usize, usize) {
        // returns (last node reached, eccentricity)
        let mut seen = visited.clone();
        let mut depth = vec![0usize; m];
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        let mut out = Vec::new();
        let (mut last, mut ecc) = (start, 0);
        while let Some(v) = q.pop_front() {
            out.push(v);
            if depth[v] > ecc || (depth[v] == ecc && adj[v].len() < adj[last].len()) {
                ecc = depth[v];
                last = v;
            }
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            nb.sort_by_key(|&w| (adj[w].len(), w));
            for w in nb {
                seen[w] = true;
                depth[w] = depth[v] + 1;
                q.push_back(w);
            }
        }
        if let Some(rec) = record {
            for &v in &out {
                visited[v] = true;
            }
            rec.extend(out);
        }
        (last, ecc)
    };
    for s in 0..m {
        if visited[s] {
            continue;
        }
        // Pseudo-peripheral start node.
        let mut start = s;
        let mut ecc = 0;
        for _ in 0..8 {
            let (far, e) = bfs(start, &mut visited, None);
            if e <= ecc {
                break;
            }
            ecc = e;
            start = far;
        }
        bfs(start, &mut visited, Some(&mut order));
    }
    order.reverse();
    order.into_iter().map(|k| nodes[k]).collect()
}

/// Cholesky factor stored row-wise inside the envelope of the permuted matrix.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    /// `perm[new] = old` index into the original matrix.
    perm: Vec<usize>,
    first: Vec<usize>,
    /// Row `i` holds columns `first[i]..=i`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factor the principal sub-matrix of `a` on `nodes`.
    pub fn factor(a: &SparseSym, nodes: &[usize]) -> Result<Self> {
        let perm = rcm_order(a, nodes);
        let m = perm.len();
        let mut inv = vec![usize::MAX; a.dim()];
        for (k, &v) in perm.iter().enumerate() {
            inv[v] = k;
        }
        let mut first = vec![0usize; m];
        for (i, &v) in perm.iter().enumerate() {
            first[i] = a.row(v).filter_map(|(j, _)| (inv[j] != usize::MAX).then_some(inv[j])).filter(|&j| j <= i).min().unwrap_or(i);
        }
        let mut start = Vec::with_capacity(m + 1);
        let mut total = 0;
        for i in 0..m {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut values = vec![0.0; total];
        for (i, &v) in perm.iter().enumerate() {
            for (j, val) in a.row(v) {
                let jj = inv[j];
                if jj != usize::MAX && jj <= i {
                    values[start[i] + jj - first[i]] = val;
                }
            }
        }
        for i in 0..m {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = values[start[i] + j - fi];
                let (ri, rj) = (start[i] - fi, start[j] - fj);
                for k in lo..j {
                    s -= values[ri + k] * values[rj + k];
                }
                if j < i {
                    values[ri + j] = s / values[rj + j];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numerical(format!("matrix not positive definite at pivot {i}")));
                    }
                    values[ri + i] = s.sqrt();
                }
            }
        }
        Ok(EnvelopeCholesky {
            perm,
            first,
            start,
            values,
        })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.perm
    }

    /// Solve in place. `x` is indexed by original node id; only the entries on
    /// `nodes()` are read and overwritten.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&v| x[v]).collect();
        for i in 0..m {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[ri + k] * y[k];
            }
            y[i] = s / self.values[ri + i];
        }
        for i in (0..m).rev() {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            y[i] /= self.values[ri + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[ri + k] * yi;
            }
        }
        for (k, &v) in self.perm.iter().enumerate() {
            x[v] = y[k];
        }
    }
}
