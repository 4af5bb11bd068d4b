//! Directed communication graphs and the matrices derived from them.
//!
//! Edge-weight convention: `adjacency[(i, j)] > 0` means agent `i` receives
//! information from agent `j` (the edge points from `j` to `i`). The pinning
//! vector holds `b_i > 0` for agents that observe the leader directly.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition number above which `L + B` is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid digraph: {0}")]
    InvalidDigraph(String),
    #[error("no agent is pinned to the leader (all b_i = 0)")]
    NoPinning,
    #[error("L + B is numerically singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("weighting entry r[{index}] = {value} is not positive")]
    NonPositiveR { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Weighted directed graph of `n` followers plus pinning gains to the leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DigraphRepr", into = "DigraphRepr")]
pub struct Digraph {
    adjacency: DMatrix<f64>,
    pinning: DVector<f64>,
}

/// Row-major file representation of a [`Digraph`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DigraphRepr {
    adjacency: Vec<Vec<f64>>,
    pinning: Vec<f64>,
}

impl TryFrom<DigraphRepr> for Digraph {
    type Error = GraphError;

    fn try_from(repr: DigraphRepr) -> Result<Self, Self::Error> {
        Digraph::from_rows(&repr.adjacency, &repr.pinning)
    }
}

impl From<Digraph> for DigraphRepr {
    fn from(g: Digraph) -> Self {
        DigraphRepr {
            adjacency: g.adjacency_rows(),
            pinning: g.pinning.iter().copied().collect(),
        }
    }
}

impl Digraph {
    pub fn new(adjacency: DMatrix<f64>, pinning: DVector<f64>) -> Result<Self, GraphError> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(GraphError::InvalidDigraph("graph has no nodes".into()));
        }
        if adjacency.ncols() != n {
            return Err(GraphError::InvalidDigraph(format!(
                "adjacency is {}x{}, expected square",
                n,
                adjacency.ncols()
            )));
        }
        if pinning.len() != n {
            return Err(GraphError::DimensionMismatch {
                expected: n,
                got: pinning.len(),
            });
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::InvalidDigraph(format!(
                    "self loop a[{i}][{i}] = {}",
                    adjacency[(i, i)]
                )));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(GraphError::InvalidDigraph(format!(
                        "edge weight a[{i}][{j}] = {a} must be finite and nonnegative"
                    )));
                }
            }
            let b = pinning[i];
            if !b.is_finite() || b < 0.0 {
                return Err(GraphError::InvalidDigraph(format!(
                    "pinning gain b[{i}] = {b} must be finite and nonnegative"
                )));
            }
        }
        Ok(Digraph { adjacency, pinning })
    }

    pub fn from_rows(rows: &[Vec<f64>], pinning: &[f64]) -> Result<Self, GraphError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(GraphError::InvalidDigraph(format!(
                "adjacency row has {} entries, expected {n}",
                bad.len()
            )));
        }
        let adjacency = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Digraph::new(adjacency, DVector::from_column_slice(pinning))
    }

    /// Bidirectional ring `0 <-> 1 <-> ... <-> n-1 <-> 0` with unit weights.
    pub fn bidirectional_ring(n: usize, pinning: &[f64]) -> Result<Self, GraphError> {
        let mut adjacency = DMatrix::zeros(n, n);
        if n > 1 {
            for i in 0..n {
                adjacency[(i, (i + 1) % n)] = 1.0;
                adjacency[(i, (i + n - 1) % n)] = 1.0;
            }
        }
        Digraph::new(adjacency, DVector::from_column_slice(pinning))
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn pinning(&self) -> &DVector<f64> {
        &self.pinning
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<f64>> {
        self.adjacency
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Weighted in-degree `d_i = sum_j a_ij`.
    pub fn in_degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).sum()
    }

    /// Agents `j` with `a_ij > 0`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_agents()).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }
}

/// Matrices derived from a pinned digraph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMatrices {
    /// `L = D - A`.
    pub laplacian: DMatrix<f64>,
    /// `D = diag(d_i)`.
    pub in_degree: DMatrix<f64>,
    /// `B = diag(b_i)`.
    pub pinning_matrix: DMatrix<f64>,
    /// `L + B`.
    pub lb: DMatrix<f64>,
    /// `q = (L + B)^{-1} 1`.
    pub q: DVector<f64>,
    /// `P = diag(1 / q_i)`.
    pub p_matrix: DMatrix<f64>,
    /// `Q = P (L + B) + (L + B)^T P`.
    pub q_matrix: DMatrix<f64>,
    pub condition: f64,
}

impl GraphMatrices {
    pub fn n_agents(&self) -> usize {
        self.lb.nrows()
    }

    /// `p_i`, the i-th diagonal entry of `P`.
    pub fn p(&self, i: usize) -> f64 {
        self.p_matrix[(i, i)]
    }

    /// `d_i + b_i`, the i-th diagonal entry of `L + B`.
    pub fn d_plus_b(&self, i: usize) -> f64 {
        self.lb[(i, i)]
    }

    /// Non-allocating form of [`global_error`]; `out` must hold `n * m` values.
    pub fn global_error_into(&self, x: &[f64], x0: &[f64], out: &mut [f64]) {
        let n = self.n_agents();
        let m = x0.len();
        for (i, out_i) in out.chunks_exact_mut(m).enumerate().take(n) {
            out_i.fill(0.0);
            for j in 0..n {
                let w = self.lb[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for ch in 0..m {
                    out_i[ch] += w * (x[j * m + ch] - x0[ch]);
                }
            }
        }
    }

    /// Upper bound on `||x - 1 x0||` implied by a synchronization error `e`:
    /// `||e|| / sigma_min(L + B)`.
    pub fn tracking_bound(&self, e_norm: f64) -> f64 {
        e_norm / min_singular_value(&self.lb)
    }
}

pub fn build_matrices(g: &Digraph) -> Result<GraphMatrices, GraphError> {
    if g.pinning.iter().all(|&b| b == 0.0) {
        return Err(GraphError::NoPinning);
    }
    let n = g.n_agents();
    let in_degree = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| g.in_degree(i)));
    let laplacian = &in_degree - &g.adjacency;
    let pinning_matrix = DMatrix::from_diagonal(&g.pinning);
    let lb = &laplacian + &pinning_matrix;

    let svals = lb.clone().singular_values();
    let smax = svals.max();
    let smin = svals.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(GraphError::SingularSystem { condition });
    }
    let q = lb
        .clone()
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or(GraphError::SingularSystem { condition })?;
    // Only possible when the graph is not strongly connected.
    if let Some(i) = q.iter().position(|&qi| qi <= 0.0) {
        return Err(GraphError::InvalidDigraph(format!(
            "q[{i}] = {} is not positive; the digraph must be strongly connected",
            q[i]
        )));
    }
    let p_matrix = DMatrix::from_diagonal(&q.map(|qi| 1.0 / qi));
    let q_matrix = &p_matrix * &lb + lb.transpose() * &p_matrix;

    Ok(GraphMatrices {
        laplacian,
        in_degree,
        pinning_matrix,
        lb,
        q,
        p_matrix,
        q_matrix,
        condition,
    })
}

/// Every ordered pair of nodes is joined by a directed path.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    let n = g.n_agents();
    if n <= 1 {
        return true;
    }
    // Forward along information flow (j -> i when a_ij > 0), then backward.
    let reach = |forward: bool| -> usize {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for w in 0..n {
                let edge = if forward {
                    g.adjacency[(w, v)] > 0.0
                } else {
                    g.adjacency[(v, w)] > 0.0
                };
                if edge && !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    };
    reach(true) == n && reach(false) == n
}

/// `P R (L + B) + (L + B)^T R P` for a positive diagonal `R`.
pub fn weighted_q_matrix(gm: &GraphMatrices, r_diag: &[f64]) -> Result<DMatrix<f64>, GraphError> {
    let n = gm.n_agents();
    if r_diag.len() != n {
        return Err(GraphError::DimensionMismatch {
            expected: n,
            got: r_diag.len(),
        });
    }
    if let Some((index, &value)) = r_diag.iter().enumerate().find(|(_, &r)| !(r > 0.0)) {
        return Err(GraphError::NonPositiveR { index, value });
    }
    let pr = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            gm.p_matrix[(i, i)] * r_diag[i]
        } else {
            0.0
        }
    });
    Ok(&pr * &gm.lb + gm.lb.transpose() * &pr)
}

/// `e = ((L + B) ⊗ I_m)(x - 1 ⊗ x0)` with `x` stacked agent-major.
pub fn global_error(gm: &GraphMatrices, x: &[f64], x0: &[f64]) -> Result<Vec<f64>, GraphError> {
    let m = x0.len();
    let n = gm.n_agents();
    if m == 0 {
        return Err(GraphError::DimensionMismatch { expected: 1, got: 0 });
    }
    if x.len() != n * m {
        return Err(GraphError::DimensionMismatch {
            expected: n * m,
            got: x.len(),
        });
    }
    let mut e = vec![0.0; n * m];
    gm.global_error_into(x, x0, &mut e);
    Ok(e)
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigen().eigenvalues.min()
}

pub fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone().symmetric_eigen().eigenvalues.max()
}

pub fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().min()
}
