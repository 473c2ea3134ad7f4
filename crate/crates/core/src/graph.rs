//! Weighted digraphs, connectivity and weight-balance checks, and the
//! Laplacian spectrum feeding the gain formulas.
//!
//! Orientation convention: `weight(i, j) = a_ij > 0` means node `i`
//! receives information from node `j`, i.e. the edge is written `(j, i)`.
//! The JSON config's `{"from": j, "to": i}` follows the same reading.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Weighted directed graph on nodes `0..n`.
///
/// Immutable after construction; all operations are pure.
#[derive(Clone, Debug, PartialEq)]
pub struct Digraph {
    n: usize,
    weights: Matrix,
}

impl Digraph {
    /// Build from an adjacency matrix `a` with `a[(i, j)] = a_ij` (weight of
    /// edge `(j, i)`). Rejects self-loops and negative weights.
    pub fn new(weights: Matrix) -> Result<Digraph> {
        if !weights.is_square() || weights.rows() == 0 {
            return Err(Error::InvalidGraph(
                "adjacency matrix must be square and non-empty".into(),
            ));
        }
        let n = weights.rows();
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::InvalidGraph(format!(
                        "weight a[{i}][{j}] = {w} must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(Digraph { n, weights })
    }

    /// Build from 0-indexed edges `(from, to, w)`, where `to` receives
    /// from `from` (so `a[to][from] = w`).
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Digraph> {
        let mut w = Matrix::zeros(n, n);
        for &(from, to, weight) in edges {
            if from >= n || to >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({from}, {to}) out of range for n = {n}"
                )));
            }
            w[(to, from)] = weight;
        }
        Digraph::new(w)
    }

    /// Directed cycle 0 -> 1 -> ... -> n-1 -> 0 with unit weights.
    pub fn cycle(n: usize) -> Digraph {
        let edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Digraph::from_edges(n, &edges).expect("cycle construction is valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// a_ij: weight with which node `i` hears node `j`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.weights
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.weights[(i, j)]).sum()
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.weights[(j, i)]).sum()
    }
}

/// Laplacian `L = D_in - A`, its symmetric part, and the full spectrum of
/// `Sym(L)`.
#[derive(Clone, Debug)]
pub struct LaplacianSpectrum {
    pub laplacian: Matrix,
    pub sym: Matrix,
    /// Eigenvalues of `Sym(L)`, sorted ascending.
    pub eigenvalues: Vec<f64>,
}

impl LaplacianSpectrum {
    /// Second-smallest eigenvalue of `Sym(L)`.
    pub fn lambda2(&self) -> f64 {
        if self.eigenvalues.len() >= 2 {
            self.eigenvalues[1]
        } else {
            0.0
        }
    }

    /// Largest eigenvalue of `Sym(L)`.
    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }
}

/// Laplacian construction and spectral analysis of `Sym(L)` via the cyclic
/// Jacobi eigensolver.
pub fn laplacian(g: &Digraph) -> LaplacianSpectrum {
    let n = g.node_count();
    let mut lap = g.adjacency().scale(-1.0);
    for i in 0..n {
        lap[(i, i)] = g.in_degree(i);
    }
    let sym = lap.add(&lap.transpose()).scale(0.5);
    let (eigenvalues, _) = linalg::symmetric_eigen(&sym)
        .expect("Sym(L) is symmetric by construction");
    LaplacianSpectrum {
        laplacian: lap,
        sym,
        eigenvalues,
    }
}

/// True iff every node reaches every other along positive-weight edges.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    let n = g.node_count();
    // Successors of i are the nodes that hear i: j with a_ji > 0.
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| g.weight(j, i) > 0.0).collect())
        .collect();
    crate::linalg::scc(&adj).len() == 1
}

/// True iff in-degree equals out-degree at every node, within `tol`.
pub fn is_weight_balanced(g: &Digraph, tol: f64) -> bool {
    assert!(tol > 0.0, "tolerance must be positive");
    (0..g.node_count()).all(|i| (g.in_degree(i) - g.out_degree(i)).abs() <= tol)
}

/// Default weight-balance tolerance.
pub const BALANCE_TOL: f64 = 1e-9;
