//! Weighted digraphs, Laplacians and Perron centrality.
//!
//! Row `i` of the weight matrix lists the agents that influence agent `i`:
//! `W[i][j] > 0` means agent `j` pulls agent `i` toward its opinion. With
//! that orientation the consensus flow `x_i' = sum_j W[i][j] (x_j - x_i)`
//! is a row operation on `W`.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense square matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Computes `M^T x`.
    pub fn mul_vec_transposed(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// Finite directed graph with nonnegative edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: Matrix,
}

impl WeightedDigraph {
    /// Builds a graph from a row-major `n * n` weight list.
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if weights.len() != n * n {
            return Err(Error::BadShape {
                expected: n * n,
                actual: weights.len(),
            });
        }
        for (k, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidWeight {
                    row: k / n,
                    col: k % n,
                    value,
                });
            }
        }
        Ok(Self {
            weights: Matrix { n, data: weights },
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::BadShape {
                expected: n,
                actual: bad.len(),
            });
        }
        Self::from_dense(n, rows.concat())
    }

    /// Builds a graph from 0-indexed `(source, target, weight)` influence
    /// edges: `source` influences `target`, so the weight lands at
    /// `W[target][source]`. Repeated edges accumulate.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut w = vec![0.0; n * n];
        for &(source, target, weight) in edges {
            for id in [source, target] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id: id + 1, n });
                }
            }
            w[target * n + source] += weight;
        }
        Self::from_dense(n, w)
    }

    pub fn n(&self) -> usize {
        self.weights.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.weights.row(i)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) > 0.0
    }

    /// Returns a copy with `weight` added on every diagonal entry.
    pub fn with_self_loops(&self, weight: f64) -> Result<Self> {
        let n = self.n();
        let mut data = self.weights.data.clone();
        for i in 0..n {
            data[i * n + i] += weight;
        }
        Self::from_dense(n, data)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let data = self.weights.data.iter().map(|w| w * factor).collect();
        Self::from_dense(self.n(), data)
    }
}

/// How a configured weight matrix is preprocessed before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    #[default]
    RowStochastic,
}

impl Normalization {
    pub fn apply(self, g: &WeightedDigraph) -> Result<WeightedDigraph> {
        match self {
            Normalization::Raw => Ok(g.clone()),
            Normalization::RowStochastic => row_normalize(g),
        }
    }
}

/// Positive left null vector of the Laplacian, normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralityVector(Vec<f64>);

impl CentralityVector {
    /// Wraps an externally supplied centrality, checking positivity and
    /// normalization (tolerance 1e-12 on the sum).
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        crate::error::check_positive("mu", &mu)?;
        let total: f64 = mu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("entries sum to {total}, expected 1"),
            });
        }
        Ok(Self(mu))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for CentralityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn reaches_all(n: usize, adjacent: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for (v, s) in seen.iter_mut().enumerate() {
            if !*s && adjacent(u, v) {
                *s = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// True iff every node reaches every other node along positive-weight edges.
pub fn is_strongly_connected(g: &WeightedDigraph) -> bool {
    let n = g.n();
    // Node 0 reaches everyone along influence edges and everyone reaches node 0.
    reaches_all(n, |u, v| g.has_edge(v, u)) && reaches_all(n, |u, v| g.has_edge(u, v))
}

pub fn has_self_loops(g: &WeightedDigraph) -> bool {
    (0..g.n()).all(|i| g.weight(i, i) > 0.0)
}

/// `L = diag(W 1) - W`. The diagonal is written as the sum of the row's
/// off-diagonal weights so every row of `L` sums to exactly zero.
pub fn laplacian(g: &WeightedDigraph) -> Matrix {
    let n = g.n();
    let mut l = Matrix::zeros(n);
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                let w = g.weight(i, j);
                l.set(i, j, -w);
                off += w;
            }
        }
        l.set(i, i, off);
    }
    l
}

pub fn row_normalize(g: &WeightedDigraph) -> Result<WeightedDigraph> {
    let n = g.n();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let total: f64 = g.row(i).iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroRow(i));
        }
        data.extend(g.row(i).iter().map(|w| w / total));
    }
    WeightedDigraph::from_dense(n, data)
}

/// Solves `L^T mu = 0, 1^T mu = 1` as an `(n + 1) x n` least-squares problem
/// via SVD.
pub fn centrality(g: &WeightedDigraph) -> Result<CentralityVector> {
    if !is_strongly_connected(g) {
        return Err(Error::NotStronglyConnected);
    }
    let n = g.n();
    if n == 1 {
        return Ok(CentralityVector(vec![1.0]));
    }
    let l = laplacian(g);
    // Rows 0..n hold L^T, row n is all ones.
    let a = DMatrix::from_fn(n + 1, n, |r, c| if r < n { l.get(c, r) } else { 1.0 });
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let mut mu: Vec<f64> = a
        .svd(true, true)
        .solve(&b, f64::EPSILON)
        .map_err(|_| Error::NotStronglyConnected)?
        .iter()
        .copied()
        .collect();

    // Least squares leaves O(eps) drift in the sum.
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= total);
    if mu.iter().any(|m| m.is_nan() || *m <= 0.0) {
        return Err(Error::NotStronglyConnected);
    }
    Ok(CentralityVector(mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn undirected_unit(n: usize, pairs: &[(usize, usize)]) -> WeightedDigraph {
        let edges: Vec<_> = pairs
            .iter()
            .flat_map(|&(a, b)| [(a - 1, b - 1, 1.0), (b - 1, a - 1, 1.0)])
            .collect();
        WeightedDigraph::from_edges(n, &edges).unwrap()
    }

    fn social() -> WeightedDigraph {
        undirected_unit(
            6,
            &[
                (1, 4),
                (1, 6),
                (2, 3),
                (2, 4),
                (2, 5),
                (3, 4),
                (4, 5),
                (5, 6),
            ],
        )
    }

    #[test]
    fn connectivity_examples() {
        assert!(is_strongly_connected(&social()));
        assert!(is_strongly_connected(
            &WeightedDigraph::from_dense(1, vec![0.0]).unwrap()
        ));
        let one_way = WeightedDigraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert!(!is_strongly_connected(&one_way));
    }

    #[test]
    fn self_loop_examples() {
        let id = WeightedDigraph::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(has_self_loops(&id));
        assert!(!has_self_loops(&social()));
        assert!(has_self_loops(&social().with_self_loops(1.0).unwrap()));
    }

    #[test]
    fn laplacian_examples() {
        let zero = WeightedDigraph::from_dense(3, vec![0.0; 9]).unwrap();
        assert_eq!(laplacian(&zero), Matrix::zeros(3));
        let pair = WeightedDigraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            laplacian(&pair).to_rows(),
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]]
        );
        // Self-loops do not enter the Laplacian.
        let looped = pair.with_self_loops(3.0).unwrap();
        assert_eq!(laplacian(&looped), laplacian(&pair));
    }

    #[test]
    fn centrality_of_symmetric_graph_is_uniform() {
        let mu = centrality(&social()).unwrap();
        for m in mu.as_slice() {
            assert_abs_diff_eq!(*m, 1.0 / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn centrality_of_row_normalized_social_graph() {
        let mu = centrality(&row_normalize(&social()).unwrap()).unwrap();
        let expected = [0.125, 0.1875, 0.125, 0.25, 0.1875, 0.125];
        for (m, e) in mu.as_slice().iter().zip(expected) {
            assert_abs_diff_eq!(*m, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn centrality_of_directed_cycle() {
        let cycle =
            WeightedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let mu = centrality(&cycle).unwrap();
        for m in mu.as_slice() {
            assert_abs_diff_eq!(*m, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn centrality_rejects_disconnected() {
        let one_way = WeightedDigraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            centrality(&one_way),
            Err(Error::NotStronglyConnected)
        ));
    }

    #[test]
    fn row_normalize_examples() {
        let g = WeightedDigraph::from_rows(&[vec![0.0, 2.0], vec![4.0, 0.0]]).unwrap();
        assert_eq!(
            row_normalize(&g).unwrap().weights().to_rows(),
            vec![vec![0.0, 1.0], vec![1.0, 0.0]]
        );
        let stochastic = WeightedDigraph::from_rows(&[vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap();
        assert_eq!(row_normalize(&stochastic).unwrap(), stochastic);

        let g = social();
        let normalized = row_normalize(&g).unwrap();
        let degrees = [2.0, 3.0, 2.0, 4.0, 3.0, 2.0];
        for (i, &d) in degrees.iter().enumerate() {
            assert_eq!(g.row(i).iter().sum::<f64>(), d);
            for j in 0..6 {
                assert_eq!(normalized.weight(i, j), g.weight(i, j) / d);
            }
        }
    }

    #[test]
    fn row_normalize_rejects_zero_row() {
        let g = WeightedDigraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(row_normalize(&g), Err(Error::ZeroRow(0))));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            WeightedDigraph::from_dense(0, vec![]),
            Err(Error::EmptyGraph)
        ));
        assert!(matches!(
            WeightedDigraph::from_dense(2, vec![0.0, -1.0, 0.0, 0.0]),
            Err(Error::InvalidWeight { row: 0, col: 1, .. })
        ));
        assert!(matches!(
            WeightedDigraph::from_dense(2, vec![0.0; 3]),
            Err(Error::BadShape { .. })
        ));
        assert!(matches!(
            WeightedDigraph::from_edges(2, &[(0, 2, 1.0)]),
            Err(Error::NodeOutOfRange { id: 3, n: 2 })
        ));
    }

    #[test]
    fn centrality_vector_validation() {
        assert!(CentralityVector::new(vec![0.5, 0.5]).is_ok());
        assert!(CentralityVector::new(vec![0.5, 0.6]).is_err());
        assert!(CentralityVector::new(vec![1.0, 0.0]).is_err());
    }
}
