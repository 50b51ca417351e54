//! Random instance generators shared by the integration tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use wisdomdyn::graph::{self, CentralityVector, WeightedDigraph};
use wisdomdyn::learning::LearningProblem;
use wisdomdyn::opinion::SusceptibilityProfile;

/// Strongly connected digraph: a random Hamiltonian cycle plus extra arcs
/// with probability `density`. Weights are uniform in `[0.1, 2)`.
pub fn random_strong_digraph<R: Rng>(rng: &mut R, n: usize, density: f64) -> WeightedDigraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    if n > 1 {
        for k in 0..n {
            edges.push((order[k], order[(k + 1) % n], rng.random_range(0.1..2.0)));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(density) {
                edges.push((j, i, rng.random_range(0.1..2.0)));
            }
        }
    }
    WeightedDigraph::from_edges(n, &edges).unwrap()
}

/// Same as [`random_strong_digraph`] with every self-loop present.
pub fn random_learning_graph<R: Rng>(rng: &mut R, n: usize, density: f64) -> WeightedDigraph {
    let g = random_strong_digraph(rng, n, density);
    let mut rows = g.weights().to_rows();
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = rng.random_range(0.5..2.0);
    }
    WeightedDigraph::from_rows(&rows).unwrap()
}

pub fn log_uniform<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|_| rng.random_range(a..b).exp()).collect()
}

pub fn random_profile<R: Rng>(rng: &mut R, n: usize) -> SusceptibilityProfile {
    SusceptibilityProfile::new(log_uniform(rng, n, 0.1, 10.0)).unwrap()
}

pub fn random_sigma2<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.5..2.0)).collect()
}

/// Social graph, its centrality and noise variances.
pub struct Instance {
    pub g: WeightedDigraph,
    pub mu: CentralityVector,
    pub sigma2: Vec<f64>,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_n: usize) -> Instance {
    let n = rng.random_range(1..=max_n);
    let g = random_strong_digraph(rng, n, 0.3);
    let g = if rng.random_bool(0.5) {
        graph::row_normalize(&g).unwrap_or(g)
    } else {
        g
    };
    let mu = graph::centrality(&g).unwrap();
    Instance {
        g,
        mu,
        sigma2: random_sigma2(rng, n),
    }
}

pub fn random_problem<R: Rng>(rng: &mut R, max_n: usize) -> LearningProblem {
    let inst = random_instance(rng, max_n);
    let n = inst.mu.len();
    let g_bar = random_learning_graph(rng, n, 0.3);
    LearningProblem::new(g_bar, inst.mu, inst.sigma2).unwrap()
}
