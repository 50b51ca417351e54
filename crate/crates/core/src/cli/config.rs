//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "social_graph": { "n": 3, "edges": [[1, 2, 1.0], [2, 3, 1.0]], "undirected": true },
//!   "sigma2": [1.0, 1.5, 0.8],
//!   "normalization": "row-stochastic",
//!   "z0": { "seed": 7, "range": [0.5, 2.0] }
//! }
//! ```
//!
//! Edge triples are `[from, to, weight]` with 1-indexed node ids: `from`
//! influences `to`, so the weight is stored at `W[to][from]`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_positive, Error, Result};
use crate::experiments::{self, Z0_RANGE};
use crate::graph::{self, CentralityVector, Normalization, WeightedDigraph};
use crate::learning::{Coordinates, LearningProblem};
use crate::ode::IntegratorOptions;
use crate::opinion::{NoiseDistribution, NoiseModel, SusceptibilityProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n: usize,
    #[serde(default)]
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub undirected: bool,
    /// Weight added on every diagonal entry.
    #[serde(default)]
    pub self_loops: f64,
}

impl GraphSpec {
    pub fn build(&self) -> Result<WeightedDigraph> {
        let mut edges = Vec::with_capacity(self.edges.len() * 2);
        for &(from, to, w) in &self.edges {
            for id in [from, to] {
                if id == 0 || id > self.n {
                    return Err(Error::NodeOutOfRange { id, n: self.n });
                }
            }
            edges.push((from - 1, to - 1, w));
            if self.undirected && from != to {
                edges.push((to - 1, from - 1, w));
            }
        }
        let g = WeightedDigraph::from_edges(self.n, &edges)?;
        if self.self_loops != 0.0 {
            g.with_self_loops(self.self_loops)
        } else {
            Ok(g)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Z0Spec {
    Explicit(Vec<f64>),
    Random {
        seed: u64,
        #[serde(default = "default_z0_range")]
        range: (f64, f64),
    },
}

fn default_z0_range() -> (f64, f64) {
    Z0_RANGE
}

impl Default for Z0Spec {
    fn default() -> Self {
        Z0Spec::Random {
            seed: 0,
            range: Z0_RANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub trials: usize,
    pub seed: u64,
    pub distribution: NoiseDistribution,
    /// Susceptibility profile to evaluate; defaults to `z0`.
    pub z: Option<Vec<f64>>,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self {
            trials: 1_000_000,
            seed: 0,
            distribution: NoiseDistribution::Gaussian,
            z: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub social_graph: GraphSpec,
    /// Defaults to the social graph with unit self-loops.
    #[serde(default)]
    pub learning_graph: Option<GraphSpec>,
    pub sigma2: Vec<f64>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "raw")]
    pub normalization: Normalization,
    #[serde(default)]
    pub z0: Z0Spec,
    /// Initial opinions for `simulate`; sampled as `theta + noise` when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Seed for sampled opinions and the randomized checks of `verify`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub coords: Coordinates,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    #[serde(default)]
    pub monte_carlo: MonteCarloSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn raw() -> Normalization {
    Normalization::Raw
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter {
            name: "config",
            reason: e.to_string(),
        })
    }

    /// The reference six-agent setup.
    pub fn paper() -> Self {
        let undirected = |pairs: &[(usize, usize)], self_loops: f64| GraphSpec {
            n: 6,
            edges: pairs.iter().map(|&(a, b)| (a, b, 1.0)).collect(),
            undirected: true,
            self_loops,
        };
        Self {
            social_graph: undirected(&experiments::SOCIAL_EDGES, 0.0),
            learning_graph: Some(undirected(&experiments::LEARNING_EDGES, 1.0)),
            sigma2: experiments::SIGMA2.to_vec(),
            theta: 0.0,
            normalization: Normalization::RowStochastic,
            z0: Z0Spec::default(),
            x0: None,
            seed: 0,
            coords: Coordinates::YSpace,
            integrator: IntegratorOptions::default(),
            monte_carlo: MonteCarloSpec::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.monte_carlo.seed = seed;
        if let Z0Spec::Random { seed: s, .. } = &mut self.z0 {
            *s = seed;
        }
    }

    pub fn resolve(&self) -> Result<Experiment> {
        let raw_social = self.social_graph.build()?;
        let n = raw_social.n();
        let social = self.normalization.apply(&raw_social)?;
        check_len("sigma2", n, self.sigma2.len())?;
        check_positive("sigma2", &self.sigma2)?;
        let noise = NoiseModel::new(self.theta, self.sigma2.clone())?;
        self.integrator.validate()?;

        let learning_spec = match &self.learning_graph {
            Some(spec) => spec.clone(),
            None => GraphSpec {
                self_loops: if self.social_graph.self_loops > 0.0 {
                    self.social_graph.self_loops
                } else {
                    1.0
                },
                ..self.social_graph.clone()
            },
        };
        let learning = learning_spec.build()?;
        check_len("learning_graph.n", n, learning.n())?;

        let z0 = match &self.z0 {
            Z0Spec::Explicit(z) => {
                check_len("z0", n, z.len())?;
                SusceptibilityProfile::new(z.clone())?
            }
            Z0Spec::Random { seed, range } => experiments::sample_z0(n, *seed, *range)?,
        };
        if let Some(x0) = &self.x0 {
            check_len("x0", n, x0.len())?;
            if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "x0",
                    reason: format!("entry {} is not finite", i + 1),
                });
            }
        }
        let mc_z = match &self.monte_carlo.z {
            Some(z) => {
                check_len("monte_carlo.z", n, z.len())?;
                SusceptibilityProfile::new(z.clone())?
            }
            None => z0.clone(),
        };
        if self.monte_carlo.trials < 2 {
            return Err(Error::InvalidParameter {
                name: "monte_carlo.trials",
                reason: "need at least 2".into(),
            });
        }
        Ok(Experiment {
            raw_social,
            social,
            learning,
            noise,
            z0,
            mc_z,
        })
    }
}

/// A validated configuration with graphs and profiles materialized.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub raw_social: WeightedDigraph,
    /// Social graph after normalization.
    pub social: WeightedDigraph,
    pub learning: WeightedDigraph,
    pub noise: NoiseModel,
    pub z0: SusceptibilityProfile,
    pub mc_z: SusceptibilityProfile,
}

impl Experiment {
    pub fn n(&self) -> usize {
        self.social.n()
    }

    pub fn centrality(&self) -> Result<CentralityVector> {
        graph::centrality(&self.social)
    }

    pub fn problem(&self) -> Result<LearningProblem> {
        LearningProblem::new(
            self.learning.clone(),
            self.centrality()?,
            self.noise.sigma2().to_vec(),
        )
    }
}
