//! The six-agent reference network and the learning-figure reproductions.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{self, CentralityVector, Normalization, WeightedDigraph};
use crate::learning::{self, Coordinates, LearningProblem, LearningRun};
use crate::ode::IntegratorOptions;
use crate::opinion::{min_max, SusceptibilityProfile};
use crate::output;

/// Undirected social links, 1-indexed.
pub const SOCIAL_EDGES: [(usize, usize); 8] = [
    (1, 4),
    (1, 6),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 4),
    (4, 5),
    (5, 6),
];

/// Undirected learning-graph links, 1-indexed. Unit self-loops are added
/// on top of these.
pub const LEARNING_EDGES: [(usize, usize); 7] =
    [(1, 2), (1, 3), (2, 3), (3, 4), (4, 5), (4, 6), (5, 6)];

pub const SIGMA2: [f64; 6] = [1.0, 1.1, 1.0, 1.2, 1.1, 1.0];

/// Default range for seeded initial susceptibilities (sampled log-uniformly).
pub const Z0_RANGE: (f64, f64) = (0.5, 2.0);

/// Tolerance used to group terminal susceptibilities.
pub const GROUP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PaperExample {
    /// Social graph as configured (unit weights).
    pub g: WeightedDigraph,
    /// Learning graph with unit self-loops.
    pub g_bar: WeightedDigraph,
    pub mu: CentralityVector,
    pub sigma2: Vec<f64>,
    pub normalization: Normalization,
}

impl PaperExample {
    pub fn problem(&self) -> LearningProblem {
        LearningProblem::new(self.g_bar.clone(), self.mu.clone(), self.sigma2.clone())
            .expect("reference learning problem is valid")
    }

    /// Social graph after normalization, i.e. the graph whose Laplacian
    /// yields `mu`.
    pub fn social_graph(&self) -> WeightedDigraph {
        self.normalization
            .apply(&self.g)
            .expect("reference social graph has no empty rows")
    }
}

pub fn undirected_unit_graph(n: usize, pairs: &[(usize, usize)]) -> Result<WeightedDigraph> {
    let edges: Vec<_> = pairs
        .iter()
        .flat_map(|&(a, b)| [(a - 1, b - 1, 1.0), (b - 1, a - 1, 1.0)])
        .collect();
    WeightedDigraph::from_edges(n, &edges)
}

pub fn build_paper_example() -> PaperExample {
    let g = undirected_unit_graph(6, &SOCIAL_EDGES).expect("static edge list");
    let g_bar = undirected_unit_graph(6, &LEARNING_EDGES)
        .and_then(|g| g.with_self_loops(1.0))
        .expect("static edge list");
    let normalization = Normalization::RowStochastic;
    let mu = graph::centrality(&normalization.apply(&g).expect("no empty rows"))
        .expect("social graph is strongly connected");
    PaperExample {
        g,
        g_bar,
        mu,
        sigma2: SIGMA2.to_vec(),
        normalization,
    }
}

/// Integrator settings used for all reference runs.
pub fn paper_integrator_options() -> IntegratorOptions {
    IntegratorOptions::default()
}

/// Log-uniform draw of each `z_i` in `range`, reproducible from `seed`.
pub fn sample_z0(n: usize, seed: u64, range: (f64, f64)) -> Result<SusceptibilityProfile> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "z0.range",
            reason: format!("need 0 < lo < hi, got ({lo}, {hi})"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (lo.ln(), hi.ln());
    SusceptibilityProfile::new((0..n).map(|_| rng.random_range(a..b).exp()).collect())
}

/// Groups indices whose values agree within `rel_tol`; groups are listed by
/// their smallest member.
pub fn cluster_equal(values: &[f64], rel_tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g)
                if {
                    let prev = values[*g.last().unwrap()];
                    (values[i] - prev).abs() <= rel_tol * prev.abs().max(values[i].abs())
                } =>
            {
                g.push(i)
            }
            _ => groups.push(vec![i]),
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

/// Agents sharing both centrality and variance, to 1e-12 relative.
pub fn matching_parameter_groups(mu: &CentralityVector, sigma2: &[f64]) -> Vec<Vec<usize>> {
    let n = mu.len();
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        match groups
            .iter_mut()
            .find(|g| same(mu[g[0]], mu[i]) && same(sigma2[g[0]], sigma2[i]))
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

#[derive(Debug, Clone)]
pub struct FigureY {
    pub seed: u64,
    pub z0: SusceptibilityProfile,
    pub run: LearningRun,
    pub converged: bool,
    pub hull_monotone: bool,
    pub zeta_in_hull: bool,
}

impl FigureY {
    pub fn passed(&self) -> bool {
        self.converged && self.hull_monotone && self.zeta_in_hull
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub seed: u64,
    /// Clusters of terminal susceptibilities, 1-indexed.
    pub groups: Vec<Vec<usize>>,
    /// Agents with matching centrality and variance, 1-indexed.
    pub expected: Vec<Vec<usize>>,
    pub matches_expected: bool,
    /// Relative spread of terminal `z` inside each group.
    pub within_group_spread: Vec<f64>,
    pub z_limit: Vec<f64>,
    pub zeta: f64,
}

#[derive(Debug, Clone)]
pub struct FigureZ {
    pub figure: FigureY,
    pub report: GroupReport,
}

impl FigureZ {
    pub fn passed(&self) -> bool {
        self.report.matches_expected
            && self.report.groups.len() == 3
            && self
                .report
                .within_group_spread
                .iter()
                .all(|s| *s < GROUP_TOLERANCE)
    }
}

/// Runs the learning flow on the reference network from a seeded `z0`.
pub fn reproduce_figure_y(seed: u64) -> Result<FigureY> {
    let example = build_paper_example();
    let problem = example.problem();
    let z0 = sample_z0(6, seed, Z0_RANGE)?;
    let run = learning::learn(
        &z0,
        &problem,
        &paper_integrator_options(),
        Coordinates::YSpace,
    )?;
    let d = &run.diagnostics;
    let (lo, hi) = d.hull;
    Ok(FigureY {
        seed,
        z0,
        converged: d.converged,
        hull_monotone: d.hull_monotone,
        zeta_in_hull: lo <= d.zeta && d.zeta <= hi,
        run,
    })
}

/// The same run viewed in `z`, with terminal susceptibilities grouped.
pub fn reproduce_figure_z(seed: u64) -> Result<FigureZ> {
    let example = build_paper_example();
    let figure = reproduce_figure_y(seed)?;
    let z = figure.run.z_limit.as_slice();
    let groups = cluster_equal(z, GROUP_TOLERANCE);
    let expected = matching_parameter_groups(&example.mu, &example.sigma2);
    let mut expected_sorted = expected.clone();
    expected_sorted.sort();
    let within_group_spread = groups
        .iter()
        .map(|g| {
            let vals: Vec<f64> = g.iter().map(|&i| z[i]).collect();
            let (lo, hi) = min_max(&vals);
            (hi - lo) / hi
        })
        .collect();
    let one_based = |gs: &[Vec<usize>]| -> Vec<Vec<usize>> {
        gs.iter()
            .map(|g| g.iter().map(|i| i + 1).collect())
            .collect()
    };
    let report = GroupReport {
        seed,
        matches_expected: groups == expected_sorted,
        groups: one_based(&groups),
        expected: one_based(&expected),
        within_group_spread,
        z_limit: z.to_vec(),
        zeta: figure.run.diagnostics.zeta,
    };
    Ok(FigureZ { figure, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct PaperSummary {
    pub tool_version: &'static str,
    pub seed: u64,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub normalization: Normalization,
    pub z0: Vec<f64>,
    pub integrator: IntegratorOptions,
    pub converged: bool,
    pub hull_monotone: bool,
    pub zeta_in_hull: bool,
    pub hull: (f64, f64),
    pub zeta: f64,
    pub final_spread: f64,
    pub distance_to_optimal: f64,
    pub groups_match: bool,
    pub passed: bool,
}

/// Writes `figure_y.{csv,svg}`, `figure_z.{csv,svg}`, `groups.json` and a
/// `paper.json` run summary into `dir`.
pub fn write_paper_artifacts(dir: &Path, seed: u64) -> Result<(FigureZ, PaperSummary)> {
    let fz = reproduce_figure_z(seed)?;
    let example = build_paper_example();
    let run = &fz.figure.run;
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("figure_y.csv"),
        output::trajectory_csv(&run.trajectory_y, "y"),
    )?;
    fs::write(
        dir.join("figure_z.csv"),
        output::trajectory_csv(&run.trajectory_z, "z"),
    )?;
    fs::write(
        dir.join("figure_y.svg"),
        output::line_chart_svg(&run.trajectory_y, "consensus coordinates y_i(t)", "y"),
    )?;
    fs::write(
        dir.join("figure_z.svg"),
        output::line_chart_svg(&run.trajectory_z, "susceptibilities z_i(t)", "z"),
    )?;
    output::write_json(&dir.join("groups.json"), &fz.report)?;
    let d = &run.diagnostics;
    let summary = PaperSummary {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed,
        mu: example.mu.as_slice().to_vec(),
        sigma2: example.sigma2.clone(),
        normalization: example.normalization,
        z0: fz.figure.z0.as_slice().to_vec(),
        integrator: paper_integrator_options(),
        converged: fz.figure.converged,
        hull_monotone: fz.figure.hull_monotone,
        zeta_in_hull: fz.figure.zeta_in_hull,
        hull: d.hull,
        zeta: d.zeta,
        final_spread: d.final_spread,
        distance_to_optimal: d.distance_to_optimal,
        groups_match: fz.passed(),
        passed: fz.figure.passed() && fz.passed(),
    };
    output::write_json(&dir.join("paper.json"), &summary)?;
    Ok((fz, summary))
}
