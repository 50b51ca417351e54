//! Distributed susceptibility learning.
//!
//! Each agent descends its local utility
//! `u_i(z) = (sum_j Wb_ij mu_j/z_j)^-2 sum_k Wb_ik mu_k^2 sigma_k^2 / z_k^2`
//! through `z_i' = -du_i/dz_i`, where `Wb` is the learning graph. In the
//! coordinates `y_i = mu_i sigma_i^2 / z_i` the flow becomes the nonlinear
//! consensus system `y_i' = sum_j m_ij(y) (y_j - y_i)` whose equilibria are
//! the consensus vectors, i.e. the optimal susceptibility ray.
//!
//! The interval `[min y(0), max y(0)]` is forward invariant for the `y`
//! flow; [`learn`] checks every recorded state against it.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_positive, Error, Result};
use crate::graph::{self, CentralityVector, Matrix, WeightedDigraph};
use crate::ode::{self, IntegratorOptions, Method, Termination, Trajectory};
use crate::opinion::{self, min_max, relative_spread, SusceptibilityProfile};

/// Learning stops once `(max y - min y) / mean y` drops below this.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-8;

/// Relative slack allowed on hull membership and hull monotonicity, on top
/// of the adaptive integrator's `rtol`.
pub const HULL_SLACK: f64 = 1e-9;

/// Absolute hull slack for a hull with upper end `hi`. An adaptive step may
/// err by up to `rtol` relative, so monotonicity is only resolvable to that
/// level.
pub fn hull_slack(hi: f64, opts: &IntegratorOptions) -> f64 {
    let rtol = match opts.method {
        Method::Rk45Adaptive => opts.rtol,
        Method::Rk4Fixed => 0.0,
    };
    (HULL_SLACK + rtol) * hi
}

#[derive(Debug, Clone)]
pub struct LearningProblem {
    g_bar: WeightedDigraph,
    mu: CentralityVector,
    sigma2: Vec<f64>,
}

impl LearningProblem {
    /// `g_bar` must be strongly connected with a self-loop at every node.
    pub fn new(g_bar: WeightedDigraph, mu: CentralityVector, sigma2: Vec<f64>) -> Result<Self> {
        check_len("mu", g_bar.n(), mu.len())?;
        check_len("sigma2", g_bar.n(), sigma2.len())?;
        check_positive("sigma2", &sigma2)?;
        if !graph::is_strongly_connected(&g_bar) {
            return Err(Error::NotStronglyConnected);
        }
        if let Some(i) = (0..g_bar.n()).find(|&i| g_bar.weight(i, i) <= 0.0) {
            return Err(Error::MissingSelfLoop(i));
        }
        Ok(Self { g_bar, mu, sigma2 })
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(
        g_bar: WeightedDigraph,
        mu: CentralityVector,
        sigma2: Vec<f64>,
    ) -> Self {
        Self { g_bar, mu, sigma2 }
    }

    pub fn n(&self) -> usize {
        self.g_bar.n()
    }

    pub fn g_bar(&self) -> &WeightedDigraph {
        &self.g_bar
    }

    pub fn mu(&self) -> &CentralityVector {
        &self.mu
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    fn check_agent(&self, i: usize) -> Result<()> {
        if i < self.n() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                id: i + 1,
                n: self.n(),
            })
        }
    }

    fn check_z(&self, z: &SusceptibilityProfile) -> Result<()> {
        check_len("z", self.n(), z.len())
    }
}

/// Strictly positive state in the consensus coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct YState(Vec<f64>);

impl YState {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        check_positive("y", &y)?;
        Ok(Self(y))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

// (A_i, B_i) in z coordinates for agent i.
fn utility_parts(i: usize, z: &[f64], p: &LearningProblem) -> Result<(f64, f64)> {
    let mu = p.mu.as_slice();
    let mut a = 0.0;
    let mut b = 0.0;
    for (k, &w) in p.g_bar.row(i).iter().enumerate() {
        if w > 0.0 {
            let r = mu[k] / z[k];
            a += w * r * r * p.sigma2[k];
            b += w * r;
        }
    }
    if b <= 0.0 {
        return Err(Error::IsolatedAgent(i));
    }
    Ok((a, b))
}

pub fn local_utility(i: usize, z: &SusceptibilityProfile, p: &LearningProblem) -> Result<f64> {
    p.check_agent(i)?;
    p.check_z(z)?;
    let (a, b) = utility_parts(i, z.as_slice(), p)?;
    Ok(a / (b * b))
}

/// Partial derivative of `u_i` with respect to the agent's own `z_i`.
pub fn utility_gradient(i: usize, z: &SusceptibilityProfile, p: &LearningProblem) -> Result<f64> {
    p.check_agent(i)?;
    p.check_z(z)?;
    gradient_unchecked(i, z.as_slice(), p)
}

fn gradient_unchecked(i: usize, z: &[f64], p: &LearningProblem) -> Result<f64> {
    let (a, b) = utility_parts(i, z, p)?;
    let w_ii = p.g_bar.weight(i, i);
    let mu_i = p.mu[i];
    let z_i = z[i];
    let da = -2.0 * w_ii * mu_i * mu_i * p.sigma2[i] / (z_i * z_i * z_i);
    let db = -w_ii * mu_i / (z_i * z_i);
    Ok((b * da - 2.0 * a * db) / (b * b * b))
}

fn z_rhs_into(z: &[f64], p: &LearningProblem, dz: &mut [f64]) -> Result<()> {
    for (i, d) in dz.iter_mut().enumerate() {
        *d = -gradient_unchecked(i, z, p)?;
    }
    Ok(())
}

/// `z_i' = -du_i/dz_i` for every agent.
pub fn z_rhs(z: &SusceptibilityProfile, p: &LearningProblem) -> Result<Vec<f64>> {
    p.check_z(z)?;
    let mut dz = vec![0.0; z.len()];
    z_rhs_into(z.as_slice(), p, &mut dz)?;
    Ok(dz)
}

/// `y_i = mu_i sigma_i^2 / z_i`.
pub fn to_y(z: &SusceptibilityProfile, mu: &CentralityVector, sigma2: &[f64]) -> Result<YState> {
    check_len("z", mu.len(), z.len())?;
    check_len("sigma2", mu.len(), sigma2.len())?;
    check_positive("sigma2", sigma2)?;
    YState::new(swap_coords(z.as_slice(), mu.as_slice(), sigma2))
}

/// `z_i = mu_i sigma_i^2 / y_i`.
pub fn from_y(y: &YState, mu: &CentralityVector, sigma2: &[f64]) -> Result<SusceptibilityProfile> {
    check_len("y", mu.len(), y.0.len())?;
    check_len("sigma2", mu.len(), sigma2.len())?;
    check_positive("sigma2", sigma2)?;
    SusceptibilityProfile::new(swap_coords(y.as_slice(), mu.as_slice(), sigma2))
}

// The map is an involution.
fn swap_coords(v: &[f64], mu: &[f64], sigma2: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(mu)
        .zip(sigma2)
        .map(|((v, m), s)| m * s / v)
        .collect()
}

// Prefactor 2 y_i^4 Wb_ii / (mu_i^2 sigma_i^6 B_i(y)^3) shared by row i of the
// coupling matrix.
fn coupling_prefactor(i: usize, y: &[f64], p: &LearningProblem) -> Result<f64> {
    let b: f64 = p
        .g_bar
        .row(i)
        .iter()
        .zip(y)
        .zip(&p.sigma2)
        .map(|((w, y), s)| w * y / s)
        .sum();
    if b <= 0.0 {
        return Err(Error::IsolatedAgent(i));
    }
    let s = p.sigma2[i];
    let mu = p.mu[i];
    let y2 = y[i] * y[i];
    Ok(2.0 * y2 * y2 * p.g_bar.weight(i, i) / (mu * mu * s * s * s * b * b * b))
}

/// Nonnegative state-dependent coupling weights
/// `m_ij = 2 y_i^4 y_j Wb_ii Wb_ij / (mu_i^2 sigma_i^6 sigma_j^2) B_i(y)^-3`.
pub fn coupling_matrix(y: &YState, p: &LearningProblem) -> Result<Matrix> {
    check_len("y", p.n(), y.0.len())?;
    let y = y.as_slice();
    let mut m = Matrix::zeros(p.n());
    for i in 0..p.n() {
        let pre = coupling_prefactor(i, y, p)?;
        for (j, &w) in p.g_bar.row(i).iter().enumerate() {
            m.set(i, j, pre * w * y[j] / p.sigma2[j]);
        }
    }
    Ok(m)
}

fn y_rhs_into(y: &[f64], p: &LearningProblem, dy: &mut [f64]) -> Result<()> {
    for (i, d) in dy.iter_mut().enumerate() {
        let pre = coupling_prefactor(i, y, p)?;
        let pull: f64 = p
            .g_bar
            .row(i)
            .iter()
            .zip(y)
            .zip(&p.sigma2)
            .map(|((w, yj), s)| w * yj / s * (yj - y[i]))
            .sum();
        *d = pre * pull;
    }
    Ok(())
}

/// `y_i' = sum_j m_ij(y) (y_j - y_i)`.
pub fn y_rhs(y: &YState, p: &LearningProblem) -> Result<Vec<f64>> {
    check_len("y", p.n(), y.0.len())?;
    let mut dy = vec![0.0; p.n()];
    y_rhs_into(y.as_slice(), p, &mut dy)?;
    Ok(dy)
}

/// True iff `|z_rhs(z)|_inf < tol`.
pub fn equilibrium_check(z: &SusceptibilityProfile, p: &LearningProblem, tol: f64) -> Result<bool> {
    let dz = z_rhs(z, p)?;
    Ok(dz.iter().all(|d| d.abs() < tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    ZSpace,
    #[default]
    YSpace,
}

#[derive(Debug, Clone, Serialize)]
pub struct LearningDiagnostics {
    pub coords: Coordinates,
    pub terminated_by: Termination,
    pub converged: bool,
    /// `[min y(0), max y(0)]`.
    pub hull: (f64, f64),
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    /// Max `y` never increased and min `y` never decreased between recorded
    /// steps, up to [`hull_slack`].
    pub hull_monotone: bool,
    pub final_spread: f64,
    /// Mean of the terminal `y`, the realized consensus value.
    pub zeta: f64,
    pub distance_to_optimal: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct LearningRun {
    pub trajectory_z: Trajectory,
    pub trajectory_y: Trajectory,
    pub z_limit: SusceptibilityProfile,
    pub diagnostics: LearningDiagnostics,
}

/// Integrates the learning dynamics from `z0` until the relative `y`
/// spread falls below [`CONVERGENCE_THRESHOLD`] or `opts.t_end` is reached.
pub fn learn(
    z0: &SusceptibilityProfile,
    p: &LearningProblem,
    opts: &IntegratorOptions,
    coords: Coordinates,
) -> Result<LearningRun> {
    p.check_z(z0)?;
    let mu = p.mu.as_slice();
    let sigma2 = p.sigma2.as_slice();
    let y0 = swap_coords(z0.as_slice(), mu, sigma2);
    let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
    // Runge-Kutta stages may leave the positive orthant where B_i can vanish;
    // NaN derivatives make the proposal inadmissible so the step is retried.
    let poison = |r: Result<()>, d: &mut [f64]| {
        if r.is_err() {
            d.fill(f64::NAN);
        }
    };
    let traj = match coords {
        Coordinates::YSpace => ode::integrate_guarded(
            |_, y, dy| poison(y_rhs_into(y, p, dy), dy),
            &y0,
            opts,
            |_, y| relative_spread(y) < CONVERGENCE_THRESHOLD,
            positive,
        ),
        Coordinates::ZSpace => ode::integrate_guarded(
            |_, z, dz| poison(z_rhs_into(z, p, dz), dz),
            z0.as_slice(),
            opts,
            |_, z| relative_spread(&swap_coords(z, mu, sigma2)) < CONVERGENCE_THRESHOLD,
            positive,
        ),
    };
    let traj = traj.map_err(|e| match e {
        Error::Inadmissible { t, partial } => {
            // Report the agent that left the positive orthant.
            let last = partial.last_state();
            let agent = last
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i);
            let (lo, hi) = min_max(&y0);
            Error::HullViolation {
                agent,
                t,
                value: last[agent],
                lo,
                hi,
            }
        }
        other => other,
    })?;

    let (trajectory_z, trajectory_y) = match coords {
        Coordinates::YSpace => (traj.map_states(|y| swap_coords(y, mu, sigma2)), traj),
        Coordinates::ZSpace => {
            let ty = traj.map_states(|z| swap_coords(z, mu, sigma2));
            (traj, ty)
        }
    };

    let (lo, hi) = min_max(&y0);
    let slack = hull_slack(hi, opts);
    let mut y_min = Vec::with_capacity(trajectory_y.len());
    let mut y_max = Vec::with_capacity(trajectory_y.len());
    for (t, y) in trajectory_y.times.iter().zip(&trajectory_y.states) {
        for (agent, &value) in y.iter().enumerate() {
            if value < lo - slack || value > hi + slack {
                return Err(Error::HullViolation {
                    agent,
                    t: *t,
                    value,
                    lo,
                    hi,
                });
            }
        }
        let (a, b) = min_max(y);
        y_min.push(a);
        y_max.push(b);
    }
    let hull_monotone = y_max.windows(2).all(|w| w[1] <= w[0] + slack)
        && y_min.windows(2).all(|w| w[1] >= w[0] - slack);

    let y_end = trajectory_y.last_state();
    let final_spread = relative_spread(y_end);
    let zeta = y_end.iter().sum::<f64>() / y_end.len() as f64;
    let z_limit = SusceptibilityProfile::new(trajectory_z.last_state().to_vec())?;
    let distance = opinion::distance_to_optimal(&z_limit, &p.mu, sigma2)?;
    let diagnostics = LearningDiagnostics {
        coords,
        terminated_by: trajectory_y.terminated_by,
        converged: final_spread < CONVERGENCE_THRESHOLD,
        hull: (lo, hi),
        y_min,
        y_max,
        hull_monotone,
        final_spread,
        zeta,
        distance_to_optimal: distance,
        steps: trajectory_y.len() - 1,
    };
    Ok(LearningRun {
        trajectory_z,
        trajectory_y,
        z_limit,
        diagnostics,
    })
}
