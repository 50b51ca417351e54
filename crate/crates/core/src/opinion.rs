//! Abelson opinion dynamics `x_i' = z_i sum_j W_ij (x_j - x_i)`, the
//! closed-form consensus value and its variance, the optimal susceptibility
//! ray, and a Monte Carlo estimator for the consensus variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_positive, Error, Result};
use crate::graph::{self, CentralityVector, WeightedDigraph};
use crate::ode::{self, IntegratorOptions, Trajectory};

/// Ground truth and per-agent observation variances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    theta: f64,
    sigma2: Vec<f64>,
}

impl NoiseModel {
    pub fn new(theta: f64, sigma2: Vec<f64>) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!("must be finite, got {theta}"),
            });
        }
        check_positive("sigma2", &sigma2)?;
        Ok(Self { theta, sigma2 })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }
}

/// Strictly positive susceptibility per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilityProfile(Vec<f64>);

impl SusceptibilityProfile {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        check_positive("z", &z)?;
        Ok(Self(z))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
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

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|z| z * c).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SusceptibilityProfile {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn abelson_rhs(x: &[f64], z: &SusceptibilityProfile, g: &WeightedDigraph) -> Result<Vec<f64>> {
    check_len("x", g.n(), x.len())?;
    check_len("z", g.n(), z.len())?;
    let mut dx = vec![0.0; x.len()];
    abelson_rhs_into(x, z.as_slice(), g, &mut dx);
    Ok(dx)
}

fn abelson_rhs_into(x: &[f64], z: &[f64], g: &WeightedDigraph, dx: &mut [f64]) {
    for (i, d) in dx.iter_mut().enumerate() {
        let pull: f64 = g.row(i).iter().zip(x).map(|(w, xj)| w * (xj - x[i])).sum();
        *d = z[i] * pull;
    }
}

/// `w_i = (mu_i / z_i) / sum_j (mu_j / z_j)`: the weight of agent `i`'s
/// initial opinion in the consensus value.
pub fn consensus_weights(z: &SusceptibilityProfile, mu: &CentralityVector) -> Result<Vec<f64>> {
    check_len("z", mu.len(), z.len())?;
    let raw: Vec<f64> = mu
        .as_slice()
        .iter()
        .zip(z.as_slice())
        .map(|(m, z)| m / z)
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

pub fn predict_consensus(
    x0: &[f64],
    z: &SusceptibilityProfile,
    mu: &CentralityVector,
) -> Result<f64> {
    check_len("x0", mu.len(), x0.len())?;
    let w = consensus_weights(z, mu)?;
    Ok(w.iter().zip(x0).map(|(w, x)| w * x).sum())
}

/// `v(z) = (sum_j mu_j/z_j)^-2 sum_k mu_k^2 sigma_k^2 / z_k^2`.
pub fn consensus_variance(
    z: &SusceptibilityProfile,
    mu: &CentralityVector,
    sigma2: &[f64],
) -> Result<f64> {
    check_len("z", mu.len(), z.len())?;
    check_len("sigma2", mu.len(), sigma2.len())?;
    let mut denom = 0.0;
    let mut numer = 0.0;
    for ((m, z), s) in mu.as_slice().iter().zip(z.as_slice()).zip(sigma2) {
        let r = m / z;
        denom += r;
        numer += r * r * s;
    }
    Ok(numer / (denom * denom))
}

/// Lower bound of the consensus variance: `(sum_k 1/sigma_k^2)^-1`.
pub fn optimal_variance(sigma2: &[f64]) -> f64 {
    1.0 / sigma2.iter().map(|s| 1.0 / s).sum::<f64>()
}

/// `z_i = alpha * mu_i * sigma_i^2`, a point on the optimal ray.
pub fn optimal_profile(
    mu: &CentralityVector,
    sigma2: &[f64],
    alpha: f64,
) -> Result<SusceptibilityProfile> {
    check_len("sigma2", mu.len(), sigma2.len())?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("must be positive, got {alpha}"),
        });
    }
    SusceptibilityProfile::new(
        mu.as_slice()
            .iter()
            .zip(sigma2)
            .map(|(m, s)| alpha * m * s)
            .collect(),
    )
}

/// Relative spread `(max r - min r) / mean r` of `r_i = z_i / (mu_i sigma_i^2)`.
/// Zero exactly on the optimal ray.
pub fn distance_to_optimal(
    z: &SusceptibilityProfile,
    mu: &CentralityVector,
    sigma2: &[f64],
) -> Result<f64> {
    check_len("z", mu.len(), z.len())?;
    check_len("sigma2", mu.len(), sigma2.len())?;
    let ratios: Vec<f64> = z
        .as_slice()
        .iter()
        .zip(mu.as_slice())
        .zip(sigma2)
        .map(|((z, m), s)| z / (m * s))
        .collect();
    Ok(relative_spread(&ratios))
}

/// `(max - min) / mean` of a positive vector.
pub fn relative_spread(v: &[f64]) -> f64 {
    let (lo, hi) = min_max(v);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (hi - lo) / mean
}

pub fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Consensus is declared once `max x - min x < 1e-9 (1 + |x0|_inf)`.
pub fn consensus_threshold(x0: &[f64]) -> f64 {
    let scale = x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-9 * (1.0 + scale)
}

/// `opts` with `rtol <= 1e-10` and `atol <= 1e-12`. Looser tolerances leave
/// an integration noise floor on the opinion spread above
/// [`consensus_threshold`], so consensus would never be detected.
pub fn consensus_resolving_options(opts: &IntegratorOptions) -> IntegratorOptions {
    IntegratorOptions {
        rtol: opts.rtol.min(1e-10),
        atol: opts.atol.min(1e-12),
        ..*opts
    }
}

/// Integrates the Abelson dynamics from `x0`, stopping early once the
/// opinion spread falls below [`consensus_threshold`].
pub fn simulate_opinions(
    x0: &[f64],
    z: &SusceptibilityProfile,
    g: &WeightedDigraph,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    check_len("x0", g.n(), x0.len())?;
    check_len("z", g.n(), z.len())?;
    if !graph::is_strongly_connected(g) {
        return Err(Error::NotStronglyConnected);
    }
    let threshold = consensus_threshold(x0);
    let zs = z.as_slice();
    ode::integrate_until(
        |_, x, dx| abelson_rhs_into(x, zs, g, dx),
        x0,
        opts,
        |_, x| {
            let (lo, hi) = min_max(x);
            hi - lo < threshold
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3 s), sqrt(3 s)]`, which has variance `s`.
    Uniform,
}

impl NoiseDistribution {
    fn sample<R: Rng>(self, rng: &mut R, sigma2: f64) -> f64 {
        match self {
            NoiseDistribution::Gaussian => sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal),
            NoiseDistribution::Uniform => {
                let half = (3.0 * sigma2).sqrt();
                rng.random_range(-half..half)
            }
        }
    }
}

/// Draws `x0 = theta + xi` with independent zero-mean noise.
pub fn sample_initial_opinions<R: Rng>(
    noise: &NoiseModel,
    distribution: NoiseDistribution,
    rng: &mut R,
) -> Vec<f64> {
    noise
        .sigma2
        .iter()
        .map(|&s| noise.theta + distribution.sample(rng, s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub trials: usize,
    pub seed: u64,
    pub mean: f64,
    /// Unbiased sample variance of the consensus value.
    pub variance: f64,
    /// Standard error of `variance`.
    pub stderr: f64,
    /// Standard error of `mean`.
    pub stderr_mean: f64,
}

/// Trials per RNG stream. Stream `b` covers trials `b*BLOCK..(b+1)*BLOCK`, so
/// the draws depend only on `(seed, trial index)` and never on scheduling.
const BLOCK: usize = 4096;

/// Estimates mean and variance of the consensus value over `trials` noisy
/// initial conditions. Each trial uses the closed-form consensus value.
pub fn monte_carlo_variance(
    z: &SusceptibilityProfile,
    g: &WeightedDigraph,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
    distribution: NoiseDistribution,
) -> Result<MonteCarloEstimate> {
    if trials < 2 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: format!("need at least 2, got {trials}"),
        });
    }
    check_len("sigma2", g.n(), noise.sigma2.len())?;
    let mu = graph::centrality(g)?;
    let w = consensus_weights(z, &mu)?;

    let mut values = vec![0.0; trials];
    values
        .par_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            for v in chunk.iter_mut() {
                *v = w
                    .iter()
                    .zip(&noise.sigma2)
                    .map(|(wi, &s)| wi * (noise.theta + distribution.sample(&mut rng, s)))
                    .sum();
            }
        });

    // Sequential reductions keep results independent of the thread count.
    let n = trials as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d2 = (v - mean) * (v - mean);
        (m2 + d2, m4 + d2 * d2)
    });
    let variance = m2 / (n - 1.0);
    let central2 = m2 / n;
    let central4 = m4 / n;
    let var_of_var = ((central4 - central2 * central2 * (n - 3.0) / (n - 1.0)) / n).max(0.0);
    Ok(MonteCarloEstimate {
        trials,
        seed,
        mean,
        variance,
        stderr: var_of_var.sqrt(),
        stderr_mean: (variance / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::Method;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn pair() -> WeightedDigraph {
        WeightedDigraph::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn mu(v: &[f64]) -> CentralityVector {
        CentralityVector::new(v.to_vec()).unwrap()
    }

    fn z(v: &[f64]) -> SusceptibilityProfile {
        SusceptibilityProfile::new(v.to_vec()).unwrap()
    }

    const PAPER_MU: [f64; 6] = [0.125, 0.1875, 0.125, 0.25, 0.1875, 0.125];
    const PAPER_SIGMA2: [f64; 6] = [1.0, 1.1, 1.0, 1.2, 1.1, 1.0];

    #[test]
    fn rhs_examples() {
        let g = pair();
        assert_eq!(
            abelson_rhs(&[3.0, 3.0], &z(&[1.0, 2.0]), &g).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            abelson_rhs(&[0.0, 2.0], &z(&[1.0, 1.0]), &g).unwrap(),
            vec![2.0, -2.0]
        );
        assert!(matches!(
            abelson_rhs(&[0.0], &z(&[1.0, 1.0]), &g),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rhs_matches_laplacian_form() {
        let g = WeightedDigraph::from_rows(&[
            vec![0.0, 0.3, 1.2],
            vec![0.7, 0.5, 0.0],
            vec![0.0, 2.0, 0.0],
        ])
        .unwrap();
        let x = [0.4, -1.3, 2.2];
        let zz = [0.5, 1.7, 3.1];
        let lx = graph::laplacian(&g).mul_vec(&x);
        let dx = abelson_rhs(&x, &z(&zz), &g).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(dx[i], -zz[i] * lx[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn weights_examples() {
        let m = mu(&PAPER_MU);
        let w = consensus_weights(&z(&[2.5; 6]), &m).unwrap();
        for (wi, mi) in w.iter().zip(&PAPER_MU) {
            assert_abs_diff_eq!(*wi, *mi, epsilon = 1e-15);
        }
        let zopt = optimal_profile(&m, &PAPER_SIGMA2, 3.0).unwrap();
        let w = consensus_weights(&zopt, &m).unwrap();
        let precision: f64 = PAPER_SIGMA2.iter().map(|s| 1.0 / s).sum();
        for (wi, s) in w.iter().zip(&PAPER_SIGMA2) {
            assert_abs_diff_eq!(*wi, (1.0 / s) / precision, epsilon = 1e-15);
        }
        let w = consensus_weights(&z(&[0.3, 1.0, 4.0, 0.01, 2.0, 7.0]), &m).unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn predict_examples() {
        let m = mu(&PAPER_MU);
        let zz = z(&[0.3, 1.0, 4.0, 0.01, 2.0, 7.0]);
        assert_abs_diff_eq!(
            predict_consensus(&[1.75; 6], &zz, &m).unwrap(),
            1.75,
            epsilon = 1e-14
        );
        let uniform = mu(&[0.25; 4]);
        let x0 = [1.0, 2.0, 3.0, 10.0];
        assert_abs_diff_eq!(
            predict_consensus(&x0, &z(&[1.0; 4]), &uniform).unwrap(),
            4.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn variance_examples() {
        assert_abs_diff_eq!(
            consensus_variance(&z(&[0.37]), &mu(&[1.0]), &[2.5]).unwrap(),
            2.5,
            epsilon = 1e-15
        );
        let m = mu(&PAPER_MU);
        for alpha in [0.5, 1.0, 7.0] {
            let zopt = optimal_profile(&m, &PAPER_SIGMA2, alpha).unwrap();
            assert_abs_diff_eq!(
                consensus_variance(&zopt, &m, &PAPER_SIGMA2).unwrap(),
                optimal_variance(&PAPER_SIGMA2),
                epsilon = 1e-14
            );
        }
        let expected: f64 = PAPER_MU
            .iter()
            .zip(&PAPER_SIGMA2)
            .map(|(m, s)| m * m * s)
            .sum();
        assert_abs_diff_eq!(
            consensus_variance(&z(&[1.0; 6]), &m, &PAPER_SIGMA2).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn optimal_variance_examples() {
        assert_abs_diff_eq!(optimal_variance(&[0.7; 5]), 0.14, epsilon = 1e-15);
        assert_abs_diff_eq!(
            optimal_variance(&PAPER_SIGMA2),
            1.0 / (3.0 + 2.0 / 1.1 + 1.0 / 1.2),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(optimal_variance(&PAPER_SIGMA2), 0.176_943_7, epsilon = 1e-7);
        assert_eq!(optimal_variance(&[3.3]), 3.3);
    }

    #[test]
    fn optimal_profile_examples() {
        let p = optimal_profile(&mu(&[0.25; 4]), &[2.0; 4], 1.0).unwrap();
        assert_eq!(p.as_slice(), &[0.5; 4]);
        let p = optimal_profile(&mu(&PAPER_MU), &PAPER_SIGMA2, 1.0).unwrap();
        let expected = [0.125, 0.20625, 0.125, 0.3, 0.20625, 0.125];
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(optimal_profile(&mu(&PAPER_MU), &PAPER_SIGMA2, 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let m = mu(&PAPER_MU);
        let zopt = optimal_profile(&m, &PAPER_SIGMA2, 2.0).unwrap();
        assert!(distance_to_optimal(&zopt, &m, &PAPER_SIGMA2).unwrap() < 1e-14);
        let mut bumped = optimal_profile(&m, &PAPER_SIGMA2, 1.0).unwrap().into_vec();
        bumped[3] *= 2.0;
        let bumped = z(&bumped);
        let d = distance_to_optimal(&bumped, &m, &PAPER_SIGMA2).unwrap();
        assert!(d > 0.0);
        let d_scaled =
            distance_to_optimal(&bumped.scaled(13.0).unwrap(), &m, &PAPER_SIGMA2).unwrap();
        assert_relative_eq!(d, d_scaled, max_relative = 1e-14);
    }

    #[test]
    fn simulate_examples() {
        let g = pair();
        let opts = IntegratorOptions {
            t_end: 50.0,
            ..IntegratorOptions::default()
        };
        let traj = simulate_opinions(&[0.7, 0.7], &z(&[1.0, 3.0]), &g, &opts).unwrap();
        assert!(traj.states.iter().all(|s| s == &[0.7, 0.7]));

        let traj = simulate_opinions(&[0.0, 2.0], &z(&[1.0, 1.0]), &g, &opts).unwrap();
        for v in traj.last_state() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-8);
        }
        let one_way = WeightedDigraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            simulate_opinions(&[0.0, 2.0], &z(&[1.0, 1.0]), &one_way, &opts),
            Err(Error::NotStronglyConnected)
        ));
    }

    #[test]
    fn simulate_rk4_contracts() {
        let g = WeightedDigraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5)]).unwrap();
        let opts = IntegratorOptions {
            method: Method::Rk4Fixed,
            dt: 0.05,
            t_end: 40.0,
            ..IntegratorOptions::default()
        };
        let traj = simulate_opinions(&[-1.0, 0.5, 4.0], &z(&[1.0, 0.5, 2.0]), &g, &opts).unwrap();
        for w in traj.states.windows(2) {
            let (lo0, hi0) = min_max(&w[0]);
            let (lo1, hi1) = min_max(&w[1]);
            assert!(hi1 <= hi0 + 1e-10 && lo1 >= lo0 - 1e-10);
        }
    }

    #[test]
    fn monte_carlo_degenerate_noise() {
        let g = pair();
        let noise = NoiseModel::new(2.5, vec![1e-12; 2]).unwrap();
        let est = monte_carlo_variance(
            &z(&[1.0, 2.0]),
            &g,
            &noise,
            1000,
            3,
            NoiseDistribution::Gaussian,
        )
        .unwrap();
        assert!(est.variance < 1e-11);
        assert_abs_diff_eq!(est.mean, 2.5, epsilon = 1e-5);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_thread_independent() {
        let g = pair();
        let noise = NoiseModel::new(0.0, vec![1.0, 2.0]).unwrap();
        let zz = z(&[1.0, 2.0]);
        let run = || {
            monte_carlo_variance(&zz, &g, &noise, 20_000, 42, NoiseDistribution::Gaussian).unwrap()
        };
        let a = run();
        let b = run();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(a, b);
        assert_eq!(a, single);
        let other =
            monte_carlo_variance(&zz, &g, &noise, 20_000, 43, NoiseDistribution::Gaussian).unwrap();
        assert_ne!(a.mean, other.mean);
    }

    #[test]
    fn monte_carlo_uniform_noise_matches_formula() {
        let g = pair();
        let noise = NoiseModel::new(1.0, vec![0.5, 2.0]).unwrap();
        let zz = z(&[0.4, 1.3]);
        let est =
            monte_carlo_variance(&zz, &g, &noise, 200_000, 9, NoiseDistribution::Uniform).unwrap();
        let analytic = consensus_variance(&zz, &mu(&[0.5, 0.5]), noise.sigma2()).unwrap();
        assert!((est.variance - analytic).abs() < 4.0 * est.stderr);
        assert!((est.mean - 1.0).abs() < 4.0 * est.stderr_mean);
    }

    #[test]
    fn monte_carlo_needs_two_trials() {
        let noise = NoiseModel::new(0.0, vec![1.0; 2]).unwrap();
        assert!(monte_carlo_variance(
            &z(&[1.0; 2]),
            &pair(),
            &noise,
            1,
            0,
            NoiseDistribution::Gaussian
        )
        .is_err());
    }

    #[test]
    fn profile_and_noise_validation() {
        assert!(SusceptibilityProfile::new(vec![1.0, 0.0]).is_err());
        assert!(SusceptibilityProfile::new(vec![1.0, f64::NAN]).is_err());
        assert!(NoiseModel::new(0.0, vec![1.0, -1.0]).is_err());
        assert!(NoiseModel::new(f64::INFINITY, vec![1.0]).is_err());
    }
}
