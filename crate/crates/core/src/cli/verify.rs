//! Invariant suite behind `wisdomdyn verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Experiment, ExperimentConfig};
use crate::error::Result;
use crate::graph::{self, CentralityVector};
use crate::learning::{self, Coordinates, LearningProblem};
use crate::ode::IntegratorOptions;
use crate::opinion::{self, NoiseDistribution, SusceptibilityProfile};

/// Random susceptibility profiles drawn per randomized check.
pub const RANDOM_PROFILES: usize = 200;
/// Log-uniform sampling range for those profiles.
const Z_RANGE: (f64, f64) = (0.1, 10.0);
const OPTIMAL_ALPHAS: [f64; 3] = [0.5, 1.0, 7.0];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, metric: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            passed: metric <= tolerance,
            metric,
            tolerance,
            detail,
        }
    }

    fn failed(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: false,
            metric: f64::NAN,
            tolerance: f64::NAN,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    ex: &'a Experiment,
    mu: CentralityVector,
    problem: LearningProblem,
}

type CheckFn = fn(&Context) -> Result<Check>;

/// Runs every check. Errors in setup (bad graph, missing self-loops) are
/// returned; errors inside a check mark only that check as failed.
pub fn run_checks(cfg: &ExperimentConfig, ex: &Experiment) -> Result<VerifyReport> {
    let ctx = Context {
        cfg,
        ex,
        mu: ex.centrality()?,
        problem: ex.problem()?,
    };
    let suite: [(&'static str, CheckFn); 9] = [
        ("centrality_residual", centrality_residual),
        ("gradient_oracle", gradient_oracle),
        ("chain_rule", chain_rule),
        ("variance_lower_bound", variance_lower_bound),
        ("variance_optimality", variance_optimality),
        ("equilibrium_equivalence", equilibrium_equivalence),
        ("learning_convergence", learning_convergence),
        ("monte_carlo_agreement", monte_carlo_agreement),
        ("ode_cross_check", ode_cross_check),
    ];
    let checks: Vec<Check> = suite
        .iter()
        .map(|(name, f)| f(&ctx).unwrap_or_else(|e| Check::failed(name, e.to_string())))
        .collect();
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn rng(ctx: &Context, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    rng.set_stream(stream);
    rng
}

fn random_profile(rng: &mut ChaCha8Rng, n: usize) -> Result<SusceptibilityProfile> {
    let (a, b) = (Z_RANGE.0.ln(), Z_RANGE.1.ln());
    SusceptibilityProfile::new((0..n).map(|_| rng.random_range(a..b).exp()).collect())
}

fn optimal_profiles(ctx: &Context) -> Result<Vec<SusceptibilityProfile>> {
    OPTIMAL_ALPHAS
        .iter()
        .map(|&a| opinion::optimal_profile(&ctx.mu, ctx.ex.noise.sigma2(), a))
        .collect()
}

fn centrality_residual(ctx: &Context) -> Result<Check> {
    let l = graph::laplacian(&ctx.ex.social);
    let r = l.mul_vec_transposed(ctx.mu.as_slice());
    let residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sum_err = (ctx.mu.as_slice().iter().sum::<f64>() - 1.0).abs();
    Ok(Check::new(
        "centrality_residual",
        residual.max(sum_err),
        1e-10,
        format!("|L^T mu|_inf = {residual:e}, |sum mu - 1| = {sum_err:e}"),
    ))
}

fn gradient_oracle(ctx: &Context) -> Result<Check> {
    let mut rng = rng(ctx, 1);
    let n = ctx.ex.n();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z = random_profile(&mut rng, n)?;
        let i = rng.random_range(0..n);
        let g = learning::utility_gradient(i, &z, &ctx.problem)?;
        let h = 1e-5 * z[i];
        let mut plus = z.as_slice().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let up = learning::local_utility(i, &SusceptibilityProfile::new(plus)?, &ctx.problem)?;
        let um = learning::local_utility(i, &SusceptibilityProfile::new(minus)?, &ctx.problem)?;
        let fd = (up - um) / (2.0 * h);
        let scale = g.abs().max(fd.abs());
        if scale > 0.0 {
            worst = worst.max((g - fd).abs() / scale);
        }
    }
    Ok(Check::new(
        "gradient_oracle",
        worst,
        1e-6,
        "100 random (agent, z) pairs against central differences".into(),
    ))
}

fn chain_rule(ctx: &Context) -> Result<Check> {
    let mut rng = rng(ctx, 2);
    let sigma2 = ctx.ex.noise.sigma2();
    let mu = ctx.mu.as_slice();
    let mut worst = 0.0f64;
    for _ in 0..RANDOM_PROFILES {
        let z = random_profile(&mut rng, ctx.ex.n())?;
        let dz = learning::z_rhs(&z, &ctx.problem)?;
        let dy = learning::y_rhs(&learning::to_y(&z, &ctx.mu, sigma2)?, &ctx.problem)?;
        for i in 0..z.len() {
            let jacobian = mu[i] * sigma2[i] / (z[i] * z[i]);
            let expected = -jacobian * dz[i];
            // Floor at the size of the gradient's summands, u_i / z_i.
            let terms = jacobian * learning::local_utility(i, &z, &ctx.problem)? / z[i];
            let scale = expected.abs().max(dy[i].abs()).max(1e-5 * terms);
            worst = worst.max((dy[i] - expected).abs() / scale);
        }
    }
    Ok(Check::new(
        "chain_rule",
        worst,
        1e-9,
        "y-dynamics equal the pushed-forward z-dynamics".into(),
    ))
}

fn variance_lower_bound(ctx: &Context) -> Result<Check> {
    let mut rng = rng(ctx, 3);
    let sigma2 = ctx.ex.noise.sigma2();
    let v_star = opinion::optimal_variance(sigma2);
    let tol = 1e-12 * v_star.max(1.0);
    let mut worst = f64::NEG_INFINITY;
    let mut false_equalities = 0usize;
    for _ in 0..RANDOM_PROFILES {
        let z = random_profile(&mut rng, ctx.ex.n())?;
        let deficit = v_star - opinion::consensus_variance(&z, &ctx.mu, sigma2)?;
        worst = worst.max(deficit);
        let near_equal = deficit.abs() <= tol;
        let on_ray = opinion::distance_to_optimal(&z, &ctx.mu, sigma2)? < 1e-10;
        if near_equal != on_ray {
            false_equalities += 1;
        }
    }
    let mut check = Check::new(
        "variance_lower_bound",
        worst,
        tol,
        format!("{RANDOM_PROFILES} random profiles; optimum {v_star}; {false_equalities} equality mismatches"),
    );
    check.passed &= false_equalities == 0;
    Ok(check)
}

fn variance_optimality(ctx: &Context) -> Result<Check> {
    let sigma2 = ctx.ex.noise.sigma2();
    let v_star = opinion::optimal_variance(sigma2);
    let mut worst = 0.0f64;
    for z in optimal_profiles(ctx)? {
        worst = worst.max((opinion::consensus_variance(&z, &ctx.mu, sigma2)? - v_star).abs());
    }
    Ok(Check::new(
        "variance_optimality",
        worst,
        1e-12 * v_star.max(1.0),
        format!("optimal profiles at alpha in {OPTIMAL_ALPHAS:?}"),
    ))
}

fn equilibrium_equivalence(ctx: &Context) -> Result<Check> {
    let mut rng = rng(ctx, 4);
    let sigma2 = ctx.ex.noise.sigma2();
    let mut profiles = optimal_profiles(ctx)?;
    for _ in 0..RANDOM_PROFILES {
        profiles.push(random_profile(&mut rng, ctx.ex.n())?);
    }
    let mut mismatches = 0usize;
    for z in &profiles {
        let stationary = learning::equilibrium_check(z, &ctx.problem, 1e-10)?;
        let on_ray = opinion::distance_to_optimal(z, &ctx.mu, sigma2)? < 1e-8;
        if stationary != on_ray {
            mismatches += 1;
        }
    }
    Ok(Check::new(
        "equilibrium_equivalence",
        mismatches as f64,
        0.0,
        format!("{} profiles, stationarity vs optimal ray", profiles.len()),
    ))
}

fn learning_convergence(ctx: &Context) -> Result<Check> {
    let run = learning::learn(
        &ctx.ex.z0,
        &ctx.problem,
        &ctx.cfg.integrator,
        ctx.cfg.coords,
    )?;
    let d = &run.diagnostics;
    let (lo, hi) = d.hull;
    let in_hull = lo <= d.zeta && d.zeta <= hi;
    let mut check = Check::new(
        "learning_convergence",
        d.final_spread,
        learning::CONVERGENCE_THRESHOLD,
        format!(
            "terminated by {:?}; hull monotone {}; zeta {} in [{lo}, {hi}]: {in_hull}",
            d.terminated_by, d.hull_monotone, d.zeta
        ),
    );
    check.passed &= d.converged && d.hull_monotone && in_hull;
    Ok(check)
}

fn monte_carlo_agreement(ctx: &Context) -> Result<Check> {
    let mc = &ctx.cfg.monte_carlo;
    let noise = &ctx.ex.noise;
    let est = opinion::monte_carlo_variance(
        &ctx.ex.mc_z,
        &ctx.ex.social,
        noise,
        mc.trials,
        mc.seed,
        mc.distribution,
    )?;
    let analytic = opinion::consensus_variance(&ctx.ex.mc_z, &ctx.mu, noise.sigma2())?;
    let var_sigmas = (est.variance - analytic).abs() / est.stderr;
    let mean_sigmas = (est.mean - noise.theta()).abs() / est.stderr_mean;
    Ok(Check::new(
        "monte_carlo_agreement",
        var_sigmas.max(mean_sigmas),
        4.0,
        format!(
            "{} trials: variance {} vs {analytic} ({var_sigmas:.2} se), mean {} vs {} ({mean_sigmas:.2} se)",
            est.trials,
            est.variance,
            est.mean,
            noise.theta()
        ),
    ))
}

fn ode_cross_check(ctx: &Context) -> Result<Check> {
    let x0 = match &ctx.cfg.x0 {
        Some(x0) => x0.clone(),
        None => opinion::sample_initial_opinions(
            &ctx.ex.noise,
            NoiseDistribution::Gaussian,
            &mut rng(ctx, 5),
        ),
    };
    let opts = opinion::consensus_resolving_options(&ctx.cfg.integrator);
    let traj = opinion::simulate_opinions(&x0, &ctx.ex.z0, &ctx.ex.social, &opts)?;
    let predicted = opinion::predict_consensus(&x0, &ctx.ex.z0, &ctx.mu)?;
    let last = traj.last_state();
    let terminal = last.iter().sum::<f64>() / last.len() as f64;
    let scale = 1.0 + x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Check::new(
        "ode_cross_check",
        (terminal - predicted).abs(),
        1e-8 * scale,
        format!(
            "terminal mean {terminal} vs predicted {predicted}, terminated by {:?}",
            traj.terminated_by
        ),
    ))
}

/// Runs the learning flow in the other coordinate system and compares the
/// limits; not part of the default suite because it doubles the runtime.
pub fn coordinate_equivalence(ex: &Experiment, opts: &IntegratorOptions) -> Result<f64> {
    let problem = ex.problem()?;
    let a = learning::learn(&ex.z0, &problem, opts, Coordinates::YSpace)?;
    let b = learning::learn(&ex.z0, &problem, opts, Coordinates::ZSpace)?;
    Ok(a.z_limit
        .as_slice()
        .iter()
        .zip(b.z_limit.as_slice())
        .fold(0.0f64, |m, (x, y)| {
            m.max((x - y).abs() / x.abs().max(y.abs()))
        }))
}
