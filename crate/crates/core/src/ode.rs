//! Explicit Runge-Kutta integration: classic fixed-step RK4 and the
//! Dormand-Prince 5(4) embedded pair with a safety-factor step controller.
//!
//! Stop predicates and admissibility checks run on accepted steps only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Fixed step, or the first trial step for the adaptive method.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub t_end: f64,
    /// Budget of attempted steps, rejected ones included.
    pub max_steps: usize,
    /// Store every k-th accepted step. The initial and final states are
    /// always stored.
    pub record_every: usize,
}

/// Adaptive Dormand-Prince with `rtol = 1e-8`, `atol = 1e-10` over a long
/// horizon; callers relying on early termination keep `t_end` large.
impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            dt: 1e-2,
            rtol: 1e-8,
            atol: 1e-10,
            t_end: 1e8,
            max_steps: 2_000_000,
            record_every: 1,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("t_end", self.t_end),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "max_steps",
                reason: "must be at least 1".into(),
            });
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter {
                name: "record_every",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TEndReached,
    PredicateSatisfied,
    MaxStepsExceeded,
    StepFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn last_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory holds the initial state")
    }

    /// Applies `f` to every stored state, keeping times and termination.
    pub fn map_states(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(|s| f(s)).collect(),
            terminated_by: self.terminated_by,
        }
    }
}

pub fn integrate<F>(rhs: F, x0: &[f64], opts: &IntegratorOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_guarded(
        rhs,
        x0,
        opts,
        |_, _| false,
        |x| x.iter().all(|v| v.is_finite()),
    )
}

pub fn integrate_until<F, S>(
    rhs: F,
    x0: &[f64],
    opts: &IntegratorOptions,
    stop: S,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
{
    integrate_guarded(rhs, x0, opts, stop, |x| x.iter().all(|v| v.is_finite()))
}

/// Like [`integrate_until`], with an admissibility test on proposed states.
/// The adaptive method halves the step when a proposal is inadmissible; the
/// fixed-step method fails with [`Error::Inadmissible`].
pub fn integrate_guarded<F, S, D>(
    mut rhs: F,
    x0: &[f64],
    opts: &IntegratorOptions,
    mut stop: S,
    admissible: D,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
    D: Fn(&[f64]) -> bool,
{
    opts.validate()?;
    let mut rec = Recorder::new(x0, opts.record_every);
    if stop(0.0, x0) {
        return Ok(rec.finish(Termination::PredicateSatisfied));
    }
    match opts.method {
        Method::Rk4Fixed => rk4(&mut rhs, rec, opts, &mut stop, &admissible),
        Method::Rk45Adaptive => {
            rec.set_capacity_hint(1024);
            dopri5(&mut rhs, rec, opts, &mut stop, &admissible)
        }
    }
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    every: usize,
    accepted: usize,
    last_t: f64,
    last_x: Vec<f64>,
}

impl Recorder {
    fn new(x0: &[f64], every: usize) -> Self {
        Self {
            times: vec![0.0],
            states: vec![x0.to_vec()],
            every,
            accepted: 0,
            last_t: 0.0,
            last_x: x0.to_vec(),
        }
    }

    fn set_capacity_hint(&mut self, n: usize) {
        self.times.reserve(n);
        self.states.reserve(n);
    }

    fn accept(&mut self, t: f64, x: &[f64]) {
        self.accepted += 1;
        self.last_t = t;
        self.last_x.copy_from_slice(x);
        if self.accepted.is_multiple_of(self.every) {
            self.times.push(t);
            self.states.push(x.to_vec());
        }
    }

    fn finish(mut self, terminated_by: Termination) -> Trajectory {
        if *self.times.last().unwrap() < self.last_t {
            self.times.push(self.last_t);
            self.states.push(self.last_x.clone());
        }
        Trajectory {
            times: self.times,
            states: self.states,
            terminated_by,
        }
    }

    fn t(&self) -> f64 {
        self.last_t
    }
}

fn axpy_into(out: &mut [f64], x: &[f64], terms: &[(f64, &[f64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        *o = x[i] + s;
    }
}

fn rk4<F, S, D>(
    rhs: &mut F,
    mut rec: Recorder,
    opts: &IntegratorOptions,
    stop: &mut S,
    admissible: &D,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
    D: Fn(&[f64]) -> bool,
{
    let n = rec.last_x.len();
    let mut x = rec.last_x.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    // Absorb rounding in t_end / dt so an exact multiple does not add a
    // sliver step.
    let total = ((opts.t_end / opts.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    for step in 0..total {
        if step == opts.max_steps {
            let t = rec.t();
            return Err(Error::MaxSteps {
                max_steps: opts.max_steps,
                t,
                partial: Box::new(rec.finish(Termination::MaxStepsExceeded)),
            });
        }
        let t = step as f64 * opts.dt;
        let t_next = if step + 1 == total {
            opts.t_end
        } else {
            (step + 1) as f64 * opts.dt
        };
        let h = t_next - t;
        rhs(t, &x, &mut k1);
        axpy_into(&mut tmp, &x, &[(0.5 * h, &k1)]);
        rhs(t + 0.5 * h, &tmp, &mut k2);
        axpy_into(&mut tmp, &x, &[(0.5 * h, &k2)]);
        rhs(t + 0.5 * h, &tmp, &mut k3);
        axpy_into(&mut tmp, &x, &[(h, &k3)]);
        rhs(t + h, &tmp, &mut k4);
        axpy_into(
            &mut tmp,
            &x,
            &[
                (h / 6.0, &k1),
                (h / 3.0, &k2),
                (h / 3.0, &k3),
                (h / 6.0, &k4),
            ],
        );
        if !admissible(&tmp) {
            return Err(Error::Inadmissible {
                t: t_next,
                partial: Box::new(rec.finish(Termination::StepFailure)),
            });
        }
        std::mem::swap(&mut x, &mut tmp);
        rec.accept(t_next, &x);
        if stop(t_next, &x) {
            return Ok(rec.finish(Termination::PredicateSatisfied));
        }
    }
    Ok(rec.finish(Termination::TEndReached))
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn dopri5<F, S, D>(
    rhs: &mut F,
    mut rec: Recorder,
    opts: &IntegratorOptions,
    stop: &mut S,
    admissible: &D,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
    D: Fn(&[f64]) -> bool,
{
    let n = rec.last_x.len();
    let mut x = rec.last_x.clone();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let min_h = opts.dt * 1e-12;
    let mut t = 0.0;
    let mut h = opts.dt.min(opts.t_end);
    let mut attempts = 0usize;

    rhs(t, &x, &mut k[0]);
    while t < opts.t_end {
        if attempts == opts.max_steps {
            return Err(Error::MaxSteps {
                max_steps: opts.max_steps,
                t,
                partial: Box::new(rec.finish(Termination::MaxStepsExceeded)),
            });
        }
        attempts += 1;
        let last = t + h >= opts.t_end;
        if last {
            h = opts.t_end - t;
        }

        let [k1, k2, k3, k4, k5, k6, k7] = &mut k;
        axpy_into(&mut tmp, &x, &[(h * A21, k1)]);
        rhs(t + C2 * h, &tmp, k2);
        axpy_into(&mut tmp, &x, &[(h * A31, k1), (h * A32, k2)]);
        rhs(t + C3 * h, &tmp, k3);
        axpy_into(&mut tmp, &x, &[(h * A41, k1), (h * A42, k2), (h * A43, k3)]);
        rhs(t + C4 * h, &tmp, k4);
        axpy_into(
            &mut tmp,
            &x,
            &[(h * A51, k1), (h * A52, k2), (h * A53, k3), (h * A54, k4)],
        );
        rhs(t + C5 * h, &tmp, k5);
        axpy_into(
            &mut tmp,
            &x,
            &[
                (h * A61, k1),
                (h * A62, k2),
                (h * A63, k3),
                (h * A64, k4),
                (h * A65, k5),
            ],
        );
        rhs(t + h, &tmp, k6);
        axpy_into(
            &mut x_new,
            &x,
            &[
                (h * B1, k1),
                (h * B3, k3),
                (h * B4, k4),
                (h * B5, k5),
                (h * B6, k6),
            ],
        );

        let ok = admissible(&x_new);
        let mut err = f64::INFINITY;
        if ok {
            rhs(t + h, &x_new, k7);
            let scale_x = x
                .iter()
                .chain(x_new.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let tol = opts.atol + opts.rtol * scale_x;
            err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                err = err.max(e.abs());
            }
            err /= tol;
            if !err.is_finite() {
                err = f64::INFINITY;
            }
        }

        if ok && err <= 1.0 {
            t = if last { opts.t_end } else { t + h };
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(k1, k7);
            rec.accept(t, &x);
            if stop(t, &x) {
                return Ok(rec.finish(Termination::PredicateSatisfied));
            }
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= factor;
        } else {
            let factor = if ok {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                0.5
            };
            h *= factor;
            if h < min_h {
                return Err(Error::StepFailure {
                    t,
                    partial: Box::new(rec.finish(Termination::StepFailure)),
                });
            }
        }
    }
    Ok(rec.finish(Termination::TEndReached))
}
