use thiserror::Error;

use crate::ode::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("weight matrix has {actual} entries, expected {expected}")]
    BadShape { expected: usize, actual: usize },

    #[error("invalid weight {value} at ({row}, {col}): weights must be finite and nonnegative")]
    InvalidWeight { row: usize, col: usize, value: f64 },

    #[error("node id {id} out of range 1..={n}")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("learning graph lacks a self-loop at node {0}")]
    MissingSelfLoop(usize),

    #[error("row {0} of the weight matrix sums to zero")]
    ZeroRow(usize),

    #[error("agent {0} has no in-neighbours in the learning graph")]
    IsolatedAgent(usize),

    #[error("length mismatch for {field}: expected {expected}, got {actual}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{field} must be strictly positive and finite, found {value} at index {index}")]
    NonPositiveInput {
        field: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("adaptive step size underflowed at t = {t}")]
    StepFailure { t: f64, partial: Box<Trajectory> },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxSteps {
        max_steps: usize,
        t: f64,
        partial: Box<Trajectory>,
    },

    #[error("state left the admissible region at t = {t}")]
    Inadmissible { t: f64, partial: Box<Trajectory> },

    #[error("y_{agent} = {value} left the invariant hull [{lo}, {hi}] at t = {t}")]
    HullViolation {
        agent: usize,
        t: f64,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(field: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            field,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_positive(field: &'static str, values: &[f64]) -> Result<()> {
    match values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        Some((index, &value)) => Err(Error::NonPositiveInput {
            field,
            index,
            value,
        }),
        None => Ok(()),
    }
}
