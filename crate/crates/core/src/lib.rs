//! Collective-wisdom maximization for the Abelson opinion model.
//!
//! * [`graph`]: weighted digraphs, Laplacians, Perron centrality.
//! * [`ode`]: fixed-step RK4 and adaptive Dormand-Prince integration.
//! * [`opinion`]: Abelson dynamics, consensus value and variance, the
//!   optimal susceptibility ray, Monte Carlo estimation.
//! * [`learning`]: the distributed susceptibility learning flow and its
//!   consensus-coordinate form.
//! * [`experiments`]: the six-agent reference network and figure runs.
//! * [`cli`]: config parsing and the `wisdomdyn` command dispatch.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod learning;
pub mod ode;
pub mod opinion;
pub mod output;

pub use error::{Error, Result};
