//! Monte Carlo toolkit for portfolio optimization when preferences are given
//! by maximal subsolutions of backward SDEs.
//!
//! | Module | Contents |
//! |---|---|
//! | [`stochastic`] | time grids, Brownian ensembles, stochastic exponentials, Girsanov weights, Muckenhoupt check |
//! | [`market`] | market parameters, trading strategies, wealth simulation |
//! | [`generators`] | BSDE generators, utilities, convex conjugates, subgradients, condition checks |
//! | [`bsde`] | regression backward solver, certainty-equivalent oracle, linear dual evaluator, diagnostics |
//! | [`duality`] | robust dual objective, subgradient gap closing, dual search, minimax, primal optimization |
//! | [`characterize`] | adjoint equation and first-order optimality diagnostics |
//!
//! Sign convention: a solution `(Y, Z)` satisfies `dY = g(Y, Z) dt - Z dW`,
//! so a positive generator pushes `Y` upward forward in time and the
//! subgradient of `g` at `(Y, Z)` is directly a robust model `(beta, q)` with
//! `dQ^q/dP = E(int q dW)`.

pub mod bsde;
pub mod characterize;
pub mod duality;
pub mod error;
pub mod generators;
pub mod market;
pub(crate) mod optim;
pub mod regression;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
pub use generators::{ConjugateValue, Generator, GeneratorSpec, Utility};
pub use market::{MarketParams, Strategy, WealthPath};
pub use regression::{BasisKind, RegressionBasis, StateSelector};
pub use stochastic::{gen_brownian, PathBatch, ProcessPath, TimeGrid};
