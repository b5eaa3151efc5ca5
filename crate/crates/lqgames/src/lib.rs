//! Solvers for linear-quadratic stochastic differential games with many
//! nearly identical players.
//!
//! The library computes exact affine Nash equilibria for N-player games
//! with ergodic (long-time-average) or discounted infinite-horizon costs,
//! together with their mean-field counterparts. Equilibria are
//! quadratic-Gaussian: the value function of each player is a quadratic
//! polynomial and the stationary law of each state is a multivariate
//! Gaussian. All coefficients come from algebraic relations (a matrix
//! square root or an algebraic Riccati equation plus a linear system), so
//! solutions are exact up to floating-point rounding and every solution is
//! certified against the coupled HJB/KFP equations it is supposed to
//! solve.
//!
//! Modules:
//! * [`matalg`] - symmetric-matrix utilities (spectral norm, inertia,
//!   principal square root) and a Lyapunov solver used as an independent
//!   oracle for stationary covariances.
//! * [`riccati`] - algebraic Riccati equations via invariant graph
//!   subspaces of the Hamiltonian matrix, including exhaustive enumeration
//!   of symmetric solutions and the Riccati-Sylvester property check.
//! * [`game`] - game instance types, assumption validation, cost
//!   evaluators and the cost-coefficient scalings of the mean-field
//!   family.
//! * [`solution`] - the quadratic-Gaussian solution type shared by all
//!   solvers.
//! * [`ergodic`] - the ergodic solver and the HJB/KFP residual oracle.
//! * [`discounted`] - the discounted solver, feasibility threshold
//!   estimation and heterogeneous-player block assembly.
//! * [`limits`] - singular limits (vanishing discount, vanishing noise,
//!   cheap control), the mean-field limit and commuting-diagram checks.
//! * [`sim`] - Euler-Maruyama Monte Carlo verification of costs, moments
//!   and the Nash property.
//! * [`config`] / [`report`] - config-file ingestion and structured
//!   report emission for the `lqg` command-line tool.

pub mod config;
pub mod discounted;
pub mod ergodic;
mod error;
pub mod game;
pub mod limits;
pub mod matalg;
pub mod report;
pub mod riccati;
pub mod sim;
pub mod solution;
pub mod tol;

pub use error::{Error, Result};


