//! Default tolerances, collected in one place.
//!
//! Every threshold used by the solvers is either one of these constants or
//! an explicit parameter of the operation that uses it.

/// Sign classification of eigenvalues (inertia, Hurwitz margins,
/// spectrum gates). Absolute.
pub const SIGN_TOL: f64 = 1e-9;

/// Relative asymmetry allowed when constructing a symmetric matrix from
/// raw entries. Beyond this the input is rejected instead of averaged.
pub const SYM_CONSTRUCTION_TOL: f64 = 1e-12;

/// Relative residual certified by the principal square root:
/// `|S*S - M| <= SQRT_RESIDUAL_REL * |M|`.
pub const SQRT_RESIDUAL_REL: f64 = 1e-10;

/// Relative residual certified by the Lyapunov solver:
/// `|F*X + X*F^T + W| <= LYAP_RESIDUAL_REL * |W|`.
pub const LYAP_RESIDUAL_REL: f64 = 1e-10;

/// Relative Riccati residual certified by the selected-solution solver:
/// `|Y*R*Y + Y*A + A^T*Y - Q| <= ARE_SELECTED_REL * (1 + |Q|)`.
pub const ARE_SELECTED_REL: f64 = 1e-10;

/// Relative Riccati residual required of every enumerated solution.
pub const ARE_ENUMERATED_REL: f64 = 1e-9;

/// Absolute tolerance for the spectrum-selection certificate: eigenvalues
/// of the closed-loop matrix must match the positive-half-plane spectrum
/// of the Hamiltonian within this.
pub const SPECTRUM_MATCH_TOL: f64 = 1e-8;

/// Relative tolerance used to cluster eigenvalues of the Hamiltonian
/// before building eigenspace bases.
pub const EIG_CLUSTER_TOL: f64 = 1e-8;

/// Condition-number limit on the top block of a graph-subspace basis;
/// larger means the subspace is not a graph over the state space.
pub const GRAPH_COND_LIMIT: f64 = 1e10;

/// Condition-number limit on the mean-equation coefficient matrix; above
/// this the instance is reported as not solvable rather than solved badly.
pub const COEFF_COND_LIMIT: f64 = 1e12;

/// Dimension cap for exhaustive enumeration of symmetric Riccati
/// solutions (C(2d, d) subsets; 6 gives at most 924).
pub const ENUM_DIM_LIMIT: usize = 6;

/// Below this the discounted solver refuses to divide by the discount and
/// routes callers to the ergodic solver instead.
pub const DISCOUNT_MIN: f64 = 1e-12;

/// Default truncation guard for discounted Monte Carlo costs: the run is
/// rejected when exp(-ell*T) exceeds this.
pub const TRUNCATION_GUARD: f64 = 1e-6;
