//! The quadratic-Gaussian solution type shared by every solver.

use nalgebra::{DMatrix, DVector};

use crate::game::DistributionDesc;
use crate::matalg::SymMatrix;

/// Which coupled system a solution solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolutionMode {
    Ergodic,
    Discounted { discount: f64 },
    MfErgodic,
    MfDiscounted { discount: f64 },
}

impl SolutionMode {
    pub fn discount(&self) -> Option<f64> {
        match self {
            SolutionMode::Discounted { discount } | SolutionMode::MfDiscounted { discount } => {
                Some(*discount)
            }
            _ => None,
        }
    }

    pub fn is_mean_field(&self) -> bool {
        matches!(
            self,
            SolutionMode::MfErgodic | SolutionMode::MfDiscounted { .. }
        )
    }
}

/// Coefficients of a quadratic-Gaussian equilibrium.
///
/// The value function of player `i` is
/// `v_i(x) = x^T (Lambda/2) x + rho^T x (+ c_i)` and the stationary law is
/// `N(mean, inv_cov^{-1})`, shared by all players. The per-player scalars
/// are the game values `lambda_i` in ergodic modes and the value-function
/// constants `c_i` in discounted modes; they differ across players only
/// through the opponent-only cost blocks.
///
/// Algebraic identities a valid solution satisfies exactly:
/// `Lambda = r (k Sigma + A)`, `rho = -r k Sigma mean`, and the
/// closed-loop drift `A - Lambda/r = -k Sigma` is Hurwitz.
#[derive(Debug, Clone)]
pub struct QGSolution {
    /// Inverse covariance `Sigma` of the stationary Gaussian.
    pub inv_cov: SymMatrix,
    /// Stationary mean `mu`.
    pub mean: DVector<f64>,
    /// Value-function Hessian `Lambda`.
    pub value_hessian: SymMatrix,
    /// Value-function slope `rho`.
    pub value_slope: DVector<f64>,
    /// `lambda_i` (ergodic) or `c_i` (discounted); a single entry in
    /// mean-field modes.
    pub per_player: Vec<f64>,
    pub mode: SolutionMode,
}

impl QGSolution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Value function of one player. The per-player constant only enters
    /// in discounted modes; ergodic values are level-free with the game
    /// value carried by `per_player` instead.
    pub fn value(&self, player: usize, x: &DVector<f64>) -> f64 {
        let quad = 0.5 * (x.transpose() * self.value_hessian.as_matrix() * x)[(0, 0)];
        let base = quad + self.value_slope.dot(x);
        match self.mode {
            SolutionMode::Discounted { .. } | SolutionMode::MfDiscounted { .. } => {
                base + self.per_player[player]
            }
            _ => base,
        }
    }

    /// `grad v (x) = Lambda x + rho` (player independent).
    pub fn value_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_hessian.as_matrix() * x + &self.value_slope
    }

    /// The common stationary law `N(mean, inv_cov^{-1})`.
    pub fn stationary_law(&self) -> DistributionDesc {
        DistributionDesc::Gaussian {
            mean: self.mean.clone(),
            inv_cov: self.inv_cov.clone(),
        }
    }

    /// Closed-loop drift `A - Lambda / r` under the equilibrium feedback.
    pub fn closed_loop_drift(&self, drift: &DMatrix<f64>, control_cost: f64) -> DMatrix<f64> {
        drift - self.value_hessian.as_matrix() / control_cost
    }

    /// Equilibrium feedback gain `K = Lambda / r`.
    pub fn feedback_gain(&self, control_cost: f64) -> DMatrix<f64> {
        self.value_hessian.as_matrix() / control_cost
    }

    /// Equilibrium feedback offset `c = rho / r`.
    pub fn feedback_offset(&self, control_cost: f64) -> DVector<f64> {
        &self.value_slope / control_cost
    }
}
