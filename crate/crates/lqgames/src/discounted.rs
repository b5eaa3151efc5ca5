//! Discounted solver: the coupled HJB/KFP system with discounted
//! infinite-horizon cost.
//!
//! The inverse covariance solves the Riccati equation
//!
//! ```text
//! Sigma (k^2 r/2) Sigma + (ell k r/2) Sigma = Q + r A^2/2 - (ell r/2) A
//! ```
//!
//! which, unlike the ergodic case, can lose its symmetric positive
//! definite solution when the discount grows: the right-hand side drifts
//! indefinite and the selected Hamiltonian solution picks up negative
//! eigenvalues. Solvability is therefore operational here - the selected
//! solution is computed through the Hamiltonian route and certified
//! positive definite - and [`feasibility_threshold`] locates the largest
//! workable discount by bisection on that predicate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{self, validate_assumptions, GameSpec, Population};
use crate::matalg::{self, SymMatrix};
use crate::riccati::{self, AREProblem, SpectrumReport};
use crate::solution::{QGSolution, SolutionMode};
use crate::tol;

/// Riccati data of the discounted system, assembled exactly from
/// `(k, r, ell, A, Q)`: the quadratic coefficient `(k^2 r/2) I`, the
/// linear coefficient `(ell k r/4) I`, and the shifted cost
/// `Q + r A^2/2 - (ell r/2) A`.
#[derive(Debug, Clone)]
pub struct DiscountedAre {
    pub quad_scale: f64,
    pub lin_scale: f64,
    pub shift: SymMatrix,
}

impl DiscountedAre {
    pub fn assemble(spec: &GameSpec) -> Result<Self> {
        let a = spec.drift_sym()?;
        let k = spec.noise;
        let r = spec.control_cost;
        let ell = spec.discount;
        let q = match &spec.population {
            Population::Finite { cost, .. } => &cost.own_state,
            Population::MeanField { cost } => &cost.own_state,
        };
        let a2 = SymMatrix::symmetrize(a.as_matrix() * a.as_matrix());
        let shift = q
            .add(&a2.scale(0.5 * r))
            .sub(&a.scale(0.5 * ell * r));
        Ok(DiscountedAre {
            quad_scale: 0.5 * k * k * r,
            lin_scale: 0.25 * ell * k * r,
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.shift.dim()
    }

    pub fn problem(&self) -> Result<AREProblem> {
        let d = self.dim();
        AREProblem::new(
            DMatrix::from_diagonal_element(d, d, self.lin_scale),
            SymMatrix::scaled_identity(d, self.quad_scale),
            self.shift.clone(),
        )
    }
}

/// Why a discounted instance is (in)feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeasibilityReason {
    Ok,
    ImaginaryEigs,
    NoSpdSolution,
    BNotInvertible,
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub reason: FeasibilityReason,
    pub spectrum: SpectrumReport,
}

/// Computes the unique quadratic-Gaussian solution of the discounted
/// system at the instance's discount factor.
pub fn solve_discounted(spec: &GameSpec) -> Result<QGSolution> {
    let ell = spec.discount;
    if ell < tol::DISCOUNT_MIN {
        return Err(Error::DiscountNearZero(ell));
    }
    let report = validate_assumptions(spec);
    if !report.all_passed() {
        return Err(Error::AssumptionViolation(report.to_string()));
    }
    let a = spec.drift_sym()?;
    let k = spec.noise;
    let r = spec.control_cost;

    let are = DiscountedAre::assemble(spec)?;
    let sigma = match riccati::solve_are_selected(&are.problem()?) {
        Ok(y) => y,
        Err(Error::ImaginaryEigenvalues) => return Err(Error::ImaginaryEigenvalues),
        Err(Error::NoSymmetricSolution(_)) | Err(Error::Certification { .. }) => {
            return Err(Error::DiscountTooLarge)
        }
        Err(e) => return Err(e),
    };
    if !matalg::inertia(&sigma, tol::SIGN_TOL).is_positive_definite() {
        return Err(Error::DiscountTooLarge);
    }

    // Mean equation: (Q_ell + coupling/2) mu = Q H + (coupling/2) Delta.
    let (coupling, q, happy, push) = match &spec.population {
        Population::Finite { n, cost } => (
            cost.pair_coupling.scale((*n as f64) - 1.0),
            &cost.own_state,
            &cost.happy_state,
            &cost.push_state,
        ),
        Population::MeanField { cost } => (
            cost.pair_coupling.clone(),
            &cost.own_state,
            &cost.happy_state,
            &cost.push_state,
        ),
    };
    let bmat = are.shift.add(&coupling.scale(0.5));
    let cond = matalg::cond_2(bmat.as_matrix());
    if !cond.is_finite() || cond > tol::COEFF_COND_LIMIT {
        return Err(Error::BNotInvertible {
            cond,
            limit: tol::COEFF_COND_LIMIT,
        });
    }
    let p = q.as_matrix() * happy + coupling.scale(0.5).as_matrix() * push;
    let mu = bmat
        .as_matrix()
        .clone()
        .lu()
        .solve(&p)
        .ok_or(Error::BNotInvertible {
            cond,
            limit: tol::COEFF_COND_LIMIT,
        })?;

    let lambda_mat = SymMatrix::symmetrize(r * (k * sigma.as_matrix() + a.as_matrix()));
    let rho = -r * k * (sigma.as_matrix() * &mu);

    // ell * c_i = F_i + k r tr(k Sigma + A) - (k^2 r/2) mu^T Sigma^2 mu.
    let trace_term =
        k * r * (k * sigma.as_matrix() + a.as_matrix()).trace();
    let s2mu = sigma.as_matrix() * (sigma.as_matrix() * &mu);
    let quad_term = 0.5 * k * k * r * mu.dot(&s2mu);
    let cov = sigma.try_inverse()?;

    let (per_player, mode) = match &spec.population {
        Population::Finite { n, cost } => {
            let cs: Vec<f64> = (0..*n)
                .map(|i| {
                    let f = game::eval_fi_constant(cost, *n, i, Some(&cov), &mu);
                    (f + trace_term - quad_term) / ell
                })
                .collect();
            (cs, SolutionMode::Discounted { discount: ell })
        }
        Population::MeanField { cost } => {
            let f = game::eval_fhat_constant(cost, Some(&cov), &mu);
            (
                vec![(f + trace_term - quad_term) / ell],
                SolutionMode::MfDiscounted { discount: ell },
            )
        }
    };

    Ok(QGSolution {
        inv_cov: sigma,
        mean: mu,
        value_hessian: lambda_mat,
        value_slope: rho,
        per_player,
        mode,
    })
}

/// Classifies an instance's feasibility without returning the solution.
pub fn feasibility_check(spec: &GameSpec) -> Result<FeasibilityReport> {
    let are = DiscountedAre::assemble(spec)?;
    let spectrum = riccati::classify_spectrum(
        &riccati::build_hamiltonian(&are.problem()?),
        tol::SIGN_TOL,
    );
    let reason = match solve_discounted(spec) {
        Ok(_) => FeasibilityReason::Ok,
        Err(Error::ImaginaryEigenvalues) => FeasibilityReason::ImaginaryEigs,
        Err(Error::DiscountTooLarge) => FeasibilityReason::NoSpdSolution,
        Err(Error::BNotInvertible { .. }) => FeasibilityReason::BNotInvertible,
        Err(e) => return Err(e),
    };
    Ok(FeasibilityReport {
        feasible: reason == FeasibilityReason::Ok,
        reason,
        spectrum,
    })
}

/// Estimates the largest feasible discount in `(0, ell_max]` by bisection
/// on the predicate "the discounted solve succeeds".
///
/// Returns `ell_max` when the whole range is feasible. The instance must
/// be feasible in the vanishing-discount limit (the ergodic solve must
/// succeed), otherwise [`Error::InfeasibleAtZero`].
pub fn feasibility_threshold(spec: &GameSpec, ell_max: f64, tol_bisect: f64) -> Result<f64> {
    if ell_max <= 0.0 || tol_bisect <= 0.0 {
        return Err(Error::InvalidInput(
            "threshold search needs positive range and tolerance".into(),
        ));
    }
    if let Err(e) = crate::ergodic::solve_ergodic(&spec.with_discount(0.0)) {
        return Err(Error::InfeasibleAtZero(e.to_string()));
    }
    let feasible = |ell: f64| solve_discounted(&spec.with_discount(ell)).is_ok();

    if feasible(ell_max) {
        return Ok(ell_max);
    }
    let mut lo = ell_max;
    loop {
        lo *= 0.5;
        if feasible(lo) {
            break;
        }
        if lo < tol::DISCOUNT_MIN {
            return Err(Error::InfeasibleAtZero(
                "no feasible discount found above the routing threshold".into(),
            ));
        }
    }
    let mut hi = lo * 2.0;
    while hi - lo > tol_bisect {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Stacked mean-equation matrix of a game with genuinely different
/// players, plus its invertibility verdict.
#[derive(Debug, Clone)]
pub struct HeteroSystem {
    /// The `Nd x Nd` block matrix with `(alpha, beta)` block
    /// `Q^alpha_{alpha beta} + delta_{alpha beta} (r A^2/2 - ell r A/2)`.
    pub matrix: DMatrix<f64>,
    pub cond: f64,
    pub invertible: bool,
}

/// Assembles the solvability matrix of the heterogeneous-player game
/// from the per-player cost matrices (each `Nd x Nd`, symmetric).
///
/// Only assembly and the invertibility verdict are provided: the stacked
/// mean system's right-hand side for heterogeneous players is not part of
/// this crate's solvable surface.
pub fn assemble_hetero_blocks(
    per_player_costs: &[DMatrix<f64>],
    a: &SymMatrix,
    r: f64,
    ell: f64,
) -> Result<HeteroSystem> {
    let n = per_player_costs.len();
    if n == 0 {
        return Err(Error::DimensionMismatch("no player cost matrices".into()));
    }
    let d = a.dim();
    for (idx, qm) in per_player_costs.iter().enumerate() {
        if qm.nrows() != n * d || qm.ncols() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "player {idx} cost is {}x{}, expected {}x{}",
                qm.nrows(),
                qm.ncols(),
                n * d,
                n * d
            )));
        }
        let scale = 1.0 + qm.amax();
        if (qm - qm.transpose()).amax() > tol::SYM_CONSTRUCTION_TOL * scale {
            return Err(Error::AsymmetricInput {
                asymmetry: (qm - qm.transpose()).amax(),
                bound: tol::SYM_CONSTRUCTION_TOL * scale,
            });
        }
    }

    let a2 = a.as_matrix() * a.as_matrix();
    let correction = 0.5 * r * (a2 - ell * a.as_matrix());
    let mut big = DMatrix::zeros(n * d, n * d);
    for alpha in 0..n {
        for beta in 0..n {
            let mut block = per_player_costs[alpha]
                .view((alpha * d, beta * d), (d, d))
                .into_owned();
            if alpha == beta {
                block += &correction;
            }
            big.view_mut((alpha * d, beta * d), (d, d)).copy_from(&block);
        }
    }
    let cond = matalg::cond_2(&big);
    Ok(HeteroSystem {
        invertible: cond.is_finite() && cond <= tol::COEFF_COND_LIMIT,
        cond,
        matrix: big,
    })
}
