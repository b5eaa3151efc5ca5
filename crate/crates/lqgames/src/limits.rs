//! Singular limits of the ergodic and discounted equilibria.
//!
//! Three parameters can be driven to zero with closed-form limits:
//!
//! * discount `ell -> 0`: the discounted solution tends to the ergodic
//!   one, with `ell * c_i -> lambda_i`;
//! * noise `k -> 0`: the square-root parameterization `V = sqrt(2Q + r
//!   A^2)`, `Sigma = V/(k sqrt(r))` shows the value function and the mean
//!   do not depend on `k` at all, and the stationary Gaussians collapse
//!   to the Dirac mass at the mean;
//! * control cost `r -> 0`: the value function vanishes at rate
//!   `sqrt(r)` and the measures collapse to the Dirac mass at
//!   `(2Q + B_total)^{-1} (2QH + B_total Delta)`.
//!
//! Each limit also commutes with the mean-field limit `N -> infinity`;
//! [`commuting_diagram_check`] verifies this operationally by comparing
//! the two iterated-limit paths and a grid of plain finite solves.
//! Dirac collapse is certified through inverse-covariance blow-up rates
//! rather than weak-topology tests: the limit laws are known in closed
//! form, so rate checks are sharper.

use nalgebra::DVector;

use crate::discounted::solve_discounted;
use crate::ergodic::solve_ergodic;
use crate::error::{Error, Result};
use crate::game::{
    self, scaled_costs, DistributionDesc, GameSpec, Population, ScaleFamily,
};
use crate::matalg::{self, spec_norm, sqrt_spd, SymMatrix};
use crate::solution::{QGSolution, SolutionMode};
use crate::tol;

/// Closed-form limit of a family of quadratic-Gaussian solutions.
#[derive(Debug, Clone)]
pub struct LimitTriple {
    /// Hessian of the limit value function (zero in the cheap-control
    /// limit).
    pub value_hessian: SymMatrix,
    /// Slope of the limit value function.
    pub value_slope: DVector<f64>,
    /// Limit stationary law (Dirac for the noise and cheap-control
    /// limits).
    pub measure: DistributionDesc,
    /// Limit game values, one per player (single entry in mean-field
    /// mode).
    pub lambda: Vec<f64>,
    /// The square-root matrix `V` parameterizing the family.
    pub shape: SymMatrix,
}

/// Per-coefficient error sequences along a decreasing parameter (or
/// increasing player count).
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// Parameter values, in evaluation order.
    pub params: Vec<f64>,
    /// Coefficient name -> error at each parameter value.
    pub errors: Vec<(String, Vec<f64>)>,
    /// Coefficient name -> decayed flag: final error below `tol` and no
    /// step grew the error by more than a factor of 2.
    pub decayed: Vec<(String, bool)>,
    pub tol: f64,
}

impl ConvergenceReport {
    fn from_errors(params: Vec<f64>, errors: Vec<(String, Vec<f64>)>, tol: f64) -> Self {
        let decayed = errors
            .iter()
            .map(|(name, seq)| {
                let final_ok = seq.last().map_or(false, |&e| e <= tol);
                let monotone = seq.windows(2).all(|w| w[1] <= 2.0 * w[0] || w[1] <= tol);
                (name.clone(), final_ok && monotone)
            })
            .collect();
        ConvergenceReport {
            params,
            errors,
            decayed,
            tol,
        }
    }

    pub fn all_decayed(&self) -> bool {
        self.decayed.iter().all(|(_, ok)| *ok)
    }

    pub fn error_sequence(&self, name: &str) -> Option<&[f64]> {
        self.errors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, seq)| seq.as_slice())
    }

    pub fn final_errors(&self) -> Vec<(String, f64)> {
        self.errors
            .iter()
            .map(|(n, seq)| (n.clone(), *seq.last().unwrap_or(&f64::NAN)))
            .collect()
    }
}

fn effective_blocks(spec: &GameSpec) -> (SymMatrix, SymMatrix, DVector<f64>, DVector<f64>) {
    match &spec.population {
        Population::Finite { n, cost } => (
            cost.own_state.clone(),
            cost.pair_coupling.scale((*n as f64) - 1.0),
            cost.happy_state.clone(),
            cost.push_state.clone(),
        ),
        Population::MeanField { cost } => (
            cost.own_state.clone(),
            cost.pair_coupling.clone(),
            cost.happy_state.clone(),
            cost.push_state.clone(),
        ),
    }
}

/// Solves the mean equation `(V^2 + coupling) mu = 2 Q H + coupling Delta`.
fn limit_mean(
    v2: &SymMatrix,
    coupling: &SymMatrix,
    q: &SymMatrix,
    happy: &DVector<f64>,
    push: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = v2.add(coupling);
    let cond = matalg::cond_2(m.as_matrix());
    if !cond.is_finite() || cond > tol::COEFF_COND_LIMIT {
        return Err(Error::BNotInvertible {
            cond,
            limit: tol::COEFF_COND_LIMIT,
        });
    }
    let rhs = 2.0 * (q.as_matrix() * happy) + coupling.as_matrix() * push;
    m.as_matrix()
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::BNotInvertible {
            cond,
            limit: tol::COEFF_COND_LIMIT,
        })
}

/// Limit game values `F(0, mu) - mu^T (V^2/2) mu`, one per player.
fn limit_lambdas(spec: &GameSpec, v2: &SymMatrix, mu: &DVector<f64>) -> Vec<f64> {
    let quad = 0.5 * (mu.transpose() * v2.as_matrix() * mu)[(0, 0)];
    match &spec.population {
        Population::Finite { n, cost } => (0..*n)
            .map(|i| game::eval_fi_constant(cost, *n, i, None, mu) - quad)
            .collect(),
        Population::MeanField { cost } => {
            vec![game::eval_fhat_constant(cost, None, mu) - quad]
        }
    }
}

/// Solves the ergodic system in the square-root parameterization
/// `V = sqrt(2Q + r A^2)`, `Sigma = V / (k sqrt(r))`.
///
/// Coincides with [`solve_ergodic`] coefficient by coefficient; the point
/// of the parameterization is that `Lambda`, `rho` and the mean do not
/// involve the noise level, which is what drives the vanishing-noise
/// limit.
pub fn v_family_solve(spec: &GameSpec) -> Result<QGSolution> {
    if spec.discount != 0.0 {
        return Err(Error::InvalidInput(
            "the square-root parameterization applies to the ergodic system".into(),
        ));
    }
    let report = game::validate_assumptions(spec);
    if !report.all_passed() {
        return Err(Error::AssumptionViolation(report.to_string()));
    }
    let a = spec.drift_sym()?;
    let k = spec.noise;
    let r = spec.control_cost;
    let sr = r.sqrt();
    let (q, coupling, happy, push) = effective_blocks(spec);

    let a2 = SymMatrix::symmetrize(a.as_matrix() * a.as_matrix());
    let v = sqrt_spd(&q.scale(2.0).add(&a2.scale(r)))?;
    let v2 = SymMatrix::symmetrize(v.as_matrix() * v.as_matrix());
    let mu = limit_mean(&v2, &coupling, &q, &happy, &push)?;

    let lambda_mat = SymMatrix::symmetrize(sr * (v.as_matrix() + sr * a.as_matrix()));
    let rho = -sr * (v.as_matrix() * &mu);
    let sigma = v.scale(1.0 / (k * sr));
    let cov = sigma.try_inverse()?;

    let trace_term = k * sr * (v.as_matrix() + sr * a.as_matrix()).trace();
    let quad = 0.5 * (mu.transpose() * v2.as_matrix() * &mu)[(0, 0)];
    let (per_player, mode) = match &spec.population {
        Population::Finite { n, cost } => (
            (0..*n)
                .map(|i| {
                    game::eval_fi_constant(cost, *n, i, Some(&cov), &mu) - quad + trace_term
                })
                .collect(),
            SolutionMode::Ergodic,
        ),
        Population::MeanField { cost } => (
            vec![game::eval_fhat_constant(cost, Some(&cov), &mu) - quad + trace_term],
            SolutionMode::MfErgodic,
        ),
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

/// Vanishing-noise limit `k -> 0`: value function
/// `x^T (sqrt(r) V + r A)/2 x - sqrt(r) (V mu)^T x` with
/// `V = sqrt(2Q + r A^2)`, and the stationary laws collapse to the Dirac
/// mass at the mean.
pub fn deterministic_limit(spec: &GameSpec) -> Result<LimitTriple> {
    let report = game::validate_assumptions(spec);
    if !report.all_passed() {
        return Err(Error::AssumptionViolation(report.to_string()));
    }
    let a = spec.drift_sym()?;
    let r = spec.control_cost;
    let sr = r.sqrt();
    let (q, coupling, happy, push) = effective_blocks(spec);

    let a2 = SymMatrix::symmetrize(a.as_matrix() * a.as_matrix());
    let v = sqrt_spd(&q.scale(2.0).add(&a2.scale(r)))?;
    let v2 = SymMatrix::symmetrize(v.as_matrix() * v.as_matrix());
    let mu = limit_mean(&v2, &coupling, &q, &happy, &push)?;

    Ok(LimitTriple {
        value_hessian: SymMatrix::symmetrize(sr * (v.as_matrix() + sr * a.as_matrix())),
        value_slope: -sr * (v.as_matrix() * &mu),
        lambda: limit_lambdas(spec, &v2, &mu),
        measure: DistributionDesc::Dirac { point: mu },
        shape: v,
    })
}

/// Cheap-control limit `r -> 0`: the value function vanishes, the laws
/// collapse to the Dirac mass at `(2Q + B_total)^{-1} (2QH + B_total
/// Delta)`, and the game values keep the `V = sqrt(2Q)` shape.
pub fn cheap_control_limit(spec: &GameSpec) -> Result<LimitTriple> {
    let report = game::validate_assumptions(spec);
    if !report.all_passed() {
        return Err(Error::AssumptionViolation(report.to_string()));
    }
    let d = spec.dim();
    let (q, coupling, happy, push) = effective_blocks(spec);

    let v = sqrt_spd(&q.scale(2.0))?;
    let v2 = SymMatrix::symmetrize(v.as_matrix() * v.as_matrix());
    let mu = limit_mean(&v2, &coupling, &q, &happy, &push)?;

    Ok(LimitTriple {
        value_hessian: SymMatrix::zeros(d),
        value_slope: DVector::zeros(d),
        lambda: limit_lambdas(spec, &v2, &mu),
        measure: DistributionDesc::Dirac { point: mu },
        shape: v,
    })
}

fn coefficient_errors(sol: &QGSolution, reference: &QGSolution) -> Vec<(String, f64)> {
    let mut out = vec![
        (
            "Sigma".to_string(),
            spec_norm(&sol.inv_cov.sub(&reference.inv_cov)),
        ),
        ("mu".to_string(), (&sol.mean - &reference.mean).norm()),
        (
            "Lambda".to_string(),
            spec_norm(&sol.value_hessian.sub(&reference.value_hessian)),
        ),
        (
            "rho".to_string(),
            (&sol.value_slope - &reference.value_slope).norm(),
        ),
    ];
    let per_gap = sol
        .per_player
        .iter()
        .map(|c| {
            reference
                .per_player
                .iter()
                .fold(f64::INFINITY, |m, l| m.min((c - l).abs()))
        })
        .fold(0.0f64, f64::max);
    out.push(("per_player".to_string(), per_gap));
    out
}

/// Solves the discounted system along a decreasing discount sequence and
/// reports coefficient errors against the ergodic solution, including
/// `|ell c_i - lambda_i|`.
pub fn vanishing_discount_limit(
    spec: &GameSpec,
    ell_seq: &[f64],
    tol_decay: f64,
) -> Result<ConvergenceReport> {
    if ell_seq.is_empty() {
        return Err(Error::InvalidInput("empty discount sequence".into()));
    }
    let reference = solve_ergodic(&spec.with_discount(0.0))?;
    let names = ["Sigma", "mu", "Lambda", "rho", "ell_c"];
    let mut errors: Vec<(String, Vec<f64>)> = names
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();

    for &ell in ell_seq {
        let sol = solve_discounted(&spec.with_discount(ell))?;
        errors[0].1.push(spec_norm(&sol.inv_cov.sub(&reference.inv_cov)));
        errors[1].1.push((&sol.mean - &reference.mean).norm());
        errors[2]
            .1
            .push(spec_norm(&sol.value_hessian.sub(&reference.value_hessian)));
        errors[3]
            .1
            .push((&sol.value_slope - &reference.value_slope).norm());
        let lc_gap = sol
            .per_player
            .iter()
            .zip(reference.per_player.iter())
            .map(|(c, l)| (ell * c - l).abs())
            .fold(0.0f64, f64::max);
        errors[4].1.push(lc_gap);
    }
    Ok(ConvergenceReport::from_errors(
        ell_seq.to_vec(),
        errors,
        tol_decay,
    ))
}

/// Solves the scaled-family games along an increasing player count and
/// reports coefficient distances to the mean-field solution. Ergodic or
/// discounted is selected by the spec's discount.
pub fn mean_field_convergence(
    spec: &GameSpec,
    n_seq: &[usize],
    family: ScaleFamily,
    tol_decay: f64,
) -> Result<ConvergenceReport> {
    let mf_cost = match &spec.population {
        Population::MeanField { cost } => cost.clone(),
        Population::Finite { .. } => {
            return Err(Error::InvalidInput(
                "mean-field convergence needs a mean-field instance".into(),
            ))
        }
    };
    let discounted = spec.discount > 0.0;
    let reference = if discounted {
        solve_discounted(spec)?
    } else {
        solve_ergodic(spec)?
    };

    let names = ["Sigma", "mu", "Lambda", "rho", "per_player"];
    let mut errors: Vec<(String, Vec<f64>)> = names
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();
    for &n in n_seq {
        let cost = scaled_costs(&mf_cost, n, family)?;
        let finite = spec.with_population(Population::Finite { n, cost })?;
        let sol = if discounted {
            solve_discounted(&finite)?
        } else {
            solve_ergodic(&finite)?
        };
        for (slot, (_, gap)) in errors
            .iter_mut()
            .zip(coefficient_errors(&sol, &reference))
        {
            slot.1.push(gap);
        }
    }
    Ok(ConvergenceReport::from_errors(
        n_seq.iter().map(|&n| n as f64).collect(),
        errors,
        tol_decay,
    ))
}

/// Which singular parameter a commuting-diagram check drives to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    Discount,
    Noise,
    ControlCost,
}

/// Limit coefficients compared across the two iterated-limit paths.
#[derive(Debug, Clone)]
pub struct LimitCoefficients {
    pub value_hessian: SymMatrix,
    pub value_slope: DVector<f64>,
    pub mean: DVector<f64>,
    pub lambda: f64,
    /// Present for the discount limit (the limit law stays Gaussian).
    pub inv_cov: Option<SymMatrix>,
}

impl LimitCoefficients {
    fn gap(&self, other: &LimitCoefficients) -> f64 {
        let mut g = spec_norm(&self.value_hessian.sub(&other.value_hessian));
        g = g.max((&self.value_slope - &other.value_slope).norm());
        g = g.max((&self.mean - &other.mean).norm());
        g = g.max((self.lambda - other.lambda).abs());
        if let (Some(a), Some(b)) = (&self.inv_cov, &other.inv_cov) {
            g = g.max(spec_norm(&a.sub(b)));
        }
        g
    }
}

fn ergodic_coefficients(sol: &QGSolution) -> LimitCoefficients {
    LimitCoefficients {
        value_hessian: sol.value_hessian.clone(),
        value_slope: sol.value_slope.clone(),
        mean: sol.mean.clone(),
        lambda: sol.per_player[0],
        inv_cov: Some(sol.inv_cov.clone()),
    }
}

fn triple_coefficients(triple: &LimitTriple) -> LimitCoefficients {
    LimitCoefficients {
        value_hessian: triple.value_hessian.clone(),
        value_slope: triple.value_slope.clone(),
        mean: triple.measure.mean().clone(),
        lambda: triple.lambda[0],
        inv_cov: None,
    }
}

/// Result of a commuting-diagram verification.
#[derive(Debug, Clone)]
pub struct CommuteReport {
    pub kind: LimitKind,
    /// Mean-field limit first, then the singular parameter (analytic).
    pub path_mf_first: LimitCoefficients,
    /// Singular parameter first per finite roster (analytic), evaluated
    /// at the largest player count.
    pub path_param_first: LimitCoefficients,
    /// Coefficientwise discrepancy between the two analytic paths;
    /// `O(1/N)` at the largest roster.
    pub path_gap: f64,
    /// Plain finite solves at `(param_i, N_i)` compared against the
    /// mean-field-first path.
    pub grid: ConvergenceReport,
    pub pass: bool,
}

/// Verifies that the singular limit and the mean-field limit commute on
/// a scaled family: both analytic orders must agree within `tol_check`,
/// and plain finite solves along the diagonal grid `(param_i, N_i)` must
/// approach the common limit to within `tol_check` at the finest grid
/// point.
pub fn commuting_diagram_check(
    spec: &GameSpec,
    kind: LimitKind,
    param_seq: &[f64],
    n_seq: &[usize],
    family: ScaleFamily,
    tol_check: f64,
) -> Result<CommuteReport> {
    let mf_cost = match &spec.population {
        Population::MeanField { cost } => cost.clone(),
        Population::Finite { .. } => {
            return Err(Error::InvalidInput(
                "commuting-diagram checks need a mean-field instance".into(),
            ))
        }
    };
    if param_seq.is_empty() || n_seq.is_empty() {
        return Err(Error::InvalidInput("empty limit sequences".into()));
    }
    let base = spec.with_discount(0.0);

    // Path 1: mean-field limit first, then the parameter analytically.
    let path_mf_first = match kind {
        LimitKind::Discount => ergodic_coefficients(&solve_ergodic(&base)?),
        LimitKind::Noise => triple_coefficients(&deterministic_limit(&base)?),
        LimitKind::ControlCost => triple_coefficients(&cheap_control_limit(&base)?),
    };

    // Path 2: parameter first at fixed roster (analytic limit), then the
    // roster is taken at its largest value.
    let n_max = *n_seq.iter().max().unwrap();
    let finite_max = base.with_population(Population::Finite {
        n: n_max,
        cost: scaled_costs(&mf_cost, n_max, family)?,
    })?;
    let path_param_first = match kind {
        LimitKind::Discount => ergodic_coefficients(&solve_ergodic(&finite_max)?),
        LimitKind::Noise => triple_coefficients(&deterministic_limit(&finite_max)?),
        LimitKind::ControlCost => triple_coefficients(&cheap_control_limit(&finite_max)?),
    };
    let path_gap = path_mf_first.gap(&path_param_first);

    // Diagonal grid of plain finite solves against the common limit.
    let steps = param_seq.len().min(n_seq.len());
    let mut names: Vec<&str> = vec!["Lambda", "rho", "mu", "lambda"];
    if kind == LimitKind::Discount {
        names.push("Sigma");
    }
    let mut errors: Vec<(String, Vec<f64>)> = names
        .iter()
        .map(|n| (n.to_string(), Vec::new()))
        .collect();
    let mut params = Vec::new();

    for i in 0..steps {
        let param = param_seq[i];
        let n = n_seq[i];
        let cost = scaled_costs(&mf_cost, n, family)?;
        let finite = base.with_population(Population::Finite { n, cost })?;
        let sol = match kind {
            LimitKind::Discount => solve_discounted(&finite.with_discount(param))?,
            LimitKind::Noise => solve_ergodic(&finite.with_noise(param))?,
            LimitKind::ControlCost => solve_ergodic(&finite.with_control_cost(param))?,
        };
        params.push(param);

        let lam_gap = spec_norm(&sol.value_hessian.sub(&path_mf_first.value_hessian));
        let rho_gap = (&sol.value_slope - &path_mf_first.value_slope).norm();
        let mu_gap = (&sol.mean - &path_mf_first.mean).norm();
        let value_gap = match kind {
            LimitKind::Discount => sol
                .per_player
                .iter()
                .map(|c| (param * c - path_mf_first.lambda).abs())
                .fold(0.0f64, f64::max),
            _ => sol
                .per_player
                .iter()
                .map(|l| (l - path_mf_first.lambda).abs())
                .fold(0.0f64, f64::max),
        };
        errors[0].1.push(lam_gap);
        errors[1].1.push(rho_gap);
        errors[2].1.push(mu_gap);
        errors[3].1.push(value_gap);
        if kind == LimitKind::Discount {
            let sig_gap = spec_norm(
                &sol.inv_cov
                    .sub(path_mf_first.inv_cov.as_ref().expect("discount keeps Sigma")),
            );
            errors[4].1.push(sig_gap);
        }
    }

    let grid = ConvergenceReport::from_errors(params, errors, tol_check);
    let final_ok = grid
        .errors
        .iter()
        .all(|(_, seq)| seq.last().map_or(false, |&e| e <= tol_check));
    let pass = final_ok && path_gap <= tol_check;
    Ok(CommuteReport {
        kind,
        path_mf_first,
        path_param_first,
        path_gap,
        grid,
        pass,
    })
}

/// Default parameter sequences: `0.2 * 2^-n` for the discount and `2^-n`
/// for noise/control cost, `n = 0..=8`, with rosters `10 * 2^n`.
pub fn default_param_seq(kind: LimitKind, len: usize) -> Vec<f64> {
    let base = match kind {
        LimitKind::Discount => 0.2,
        _ => 1.0,
    };
    (0..len).map(|n| base * 0.5f64.powi(n as i32)).collect()
}

pub fn default_n_seq(len: usize) -> Vec<usize> {
    (0..len).map(|n| 10usize << n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CostStructure, MfCost};
    use nalgebra::DMatrix;

    fn mf_spec(k: f64, r: f64, a: f64, qhat: f64, bhat: f64, h: f64) -> GameSpec {
        let cost = MfCost::new(
            SymMatrix::scaled_identity(1, qhat),
            SymMatrix::scaled_identity(1, bhat),
            SymMatrix::zeros(1),
            SymMatrix::zeros(1),
            DVector::from_element(1, h),
            DVector::zeros(1),
        )
        .unwrap();
        GameSpec::new(
            DMatrix::from_element(1, 1, a),
            k,
            r,
            0.0,
            Population::MeanField { cost },
        )
        .unwrap()
    }

    fn scalar_finite(n: usize, k: f64, r: f64, a: f64, q: f64, b: f64, h: f64) -> GameSpec {
        let cost = CostStructure::new(
            SymMatrix::scaled_identity(1, q),
            SymMatrix::scaled_identity(1, b),
            game::PerPlayer::Shared(SymMatrix::zeros(1)),
            game::PerPlayer::Shared(SymMatrix::zeros(1)),
            DVector::from_element(1, h),
            DVector::zeros(1),
            n,
        )
        .unwrap();
        GameSpec::new(
            DMatrix::from_element(1, 1, a),
            k,
            r,
            0.0,
            Population::Finite { n, cost },
        )
        .unwrap()
    }

    #[test]
    fn v_family_is_noise_free_and_consistent() {
        for k in [1.0, 0.1, 0.01] {
            let spec = scalar_finite(1, k, 1.0, 0.0, 0.5, 0.0, 0.0);
            let sol = v_family_solve(&spec).unwrap();
            // V = sqrt(2 * 0.5) = 1 regardless of k.
            assert!((sol.value_hessian.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
            // lambda = k * sqrt(r) * tr(V) = k.
            assert!((sol.per_player[0] - k).abs() < 1e-12);
        }
        // Coincides with the direct ergodic solve.
        let spec = scalar_finite(2, 1.0, 1.3, 0.4, 0.6, 0.2, 0.7);
        let direct = solve_ergodic(&spec).unwrap();
        let family = v_family_solve(&spec).unwrap();
        assert!(spec_norm(&direct.inv_cov.sub(&family.inv_cov)) < 1e-12);
        assert!(spec_norm(&direct.value_hessian.sub(&family.value_hessian)) < 1e-12);
        assert!((&direct.mean - &family.mean).norm() < 1e-12);
        assert!((&direct.value_slope - &family.value_slope).norm() < 1e-12);
        assert!((direct.per_player[0] - family.per_player[0]).abs() < 1e-12);
    }

    #[test]
    fn deterministic_limit_worked_example() {
        let spec = mf_spec(1.0, 1.0, 0.0, 0.5, 0.0, 1.0);
        let triple = deterministic_limit(&spec).unwrap();
        assert!((triple.shape.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((triple.measure.mean()[0] - 1.0).abs() < 1e-12);
        assert!(triple.lambda[0].abs() < 1e-12);
        match &triple.measure {
            DistributionDesc::Dirac { .. } => {}
            _ => panic!("noise limit must collapse to a Dirac mass"),
        }
    }

    #[test]
    fn deterministic_limit_lambda_gap_linear_in_noise() {
        let spec = mf_spec(1.0, 1.0, 0.3, 0.5, 0.2, 1.0);
        let triple = deterministic_limit(&spec).unwrap();
        let mut gaps = Vec::new();
        for k in [0.1, 0.01, 0.001] {
            let sol = v_family_solve(&spec.with_noise(k)).unwrap();
            gaps.push(sol.per_player[0] - triple.lambda[0]);
        }
        // lambda_k - lambda is linear in k, so the gap shrinks tenfold.
        assert!((gaps[0] / gaps[1] - 10.0).abs() < 0.2);
        assert!((gaps[1] / gaps[2] - 10.0).abs() < 0.2);
    }

    #[test]
    fn noise_limit_inverse_covariance_blows_up_like_inverse_k() {
        let spec = mf_spec(1.0, 1.0, 0.2, 0.5, 0.1, 1.0);
        let m1 = v_family_solve(&spec.with_noise(0.01))
            .unwrap()
            .inv_cov
            .min_eigenvalue();
        let m2 = v_family_solve(&spec.with_noise(0.005))
            .unwrap()
            .inv_cov
            .min_eigenvalue();
        assert!((m2 / m1 - 2.0).abs() < 0.01);
    }

    #[test]
    fn cheap_control_worked_examples() {
        // A drops out of the shape.
        for a in [0.0, 0.7, -1.2] {
            let spec = mf_spec(1.0, 1.0, a, 0.5, 0.0, 1.0);
            let triple = cheap_control_limit(&spec).unwrap();
            assert!((triple.shape.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
            assert!((triple.measure.mean()[0] - 1.0).abs() < 1e-12);
            assert!(triple.lambda[0].abs() < 1e-12);
            assert_eq!(triple.value_hessian.as_matrix()[(0, 0)], 0.0);
        }
        // Centered instance: everything zero.
        let spec = mf_spec(1.0, 1.0, 0.5, 0.5, 0.3, 0.0);
        let triple = cheap_control_limit(&spec).unwrap();
        assert!(triple.measure.mean()[0].abs() < 1e-14);
        assert!(triple.lambda[0].abs() < 1e-14);
    }

    #[test]
    fn value_hessian_vanishes_at_sqrt_rate_in_cheap_limit() {
        let spec = mf_spec(1.0, 1.0, 0.3, 0.5, 0.2, 1.0);
        let h1 = spec_norm(
            &v_family_solve(&spec.with_control_cost(1e-4))
                .unwrap()
                .value_hessian,
        );
        let h2 = spec_norm(
            &v_family_solve(&spec.with_control_cost(2.5e-5))
                .unwrap()
                .value_hessian,
        );
        // Lambda_r ~ sqrt(r) V: quartering r halves the norm.
        assert!((h1 / h2 - 2.0).abs() < 0.01);
    }

    #[test]
    fn vanishing_discount_scalar_rates() {
        let spec = scalar_finite(1, 1.0, 1.0, 0.0, 0.5, 0.0, 0.0);
        let ells = [0.2, 0.02];
        let report = vanishing_discount_limit(&spec, &ells, 1e-2).unwrap();
        let sig = report.error_sequence("Sigma").unwrap();
        assert!((sig[0] - 0.095_012_437_887_911).abs() < 1e-12);
        assert!((sig[1] - 0.009_950_001_249_906).abs() < 1e-9);
        for (gap, ell) in sig.iter().zip(ells.iter()) {
            let ratio = gap / (ell / 2.0);
            assert!(ratio > 0.5 && ratio < 2.0, "|Sigma gap| vs ell/2: {ratio}");
        }
        // ell * c -> lambda = 1.
        let lc = report.error_sequence("ell_c").unwrap();
        assert!(lc[1] < lc[0]);
        assert!(lc[1] < 2e-2);
    }

    #[test]
    fn vanishing_discount_centered_mean_exact() {
        let spec = scalar_finite(2, 1.0, 1.0, 0.3, 0.5, 0.4, 0.0);
        let ells = default_param_seq(LimitKind::Discount, 9);
        let report = vanishing_discount_limit(&spec, &ells, 1e-3).unwrap();
        for &e in report.error_sequence("mu").unwrap() {
            assert_eq!(e, 0.0);
        }
        assert!(report.all_decayed(), "{:?}", report.final_errors());
    }

    #[test]
    fn mean_field_convergence_halves_with_doubling_n() {
        let spec = mf_spec(1.0, 1.0, 0.2, 0.5, 0.3, 1.0);
        let ns: Vec<usize> = (0..6).map(|n| 10usize << n).collect();
        let report =
            mean_field_convergence(&spec, &ns, ScaleFamily::OneOverN, 1e-2).unwrap();
        let sig = report.error_sequence("Sigma").unwrap();
        for w in sig.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (1.6..=2.4).contains(&ratio),
                "halving ratio {ratio} out of range"
            );
        }
    }

    #[test]
    fn commute_discount_constant_family_is_exact() {
        let spec = mf_spec(1.0, 1.0, 0.0, 0.5, 0.0, 0.0);
        let params = default_param_seq(LimitKind::Discount, 9);
        let ns = default_n_seq(9);
        let report = commuting_diagram_check(
            &spec,
            LimitKind::Discount,
            &params,
            &ns,
            ScaleFamily::Constant,
            1e-3,
        )
        .unwrap();
        // Both analytic paths give (Sigma, mu, Lambda, rho, lambda) =
        // (1, 0, 1, 0, 1).
        assert!(report.path_gap < 1e-9, "path gap {}", report.path_gap);
        let p = &report.path_mf_first;
        assert!((p.inv_cov.as_ref().unwrap().as_matrix()[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((p.value_hessian.as_matrix()[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(p.mean[0].abs() < 1e-9);
        assert!(p.value_slope[0].abs() < 1e-9);
        assert!((p.lambda - 1.0).abs() < 1e-9);
        assert!(report.pass, "final errors {:?}", report.grid.final_errors());
    }

    #[test]
    fn commute_noise_and_cheap_worked_example() {
        let spec = mf_spec(1.0, 1.0, 0.0, 0.5, 0.0, 1.0);
        for kind in [LimitKind::Noise, LimitKind::ControlCost] {
            let params: Vec<f64> = (0..24).map(|n| 0.5f64.powi(n)).collect();
            let ns: Vec<usize> = (0..24).map(|n| 10usize << n.min(14)).collect();
            let report = commuting_diagram_check(
                &spec,
                kind,
                &params,
                &ns,
                ScaleFamily::Constant,
                1e-3,
            )
            .unwrap();
            assert!(report.path_gap < 1e-9);
            // (Vhat, mu, lambda) = (1, 1, 0): the limit value function is
            // x^2/2 - x for the noise limit and 0 for cheap control.
            let p = &report.path_mf_first;
            assert!((p.mean[0] - 1.0).abs() < 1e-9);
            assert!(p.lambda.abs() < 1e-9);
            assert!(report.pass, "{kind:?}: {:?}", report.grid.final_errors());
        }
    }
}
