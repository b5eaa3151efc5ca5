//! Ergodic solver: the coupled HJB/KFP system with long-time-average
//! cost, for finite rosters and the mean-field limit.
//!
//! With a symmetric drift and scalar noise/control weights the Riccati
//! equation for the inverse covariance collapses to a matrix square root,
//!
//! ```text
//! Sigma^2 = (2 / (k^2 r)) * (r A^2 / 2 + Q),
//! ```
//!
//! the mean solves the linear system `B mu = P` with
//! `B = Q + r A^2/2 + (N-1) B/2` and `P = Q H + (N-1) (B/2) Delta`, and
//! the remaining coefficients follow algebraically. The general
//! Hamiltonian route in [`crate::riccati`] is kept as a cross-check, not
//! used here.
//!
//! [`hjb_kfp_residual`] certifies any claimed solution by evaluating both
//! PDEs pointwise; it is the oracle every solver output is tested
//! against.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{
    self, validate_assumptions, DistributionDesc, GameSpec, Population,
};
use crate::matalg::{self, SymMatrix};
use crate::solution::{QGSolution, SolutionMode};
use crate::tol;

/// Shared computation: inverse covariance, mean, and the value-function
/// coefficients, parameterized by the effective blocks
/// `(Q_eff, coupling_eff)` where the mean equation is
/// `(Q_eff + r A^2/2 + coupling/2) mu = Q_eff H + (coupling/2) Delta`
/// with `coupling = (N-1) B` finite-N and `Bhat` mean-field.
struct CoreCoefficients {
    sigma: SymMatrix,
    mu: DVector<f64>,
    lambda_mat: SymMatrix,
    rho: DVector<f64>,
}

fn solve_core(
    a: &SymMatrix,
    k: f64,
    r: f64,
    q_eff: &SymMatrix,
    coupling: &SymMatrix,
    happy: &DVector<f64>,
    push: &DVector<f64>,
) -> Result<CoreCoefficients> {
    let a2 = SymMatrix::symmetrize(a.as_matrix() * a.as_matrix());
    let inner = q_eff.add(&a2.scale(0.5 * r));
    let sigma = matalg::sqrt_spd(&inner.scale(2.0 / (k * k * r)))?;

    let bmat = inner.add(&coupling.scale(0.5));
    let cond = matalg::cond_2(bmat.as_matrix());
    if !cond.is_finite() || cond > tol::COEFF_COND_LIMIT {
        return Err(Error::BNotInvertible {
            cond,
            limit: tol::COEFF_COND_LIMIT,
        });
    }
    let p = q_eff.as_matrix() * happy + coupling.scale(0.5).as_matrix() * push;
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
    Ok(CoreCoefficients {
        sigma,
        mu,
        lambda_mat,
        rho,
    })
}

/// Game value `lambda = F + tr(nu R nu Sigma + nu R A) - mu^T (Sigma nu R
/// nu Sigma / 2) mu` given the instance-specific constant `F`.
fn game_value(f_const: f64, a: &SymMatrix, k: f64, r: f64, core: &CoreCoefficients) -> f64 {
    let d = a.dim();
    let nu = SymMatrix::scaled_identity(d, k);
    let rw = SymMatrix::scaled_identity(d, r);
    let nrn = nu.as_matrix() * rw.as_matrix() * nu.as_matrix();
    let trace_term = (&nrn * core.sigma.as_matrix()).trace()
        + (nu.as_matrix() * rw.as_matrix() * a.as_matrix()).trace();
    let snrns = core.sigma.as_matrix() * &nrn * core.sigma.as_matrix();
    let quad_term = 0.5 * (core.mu.transpose() * snrns * &core.mu)[(0, 0)];
    f_const + trace_term - quad_term
}

/// Computes the unique quadratic-Gaussian solution of the ergodic system.
pub fn solve_ergodic(spec: &GameSpec) -> Result<QGSolution> {
    if spec.discount != 0.0 {
        return Err(Error::InvalidInput(format!(
            "ergodic solver requires zero discount, got {}",
            spec.discount
        )));
    }
    let report = validate_assumptions(spec);
    if !report.all_passed() {
        return Err(Error::AssumptionViolation(report.to_string()));
    }
    let a = spec.drift_sym()?;
    let k = spec.noise;
    let r = spec.control_cost;

    match &spec.population {
        Population::Finite { n, cost } => {
            let coupling = cost.pair_coupling.scale((*n as f64) - 1.0);
            let core = solve_core(
                &a,
                k,
                r,
                &cost.own_state,
                &coupling,
                &cost.happy_state,
                &cost.push_state,
            )?;
            let cov = core.sigma.try_inverse()?;
            let per_player = (0..*n)
                .map(|i| {
                    let f = game::eval_fi_constant(cost, *n, i, Some(&cov), &core.mu);
                    game_value(f, &a, k, r, &core)
                })
                .collect();
            Ok(QGSolution {
                inv_cov: core.sigma,
                mean: core.mu,
                value_hessian: core.lambda_mat,
                value_slope: core.rho,
                per_player,
                mode: SolutionMode::Ergodic,
            })
        }
        Population::MeanField { cost } => {
            let core = solve_core(
                &a,
                k,
                r,
                &cost.own_state,
                &cost.pair_coupling,
                &cost.happy_state,
                &cost.push_state,
            )?;
            let cov = core.sigma.try_inverse()?;
            let f = game::eval_fhat_constant(cost, Some(&cov), &core.mu);
            let lambda = game_value(f, &a, k, r, &core);
            Ok(QGSolution {
                inv_cov: core.sigma,
                mean: core.mu,
                value_hessian: core.lambda_mat,
                value_slope: core.rho,
                per_player: vec![lambda],
                mode: SolutionMode::MfErgodic,
            })
        }
    }
}

/// Max absolute HJB and KFP residuals over a set of sample points, each
/// normalized by `1 + |x|^2`.
#[derive(Debug, Clone, Copy)]
pub struct PdeResiduals {
    pub hjb: f64,
    pub kfp: f64,
}

/// Evaluates both PDEs of the coupled system pointwise for a claimed
/// solution: the value function is quadratic, the measure is the claimed
/// Gaussian, and the opponents' running cost enters through its
/// closed-form average. Works for all four solution modes; the discounted
/// modes include the `ell * v` term with the per-player constant inside
/// `v`.
pub fn hjb_kfp_residual(
    sol: &QGSolution,
    spec: &GameSpec,
    xs: &[DVector<f64>],
) -> Result<PdeResiduals> {
    let d = spec.dim();
    let k = spec.noise;
    let r = spec.control_cost;
    let a = &spec.drift;
    let lam = sol.value_hessian.as_matrix();
    let sigma = sol.inv_cov.as_matrix();
    let law = sol.stationary_law();

    let n_players = match (&spec.population, sol.mode.is_mean_field()) {
        (Population::Finite { n, .. }, false) => *n,
        (Population::MeanField { .. }, true) => 1,
        _ => {
            return Err(Error::InvalidInput(
                "solution mode disagrees with the population".into(),
            ))
        }
    };

    // Density of N(mu, Sigma^{-1}) up to the normalization constant; the
    // residual is linear in the density so the constant is kept exact.
    let det_sigma = sigma.determinant();
    if det_sigma <= 0.0 {
        return Err(Error::NotSpd {
            min_eig: sol.inv_cov.min_eigenvalue(),
            tol: 0.0,
        });
    }
    let gamma = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) * det_sigma.sqrt();

    let discount = sol.mode.discount();
    let mut max_hjb: f64 = 0.0;
    let mut max_kfp: f64 = 0.0;

    for x in xs {
        let weight = 1.0 + x.norm_squared();
        let grad = sol.value_gradient(x);
        let common = -k * lam.trace() + grad.norm_squared() / (2.0 * r)
            - (grad.transpose() * a * x)[(0, 0)];

        for player in 0..n_players {
            let rhs = match (&spec.population, sol.mode.is_mean_field()) {
                (Population::Finite { n, cost }, false) => {
                    game::eval_fi_gaussian(cost, *n, player, x, &law)?
                }
                (Population::MeanField { cost }, true) => {
                    game::vhat_quadratic(cost, &law)?.eval(x)
                }
                _ => unreachable!(),
            };
            let hjb = match discount {
                Some(ell) => common + ell * sol.value(player, x) - rhs,
                None => common + sol.per_player[player] - rhs,
            };
            max_hjb = max_hjb.max(hjb.abs() / weight);
        }

        // KFP: -tr(nu D^2 m) - div(m (grad v / r - A x)) with m the
        // claimed Gaussian density. For the Gaussian,
        // tr(nu D^2 m) = k m (|Sigma dev|^2 - tr Sigma) and
        // div(m g) = m (-(Sigma dev) . g + div g).
        let dev = x - &sol.mean;
        let sdev = sigma * &dev;
        let density = gamma * (-0.5 * dev.dot(&sdev)).exp();
        let flow = &grad / r - a * x;
        let diffusion = k * density * (sdev.norm_squared() - sigma.trace());
        let transport = density * (-sdev.dot(&flow) + (lam / r - a).trace());
        let kfp_res = -diffusion - transport;
        max_kfp = max_kfp.max(kfp_res.abs() / weight);
    }

    Ok(PdeResiduals {
        hjb: max_hjb,
        kfp: max_kfp,
    })
}

/// Oracle identity behind the stationary law: the closed-loop drift is
/// `-k Sigma`, so the Lyapunov solve with forcing `2k I` must return the
/// covariance `Sigma^{-1}` exactly.
pub fn lyapunov_oracle_gap(sol: &QGSolution, spec: &GameSpec) -> Result<f64> {
    let d = sol.dim();
    let f = -spec.noise * sol.inv_cov.as_matrix();
    let w = SymMatrix::scaled_identity(d, 2.0 * spec.noise);
    let x = matalg::solve_lyapunov(&f, &w)?;
    let cov = sol.inv_cov.try_inverse()?;
    Ok(matalg::spec_norm(&x.sub(&cov)))
}

/// Closed-loop Hurwitz margin: greatest real part of
/// `spec(A - Lambda/r)`; negative for a valid solution.
pub fn closed_loop_margin(sol: &QGSolution, spec: &GameSpec) -> f64 {
    let cl = sol.closed_loop_drift(&spec.drift, spec.control_cost);
    cl.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |m, l| m.max(l.re))
}

/// Deterministic sample points in `[-5, 5]^d` for residual evaluation.
pub fn sample_points(d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0)))
        .collect()
}

/// Convenience handle used by tests: the ergodic Riccati data as a
/// general problem for the Hamiltonian route.
pub fn ergodic_are_problem(spec: &GameSpec) -> Result<crate::riccati::AREProblem> {
    let a = spec.drift_sym()?;
    let d = spec.dim();
    let k = spec.noise;
    let r = spec.control_cost;
    let q_eff = match &spec.population {
        Population::Finite { cost, .. } => &cost.own_state,
        Population::MeanField { cost } => &cost.own_state,
    };
    let a2 = SymMatrix::symmetrize(a.as_matrix() * a.as_matrix());
    crate::riccati::AREProblem::new(
        DMatrix::zeros(d, d),
        SymMatrix::scaled_identity(d, 0.5 * k * k * r),
        q_eff.add(&a2.scale(0.5 * r)),
    )
}

/// Gaussian law helper for deviation tests and reports.
pub fn law_of(sol: &QGSolution) -> DistributionDesc {
    sol.stationary_law()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CostStructure, PerPlayer};
    use crate::riccati;

    fn scalar_ergodic(
        n: usize,
        k: f64,
        r: f64,
        a: f64,
        q: f64,
        b: f64,
        h: f64,
    ) -> GameSpec {
        let cost = CostStructure::new(
            SymMatrix::scaled_identity(1, q),
            SymMatrix::scaled_identity(1, b),
            PerPlayer::Shared(SymMatrix::zeros(1)),
            PerPlayer::Shared(SymMatrix::zeros(1)),
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
    fn scalar_single_player() {
        // Sigma = 1, Lambda = 1, mu = rho = 0, lambda = tr(Sigma) = 1.
        let spec = scalar_ergodic(1, 1.0, 1.0, 0.0, 0.5, 0.0, 0.0);
        let sol = solve_ergodic(&spec).unwrap();
        assert!((sol.inv_cov.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.value_hessian.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(sol.mean[0].abs() < 1e-14);
        assert!(sol.value_slope[0].abs() < 1e-14);
        assert!((sol.per_player[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_two_player_coupled() {
        // B = Q + (N-1) B/2 = 0.75, P = 0.5 -> mu = 2/3, lambda = 17/18.
        let spec = scalar_ergodic(2, 1.0, 1.0, 0.0, 0.5, 0.5, 1.0);
        let sol = solve_ergodic(&spec).unwrap();
        assert!((sol.inv_cov.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.mean[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((sol.value_slope[0] + 2.0 / 3.0).abs() < 1e-12);
        for v in &sol.per_player {
            assert!((v - 17.0 / 18.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_field_matches_two_player_scaling() {
        use crate::game::MfCost;
        let mf = MfCost::new(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::zeros(1),
            SymMatrix::zeros(1),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let spec = GameSpec::new(
            DMatrix::zeros(1, 1),
            1.0,
            1.0,
            0.0,
            Population::MeanField { cost: mf },
        )
        .unwrap();
        let sol = solve_ergodic(&spec).unwrap();
        assert_eq!(sol.mode, SolutionMode::MfErgodic);
        assert!((sol.inv_cov.as_matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.mean[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn residuals_vanish_on_solutions() {
        let spec = scalar_ergodic(2, 1.0, 1.0, 0.3, 0.5, 0.5, 1.0);
        let sol = solve_ergodic(&spec).unwrap();
        let xs = sample_points(1, 100, 11);
        let res = hjb_kfp_residual(&sol, &spec, &xs).unwrap();
        assert!(res.hjb <= 1e-9, "hjb residual {}", res.hjb);
        assert!(res.kfp <= 1e-9, "kfp residual {}", res.kfp);
    }

    #[test]
    fn perturbed_hessian_shows_in_hjb() {
        let spec = scalar_ergodic(2, 1.0, 1.0, 0.0, 0.5, 0.5, 1.0);
        let mut sol = solve_ergodic(&spec).unwrap();
        sol.value_hessian = sol.value_hessian.add(&SymMatrix::scaled_identity(1, 0.01));
        let xs = sample_points(1, 100, 13);
        let res = hjb_kfp_residual(&sol, &spec, &xs).unwrap();
        assert!(res.hjb >= 1e-4, "hjb residual {} too small", res.hjb);
    }

    #[test]
    fn perturbed_mean_shows_in_kfp_and_hjb() {
        let spec = scalar_ergodic(2, 1.0, 1.0, 0.0, 0.5, 0.5, 1.0);
        let clean = solve_ergodic(&spec).unwrap();
        let mut sol = clean.clone();
        sol.mean[0] += 0.05;
        let xs = sample_points(1, 100, 17);
        let res = hjb_kfp_residual(&sol, &spec, &xs).unwrap();
        let clean_res = hjb_kfp_residual(&clean, &spec, &xs).unwrap();
        assert!(res.kfp > 1e-6, "kfp residual {} should be nonzero", res.kfp);
        assert!(
            res.hjb > clean_res.hjb + 1e-6,
            "hjb residual should move through the opponents' cost"
        );
    }

    #[test]
    fn lyapunov_oracle_and_hurwitz() {
        let spec = scalar_ergodic(2, 0.7, 1.3, 0.2, 0.8, 0.3, 0.5);
        let sol = solve_ergodic(&spec).unwrap();
        assert!(lyapunov_oracle_gap(&sol, &spec).unwrap() < 1e-9);
        let margin = closed_loop_margin(&sol, &spec);
        let expect = -spec.noise * sol.inv_cov.min_eigenvalue();
        assert!((margin - expect).abs() < 1e-10);
        assert!(margin < 0.0);
    }

    #[test]
    fn hamiltonian_route_agrees() {
        let spec = scalar_ergodic(2, 0.9, 1.1, 0.4, 0.6, 0.2, 0.5);
        let sol = solve_ergodic(&spec).unwrap();
        let p = ergodic_are_problem(&spec).unwrap();
        let y = riccati::solve_are_selected(&p).unwrap();
        assert!(matalg::spec_norm(&y.sub(&sol.inv_cov)) < 1e-10);
    }

    #[test]
    fn rejects_nonzero_discount() {
        let spec = scalar_ergodic(1, 1.0, 1.0, 0.0, 0.5, 0.0, 0.0).with_discount(0.1);
        assert!(solve_ergodic(&spec).is_err());
    }
}
