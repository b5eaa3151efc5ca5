//! Game instances and their cost structure.
//!
//! A game is a population of players with identical linear dynamics
//! `dX = (A X - alpha) dt + sqrt(2k) dW` and quadratic costs built from a
//! small set of shared blocks: an own-state cost `Q` pulling each player
//! toward a happy state `H`, a pairwise coupling `B` pushing opponents
//! toward a common state `Delta`, and opponent-only blocks `C_i`, `D_i`
//! that only move the per-player cost level. Opponents enter every cost
//! through their stationary distributions, never through their sampled
//! states, which is what makes the equilibria computable in closed form.
//!
//! The mean-field description keeps the same blocks after the natural
//! rescaling `Q^N -> Qhat`, `(N-1) B^N -> Bhat`, `(N-1) C^N -> Chat`,
//! `(N-1)^2 D^N -> Dhat`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matalg::{self, SymMatrix};
use crate::riccati;
use crate::tol;

/// A cost block that is either shared by all players or listed per player.
#[derive(Debug, Clone)]
pub enum PerPlayer {
    Shared(SymMatrix),
    Each(Vec<SymMatrix>),
}

impl PerPlayer {
    pub fn get(&self, player: usize) -> &SymMatrix {
        match self {
            PerPlayer::Shared(m) => m,
            PerPlayer::Each(v) => &v[player],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PerPlayer::Shared(m) => m.dim(),
            PerPlayer::Each(v) => v[0].dim(),
        }
    }

    fn check(&self, d: usize, n: usize, name: &str) -> Result<()> {
        match self {
            PerPlayer::Shared(m) => {
                if m.dim() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has dimension {} but the state has {d}",
                        m.dim()
                    )));
                }
            }
            PerPlayer::Each(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidInput(format!("{name} list is empty")));
                }
                if v.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} lists {} matrices for {n} players",
                        v.len()
                    )));
                }
                for m in v {
                    if m.dim() != d {
                        return Err(Error::DimensionMismatch(format!(
                            "{name} entry has dimension {} but the state has {d}",
                            m.dim()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cost blocks of an N-player game with nearly identical players.
#[derive(Debug, Clone)]
pub struct CostStructure {
    /// Own-state cost `Q` (positive definite for solvability).
    pub own_state: SymMatrix,
    /// Pairwise coupling `B` (the off-diagonal blocks are `B/2`).
    pub pair_coupling: SymMatrix,
    /// Opponents' quadratic cost `C_i`.
    pub others_quad: PerPlayer,
    /// Opponents' cross coupling `D_i`.
    pub cross_coupling: PerPlayer,
    /// Happy state `H` the player steers toward.
    pub happy_state: DVector<f64>,
    /// Push state `Delta` the player wants opponents at.
    pub push_state: DVector<f64>,
}

impl CostStructure {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        own_state: SymMatrix,
        pair_coupling: SymMatrix,
        others_quad: PerPlayer,
        cross_coupling: PerPlayer,
        happy_state: DVector<f64>,
        push_state: DVector<f64>,
        n_players: usize,
    ) -> Result<Self> {
        let d = own_state.dim();
        if pair_coupling.dim() != d {
            return Err(Error::DimensionMismatch(
                "pair coupling dimension disagrees with own-state cost".into(),
            ));
        }
        others_quad.check(d, n_players, "opponents' quadratic cost")?;
        cross_coupling.check(d, n_players, "opponents' cross coupling")?;
        if happy_state.len() != d || push_state.len() != d {
            return Err(Error::DimensionMismatch(
                "reference states disagree with the state dimension".into(),
            ));
        }
        Ok(CostStructure {
            own_state,
            pair_coupling,
            others_quad,
            cross_coupling,
            happy_state,
            push_state,
        })
    }

    /// Uncoupled cost: only `Q` and `H`.
    pub fn decoupled(own_state: SymMatrix, happy_state: DVector<f64>) -> Self {
        let d = own_state.dim();
        CostStructure {
            own_state,
            pair_coupling: SymMatrix::zeros(d),
            others_quad: PerPlayer::Shared(SymMatrix::zeros(d)),
            cross_coupling: PerPlayer::Shared(SymMatrix::zeros(d)),
            happy_state,
            push_state: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.own_state.dim()
    }
}

/// Mean-field cost blocks (the scaled limits of the per-player blocks).
#[derive(Debug, Clone)]
pub struct MfCost {
    pub own_state: SymMatrix,
    pub pair_coupling: SymMatrix,
    pub others_quad: SymMatrix,
    pub cross_coupling: SymMatrix,
    pub happy_state: DVector<f64>,
    pub push_state: DVector<f64>,
}

impl MfCost {
    pub fn new(
        own_state: SymMatrix,
        pair_coupling: SymMatrix,
        others_quad: SymMatrix,
        cross_coupling: SymMatrix,
        happy_state: DVector<f64>,
        push_state: DVector<f64>,
    ) -> Result<Self> {
        let d = own_state.dim();
        for (name, m) in [
            ("pair coupling", &pair_coupling),
            ("opponents' quadratic cost", &others_quad),
            ("opponents' cross coupling", &cross_coupling),
        ] {
            if m.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "{name} dimension disagrees with own-state cost"
                )));
            }
        }
        if happy_state.len() != d || push_state.len() != d {
            return Err(Error::DimensionMismatch(
                "reference states disagree with the state dimension".into(),
            ));
        }
        Ok(MfCost {
            own_state,
            pair_coupling,
            others_quad,
            cross_coupling,
            happy_state,
            push_state,
        })
    }

    pub fn dim(&self) -> usize {
        self.own_state.dim()
    }
}

/// Population of a game: a finite roster or the mean-field limit.
#[derive(Debug, Clone)]
pub enum Population {
    Finite { n: usize, cost: CostStructure },
    MeanField { cost: MfCost },
}

impl Population {
    pub fn dim(&self) -> usize {
        match self {
            Population::Finite { cost, .. } => cost.dim(),
            Population::MeanField { cost } => cost.dim(),
        }
    }
}

/// A complete game instance.
///
/// The diffusion matrix is derived, never stored: `sigma = sqrt(2k) I`, so
/// the noise intensity is `nu = sigma sigma^T / 2 = k I`; the control
/// weight is `R = r I`. A zero discount means ergodic cost.
#[derive(Debug, Clone)]
pub struct GameSpec {
    /// Drift matrix `A`. Kept raw so validation can report asymmetry
    /// instead of hiding it; every solver requires it symmetric.
    pub drift: DMatrix<f64>,
    /// Noise intensity `k > 0`.
    pub noise: f64,
    /// Control cost weight `r > 0`.
    pub control_cost: f64,
    /// Discount factor `ell >= 0`; `0` selects the ergodic cost.
    pub discount: f64,
    pub population: Population,
}

impl GameSpec {
    pub fn new(
        drift: DMatrix<f64>,
        noise: f64,
        control_cost: f64,
        discount: f64,
        population: Population,
    ) -> Result<Self> {
        let d = population.dim();
        if drift.nrows() != d || drift.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "drift is {}x{} but the cost structure has dimension {d}",
                drift.nrows(),
                drift.ncols()
            )));
        }
        if discount < 0.0 {
            return Err(Error::InvalidInput("discount must be nonnegative".into()));
        }
        Ok(GameSpec {
            drift,
            noise,
            control_cost,
            discount,
            population,
        })
    }

    pub fn dim(&self) -> usize {
        self.population.dim()
    }

    pub fn is_mean_field(&self) -> bool {
        matches!(self.population, Population::MeanField { .. })
    }

    pub fn n_players(&self) -> Option<usize> {
        match &self.population {
            Population::Finite { n, .. } => Some(*n),
            Population::MeanField { .. } => None,
        }
    }

    /// Drift as a symmetric matrix; fails when validation would flag it.
    pub fn drift_sym(&self) -> Result<SymMatrix> {
        SymMatrix::new(self.drift.clone())
            .map_err(|_| Error::AssumptionViolation("drift matrix is not symmetric".into()))
    }

    pub fn with_discount(&self, discount: f64) -> GameSpec {
        let mut s = self.clone();
        s.discount = discount;
        s
    }

    pub fn with_noise(&self, noise: f64) -> GameSpec {
        let mut s = self.clone();
        s.noise = noise;
        s
    }

    pub fn with_control_cost(&self, control_cost: f64) -> GameSpec {
        let mut s = self.clone();
        s.control_cost = control_cost;
        s
    }

    pub fn with_population(&self, population: Population) -> Result<GameSpec> {
        GameSpec::new(
            self.drift.clone(),
            self.noise,
            self.control_cost,
            self.discount,
            population,
        )
    }
}

/// A stationary-law description that stays closed under the singular
/// limits: Gaussians collapse to Dirac masses as the noise or the control
/// cost vanish.
#[derive(Debug, Clone)]
pub enum DistributionDesc {
    /// `N(mean, inv_cov^{-1})`: the second field is the inverse
    /// covariance (precision) matrix, positive definite.
    Gaussian {
        mean: DVector<f64>,
        inv_cov: SymMatrix,
    },
    Dirac { point: DVector<f64> },
}

impl DistributionDesc {
    pub fn mean(&self) -> &DVector<f64> {
        match self {
            DistributionDesc::Gaussian { mean, .. } => mean,
            DistributionDesc::Dirac { point } => point,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    /// Covariance matrix; identically zero for a Dirac mass.
    pub fn covariance(&self) -> Result<SymMatrix> {
        match self {
            DistributionDesc::Gaussian { inv_cov, .. } => inv_cov.try_inverse(),
            DistributionDesc::Dirac { point } => Ok(SymMatrix::zeros(point.len())),
        }
    }
}

/// `x -> x^T M x + b^T x + c`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub quad: SymMatrix,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.eval_slice(x.as_slice())
    }

    /// Allocation-free evaluation for hot loops.
    pub fn eval_slice(&self, x: &[f64]) -> f64 {
        let m = self.quad.as_matrix();
        let d = x.len();
        let mut out = self.constant;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += m[(i, j)] * x[j];
            }
            out += x[i] * row + self.lin[i] * x[i];
        }
        out
    }
}

/// Status of one validated assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct ValidationItem {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

/// Itemized report of the standing assumptions.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&ValidationItem> {
        self.items
            .iter()
            .filter(|i| i.status == CheckStatus::Fail)
            .collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for item in &self.items {
            let tag = match item.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "SKIP",
            };
            if item.detail.is_empty() {
                writeln!(f, "[{tag}] {}", item.name)?;
            } else {
                writeln!(f, "[{tag}] {} - {}", item.name, item.detail)?;
            }
        }
        Ok(())
    }
}

/// Validates the standing assumptions of a game instance, itemized so a
/// failing instance reports every broken assumption at once.
pub fn validate_assumptions(spec: &GameSpec) -> ValidationReport {
    let mut items = Vec::new();

    let noise_ok = spec.noise > 0.0;
    items.push(ValidationItem {
        name: "noise matrix invertible",
        status: if noise_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: if noise_ok {
            format!("sigma = sqrt(2k) I with k = {}", spec.noise)
        } else {
            format!("k = {} makes sigma singular", spec.noise)
        },
    });

    let control_ok = spec.control_cost > 0.0;
    items.push(ValidationItem {
        name: "control cost positive definite",
        status: if control_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: if control_ok {
            format!("R = r I with r = {}", spec.control_cost)
        } else {
            format!("r = {} is not positive", spec.control_cost)
        },
    });

    let scale = 1.0 + spec.drift.amax();
    let asym = (&spec.drift - spec.drift.transpose()).amax();
    let drift_ok = asym <= tol::SYM_CONSTRUCTION_TOL * scale;
    items.push(ValidationItem {
        name: "drift matrix symmetric",
        status: if drift_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: if drift_ok {
            String::new()
        } else {
            format!("max |A - A^T| = {asym:.3e}")
        },
    });

    items.push(ValidationItem {
        name: "scalar noise and control weights",
        status: CheckStatus::Pass,
        detail: "nu = k I and R = r I by representation".into(),
    });

    let own_state = match &spec.population {
        Population::Finite { cost, .. } => &cost.own_state,
        Population::MeanField { cost } => &cost.own_state,
    };
    let own_spd = matalg::inertia(own_state, tol::SIGN_TOL).is_positive_definite();
    items.push(ValidationItem {
        name: "own-state cost positive definite",
        status: if own_spd {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: if own_spd {
            String::new()
        } else {
            format!("min eigenvalue {:.3e}", own_state.min_eigenvalue())
        },
    });

    let blocks_item = match &spec.population {
        Population::Finite { n, cost } => {
            let c_ok = cost.others_quad.check(cost.dim(), *n, "C").is_ok();
            let d_ok = cost.cross_coupling.check(cost.dim(), *n, "D").is_ok();
            ValidationItem {
                name: "cost blocks symmetric and consistent",
                status: if c_ok && d_ok {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
                detail: if c_ok && d_ok {
                    String::new()
                } else {
                    "per-player block lists disagree with the player count".into()
                },
            }
        }
        Population::MeanField { .. } => ValidationItem {
            name: "cost blocks symmetric and consistent",
            status: CheckStatus::Pass,
            detail: String::new(),
        },
    };
    items.push(blocks_item);

    // With scalar noise/control weights and a symmetric drift the
    // Riccati-Sylvester property holds identically; the enumeration-based
    // check certifies it on small instances and catches anything else.
    let rs_item = if !(noise_ok && control_ok && drift_ok && own_spd) {
        ValidationItem {
            name: "riccati-sylvester property",
            status: CheckStatus::Skipped,
            detail: "preconditions failed above".into(),
        }
    } else if spec.dim() > tol::ENUM_DIM_LIMIT {
        ValidationItem {
            name: "riccati-sylvester property",
            status: CheckStatus::Pass,
            detail: "holds identically for scalar noise/control weights (dimension above enumeration cap)"
                .into(),
        }
    } else {
        let a = SymMatrix::symmetrize(spec.drift.clone());
        let nu = SymMatrix::scaled_identity(spec.dim(), spec.noise);
        let r = SymMatrix::scaled_identity(spec.dim(), spec.control_cost);
        match riccati::riccati_sylvester_check(&a, &nu, &r, own_state, tol::SIGN_TOL) {
            Ok(rep) if rep.holds => ValidationItem {
                name: "riccati-sylvester property",
                status: CheckStatus::Pass,
                detail: format!(
                    "{} positive definite solutions, residual 0",
                    rep.spd_solution_count
                ),
            },
            Ok(rep) => ValidationItem {
                name: "riccati-sylvester property",
                status: CheckStatus::Fail,
                detail: format!(
                    "max residual {:.3e}",
                    rep.residuals.iter().fold(0.0f64, |a, &b| a.max(b))
                ),
            },
            Err(e) => ValidationItem {
                name: "riccati-sylvester property",
                status: CheckStatus::Skipped,
                detail: format!("check not decidable: {e}"),
            },
        }
    };
    items.push(rs_item);

    ValidationReport { items }
}

/// How the own-state cost varies with the player count in the scaled
/// family built by [`scaled_costs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleFamily {
    /// `Q^N = Qhat * (1 + 1/N)`: injects an O(1/N) variation so that
    /// mean-field convergence rates are visible.
    OneOverN,
    /// `Q^N = Qhat`: the constant family, exact at every N.
    Constant,
}

/// Builds the N-player cost blocks of the scaled family from mean-field
/// blocks: `B = Bhat/(N-1)`, `C = Chat/(N-1)`, `D = Dhat/(N-1)^2`, and
/// `Q` per the chosen family.
pub fn scaled_costs(mf: &MfCost, n: usize, family: ScaleFamily) -> Result<CostStructure> {
    if n < 2 {
        return Err(Error::InvalidInput(
            "the scaled family needs at least 2 players".into(),
        ));
    }
    let s_q = match family {
        ScaleFamily::OneOverN => 1.0 + 1.0 / n as f64,
        ScaleFamily::Constant => 1.0,
    };
    let nm1 = (n - 1) as f64;
    CostStructure::new(
        mf.own_state.scale(s_q),
        mf.pair_coupling.scale(1.0 / nm1),
        PerPlayer::Shared(mf.others_quad.scale(1.0 / nm1)),
        PerPlayer::Shared(mf.cross_coupling.scale(1.0 / (nm1 * nm1))),
        mf.happy_state.clone(),
        mf.push_state.clone(),
        n,
    )
}

/// The constant cost term `F^i(Sigma, mu)` entering the per-player game
/// value: opponents contribute through their common mean and covariance
/// only. `cov` is the opponents' covariance matrix (`None` for a Dirac
/// limit, where the trace term drops).
pub fn eval_fi_constant(
    cost: &CostStructure,
    n: usize,
    player: usize,
    cov: Option<&SymMatrix>,
    mean: &DVector<f64>,
) -> f64 {
    let h = &cost.happy_state;
    let dev = mean - &cost.push_state;
    let q = cost.own_state.as_matrix();
    let b_half = cost.pair_coupling.scale(0.5);
    let c_i = cost.others_quad.get(player);
    let d_i = cost.cross_coupling.get(player);
    let nm1 = (n as f64) - 1.0;
    let nm2 = (n as f64) - 2.0;

    let mut out = (h.transpose() * q * h)[(0, 0)];
    out -= nm1 * (h.transpose() * b_half.as_matrix() * &dev)[(0, 0)];
    out -= nm1 * (dev.transpose() * b_half.as_matrix() * h)[(0, 0)];
    if let Some(cov) = cov {
        out += nm1 * (c_i.as_matrix() * cov.as_matrix()).trace();
    }
    out += nm1 * (dev.transpose() * c_i.as_matrix() * &dev)[(0, 0)];
    out += nm1 * nm2 * (dev.transpose() * d_i.as_matrix() * &dev)[(0, 0)];
    out
}

/// Mean-field counterpart `Fhat(Sigma, mu)` of [`eval_fi_constant`].
pub fn eval_fhat_constant(mf: &MfCost, cov: Option<&SymMatrix>, mean: &DVector<f64>) -> f64 {
    let h = &mf.happy_state;
    let dev = mean - &mf.push_state;
    let b_half = mf.pair_coupling.scale(0.5);

    let mut out = (h.transpose() * mf.own_state.as_matrix() * h)[(0, 0)];
    out -= (h.transpose() * b_half.as_matrix() * &dev)[(0, 0)];
    out -= (dev.transpose() * b_half.as_matrix() * h)[(0, 0)];
    if let Some(cov) = cov {
        out += (mf.others_quad.as_matrix() * cov.as_matrix()).trace();
    }
    let cd = mf.others_quad.add(&mf.cross_coupling);
    out += (dev.transpose() * cd.as_matrix() * &dev)[(0, 0)];
    out
}

/// The running cost `f^i(x; m, ..., m)` of player `i` at state `x` when
/// every opponent is distributed according to `others`: the closed-form
/// Gaussian (or Dirac) average of the quadratic cost.
pub fn eval_fi_gaussian(
    cost: &CostStructure,
    n: usize,
    player: usize,
    x: &DVector<f64>,
    others: &DistributionDesc,
) -> Result<f64> {
    let h = &cost.happy_state;
    let own_dev = x - h;
    let opp_dev = others.mean() - &cost.push_state;
    let cov = others.covariance()?;
    let c_i = cost.others_quad.get(player);
    let d_i = cost.cross_coupling.get(player);
    let nm1 = (n as f64) - 1.0;
    let nm2 = (n as f64) - 2.0;

    let mut out = (own_dev.transpose() * cost.own_state.as_matrix() * &own_dev)[(0, 0)];
    out += nm1 * (own_dev.transpose() * cost.pair_coupling.as_matrix() * &opp_dev)[(0, 0)];
    out += nm1
        * ((c_i.as_matrix() * cov.as_matrix()).trace()
            + (opp_dev.transpose() * c_i.as_matrix() * &opp_dev)[(0, 0)]);
    out += nm1 * nm2 * (opp_dev.transpose() * d_i.as_matrix() * &opp_dev)[(0, 0)];
    Ok(out)
}

/// The running cost of player `i` as an explicit quadratic form in the
/// player's own state, with the opponents' distribution folded into the
/// coefficients. Agrees with [`eval_fi_gaussian`] pointwise; used where
/// the cost is evaluated millions of times.
pub fn fi_quadratic(
    cost: &CostStructure,
    n: usize,
    player: usize,
    others: &DistributionDesc,
) -> Result<QuadraticForm> {
    let h = &cost.happy_state;
    let opp_dev = others.mean() - &cost.push_state;
    let cov = others.covariance()?;
    let c_i = cost.others_quad.get(player);
    let d_i = cost.cross_coupling.get(player);
    let nm1 = (n as f64) - 1.0;
    let nm2 = (n as f64) - 2.0;

    let q = cost.own_state.as_matrix();
    let b = cost.pair_coupling.as_matrix();
    let lin = -2.0 * (q * h) + nm1 * (b * &opp_dev);
    let mut constant = (h.transpose() * q * h)[(0, 0)];
    constant -= nm1 * (h.transpose() * b * &opp_dev)[(0, 0)];
    constant += nm1
        * ((c_i.as_matrix() * cov.as_matrix()).trace()
            + (opp_dev.transpose() * c_i.as_matrix() * &opp_dev)[(0, 0)]);
    constant += nm1 * nm2 * (opp_dev.transpose() * d_i.as_matrix() * &opp_dev)[(0, 0)];
    Ok(QuadraticForm {
        quad: cost.own_state.clone(),
        lin,
        constant,
    })
}

/// The measure-cost operator of the mean-field game: maps a distribution
/// `m` to the quadratic polynomial `x -> Vhat[m](x)`.
pub fn vhat_quadratic(mf: &MfCost, m: &DistributionDesc) -> Result<QuadraticForm> {
    let h = &mf.happy_state;
    let opp_dev = m.mean() - &mf.push_state;
    let cov = m.covariance()?;

    // (x-H)^T Qhat (x-H) + (x-H)^T Bhat (mu-Delta)
    //   + tr(Chat cov) + (mu-Delta)^T (Chat + Dhat) (mu-Delta)
    let q = mf.own_state.as_matrix();
    let b = mf.pair_coupling.as_matrix();
    let lin = -2.0 * (q * h) + b * &opp_dev;
    let mut constant = (h.transpose() * q * h)[(0, 0)];
    constant -= (h.transpose() * b * &opp_dev)[(0, 0)];
    constant += (mf.others_quad.as_matrix() * cov.as_matrix()).trace();
    let cd = mf.others_quad.add(&mf.cross_coupling);
    constant += (opp_dev.transpose() * cd.as_matrix() * &opp_dev)[(0, 0)];

    Ok(QuadraticForm {
        quad: mf.own_state.clone(),
        lin,
        constant,
    })
}

/// Block costs produced by rewriting a mean-reverting tracking cost
/// `(x - Gamma xbar - eta)^T Q (x - Gamma xbar - eta)` in the
/// nearly-identical-players block form.
#[derive(Debug, Clone)]
pub struct TrackingBlocks {
    /// Own block `Q^i_ii`.
    pub own: SymMatrix,
    /// Row blocks `Q^i_ij`, `j != i` (not symmetric on its own).
    pub cross: DMatrix<f64>,
    /// Opponent blocks `Q^i_jk`, `j, k != i` (including `j == k`).
    pub others: SymMatrix,
    /// Reference state for the own coordinate.
    pub own_ref: DVector<f64>,
    /// Reference state for every opponent coordinate.
    pub others_ref: DVector<f64>,
}

impl TrackingBlocks {
    /// Assembles the full `Nd x Nd` cost matrix of player `player`.
    pub fn big_matrix(&self, player: usize, n: usize) -> DMatrix<f64> {
        let d = self.own.dim();
        let mut big = DMatrix::zeros(n * d, n * d);
        for j in 0..n {
            for k in 0..n {
                let block = if j == player && k == player {
                    self.own.as_matrix().clone()
                } else if j == player {
                    self.cross.clone()
                } else if k == player {
                    self.cross.transpose()
                } else {
                    self.others.as_matrix().clone()
                };
                big.view_mut((j * d, k * d), (d, d)).copy_from(&block);
            }
        }
        big
    }

    /// Reinterprets the blocks as a shared cost structure. Requires the
    /// cross block to be symmetric (true when `Gamma` commutes with `Q`).
    pub fn to_cost_structure(&self, n: usize) -> Result<CostStructure> {
        let b = SymMatrix::new(2.0 * &self.cross)?;
        CostStructure::new(
            self.own.clone(),
            b,
            PerPlayer::Shared(self.others.clone()),
            PerPlayer::Shared(self.others.clone()),
            self.own_ref.clone(),
            self.others_ref.clone(),
            n,
        )
    }
}

/// Converts the tracking-cost data `(Gamma, eta, Q, N)` into per-player
/// block costs: the target `Gamma * (average state) + eta` is expanded so
/// the cost becomes a quadratic form in all N states.
pub fn convert_tracking_cost(
    gamma: &DMatrix<f64>,
    eta: &DVector<f64>,
    q: &SymMatrix,
    n: usize,
) -> Result<TrackingBlocks> {
    let d = q.dim();
    if gamma.nrows() != d || gamma.ncols() != d || eta.len() != d {
        return Err(Error::DimensionMismatch(
            "tracking conversion blocks disagree in dimension".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidInput("player count must be positive".into()));
    }
    let nf = n as f64;
    let m = DMatrix::identity(d, d) - gamma.transpose() / nf;
    if matalg::cond_2(&m) > tol::COEFF_COND_LIMIT {
        return Err(Error::SingularConversion);
    }
    let scaled = gamma / nf;
    let own = SymMatrix::symmetrize(&m * q.as_matrix() * m.transpose());
    let cross = -(&m * q.as_matrix() * &scaled);
    let others = SymMatrix::symmetrize(scaled.transpose() * q.as_matrix() * &scaled);
    Ok(TrackingBlocks {
        own,
        cross,
        others,
        own_ref: eta.clone(),
        others_ref: DVector::zeros(d),
    })
}

/// Draws a sample from the distribution (test and simulation support).
pub fn sample_distribution<R: Rng + ?Sized>(
    m: &DistributionDesc,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match m {
        DistributionDesc::Dirac { point } => Ok(point.clone()),
        DistributionDesc::Gaussian { mean, inv_cov } => {
            let cov = inv_cov.try_inverse()?;
            let chol = nalgebra::Cholesky::new(cov.into_inner())
                .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
            let z = DVector::from_iterator(
                mean.len(),
                (0..mean.len()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
            );
            Ok(mean + chol.l() * z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_spec(k: f64, r: f64, a: f64, q: f64) -> GameSpec {
        let cost =
            CostStructure::decoupled(SymMatrix::scaled_identity(1, q), DVector::zeros(1));
        GameSpec::new(
            DMatrix::from_element(1, 1, a),
            k,
            r,
            0.0,
            Population::Finite { n: 1, cost },
        )
        .unwrap()
    }

    fn coupled_scalar(n: usize, q: f64, b: f64, h: f64) -> CostStructure {
        CostStructure::new(
            SymMatrix::scaled_identity(1, q),
            SymMatrix::scaled_identity(1, b),
            PerPlayer::Shared(SymMatrix::zeros(1)),
            PerPlayer::Shared(SymMatrix::zeros(1)),
            DVector::from_element(1, h),
            DVector::zeros(1),
            n,
        )
        .unwrap()
    }

    #[test]
    fn validation_passes_on_scalar_instance() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5);
        let rep = validate_assumptions(&spec);
        assert!(rep.all_passed(), "{rep}");
    }

    #[test]
    fn validation_flags_singular_noise() {
        let spec = scalar_spec(0.0, 1.0, 0.0, 0.5);
        let rep = validate_assumptions(&spec);
        assert!(!rep.all_passed());
        assert!(rep
            .failures()
            .iter()
            .any(|i| i.name == "noise matrix invertible"));
    }

    #[test]
    fn validation_flags_asymmetric_drift() {
        let cost = CostStructure::decoupled(SymMatrix::identity(2), DVector::zeros(2));
        let spec = GameSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            1.0,
            1.0,
            0.0,
            Population::Finite { n: 1, cost },
        )
        .unwrap();
        let rep = validate_assumptions(&spec);
        assert!(rep
            .failures()
            .iter()
            .any(|i| i.name == "drift matrix symmetric"));
    }

    #[test]
    fn scaling_examples() {
        let mf = MfCost::new(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::zeros(1),
            SymMatrix::scaled_identity(1, 1.0),
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .unwrap();
        let c2 = scaled_costs(&mf, 2, ScaleFamily::Constant).unwrap();
        assert!((c2.pair_coupling.as_matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        let c3 = scaled_costs(&mf, 3, ScaleFamily::Constant).unwrap();
        assert!((c3.cross_coupling.get(0).as_matrix()[(0, 0)] - 0.25).abs() < 1e-15);
        let c4 = scaled_costs(&mf, 4, ScaleFamily::OneOverN).unwrap();
        assert!((c4.own_state.as_matrix()[(0, 0)] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn fi_constant_examples() {
        // Only H^T Q H survives.
        let cost = CostStructure::decoupled(
            SymMatrix::scaled_identity(1, 0.5),
            DVector::from_element(1, 1.0),
        );
        let f = eval_fi_constant(
            &cost,
            1,
            0,
            Some(&SymMatrix::identity(1)),
            &DVector::zeros(1),
        );
        assert!((f - 0.5).abs() < 1e-15);

        // (N-1) tr(C cov) with everything else zero.
        let cost = CostStructure::new(
            SymMatrix::scaled_identity(1, 0.3),
            SymMatrix::zeros(1),
            PerPlayer::Shared(SymMatrix::identity(1)),
            PerPlayer::Shared(SymMatrix::zeros(1)),
            DVector::zeros(1),
            DVector::zeros(1),
            2,
        )
        .unwrap();
        let f = eval_fi_constant(
            &cost,
            2,
            0,
            Some(&SymMatrix::identity(1)),
            &DVector::zeros(1),
        );
        assert!((f - 1.0).abs() < 1e-15);

        // 0.5 - 2 * (0.25 * 2/3) = 1/6.
        let cost = coupled_scalar(2, 0.5, 0.5, 1.0);
        let f = eval_fi_constant(
            &cost,
            2,
            0,
            Some(&SymMatrix::identity(1)),
            &DVector::from_element(1, 2.0 / 3.0),
        );
        assert!((f - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn fi_gaussian_examples() {
        let cost = CostStructure::decoupled(
            SymMatrix::scaled_identity(1, 0.5),
            DVector::from_element(1, 1.0),
        );
        let others = DistributionDesc::Dirac {
            point: DVector::zeros(1),
        };
        let f = eval_fi_gaussian(&cost, 1, 0, &DVector::from_element(1, 2.0), &others).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
        let f = eval_fi_gaussian(&cost, 1, 0, &DVector::from_element(1, 1.0), &others).unwrap();
        assert!(f.abs() < 1e-15);

        // (N-1)(N-2) * 1 with N = 3, D = 1, mu - Delta = 1, Dirac others.
        let cost = CostStructure::new(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::zeros(1),
            PerPlayer::Shared(SymMatrix::zeros(1)),
            PerPlayer::Shared(SymMatrix::identity(1)),
            DVector::zeros(1),
            DVector::zeros(1),
            3,
        )
        .unwrap();
        let others = DistributionDesc::Dirac {
            point: DVector::from_element(1, 1.0),
        };
        let f = eval_fi_gaussian(&cost, 3, 0, &DVector::zeros(1), &others).unwrap();
        assert!((f - 2.0).abs() < 1e-15);
    }

    #[test]
    fn vhat_examples() {
        // Coupling-free: Vhat[m](x) = (x-H)^T Qhat (x-H) for any m.
        let mf = MfCost::new(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::zeros(1),
            SymMatrix::zeros(1),
            SymMatrix::zeros(1),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let m = DistributionDesc::Gaussian {
            mean: DVector::from_element(1, 3.0),
            inv_cov: SymMatrix::identity(1),
        };
        let v = vhat_quadratic(&mf, &m).unwrap();
        for x in [-1.0, 0.0, 2.5] {
            let xv = DVector::from_element(1, x);
            assert!((v.eval(&xv) - 0.5 * (x - 1.0) * (x - 1.0)).abs() < 1e-14);
        }

        // Dirac at the push state kills every coupling term.
        let mf2 = MfCost::new(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::scaled_identity(1, 0.7),
            SymMatrix::scaled_identity(1, 0.3),
            SymMatrix::scaled_identity(1, 0.2),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -2.0),
        )
        .unwrap();
        let m = DistributionDesc::Dirac {
            point: DVector::from_element(1, -2.0),
        };
        let v = vhat_quadratic(&mf2, &m).unwrap();
        let xv = DVector::from_element(1, 4.0);
        assert!((v.eval(&xv) - 0.5 * 9.0).abs() < 1e-14);

        // Worked scalar instance: 0.5(x-1)^2 + 0.5(x-1)*2 + (1 + 4).
        let mf3 = MfCost::new(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::scaled_identity(1, 1.0),
            SymMatrix::zeros(1),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let m = DistributionDesc::Gaussian {
            mean: DVector::from_element(1, 2.0),
            inv_cov: SymMatrix::identity(1),
        };
        let v = vhat_quadratic(&mf3, &m).unwrap();
        for x in [-1.0, 0.5, 3.0] {
            let expect = 0.5 * (x - 1.0) * (x - 1.0) + 0.5 * (x - 1.0) * 2.0 + 5.0;
            let xv = DVector::from_element(1, x);
            assert!((v.eval(&xv) - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn tracking_conversion_examples() {
        // Gamma = 0: own block is Q, off blocks vanish.
        let q = SymMatrix::scaled_identity(1, 1.0);
        let blocks =
            convert_tracking_cost(&DMatrix::zeros(1, 1), &DVector::zeros(1), &q, 2).unwrap();
        assert!((blocks.own.as_matrix()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(blocks.cross.amax() < 1e-15);
        assert!(blocks.others.as_matrix().amax() < 1e-15);

        // Gamma = I, N = 2: own = 1/4, cross = -1/4.
        let blocks =
            convert_tracking_cost(&DMatrix::identity(1, 1), &DVector::zeros(1), &q, 2).unwrap();
        assert!((blocks.own.as_matrix()[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((blocks.cross[(0, 0)] + 0.25).abs() < 1e-15);

        // Gamma = I, N = 4: opponents' blocks are 1/16.
        let blocks =
            convert_tracking_cost(&DMatrix::identity(1, 1), &DVector::zeros(1), &q, 4).unwrap();
        assert!((blocks.others.as_matrix()[(0, 0)] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn tracking_big_matrix_is_symmetric_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 2;
        let n = 3;
        let gamma = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let eta = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let q = {
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            SymMatrix::symmetrize(&raw * raw.transpose() + DMatrix::identity(d, d))
        };
        let blocks = convert_tracking_cost(&gamma, &eta, &q, n).unwrap();
        let player = 1;
        let big = blocks.big_matrix(player, n);
        assert!((&big - big.transpose()).amax() < 1e-12);

        // Block form must reproduce (x^i - Gamma xbar - eta)^T Q (...).
        // The exact centering for the own coordinate is
        // (I - Gamma/N)^{-1} eta; the stored reference eta agrees with it
        // to O(1/N) and exactly when Gamma eta = 0.
        let exact_ref = (DMatrix::identity(d, d) - &gamma / n as f64)
            .lu()
            .solve(&eta)
            .unwrap();
        let xs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let xbar = xs.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
        let dev = &xs[player] - &gamma * &xbar - &eta;
        let direct = (dev.transpose() * q.as_matrix() * &dev)[(0, 0)];

        let mut stacked = DVector::zeros(n * d);
        for (j, x) in xs.iter().enumerate() {
            stacked.rows_mut(j * d, d).copy_from(x);
        }
        let mut refstate = DVector::zeros(n * d);
        refstate.rows_mut(player * d, d).copy_from(&exact_ref);
        let shifted = &stacked - &refstate;
        let block_form = (shifted.transpose() * &big * &shifted)[(0, 0)];
        assert!(
            (direct - block_form).abs() < 1e-10,
            "direct {direct} vs blocks {block_form}"
        );
    }

    #[test]
    fn fi_gaussian_matches_monte_carlo_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = 2;
        let n = 3;
        let rand_sym = |rng: &mut ChaCha8Rng, scale: f64| {
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
            SymMatrix::symmetrize(raw)
        };
        let spd = {
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            SymMatrix::symmetrize(&raw * raw.transpose() + DMatrix::identity(d, d))
        };
        let cost = CostStructure::new(
            spd,
            rand_sym(&mut rng, 0.5),
            PerPlayer::Shared(rand_sym(&mut rng, 0.5)),
            PerPlayer::Shared(rand_sym(&mut rng, 0.5)),
            DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            n,
        )
        .unwrap();
        let others = DistributionDesc::Gaussian {
            mean: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            inv_cov: {
                let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                SymMatrix::symmetrize(&raw * raw.transpose() + DMatrix::identity(d, d))
            },
        };
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let exact = eval_fi_gaussian(&cost, n, 0, &x, &others).unwrap();

        // Full quadratic cost averaged over sampled opponent states.
        let full_cost = |x: &DVector<f64>, opps: &[DVector<f64>]| -> f64 {
            let h = &cost.happy_state;
            let own_dev = x - h;
            let mut out =
                (own_dev.transpose() * cost.own_state.as_matrix() * &own_dev)[(0, 0)];
            for o in opps {
                let od = o - &cost.push_state;
                out += (own_dev.transpose() * cost.pair_coupling.as_matrix() * &od)[(0, 0)];
                out += (od.transpose() * cost.others_quad.get(0).as_matrix() * &od)[(0, 0)];
            }
            for (a, oa) in opps.iter().enumerate() {
                for (b, ob) in opps.iter().enumerate() {
                    if a != b {
                        let da = oa - &cost.push_state;
                        let db = ob - &cost.push_state;
                        out += (da.transpose() * cost.cross_coupling.get(0).as_matrix() * &db)
                            [(0, 0)];
                    }
                }
            }
            out
        };

        let samples = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..samples {
            let opps: Vec<DVector<f64>> = (0..n - 1)
                .map(|_| sample_distribution(&others, &mut rng).unwrap())
                .collect();
            let v = full_cost(&x, &opps);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / samples as f64;
        let var = (sumsq / samples as f64 - mean * mean).max(0.0);
        let se = (var / samples as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 4.0 * se.max(1e-12),
            "MC {mean} vs exact {exact}, se {se}"
        );
    }
}
