//! Monte Carlo verification of equilibria.
//!
//! The closed-loop state of one player under an affine feedback
//! `alpha(x) = K x + c` is the diffusion
//!
//! ```text
//! dX = ((A - K) X - c) dt + sqrt(2k) dW,
//! ```
//!
//! simulated with fixed-step Euler-Maruyama. Linear dynamics make weak
//! order one sufficient at these scales; exactness is the job of the
//! algebraic oracles, the simulator checks statistics.
//!
//! Reproducibility contract: every path draws from a counter-based
//! stream keyed by `(seed, stream_offset + path index)`, and reductions
//! over paths run in path order, so a report is bit-identical for a
//! fixed `(seed, config, spec)` regardless of how many threads ran the
//! paths.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{self, DistributionDesc, GameSpec, Population, QuadraticForm};
use crate::matalg::{self, SymMatrix};
use crate::solution::QGSolution;
use crate::tol;

/// Affine feedback `alpha(x) = K x + c`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl FeedbackLaw {
    pub fn new(gain: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if gain.nrows() != gain.ncols() || gain.nrows() != offset.len() {
            return Err(Error::DimensionMismatch(
                "feedback gain and offset disagree".into(),
            ));
        }
        Ok(FeedbackLaw { gain, offset })
    }

    /// The equilibrium feedback `K = Lambda/r`, `c = rho/r`.
    pub fn equilibrium(sol: &QGSolution, control_cost: f64) -> Self {
        FeedbackLaw {
            gain: sol.feedback_gain(control_cost),
            offset: sol.feedback_offset(control_cost),
        }
    }

    /// Greatest real part of `spec(A - K)`; admissible iff negative.
    pub fn stability_margin(&self, drift: &DMatrix<f64>) -> f64 {
        (drift - &self.gain)
            .complex_eigenvalues()
            .iter()
            .fold(f64::NEG_INFINITY, |m, l| m.max(l.re))
    }

    pub fn is_admissible(&self, drift: &DMatrix<f64>) -> bool {
        self.stability_margin(drift) < -tol::SIGN_TOL
    }
}

/// Simulation settings.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    /// Time horizon `T`.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: DVector<f64>,
    /// Discounted runs are rejected when `exp(-ell T)` exceeds this.
    pub truncation_guard: f64,
    /// Offset added to the per-path stream index; distinct runs in one
    /// battery use disjoint blocks so their draws are independent.
    pub stream_offset: u64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64, x0: DVector<f64>) -> Self {
        SimConfig {
            dt,
            horizon,
            n_paths,
            seed,
            x0,
            truncation_guard: tol::TRUNCATION_GUARD,
            stream_offset: 0,
        }
    }

    pub fn with_stream_offset(&self, stream_offset: u64) -> Self {
        let mut c = self.clone();
        c.stream_offset = stream_offset;
        c
    }

    fn validate(&self, spec: &GameSpec, law: &FeedbackLaw) -> Result<()> {
        if self.dt <= 0.0 || self.horizon <= 0.0 {
            return Err(Error::InvalidInput(
                "time step and horizon must be positive".into(),
            ));
        }
        if self.n_paths < 2 {
            return Err(Error::InvalidInput("need at least 2 paths".into()));
        }
        if self.x0.len() != spec.dim() {
            return Err(Error::DimensionMismatch(
                "initial state dimension disagrees with the game".into(),
            ));
        }
        let margin = law.stability_margin(&spec.drift);
        if margin >= -tol::SIGN_TOL {
            return Err(Error::NotAdmissible { max_re: margin });
        }
        // Explicit Euler stability guard on the closed-loop drift.
        let radius = (&spec.drift - &law.gain)
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |m, l| m.max(l.norm()));
        let bound = 1.0 / (2.0 * radius.max(1e-12));
        if self.dt >= bound {
            return Err(Error::UnstableStep { dt: self.dt, bound });
        }
        Ok(())
    }
}

/// Empirical moments at the terminal time, with standard errors from
/// path batching.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub mean: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub cov: SymMatrix,
    pub cov_se: DMatrix<f64>,
}

/// One Monte Carlo estimate with its uncertainty and the terminal-moment
/// summaries of the same paths.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub elapsed_ms: u128,
    pub moments: MomentSummary,
    /// Reported truncation-bias bound of a discounted cost estimate.
    pub bias_bound: Option<f64>,
}

/// Which cost functional a run estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    Discounted,
    Ergodic,
}

struct PathOutput {
    terminal: Vec<f64>,
    cost: f64,
    tail_running: f64,
}

/// Euler-Maruyama over one path; the observer accumulates the running
/// cost. The hot loop is allocation-free.
fn run_path(
    f_drift: &DMatrix<f64>,
    offset: &DVector<f64>,
    sqrt2k: f64,
    cfg: &SimConfig,
    n_steps: usize,
    cost_accum: &mut dyn FnMut(usize, &[f64]) -> f64,
    path: usize,
) -> PathOutput {
    let d = cfg.x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream_offset + path as u64);
    let sdt = (cfg.dt).sqrt() * sqrt2k;

    let mut x: Vec<f64> = cfg.x0.as_slice().to_vec();
    let mut fx = vec![0.0; d];
    let mut cost = 0.0;
    let mut tail_running = 0.0;
    let tail_start = n_steps - (n_steps / 10).max(1);

    for step in 0..n_steps {
        let running = cost_accum(step, &x);
        cost += running;
        if step >= tail_start {
            tail_running += running;
        }
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += f_drift[(i, j)] * x[j];
            }
            fx[i] = acc;
        }
        for i in 0..d {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            x[i] += cfg.dt * (fx[i] - offset[i]) + sdt * z;
        }
    }
    PathOutput {
        terminal: x,
        cost,
        tail_running: tail_running / (n_steps - tail_start) as f64,
    }
}

fn moment_summary(terminals: &[Vec<f64>], d: usize) -> MomentSummary {
    let n = terminals.len();
    let nf = n as f64;
    let mut mean = DVector::zeros(d);
    for t in terminals {
        for i in 0..d {
            mean[i] += t[i];
        }
    }
    mean /= nf;

    let mut cov = DMatrix::zeros(d, d);
    let mut mean_var = DVector::zeros(d);
    for t in terminals {
        for i in 0..d {
            let di = t[i] - mean[i];
            mean_var[i] += di * di;
            for j in 0..d {
                cov[(i, j)] += di * (t[j] - mean[j]);
            }
        }
    }
    let cov = cov / (nf - 1.0);
    let mean_se = DVector::from_iterator(d, (0..d).map(|i| (mean_var[i] / (nf - 1.0) / nf).sqrt()));

    // Covariance standard errors from disjoint path batches.
    let n_batches = 32.min(n / 2).max(2);
    let batch_size = n / n_batches;
    let mut batch_covs: Vec<DMatrix<f64>> = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let chunk = &terminals[b * batch_size..(b + 1) * batch_size];
        let bn = chunk.len() as f64;
        let mut bmean = vec![0.0; d];
        for t in chunk {
            for i in 0..d {
                bmean[i] += t[i];
            }
        }
        for m in bmean.iter_mut() {
            *m /= bn;
        }
        let mut bc = DMatrix::zeros(d, d);
        for t in chunk {
            for i in 0..d {
                for j in 0..d {
                    bc[(i, j)] += (t[i] - bmean[i]) * (t[j] - bmean[j]);
                }
            }
        }
        batch_covs.push(bc / (bn - 1.0));
    }
    let mut cov_se = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let vals: Vec<f64> = batch_covs.iter().map(|c| c[(i, j)]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
            cov_se[(i, j)] = (var / vals.len() as f64).sqrt();
        }
    }

    MomentSummary {
        mean,
        mean_se,
        cov: SymMatrix::symmetrize(cov),
        cov_se,
    }
}

fn collect_paths(
    spec: &GameSpec,
    law: &FeedbackLaw,
    cfg: &SimConfig,
    per_step: impl Fn(usize, &[f64]) -> f64 + Sync,
) -> Vec<PathOutput> {
    let f_drift = &spec.drift - &law.gain;
    let sqrt2k = (2.0 * spec.noise).sqrt();
    let n_steps = (cfg.horizon / cfg.dt).round() as usize;

    (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut accum = |step: usize, x: &[f64]| per_step(step, x);
            run_path(&f_drift, &law.offset, sqrt2k, cfg, n_steps, &mut accum, path)
        })
        .collect()
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Simulates the closed loop and reports terminal moments. The scalar
/// `estimate` is the mean squared norm of the terminal state.
pub fn simulate_closed_loop(
    spec: &GameSpec,
    law: &FeedbackLaw,
    cfg: &SimConfig,
) -> Result<SimReport> {
    cfg.validate(spec, law)?;
    let start = Instant::now();
    let outputs = collect_paths(spec, law, cfg, |_, _| 0.0);
    let d = spec.dim();
    let (estimate, std_error) = mean_and_se(
        outputs
            .iter()
            .map(|o| o.terminal.iter().map(|v| v * v).sum::<f64>()),
        outputs.len(),
    );
    let terminals: Vec<Vec<f64>> = outputs.into_iter().map(|o| o.terminal).collect();
    Ok(SimReport {
        estimate,
        std_error,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        elapsed_ms: start.elapsed().as_millis(),
        moments: moment_summary(&terminals, d),
        bias_bound: None,
    })
}

/// The running-cost quadratic form of one player with the opponents'
/// law frozen: `r |alpha(x)|^2 / 2 + f_i(x; others)`.
fn running_cost_form(
    spec: &GameSpec,
    player: usize,
    others: &DistributionDesc,
) -> Result<QuadraticForm> {
    match &spec.population {
        Population::Finite { n, cost } => game::fi_quadratic(cost, *n, player, others),
        Population::MeanField { cost } => game::vhat_quadratic(cost, others),
    }
}

/// Monte Carlo estimate of one player's cost under `law`, with every
/// opponent's stationary law frozen at `others`.
///
/// Discounted mode integrates `exp(-ell t) (r |alpha|^2/2 + f_i)` to the
/// horizon and reports the truncation-bias bound
/// `exp(-ell T) * (tail running cost) / ell`; ergodic mode averages the
/// running cost over `[T/2, T]`.
pub fn estimate_cost(
    spec: &GameSpec,
    law: &FeedbackLaw,
    others: &DistributionDesc,
    player: usize,
    cfg: &SimConfig,
    mode: CostMode,
) -> Result<SimReport> {
    cfg.validate(spec, law)?;
    let start = Instant::now();
    let ell = spec.discount;
    if mode == CostMode::Discounted {
        if ell <= 0.0 {
            return Err(Error::InvalidInput(
                "discounted cost needs a positive discount".into(),
            ));
        }
        let tail = (-ell * cfg.horizon).exp();
        if tail > cfg.truncation_guard {
            return Err(Error::TruncationTooCoarse {
                tail,
                guard: cfg.truncation_guard,
            });
        }
    }

    let fi = running_cost_form(spec, player, others)?;
    let r = spec.control_cost;
    let gain = law.gain.clone();
    let offset = law.offset.clone();
    let d = spec.dim();
    let n_steps = (cfg.horizon / cfg.dt).round() as usize;
    let half_step = n_steps / 2;
    let dt = cfg.dt;

    let per_step = move |step: usize, x: &[f64]| {
        let mut alpha_sq = 0.0;
        for i in 0..d {
            let mut a = offset[i];
            for j in 0..d {
                a += gain[(i, j)] * x[j];
            }
            alpha_sq += a * a;
        }
        let running = 0.5 * r * alpha_sq + fi.eval_slice(x);
        match mode {
            CostMode::Discounted => (-ell * (step as f64) * dt).exp() * running * dt,
            CostMode::Ergodic => {
                if step >= half_step {
                    running * dt
                } else {
                    0.0
                }
            }
        }
    };

    let outputs = collect_paths(spec, law, cfg, per_step);
    let normalizer = match mode {
        CostMode::Discounted => 1.0,
        CostMode::Ergodic => 1.0 / (cfg.horizon - half_step as f64 * dt),
    };
    let (estimate, std_error) = mean_and_se(
        outputs.iter().map(|o| o.cost * normalizer),
        outputs.len(),
    );
    let bias_bound = match mode {
        CostMode::Discounted => {
            let tail_mean =
                outputs.iter().map(|o| o.tail_running / dt).sum::<f64>() / outputs.len() as f64;
            Some((-ell * cfg.horizon).exp() * tail_mean.abs() / ell)
        }
        CostMode::Ergodic => None,
    };
    let terminals: Vec<Vec<f64>> = outputs.into_iter().map(|o| o.terminal).collect();
    Ok(SimReport {
        estimate,
        std_error,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        elapsed_ms: start.elapsed().as_millis(),
        moments: moment_summary(&terminals, d),
        bias_bound,
    })
}

/// Outcome of one unilateral deviation against the equilibrium.
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub deviation_cost: f64,
    pub deviation_se: f64,
    pub equilibrium_cost: f64,
    pub equilibrium_se: f64,
    /// `deviation - equilibrium`; the equilibrium is optimal, so this
    /// should not be significantly negative.
    pub gap: f64,
    pub pooled_se: f64,
    /// `gap >= -3 pooled_se`.
    pub pass: bool,
}

/// Tests the Nash property by Monte Carlo: each deviation of one player
/// is priced against the equilibrium feedback with every opponent frozen
/// at the equilibrium law. Runs use disjoint random streams and the gap
/// is judged against the pooled standard error.
pub fn nash_deviation_test(
    spec: &GameSpec,
    equilibrium: &QGSolution,
    deviations: &[FeedbackLaw],
    cfg: &SimConfig,
) -> Result<Vec<DeviationReport>> {
    let others = equilibrium.stationary_law();
    let mode = if spec.discount > 0.0 {
        CostMode::Discounted
    } else {
        CostMode::Ergodic
    };
    let eq_law = FeedbackLaw::equilibrium(equilibrium, spec.control_cost);
    let block = 1u64 << 32;
    let base = estimate_cost(spec, &eq_law, &others, 0, &cfg.with_stream_offset(0), mode)?;

    let mut out = Vec::with_capacity(deviations.len());
    for (idx, law) in deviations.iter().enumerate() {
        let cfg_i = cfg.with_stream_offset((idx as u64 + 1) * block);
        let rep = estimate_cost(spec, law, &others, 0, &cfg_i, mode)?;
        let gap = rep.estimate - base.estimate;
        let pooled_se = (rep.std_error.powi(2) + base.std_error.powi(2)).sqrt();
        out.push(DeviationReport {
            deviation_cost: rep.estimate,
            deviation_se: rep.std_error,
            equilibrium_cost: base.estimate,
            equilibrium_se: base.std_error,
            gap,
            pooled_se,
            pass: gap >= -3.0 * pooled_se,
        });
    }
    Ok(out)
}

/// Writes simulated paths as CSV rows `(t, path, x_0, .., x_{d-1})`,
/// sampling every `stride` steps. Single-threaded on purpose: the dump
/// order is part of the output.
pub fn dump_paths_csv<W: Write>(
    spec: &GameSpec,
    law: &FeedbackLaw,
    cfg: &SimConfig,
    stride: usize,
    writer: &mut W,
) -> Result<()> {
    cfg.validate(spec, law)?;
    let d = spec.dim();
    let f_drift = &spec.drift - &law.gain;
    let sqrt2k = (2.0 * spec.noise).sqrt();
    let n_steps = (cfg.horizon / cfg.dt).round() as usize;
    let stride = stride.max(1);

    write!(writer, "t,path")?;
    for i in 0..d {
        write!(writer, ",x{i}")?;
    }
    writeln!(writer)?;
    for path in 0..cfg.n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stream_offset + path as u64);
        let sdt = cfg.dt.sqrt() * sqrt2k;
        let mut x = cfg.x0.clone();
        for step in 0..=n_steps {
            if step % stride == 0 {
                write!(writer, "{:.6},{path}", step as f64 * cfg.dt)?;
                for i in 0..d {
                    write!(writer, ",{:.17e}", x[i])?;
                }
                writeln!(writer)?;
            }
            if step == n_steps {
                break;
            }
            let fx = &f_drift * &x;
            for i in 0..d {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                x[i] += cfg.dt * (fx[i] - law.offset[i]) + sdt * z;
            }
        }
    }
    Ok(())
}

/// Stationary-moment check: componentwise gap between the empirical
/// terminal moments and the claimed Gaussian, in units of the batched
/// standard errors. Returns the largest multiple observed.
pub fn moment_match_sigmas(report: &SimReport, sol: &QGSolution) -> Result<f64> {
    let d = sol.dim();
    let cov = sol.inv_cov.try_inverse()?;
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let se = report.moments.mean_se[i].max(1e-12);
        worst = worst.max((report.moments.mean[i] - sol.mean[i]).abs() / se);
        for j in 0..d {
            let se = report.moments.cov_se[(i, j)].max(1e-12);
            let gap = (report.moments.cov.as_matrix()[(i, j)] - cov.as_matrix()[(i, j)]).abs();
            worst = worst.max(gap / se);
        }
    }
    Ok(worst)
}

/// Standard battery of six unilateral deviations around the equilibrium:
/// gain shifts of +/-0.1 and +/-0.5 on every coordinate and offset
/// shifts of +/-0.5.
pub fn standard_deviation_battery(
    equilibrium: &QGSolution,
    spec: &GameSpec,
) -> Result<Vec<FeedbackLaw>> {
    let eq = FeedbackLaw::equilibrium(equilibrium, spec.control_cost);
    let d = spec.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    let ones = DVector::from_element(d, 1.0);
    let mut out = Vec::new();
    for shift in [0.1, -0.1, 0.5, -0.5] {
        let law = FeedbackLaw::new(&eq.gain + shift * &eye, eq.offset.clone())?;
        if !law.is_admissible(&spec.drift) {
            return Err(Error::NotAdmissible {
                max_re: law.stability_margin(&spec.drift),
            });
        }
        out.push(law);
    }
    for shift in [0.5, -0.5] {
        out.push(FeedbackLaw::new(
            eq.gain.clone(),
            &eq.offset + shift * &ones,
        )?);
    }
    Ok(out)
}

/// Scalar discounted cost of an affine law on a decoupled
/// Ornstein-Uhlenbeck instance, in closed form; test oracle for the
/// Monte Carlo estimator. Requires `A = a`, gain `kap`, offset `0`,
/// start at `x0`, running cost `(r kap^2/2 + q) x^2`.
pub fn scalar_ou_discounted_cost(
    a: f64,
    kap: f64,
    k: f64,
    r: f64,
    q: f64,
    ell: f64,
    x0: f64,
) -> f64 {
    // dX = -(kap - a) X dt + sqrt(2k) dW, E X_t^2 = x0^2 e^{-2bt} + (k/b)(1 - e^{-2bt})
    // with b = kap - a > 0; integrate (r kap^2/2 + q) E X_t^2 e^{-ell t}.
    let b = kap - a;
    let weight = 0.5 * r * kap * kap + q;
    let stat = k / b;
    weight * (stat / ell + (x0 * x0 - stat) / (ell + 2.0 * b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discounted::solve_discounted;
    use crate::ergodic::solve_ergodic;
    use crate::game::CostStructure;

    fn scalar_spec(k: f64, r: f64, a: f64, q: f64, ell: f64) -> GameSpec {
        let cost =
            CostStructure::decoupled(SymMatrix::scaled_identity(1, q), DVector::zeros(1));
        GameSpec::new(
            DMatrix::from_element(1, 1, a),
            k,
            r,
            ell,
            Population::Finite { n: 1, cost },
        )
        .unwrap()
    }

    #[test]
    fn rejects_inadmissible_law() {
        let spec = scalar_spec(1.0, 1.0, 1.0, 0.5, 0.0);
        // A - K = +1: unstable.
        let law = FeedbackLaw::new(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let cfg = SimConfig::new(1e-3, 5.0, 4, 1, DVector::zeros(1));
        assert!(matches!(
            simulate_closed_loop(&spec, &law, &cfg),
            Err(Error::NotAdmissible { .. })
        ));
    }

    #[test]
    fn rejects_unstable_step() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5, 0.0);
        let law = FeedbackLaw::new(DMatrix::from_element(1, 1, 4.0), DVector::zeros(1)).unwrap();
        let cfg = SimConfig::new(0.2, 5.0, 4, 1, DVector::zeros(1));
        assert!(matches!(
            simulate_closed_loop(&spec, &law, &cfg),
            Err(Error::UnstableStep { .. })
        ));
    }

    #[test]
    fn stationary_moments_match_equilibrium_law() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5, 0.0);
        let sol = solve_ergodic(&spec).unwrap();
        let law = FeedbackLaw::equilibrium(&sol, 1.0);
        assert!((law.gain[(0, 0)] - 1.0).abs() < 1e-12);
        let cfg = SimConfig::new(1e-2, 50.0, 4000, 42, DVector::zeros(1));
        let rep = simulate_closed_loop(&spec, &law, &cfg).unwrap();
        // Stationary law is N(0, 1).
        assert!(rep.moments.mean[0].abs() < 4.0 * rep.moments.mean_se[0]);
        let sigmas = moment_match_sigmas(&rep, &sol).unwrap();
        assert!(sigmas < 4.0, "moment gap {sigmas} sigmas");
    }

    #[test]
    fn zero_noise_paths_reach_fixed_point() {
        let spec = scalar_spec(0.0, 1.0, 0.0, 0.5, 0.0);
        // dX = -(X - 2) dt: fixed point at 2 (gain 1, offset -2).
        let law = FeedbackLaw::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -2.0),
        )
        .unwrap();
        let cfg = SimConfig::new(1e-3, 30.0, 2, 7, DVector::from_element(1, -1.0));
        let rep = simulate_closed_loop(&spec, &law, &cfg).unwrap();
        assert!((rep.moments.mean[0] - 2.0).abs() < 1e-6);
        assert!(rep.moments.cov.as_matrix()[(0, 0)].abs() < 1e-18);
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5, 0.2);
        let sol = solve_discounted(&spec).unwrap();
        let law = FeedbackLaw::equilibrium(&sol, 1.0);
        let others = sol.stationary_law();
        let mut cfg = SimConfig::new(1e-2, 60.0, 500, 9, DVector::zeros(1));
        cfg.truncation_guard = 1e-4;
        let a = estimate_cost(&spec, &law, &others, 0, &cfg, CostMode::Discounted).unwrap();
        let b = estimate_cost(&spec, &law, &others, 0, &cfg, CostMode::Discounted).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn discounted_cost_matches_ou_oracle() {
        // Zero state cost via q = 0 (assumption validation is not in the
        // simulator's path, so the degenerate instance is allowed here).
        let (k, r, a, ell) = (1.0, 1.0, 0.0, 0.4);
        let spec = scalar_spec(k, r, a, 0.0, ell);
        let kap = 1.2;
        let law =
            FeedbackLaw::new(DMatrix::from_element(1, 1, kap), DVector::zeros(1)).unwrap();
        let others = DistributionDesc::Dirac {
            point: DVector::zeros(1),
        };
        let mut cfg = SimConfig::new(1e-3, 40.0, 4000, 11, DVector::zeros(1));
        cfg.truncation_guard = 1e-6;
        let rep = estimate_cost(&spec, &law, &others, 0, &cfg, CostMode::Discounted).unwrap();
        let oracle = scalar_ou_discounted_cost(a, kap, k, r, 0.0, ell, 0.0);
        assert!(
            (rep.estimate - oracle).abs() <= 3.0 * rep.std_error,
            "MC {} vs oracle {oracle} (se {})",
            rep.estimate,
            rep.std_error
        );
        assert!(rep.bias_bound.unwrap() < 1e-4);
    }

    #[test]
    fn truncation_guard_fires() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5, 0.2);
        let sol = solve_discounted(&spec).unwrap();
        let law = FeedbackLaw::equilibrium(&sol, 1.0);
        let others = sol.stationary_law();
        let cfg = SimConfig::new(1e-2, 20.0, 4, 3, DVector::zeros(1));
        // exp(-0.2 * 20) = 1.8e-2 > 1e-6.
        assert!(matches!(
            estimate_cost(&spec, &law, &others, 0, &cfg, CostMode::Discounted),
            Err(Error::TruncationTooCoarse { .. })
        ));
    }

    #[test]
    fn deviation_battery_is_not_improving() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5, 0.2);
        let sol = solve_discounted(&spec).unwrap();
        let mut cfg = SimConfig::new(2e-3, 60.0, 1500, 17, DVector::zeros(1));
        cfg.truncation_guard = 1e-4;
        let battery = standard_deviation_battery(&sol, &spec).unwrap();
        let reports = nash_deviation_test(&spec, &sol, &battery, &cfg).unwrap();
        assert_eq!(reports.len(), 6);
        for rep in &reports {
            assert!(
                rep.pass,
                "deviation improved beyond noise: gap {} (se {})",
                rep.gap, rep.pooled_se
            );
        }
        // The strong gain deviations must hurt visibly.
        assert!(reports[2].gap > 3.0 * reports[2].pooled_se);
        assert!(reports[3].gap > 3.0 * reports[3].pooled_se);
    }

    #[test]
    fn path_dump_has_expected_shape() {
        let spec = scalar_spec(1.0, 1.0, 0.0, 0.5, 0.0);
        let sol = solve_ergodic(&spec).unwrap();
        let law = FeedbackLaw::equilibrium(&sol, 1.0);
        let cfg = SimConfig::new(1e-2, 0.1, 3, 5, DVector::zeros(1));
        let mut buf = Vec::new();
        dump_paths_csv(&spec, &law, &cfg, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,path,x0");
        // 10 steps, stride 5: rows at steps 0, 5, 10 per path.
        assert_eq!(lines.len(), 1 + 3 * 3);
    }
}
