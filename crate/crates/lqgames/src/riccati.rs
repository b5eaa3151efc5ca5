//! Algebraic Riccati equations through invariant graph subspaces.
//!
//! The equation solved here is
//!
//! ```text
//! Y R Y + Y A + A^T Y - Q = 0
//! ```
//!
//! with `R` symmetric positive definite and `Q` symmetric. Solutions are
//! in one-to-one correspondence with d-dimensional invariant subspaces of
//! the 2d x 2d Hamiltonian matrix `H = [[A, R], [Q, -A^T]]` that are
//! graphs over the top block: if the subspace is spanned by the columns of
//! `[Xi_top; Xi_bot]` with `Xi_top` invertible then `Y = Xi_bot *
//! Xi_top^{-1}` solves the equation. The selected solution is the one
//! whose closed-loop matrix `A + R Y` carries exactly the
//! positive-half-plane spectrum of `H`; it exists and is unique whenever
//! `H` has no purely imaginary nonzero eigenvalues and the selected
//! eigenvectors form a graph basis.
//!
//! Dimensions are small by design, so eigenspaces are built directly from
//! SVD null spaces of shifted copies of `H`, complex-conjugate pairs are
//! folded into real two-column blocks, and every candidate is
//! residual-certified (with a couple of Newton correction steps when the
//! raw subspace basis leaves residual on the table).

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matalg::{self, spec_norm, SymMatrix};
use crate::tol;

/// Coefficients of `Y R Y + Y A + A^T Y - Q = 0`.
#[derive(Debug, Clone)]
pub struct AREProblem {
    /// Linear coefficient `A` (any square matrix).
    pub a: DMatrix<f64>,
    /// Quadratic coefficient `R`, symmetric positive definite.
    pub r: SymMatrix,
    /// Constant term `Q`, symmetric.
    pub q: SymMatrix,
}

impl AREProblem {
    pub fn new(a: DMatrix<f64>, r: SymMatrix, q: SymMatrix) -> Result<Self> {
        let d = r.dim();
        if a.nrows() != d || a.ncols() != d || q.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "ARE blocks disagree: A is {}x{}, R is {}, Q is {}",
                a.nrows(),
                a.ncols(),
                d,
                q.dim()
            )));
        }
        if !matalg::inertia(&r, tol::SIGN_TOL).is_positive_definite() {
            return Err(Error::NotSpd {
                min_eig: r.min_eigenvalue(),
                tol: tol::SIGN_TOL,
            });
        }
        Ok(AREProblem { a, r, q })
    }

    pub fn dim(&self) -> usize {
        self.r.dim()
    }

    /// Residual `Y R Y + Y A + A^T Y - Q`, symmetrized.
    pub fn residual(&self, y: &SymMatrix) -> SymMatrix {
        let ym = y.as_matrix();
        SymMatrix::symmetrize(
            ym * self.r.as_matrix() * ym + ym * &self.a + self.a.transpose() * ym
                - self.q.as_matrix(),
        )
    }

    pub fn residual_norm(&self, y: &SymMatrix) -> f64 {
        spec_norm(&self.residual(y))
    }

    /// Closed-loop matrix `A + R Y`.
    pub fn closed_loop(&self, y: &SymMatrix) -> DMatrix<f64> {
        &self.a + self.r.as_matrix() * y.as_matrix()
    }
}

/// Eigenvalue summary of a Hamiltonian matrix.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// All eigenvalues, sorted by real part then imaginary part.
    pub eigenvalues: Vec<Complex<f64>>,
    /// True when some eigenvalue is purely imaginary and nonzero at the
    /// tolerance (`|Re| <= tol` and `|Im| > tol`).
    pub has_imaginary: bool,
    /// Least real part among eigenvalues with `Re > tol`; `None` when the
    /// open right half plane is empty.
    pub min_pos: Option<f64>,
    /// True when every eigenvalue satisfies `|Im| <= tol`.
    pub all_real: bool,
}

/// Block Hamiltonian `[[A, R], [Q, -A^T]]`.
pub fn build_hamiltonian(p: &AREProblem) -> DMatrix<f64> {
    let d = p.dim();
    let mut h = DMatrix::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(&p.a);
    h.view_mut((0, d), (d, d)).copy_from(p.r.as_matrix());
    h.view_mut((d, 0), (d, d)).copy_from(p.q.as_matrix());
    h.view_mut((d, d), (d, d)).copy_from(&(-p.a.transpose()));
    h
}

/// Classifies the spectrum of a (Hamiltonian) matrix with the given sign
/// tolerance. Zero eigenvalues do not count as purely imaginary.
pub fn classify_spectrum(h: &DMatrix<f64>, tol: f64) -> SpectrumReport {
    assert!(tol > 0.0, "classification tolerance must be positive");
    let mut eigenvalues: Vec<Complex<f64>> = h.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let has_imaginary = eigenvalues
        .iter()
        .any(|l| l.re.abs() <= tol && l.im.abs() > tol);
    let min_pos = eigenvalues
        .iter()
        .filter(|l| l.re > tol)
        .map(|l| l.re)
        .fold(None, |acc: Option<f64>, re| {
            Some(acc.map_or(re, |a| a.min(re)))
        });
    let all_real = eigenvalues.iter().all(|l| l.im.abs() <= tol);
    SpectrumReport {
        eigenvalues,
        has_imaginary,
        min_pos,
        all_real,
    }
}

/// One real eigenvalue or one complex-conjugate pair of the Hamiltonian,
/// together with a real basis of the associated invariant subspace.
#[derive(Debug, Clone)]
struct SpectralUnit {
    /// Representative eigenvalue; `im == 0` for real units, `im > 0` for
    /// conjugate pairs.
    eig: Complex<f64>,
    /// Real basis columns (one per eigenvalue counted with multiplicity,
    /// so a pair of multiplicity m contributes 2m columns).
    cols: DMatrix<f64>,
    /// Algebraic multiplicity of the representative.
    mult: usize,
}

impl SpectralUnit {
    fn width(&self) -> usize {
        self.cols.ncols()
    }

    /// Eigenvalues carried by this unit, with multiplicity.
    fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let mut out = Vec::new();
        for _ in 0..self.mult {
            out.push(self.eig);
            if self.eig.im != 0.0 {
                out.push(self.eig.conj());
            }
        }
        out
    }
}

/// Null-space basis of `b` of expected dimension `want`, from the right
/// singular vectors of the smallest singular values.
fn null_space(b: &DMatrix<f64>, want: usize, thresh: f64) -> Option<DMatrix<f64>> {
    let n = b.nrows();
    let svd = b.clone().svd(false, true);
    let v_t = svd.v_t.as_ref()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    // The `want` smallest singular values must be below the threshold and
    // the next one above it, otherwise the numerical rank is ambiguous.
    if svd.singular_values[order[want - 1]] > thresh {
        return None;
    }
    if want < n && svd.singular_values[order[want]] <= thresh {
        return None;
    }
    let mut basis = DMatrix::zeros(n, want);
    for (k, &i) in order.iter().take(want).enumerate() {
        basis.set_column(k, &v_t.row(i).transpose());
    }
    Some(basis)
}

/// Splits the spectrum of `h` into real eigenvalues and conjugate pairs
/// (clustered at `cluster_tol`, relative to the norm of `h`) and builds a
/// real eigenspace basis for each. Fails when some eigenvalue is
/// defective or the clustering is ambiguous.
fn spectral_units(h: &DMatrix<f64>, cluster_tol: f64) -> Result<Vec<SpectralUnit>> {
    let n = h.nrows();
    let scale = 1.0 + matalg::spec_norm_general(h);
    let ctol = cluster_tol * scale;
    let eigs = h.complex_eigenvalues();

    let mut reals: Vec<f64> = Vec::new();
    let mut uppers: Vec<Complex<f64>> = Vec::new();
    let mut lowers = 0usize;
    for l in eigs.iter() {
        if l.im.abs() <= ctol {
            reals.push(l.re);
        } else if l.im > 0.0 {
            uppers.push(*l);
        } else {
            lowers += 1;
        }
    }
    if uppers.len() != lowers {
        return Err(Error::DegenerateSpectrum(
            "complex eigenvalues do not pair up into conjugates".into(),
        ));
    }

    let mut units = Vec::new();

    reals.sort_by(|a, b| a.total_cmp(b));
    let mut i = 0;
    while i < reals.len() {
        let mut j = i + 1;
        while j < reals.len() && reals[j] - reals[j - 1] <= ctol {
            j += 1;
        }
        let mult = j - i;
        let lambda = reals[i..j].iter().sum::<f64>() / mult as f64;
        let shifted = h - DMatrix::from_diagonal_element(n, n, lambda);
        let basis = null_space(&shifted, mult, 2.0 * ctol).ok_or_else(|| {
            Error::DegenerateSpectrum(format!(
                "eigenvalue {lambda:.6e} of multiplicity {mult} has no full eigenspace"
            ))
        })?;
        units.push(SpectralUnit {
            eig: Complex::new(lambda, 0.0),
            cols: basis,
            mult,
        });
        i = j;
    }

    uppers.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut i = 0;
    while i < uppers.len() {
        let mut j = i + 1;
        while j < uppers.len() && (uppers[j] - uppers[j - 1]).norm() <= ctol {
            j += 1;
        }
        let mult = j - i;
        let sum: Complex<f64> = uppers[i..j].iter().sum();
        let rep = sum / mult as f64;
        // Real invariant subspace of the pair a +/- b i is the null space
        // of (H - aI)^2 + b^2 I, of dimension 2 * mult.
        let shifted = h - DMatrix::from_diagonal_element(n, n, rep.re);
        let quad = &shifted * &shifted + DMatrix::from_diagonal_element(n, n, rep.im * rep.im);
        let basis = null_space(&quad, 2 * mult, 4.0 * ctol * scale).ok_or_else(|| {
            Error::DegenerateSpectrum(format!(
                "conjugate pair {:.6e} +/- {:.6e} i of multiplicity {mult} has no full eigenspace",
                rep.re, rep.im
            ))
        })?;
        units.push(SpectralUnit {
            eig: rep,
            cols: basis,
            mult,
        });
        i = j;
    }

    let total: usize = units.iter().map(|u| u.width()).sum();
    if total != n {
        return Err(Error::DegenerateSpectrum(format!(
            "eigenspace bases span dimension {total} instead of {n}"
        )));
    }
    units.sort_by(|a, b| a.eig.re.total_cmp(&b.eig.re).then(a.eig.im.total_cmp(&b.eig.im)));
    Ok(units)
}

/// Extracts `Y = Xi_bot * Xi_top^{-1}` from stacked basis columns, or
/// `None` when the top block fails the graph condition or the result is
/// far from symmetric.
fn graph_solution(xi: &DMatrix<f64>, d: usize) -> Option<DMatrix<f64>> {
    let top = xi.view((0, 0), (d, d)).into_owned();
    let bot = xi.view((d, 0), (d, d)).into_owned();
    if matalg::cond_2(&top) > tol::GRAPH_COND_LIMIT {
        return None;
    }
    let top_inv = top.try_inverse()?;
    let y = bot * top_inv;
    let asym = (&y - y.transpose()).amax();
    if asym > 1e-6 * (1.0 + y.amax()) {
        return None;
    }
    Some(y)
}

/// A couple of Newton steps on the Riccati residual. Each step solves
/// `E*Phi + Phi^T*E = -residual` with `Phi = A + R*Y`; steps that do not
/// improve the residual are discarded.
fn newton_polish(p: &AREProblem, y: SymMatrix, max_steps: usize) -> SymMatrix {
    let mut best = y;
    let mut best_res = p.residual_norm(&best);
    for _ in 0..max_steps {
        if best_res <= 1e-14 * (1.0 + spec_norm(&p.q)) {
            break;
        }
        let phi = p.closed_loop(&best);
        let rhs = -p.residual(&best).into_inner();
        let Some(e) = matalg::solve_sym_sylvester(&phi, &rhs) else {
            break;
        };
        let candidate = SymMatrix::symmetrize(best.as_matrix() + e);
        let res = p.residual_norm(&candidate);
        if res < best_res {
            best = candidate;
            best_res = res;
        } else {
            break;
        }
    }
    best
}

/// Computes the unique symmetric solution whose closed-loop spectrum is
/// the positive-half-plane spectrum of the Hamiltonian.
///
/// Certified on exit: the Riccati residual is at most
/// `1e-10 * (1 + |Q|)` and the eigenvalues of `A + R Y` match the
/// selected Hamiltonian eigenvalues within `1e-8`.
pub fn solve_are_selected(p: &AREProblem) -> Result<SymMatrix> {
    let d = p.dim();
    let h = build_hamiltonian(p);
    let report = classify_spectrum(&h, tol::SIGN_TOL);
    if report.has_imaginary {
        return Err(Error::ImaginaryEigenvalues);
    }
    let units = spectral_units(&h, tol::EIG_CLUSTER_TOL).map_err(|e| match e {
        Error::DegenerateSpectrum(msg) => Error::NoSymmetricSolution(msg),
        other => other,
    })?;

    let selected: Vec<&SpectralUnit> = units
        .iter()
        .filter(|u| u.eig.re > tol::SIGN_TOL)
        .collect();
    let width: usize = selected.iter().map(|u| u.width()).sum();
    if width != d {
        return Err(Error::NoSymmetricSolution(format!(
            "eigenvectors with positive real part span dimension {width} instead of {d}"
        )));
    }

    let mut xi = DMatrix::zeros(2 * d, d);
    let mut col = 0;
    let mut selected_eigs = Vec::new();
    for u in &selected {
        xi.view_mut((0, col), (2 * d, u.width())).copy_from(&u.cols);
        col += u.width();
        selected_eigs.extend(u.eigenvalues());
    }

    let y = graph_solution(&xi, d).ok_or_else(|| {
        Error::NoSymmetricSolution(
            "selected invariant subspace is not a graph over the state space".into(),
        )
    })?;
    let y = newton_polish(p, SymMatrix::symmetrize(y), 3);

    let bound = tol::ARE_SELECTED_REL * (1.0 + spec_norm(&p.q));
    let residual = p.residual_norm(&y);
    if residual > bound {
        return Err(Error::Certification {
            what: "selected Riccati solution",
            residual,
            bound,
        });
    }

    // Spectrum certificate: spec(A + R Y) must equal the selected
    // eigenvalues of the Hamiltonian.
    let mut closed: Vec<Complex<f64>> = p
        .closed_loop(&y)
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect();
    closed.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    selected_eigs.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mismatch = closed
        .iter()
        .zip(selected_eigs.iter())
        .map(|(c, s)| (c - s).norm())
        .fold(0.0, f64::max);
    if mismatch > tol::SPECTRUM_MATCH_TOL {
        return Err(Error::Certification {
            what: "closed-loop spectrum selection",
            residual: mismatch,
            bound: tol::SPECTRUM_MATCH_TOL,
        });
    }

    Ok(y)
}

/// Lexicographically ordered combinations of unit indices whose widths
/// sum to `d`.
fn subsets_with_width(widths: &[usize], d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(
        widths: &[usize],
        start: usize,
        remaining: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            out.push(current.clone());
            return;
        }
        for i in start..widths.len() {
            if widths[i] <= remaining {
                current.push(i);
                rec(widths, i + 1, remaining - widths[i], current, out);
                current.pop();
            }
        }
    }
    rec(widths, 0, d, &mut current, &mut out);
    out
}

/// Enumerates every symmetric solution reachable through graph subspaces
/// spanned by d-subsets of Hamiltonian eigenvectors.
///
/// Requires distinct eigenvalues (complex pairs count as one atomic
/// two-column block); repeated eigenvalues are reported as
/// [`Error::DegenerateSpectrum`] instead of being resolved arbitrarily.
/// Each returned solution is certified to residual
/// `1e-9 * (1 + |Q|)`. The list is ordered lexicographically by the
/// eigenvector subset that produced each solution.
pub fn enumerate_symmetric_solutions(
    p: &AREProblem,
    dim_limit: usize,
) -> Result<Vec<SymMatrix>> {
    let d = p.dim();
    if d > dim_limit {
        return Err(Error::DimensionTooLarge {
            dim: d,
            limit: dim_limit,
        });
    }
    let h = build_hamiltonian(p);
    let units = spectral_units(&h, tol::EIG_CLUSTER_TOL)?;
    if units.iter().any(|u| u.mult > 1) {
        return Err(Error::DegenerateSpectrum(
            "repeated eigenvalues; subset enumeration is not well defined".into(),
        ));
    }

    let widths: Vec<usize> = units.iter().map(|u| u.width()).collect();
    let subsets = subsets_with_width(&widths, d);
    let bound = tol::ARE_ENUMERATED_REL * (1.0 + spec_norm(&p.q));

    let mut out = Vec::new();
    for subset in subsets {
        let mut xi = DMatrix::zeros(2 * d, d);
        let mut col = 0;
        for &ui in &subset {
            let w = units[ui].width();
            xi.view_mut((0, col), (2 * d, w)).copy_from(&units[ui].cols);
            col += w;
        }
        let Some(y) = graph_solution(&xi, d) else {
            continue;
        };
        let y = newton_polish(p, SymMatrix::symmetrize(y), 2);
        if p.residual_norm(&y) <= bound {
            out.push(y);
        }
    }
    Ok(out)
}

/// Result of the Riccati-Sylvester property check.
#[derive(Debug, Clone)]
pub struct RiccatiSylvesterReport {
    /// True when every symmetric positive definite Riccati solution also
    /// satisfies the companion Sylvester equation within `tol`.
    pub holds: bool,
    /// Max-entry Sylvester residual of each positive definite solution.
    pub residuals: Vec<f64>,
    /// Number of positive definite solutions found by enumeration.
    pub spd_solution_count: usize,
    pub tol: f64,
}

/// Checks the Riccati-Sylvester property of `(A, N, R, Q)`: every
/// symmetric positive definite solution of
///
/// ```text
/// Y (N R N / 2) Y = A^T R A / 2 + Q
/// ```
///
/// must also satisfy `Y N R - R N Y = R A - A^T R` within `tol`.
/// Solutions are produced by [`enumerate_symmetric_solutions`] on the
/// equivalent problem with zero linear term.
pub fn riccati_sylvester_check(
    a: &SymMatrix,
    nu: &SymMatrix,
    r: &SymMatrix,
    q: &SymMatrix,
    tol_check: f64,
) -> Result<RiccatiSylvesterReport> {
    let d = a.dim();
    for (name, m) in [("N", nu), ("R", r), ("Q", q)] {
        if m.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "{name} has dimension {} but A has {d}",
                m.dim()
            )));
        }
        if !matalg::inertia(m, tol::SIGN_TOL).is_positive_definite() {
            return Err(Error::NotSpd {
                min_eig: m.min_eigenvalue(),
                tol: tol::SIGN_TOL,
            });
        }
    }

    let nrn = SymMatrix::symmetrize(nu.as_matrix() * r.as_matrix() * nu.as_matrix()).scale(0.5);
    let arat = SymMatrix::symmetrize(a.as_matrix() * r.as_matrix() * a.as_matrix()).scale(0.5);
    let problem = AREProblem::new(DMatrix::zeros(d, d), nrn, arat.add(q))?;
    let solutions = enumerate_symmetric_solutions(&problem, tol::ENUM_DIM_LIMIT)?;

    let nr = nu.as_matrix() * r.as_matrix();
    let rn = r.as_matrix() * nu.as_matrix();
    let rhs = r.as_matrix() * a.as_matrix() - a.as_matrix() * r.as_matrix();

    let mut residuals = Vec::new();
    for y in &solutions {
        if !matalg::inertia(y, tol::SIGN_TOL).is_positive_definite() {
            continue;
        }
        let lhs = y.as_matrix() * &nr - &rn * y.as_matrix();
        residuals.push((lhs - &rhs).amax());
    }
    let holds = residuals.iter().all(|&res| res <= tol_check);
    Ok(RiccatiSylvesterReport {
        holds,
        spd_solution_count: residuals.len(),
        residuals,
        tol: tol_check,
    })
}
