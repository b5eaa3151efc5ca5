//! Symmetric-matrix utilities: spectral norm, inertia, principal square
//! root, and a Lyapunov solver used as an independent oracle for
//! stationary covariances of stable linear diffusions.
//!
//! Everything here is eigenvalue-based and aimed at desk-scale dimensions
//! (d up to ~16). Symmetry is a construction invariant: entries of a
//! [`SymMatrix`] satisfy `m[(i,j)] == m[(j,i)]` exactly, which downstream
//! code relies on when it subtracts products that cancel algebraically.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tol;

/// A real symmetric d x d matrix with exactly symmetric storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

/// Eigenvalue sign counts of a symmetric (or symmetrizable) matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub n_pos: usize,
    pub n_zero: usize,
    pub n_neg: usize,
}

impl Inertia {
    pub fn dim(&self) -> usize {
        self.n_pos + self.n_zero + self.n_neg
    }

    /// True when every eigenvalue was classified strictly positive.
    pub fn is_positive_definite(&self) -> bool {
        self.n_zero == 0 && self.n_neg == 0
    }
}

impl SymMatrix {
    /// Builds a symmetric matrix from raw entries.
    ///
    /// The input must be square with relative asymmetry at most
    /// [`tol::SYM_CONSTRUCTION_TOL`]; beyond that the call fails instead
    /// of silently averaging away a real discrepancy. Entries are stored
    /// as `(m[(i,j)] + m[(j,i)]) / 2`, assigned to both positions, so the
    /// invariant holds bit-exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "symmetric matrix must have dimension >= 1".into(),
            ));
        }
        let scale = 1.0 + m.amax();
        let mut asym: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        let bound = tol::SYM_CONSTRUCTION_TOL * scale;
        if asym > bound {
            return Err(Error::AsymmetricInput {
                asymmetry: asym,
                bound,
            });
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes unconditionally: each off-diagonal pair is replaced by
    /// its average, assigned to both slots.
    pub fn symmetrize(mut m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize requires a square matrix");
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        SymMatrix { m }
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(d, d),
        }
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        SymMatrix {
            m: DMatrix::from_diagonal(diag),
        }
    }

    /// `s * I_d`.
    pub fn scaled_identity(d: usize, s: f64) -> Self {
        SymMatrix {
            m: DMatrix::from_diagonal_element(d, d, s),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    /// Scalar multiple; exact symmetry is preserved entrywise.
    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { m: &self.m * s }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix { m: &self.m + &other.m }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix { m: &self.m - &other.m }
    }

    /// Eigendecomposition with eigenvalues sorted ascending.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let se = self.m.clone().symmetric_eigen();
        let d = self.dim();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let vals = DVector::from_iterator(d, order.iter().map(|&i| se.eigenvalues[i]));
        let mut vecs = DMatrix::zeros(d, d);
        for (k, &i) in order.iter().enumerate() {
            vecs.set_column(k, &se.eigenvectors.column(i));
        }
        (vals, vecs)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.m.symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        DVector::from_vec(v)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Inverse through the eigendecomposition; requires nonsingularity at
    /// the sign tolerance.
    pub fn try_inverse(&self) -> Result<SymMatrix> {
        let (vals, vecs) = self.eigen();
        let min_abs = vals.iter().fold(f64::INFINITY, |a, &l| a.min(l.abs()));
        if min_abs <= tol::SIGN_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is singular at the sign tolerance (|lambda|_min = {min_abs:.3e})"
            )));
        }
        let inv_diag = DVector::from_iterator(vals.len(), vals.iter().map(|&l| 1.0 / l));
        let m = &vecs * DMatrix::from_diagonal(&inv_diag) * vecs.transpose();
        Ok(SymMatrix::symmetrize(m))
    }
}

/// Largest eigenvalue modulus of a symmetric matrix. Equals the maximal
/// eigenvalue when the matrix is positive semidefinite.
pub fn spec_norm(m: &SymMatrix) -> f64 {
    m.as_matrix()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0, |a: f64, &l| a.max(l.abs()))
}

/// Spectral norm of a general square matrix through `sqrt(spec(M^T M))`.
pub fn spec_norm_general(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = SymMatrix::symmetrize(m.transpose() * m);
    spec_norm(&gram).max(0.0).sqrt()
}

/// Counts of eigenvalues above `tol`, within `[-tol, tol]`, and below
/// `-tol`.
pub fn inertia(m: &SymMatrix, tol: f64) -> Inertia {
    assert!(tol > 0.0, "inertia tolerance must be positive");
    let vals = m.as_matrix().symmetric_eigenvalues();
    let mut out = Inertia {
        n_pos: 0,
        n_zero: 0,
        n_neg: 0,
    };
    for &l in vals.iter() {
        if l > tol {
            out.n_pos += 1;
        } else if l < -tol {
            out.n_neg += 1;
        } else {
            out.n_zero += 1;
        }
    }
    out
}

/// Inertia of a product `H * K` of symmetric matrices. The product itself
/// is not symmetric, but it is diagonalizable with real eigenvalues when
/// one factor is positive definite, so signs are counted on the real parts
/// of its spectrum.
pub fn inertia_product(h: &SymMatrix, k: &SymMatrix, tol: f64) -> Inertia {
    let prod = h.as_matrix() * k.as_matrix();
    let eigs = prod.complex_eigenvalues();
    let mut out = Inertia {
        n_pos: 0,
        n_zero: 0,
        n_neg: 0,
    };
    for l in eigs.iter() {
        if l.re > tol {
            out.n_pos += 1;
        } else if l.re < -tol {
            out.n_neg += 1;
        } else {
            out.n_zero += 1;
        }
    }
    out
}

/// Principal square root of a symmetric positive definite matrix.
///
/// Fails with [`Error::NotSpd`] when the minimal eigenvalue is not above
/// `sign_tol`, and certifies `|S*S - M| <= 1e-10 * |M|` on the way out.
pub fn sqrt_spd(m: &SymMatrix) -> Result<SymMatrix> {
    sqrt_spd_with_tol(m, tol::SIGN_TOL)
}

pub fn sqrt_spd_with_tol(m: &SymMatrix, sign_tol: f64) -> Result<SymMatrix> {
    let (vals, vecs) = m.eigen();
    let min_eig = vals[0];
    if min_eig <= sign_tol {
        return Err(Error::NotSpd {
            min_eig,
            tol: sign_tol,
        });
    }
    let sqrt_diag = DVector::from_iterator(vals.len(), vals.iter().map(|&l| l.sqrt()));
    let s = SymMatrix::symmetrize(&vecs * DMatrix::from_diagonal(&sqrt_diag) * vecs.transpose());
    let residual = spec_norm(&SymMatrix::symmetrize(
        s.as_matrix() * s.as_matrix() - m.as_matrix(),
    ));
    let bound = tol::SQRT_RESIDUAL_REL * spec_norm(m);
    if residual > bound {
        return Err(Error::Certification {
            what: "matrix square root",
            residual,
            bound,
        });
    }
    Ok(s)
}

/// Solves the continuous Lyapunov equation `F*X + X*F^T + W = 0` for the
/// stationary covariance of `dX = F X dt + sqrt(W) dW_t`.
///
/// `F` must be Hurwitz (checked through its spectrum); the solve itself
/// goes through the Kronecker-vectorized linear system, which is exact at
/// these dimensions. The result is certified against the equation.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &SymMatrix) -> Result<SymMatrix> {
    solve_lyapunov_with_tol(f, w, tol::SIGN_TOL)
}

pub fn solve_lyapunov_with_tol(f: &DMatrix<f64>, w: &SymMatrix, sign_tol: f64) -> Result<SymMatrix> {
    let d = w.dim();
    if f.nrows() != d || f.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov: F is {}x{} but W is {}x{}",
            f.nrows(),
            f.ncols(),
            d,
            d
        )));
    }
    let max_re = f
        .complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, l| a.max(l.re));
    if max_re >= -sign_tol {
        return Err(Error::NotHurwitz {
            max_re,
            tol: sign_tol,
        });
    }

    // (I (x) F + F (x) I) vec(X) = -vec(W), column-major vec.
    let eye = DMatrix::<f64>::identity(d, d);
    let kron = eye.kronecker(f) + f.kronecker(&eye);
    let rhs = DVector::from_column_slice(w.as_matrix().as_slice());
    let sol = kron
        .lu()
        .solve(&(-rhs))
        .ok_or_else(|| Error::InvalidInput("Lyapunov system is numerically singular".into()))?;
    let x = SymMatrix::symmetrize(DMatrix::from_column_slice(d, d, sol.as_slice()));

    let residual = spec_norm(&SymMatrix::symmetrize(
        f * x.as_matrix() + x.as_matrix() * f.transpose() + w.as_matrix(),
    ));
    let bound = tol::LYAP_RESIDUAL_REL * spec_norm(w).max(1e-300);
    if residual > bound {
        return Err(Error::Certification {
            what: "Lyapunov solve",
            residual,
            bound,
        });
    }
    Ok(x)
}

/// Solves `E*Phi + Phi^T*E = Rhs` for symmetric `E` (Newton correction
/// step for Riccati residuals). Returns `None` when the vectorized system
/// is singular, which happens exactly when `Phi` and `-Phi^T` share an
/// eigenvalue.
pub(crate) fn solve_sym_sylvester(phi: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = phi.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    // vec(E*Phi) = (Phi^T (x) I) vec(E); vec(Phi^T*E) = (I (x) Phi^T) vec(E).
    let phit = phi.transpose();
    let kron = phit.kronecker(&eye) + eye.kronecker(&phit);
    let rhs_v = DVector::from_column_slice(rhs.as_slice());
    let sol = kron.lu().solve(&rhs_v)?;
    let e = DMatrix::from_column_slice(d, d, sol.as_slice());
    Some(0.5 * (&e + e.transpose()))
}

/// Condition number (2-norm) of a general square matrix.
pub fn cond_2(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &s| a.min(s));
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}
