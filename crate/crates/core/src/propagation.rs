//! Exact time evolution through a cached eigendecomposition.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{QstError, Result};
use crate::lattice::SpinLattice;
use crate::sector::{SectorBasis, SectorOperator, SectorState, SpinTerms};

/// Largest operator dimension handled by dense diagonalization.
pub const MAX_DENSE_DIM: usize = 4096;

/// `H = V diag(values) V^dagger` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    values: DVector<f64>,
    vectors: DMatrix<Complex64>,
}

impl Eigensystem {
    /// Diagonalizes a dense Hermitian matrix.
    pub fn from_dense(m: &DMatrix<Complex64>) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(QstError::InvalidParameter(format!("{}x{} matrix is not square", n, m.ncols())));
        }
        if n > MAX_DENSE_DIM {
            return Err(QstError::DimensionTooLarge(n));
        }
        let defect = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > 1e-12 * m.iter().map(|z| z.norm()).fold(1.0, f64::max) {
            return Err(QstError::NonHermitian(defect));
        }
        if n == 0 {
            return Ok(Self { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
        }
        let (values, vectors) = if m.iter().all(|z| z.im == 0.0) {
            let real = m.map(|z| z.re);
            let eig = SymmetricEigen::new(real);
            (eig.eigenvalues, eig.eigenvectors.map(|x| Complex64::new(x, 0.0)))
        } else {
            let eig = SymmetricEigen::new(m.clone());
            (eig.eigenvalues, eig.eigenvectors)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted_values = DVector::from_iterator(n, order.iter().map(|&k| values[k]));
        let sorted_vectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
        Ok(Self { values: sorted_values, vectors: sorted_vectors })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<Complex64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `max |H - V Lambda V^dagger|` against the matrix it was built from.
    pub fn reconstruction_error(&self, m: &DMatrix<Complex64>) -> f64 {
        let lambda = DMatrix::from_diagonal(&self.values.map(|x| Complex64::new(x, 0.0)));
        let rebuilt = &self.vectors * lambda * self.vectors.adjoint();
        (m - rebuilt).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Eigenbasis coefficients `V^dagger psi`.
    pub fn coefficients(&self, psi: &DVector<Complex64>) -> DVector<Complex64> {
        self.vectors.ad_mul(psi)
    }

    /// `V exp(-i Lambda t) c`.
    pub fn evolve_coefficients(&self, coefficients: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let phased = DVector::from_iterator(
            coefficients.len(),
            coefficients
                .iter()
                .zip(self.values.iter())
                .map(|(c, &e)| c * Complex64::from_polar(1.0, -e * t)),
        );
        &self.vectors * phased
    }

    /// `exp(-i H t) psi`.
    pub fn evolve_vector(&self, psi: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        self.evolve_coefficients(&self.coefficients(psi), t)
    }
}

/// Eigendecomposition of `op`, computed on first use and cached on the operator.
pub fn diagonalize(op: &SectorOperator) -> Result<&Eigensystem> {
    if let Some(e) = op.eigen.get() {
        return Ok(e);
    }
    let defect = op.hermiticity_defect();
    if defect > 1e-14 {
        return Err(QstError::NonHermitian(defect));
    }
    let eig = Eigensystem::from_dense(&op.dense())?;
    let _ = op.eigen.set(eig);
    Ok(op.eigen.get().expect("eigensystem was just stored"))
}

/// `exp(-i H t) |psi>`.
pub fn evolve(op: &SectorOperator, state: &SectorState, t: f64) -> Result<SectorState> {
    Propagator::new(op, state)?.state_at(t)
}

/// An initial state expanded once in the eigenbasis of a Hamiltonian, for
/// evaluation at many times.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    eigen: &'a Eigensystem,
    basis: Arc<SectorBasis>,
    coefficients: DVector<Complex64>,
}

impl<'a> Propagator<'a> {
    pub fn new(op: &'a SectorOperator, state: &SectorState) -> Result<Self> {
        if op.basis() != state.basis() {
            return Err(QstError::BasisMismatch);
        }
        let eigen = diagonalize(op)?;
        Ok(Self {
            eigen,
            basis: state.basis().clone(),
            coefficients: eigen.coefficients(state.amplitudes()),
        })
    }

    pub fn amplitudes_at(&self, t: f64) -> DVector<Complex64> {
        self.eigen.evolve_coefficients(&self.coefficients, t)
    }

    pub fn state_at(&self, t: f64) -> Result<SectorState> {
        SectorState::new(self.basis.clone(), self.amplitudes_at(t))
    }
}

/// Terms of the rung Hamiltonian `(1/4) sum_j sigma_j . sigma_j+1 - (w/2) sum_j sigma^z_j`
/// placed on one rung of `lattice`.
pub fn rung_terms(lattice: &SpinLattice, w: f64, rung: usize) -> Result<SpinTerms> {
    let sites = lattice.rung_sites(rung)?;
    let l = sites.len();
    let steps = match lattice.bc_rung() {
        crate::lattice::Boundary::Open => l - 1,
        crate::lattice::Boundary::Periodic => l,
    };
    let mut terms = SpinTerms::new();
    for j in 0..steps {
        terms.heisenberg(sites[j], sites[(j + 1) % l], 1.0);
    }
    for &s in &sites {
        terms.field(s, -w / 2.0);
    }
    Ok(terms)
}

/// Evolution under a single rung Hamiltonian, identity on every other rung.
#[derive(Debug, Clone)]
pub struct RungEvolution {
    op: SectorOperator,
}

impl RungEvolution {
    pub fn new(lattice: &SpinLattice, basis: &Arc<SectorBasis>, w: f64, rung: usize) -> Result<Self> {
        if basis.num_sites() != lattice.num_sites() {
            return Err(QstError::BasisMismatch);
        }
        let op = SectorOperator::from_terms(basis, &rung_terms(lattice, w, rung)?)?;
        Ok(Self { op })
    }

    pub fn apply(&self, state: &SectorState, duration: f64) -> Result<SectorState> {
        evolve(&self.op, state, duration)
    }

    pub fn operator(&self) -> &SectorOperator {
        &self.op
    }
}

/// `exp(-i duration H_rung(w))` on `target_rung`.
pub fn rung_unitary(
    lattice: &SpinLattice,
    w: f64,
    duration: f64,
    target_rung: usize,
    state: &SectorState,
) -> Result<SectorState> {
    RungEvolution::new(lattice, state.basis(), w, target_rung)?.apply(state, duration)
}
