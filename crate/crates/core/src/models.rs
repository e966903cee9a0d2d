//! Lattice, rung and effective-chain Hamiltonians.
//!
//! At the critical field `w_c` every rung has a two-fold degenerate ground
//! pair `|0>` (fully polarized) and `|1>` (lowest one-magnon state). Treating
//! each rung as a qubit in that pair turns the weak leg and diagonal bonds
//! into a 1D XXZ chain whose couplings are known in closed form for
//! `L = 2, 3, 4` and can always be recovered numerically by projection.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QstError, Result};
use crate::lattice::{BondKind, Boundary, SpinLattice};
use crate::propagation::Eigensystem;
use crate::sector::{
    heisenberg_operator, BondCouplings, FieldProfile, SectorBasis, SectorOperator, SpinTerms,
};

/// Largest rung handled by the dense rung routines.
pub const MAX_RUNG_LEGS: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Which operator generates the transfer dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferGenerator {
    /// Rung + leg + diagonal bonds at field `w_c + dw`.
    #[default]
    Full,
    /// Leg + diagonal bonds and the `dw` field only.
    PerturbationOnly,
}

/// Couplings in units of the rung exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Leg exchange over rung exchange.
    pub u: f64,
    /// Diagonal exchange over rung exchange.
    pub v: f64,
    /// Detuning of the field from `w_c`.
    pub dw: f64,
    pub w_c: f64,
    #[serde(default)]
    pub transfer_generator: TransferGenerator,
}

impl ModelParams {
    pub fn new(u: f64, v: f64, dw: f64, w_c: f64) -> Self {
        Self { u, v, dw, w_c, transfer_generator: TransferGenerator::Full }
    }

    /// Parameters with `w_c` taken from the rung ground pair of `lattice`.
    pub fn for_lattice(lattice: &SpinLattice, u: f64, v: f64, dw: f64) -> Result<Self> {
        let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
        Ok(Self::new(u, v, dw, pair.w_c))
    }

    pub fn with_generator(mut self, generator: TransferGenerator) -> Self {
        self.transfer_generator = generator;
        self
    }

    pub fn field(&self) -> f64 {
        self.w_c + self.dw
    }

    /// True inside the box `0 <= u, v, |dw| <= 0.1`.
    pub fn in_perturbation_regime(&self) -> bool {
        let inside = |x: f64| (0.0..=0.1).contains(&x);
        inside(self.u) && inside(self.v) && inside(self.dw.abs())
    }
}

/// The degenerate ground pair of one rung at its critical field.
///
/// Rung vectors have `2^L` entries indexed by configuration: bit `j - 1` set
/// means leg `j` is flipped, so the ket `|b_1 ... b_L>` sits at
/// `sum_j b_j 2^(j-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RungGroundPair {
    pub legs: usize,
    pub bc_rung: Boundary,
    pub w_c: f64,
    pub ket0: DVector<Complex64>,
    pub ket1: DVector<Complex64>,
    pub e_g: f64,
    /// Distance from `e_g` to the next rung level at `w_c`.
    pub gap: f64,
}

impl RungGroundPair {
    pub fn dim(&self) -> usize {
        1 << self.legs
    }

    /// Amplitude of `|1>` on the configuration with only leg `j` flipped.
    pub fn ket1_leg_amplitude(&self, leg: usize) -> Complex64 {
        self.ket1[1 << (leg - 1)]
    }

    /// `<x| sigma^alpha_leg |y>` for `x, y` in `{|0>, |1>}`.
    pub fn pauli_elements(&self, leg: usize, alpha: Pauli) -> [[Complex64; 2]; 2] {
        let kets = [&self.ket0, &self.ket1];
        let mut out = [[ZERO; 2]; 2];
        for (y, ket) in kets.iter().enumerate() {
            let image = apply_pauli(ket, leg - 1, alpha);
            for (x, bra) in kets.iter().enumerate() {
                out[x][y] = bra.dotc(&image);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// `sigma^alpha` on bit `bit` of a dense configuration-indexed vector.
fn apply_pauli(v: &DVector<Complex64>, bit: usize, alpha: Pauli) -> DVector<Complex64> {
    let mask = 1usize << bit;
    let mut out = DVector::zeros(v.len());
    for (k, &a) in v.iter().enumerate() {
        let up = k & mask == 0;
        match alpha {
            Pauli::X => out[k ^ mask] += a,
            // sigma^y |0> = i |1>, sigma^y |1> = -i |0>
            Pauli::Y => out[k ^ mask] += a * Complex64::new(0.0, if up { 1.0 } else { -1.0 }),
            Pauli::Z => out[k] += if up { a } else { -a },
        }
    }
    out
}

fn rung_spin_terms(legs: usize, bc_rung: Boundary, w: f64) -> SpinTerms {
    let steps = if bc_rung == Boundary::Periodic && legs > 2 { legs } else { legs - 1 };
    let mut terms = SpinTerms::new();
    for j in 0..steps {
        terms.heisenberg(j, (j + 1) % legs, 1.0);
    }
    for s in 0..legs {
        terms.field(s, -w / 2.0);
    }
    terms
}

fn check_legs(legs: usize) -> Result<()> {
    if !(2..=MAX_RUNG_LEGS).contains(&legs) {
        return Err(QstError::InvalidParameter(format!(
            "rung with L = {legs}, supported 2..={MAX_RUNG_LEGS}"
        )));
    }
    Ok(())
}

/// Dense `2^L` rung Hamiltonian `(1/4) sum_j sigma_j . sigma_j+1 - (w/2) sum_j sigma^z_j`.
pub fn build_rung_hamiltonian(legs: usize, bc_rung: Boundary, w: f64) -> Result<DMatrix<Complex64>> {
    check_legs(legs)?;
    rung_spin_terms(legs, bc_rung, w).dense_matrix(legs)
}

/// Spectrum of the rung Hamiltonian with `k` flipped spins.
fn rung_sector_spectrum(legs: usize, bc_rung: Boundary, w: f64, k: usize) -> Result<Eigensystem> {
    let basis = SectorBasis::with_excitation_range(legs, k, k)?;
    let op = SectorOperator::from_terms(&basis, &rung_spin_terms(legs, bc_rung, w))?;
    Eigensystem::from_dense(&op.dense())
}

fn closed_form_ket1(legs: usize, bc_rung: Boundary) -> Option<Vec<f64>> {
    // Leg amplitudes c_1 .. c_L of the flipped-spin configurations.
    match (legs, bc_rung) {
        (2, _) => Some(vec![-1.0, 1.0].into_iter().map(|x| x / SQRT_2).collect()),
        (3, Boundary::Open) => {
            let n = 6f64.sqrt();
            Some(vec![1.0 / n, -2.0 / n, 1.0 / n])
        }
        (4, Boundary::Open) => {
            let a = 1.0 + SQRT_2;
            let n = (2.0 + 2.0 * a * a).sqrt();
            Some(vec![1.0 / n, -a / n, a / n, -1.0 / n])
        }
        (4, Boundary::Periodic) => Some(vec![-0.5, 0.5, -0.5, 0.5]),
        _ => None,
    }
}

/// Critical field and ground pair of a rung.
///
/// `w_c = E_0(0) - E_1(0)`, the zero-field gap between the polarized state
/// and the bottom of the one-magnon band; the field shifts the two sectors
/// against each other at unit rate. The full spectrum at `w_c` is then
/// checked for an exact two-fold degeneracy with a gap above it.
pub fn find_critical_field(legs: usize, bc_rung: Boundary) -> Result<RungGroundPair> {
    check_legs(legs)?;
    let bc_rung = if legs == 2 { Boundary::Open } else { bc_rung };
    let one = rung_sector_spectrum(legs, bc_rung, 0.0, 1)?;
    let magnon = one.values();
    if magnon[1] - magnon[0] < 1e-9 {
        return Err(QstError::NoEffectiveQubit(format!(
            "one-magnon bottom of the L = {legs} {bc_rung} rung is degenerate"
        )));
    }
    let bonds = if bc_rung == Boundary::Periodic { legs } else { legs - 1 } as f64;
    let e0 = bonds / 4.0;
    let w_c = e0 - magnon[0];
    let e_g = e0 - w_c * legs as f64 / 2.0;

    let mut levels: Vec<f64> = Vec::with_capacity(1 << legs);
    for k in 0..=legs {
        levels.extend(rung_sector_spectrum(legs, bc_rung, w_c, k)?.values().iter());
    }
    levels.sort_by(f64::total_cmp);
    if (levels[0] - e_g).abs() > 1e-10 || (levels[1] - e_g).abs() > 1e-10 {
        return Err(QstError::NoEffectiveQubit(format!(
            "rung ground level {} at w_c = {w_c} is not the polarized/one-magnon crossing",
            levels[0]
        )));
    }
    let gap = levels[2] - levels[1];
    if gap < 1e-9 {
        return Err(QstError::NoEffectiveQubit(format!(
            "ground level of the L = {legs} {bc_rung} rung is more than two-fold degenerate"
        )));
    }

    let legs_amps: Vec<Complex64> = match closed_form_ket1(legs, bc_rung) {
        Some(c) => c.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
        None => {
            let col = one.vectors().column(0);
            let mut amps: Vec<Complex64> = col.iter().copied().collect();
            // Lexicographic ket order puts the flip on the last leg first.
            let lead = amps
                .iter()
                .rev()
                .find(|z| z.norm() > 1e-12)
                .copied()
                .expect("eigenvector has a nonzero entry");
            let fix = lead.conj() / lead.norm();
            for a in amps.iter_mut() {
                *a *= fix;
            }
            amps
        }
    };
    let dim = 1usize << legs;
    let mut ket0 = DVector::zeros(dim);
    ket0[0] = ONE;
    let mut ket1 = DVector::zeros(dim);
    for (j, a) in legs_amps.into_iter().enumerate() {
        ket1[1 << j] = a;
    }
    Ok(RungGroundPair { legs, bc_rung, w_c, ket0, ket1, e_g, gap })
}

/// Couplings of the effective XXZ chain
/// `sum_i [Jxy (tx tx + ty ty) + Jzz tz tz] + h sum_i tz_i + h_b (tz_1 + tz_N)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectiveCouplings {
    pub jxy: f64,
    pub jzz: f64,
    pub h: f64,
    pub h_boundary: f64,
}

impl EffectiveCouplings {
    /// Drops the end-site correction when the legs close on themselves.
    pub fn for_leg_boundary(mut self, bc_leg: Boundary) -> Self {
        if bc_leg == Boundary::Periodic {
            self.h_boundary = 0.0;
        }
        self
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            self.jxy - other.jxy,
            self.jzz - other.jzz,
            self.h - other.h,
            self.h_boundary - other.h_boundary,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Closed-form couplings for `(L, bc_rung)` in `{(2, *), (3, open), (4, open), (4, periodic)}`.
pub fn effective_couplings(
    legs: usize,
    bc_rung: Boundary,
    u: f64,
    v: f64,
    dw: f64,
) -> Result<EffectiveCouplings> {
    let bc_rung = if legs == 2 { Boundary::Open } else { bc_rung };
    let c = match (legs, bc_rung) {
        (2, _) => EffectiveCouplings {
            jxy: (u - v) / 4.0,
            jzz: (u + v) / 8.0,
            h: (u + v - 2.0 * dw) / 4.0,
            h_boundary: -(u + v) / 8.0,
        },
        (3, Boundary::Open) => EffectiveCouplings {
            jxy: (3.0 * u - 4.0 * v) / 12.0,
            jzz: (9.0 * u + 8.0 * v) / 72.0,
            h: (9.0 * u + 22.0 * v - 18.0 * dw) / 36.0,
            h_boundary: -(9.0 * u + 22.0 * v) / 72.0,
        },
        (4, Boundary::Open) => {
            let s = (2.0 * SQRT_2 + 19.0) * v;
            EffectiveCouplings {
                jxy: (4.0 * u - (2.0 + 3.0 * SQRT_2) * v) / 16.0,
                jzz: (6.0 * u + (2.0 * SQRT_2 + 5.0) * v) / 64.0,
                h: (10.0 * u + s - 16.0 * dw) / 32.0,
                h_boundary: -(10.0 * u + s) / 64.0,
            }
        }
        (4, Boundary::Periodic) => EffectiveCouplings {
            jxy: (u - 2.0 * v) / 4.0,
            jzz: (u + 2.0 * v) / 16.0,
            h: (3.0 * (u + 2.0 * v) - 4.0 * dw) / 8.0,
            h_boundary: -3.0 * (u + 2.0 * v) / 16.0,
        },
        _ => {
            return Err(QstError::UnsupportedCouplings { legs, bc: bc_rung.to_string() });
        }
    };
    Ok(c)
}

/// Couplings for a lattice: closed form when available, otherwise fitted from
/// the projected Hamiltonian of a three-rung open chain.
pub fn couplings_for_lattice(lattice: &SpinLattice, params: &ModelParams) -> Result<EffectiveCouplings> {
    let c = match effective_couplings(lattice.legs(), lattice.bc_rung(), params.u, params.v, params.dw) {
        Ok(c) => c,
        Err(QstError::UnsupportedCouplings { legs, bc }) => {
            log::warn!("no closed-form couplings for L = {legs} with {bc} rungs, fitting the projected Hamiltonian");
            let probe = SpinLattice::new(3, lattice.legs(), lattice.bc_rung(), Boundary::Open)?;
            let m = projected_hamiltonian_oracle(&probe, params)?;
            fit_xxz(&m, 3, Boundary::Open)?.couplings
        }
        Err(e) => return Err(e),
    };
    Ok(c.for_leg_boundary(lattice.bc_leg()))
}

/// Spin terms of the effective chain on `n` sites.
pub fn effective_terms(n: usize, couplings: &EffectiveCouplings, bc_leg: Boundary) -> SpinTerms {
    let periodic = bc_leg == Boundary::Periodic && n > 2;
    let bonds = if periodic { n } else { n - 1 };
    let mut terms = SpinTerms::new();
    for i in 0..bonds {
        terms.xxz(i, (i + 1) % n, couplings.jxy, couplings.jzz);
    }
    for i in 0..n {
        terms.field(i, couplings.h);
    }
    if !periodic {
        terms.field(0, couplings.h_boundary);
        terms.field(n - 1, couplings.h_boundary);
    }
    terms
}

/// The effective XXZ chain on `n` sites; effective `|0>` is the 0 bit (`tau^z = +1`).
pub fn build_effective_xxz(
    n: usize,
    couplings: &EffectiveCouplings,
    bc_leg: Boundary,
    basis: &Arc<SectorBasis>,
) -> Result<SectorOperator> {
    if n < 2 {
        return Err(QstError::InvalidLattice(format!("effective chain of {n} sites")));
    }
    if basis.num_sites() != n {
        return Err(QstError::InvalidParameter(format!(
            "basis over {} sites for a chain of {n}",
            basis.num_sites()
        )));
    }
    SectorOperator::from_terms(basis, &effective_terms(n, couplings, bc_leg))
}

/// Full lattice Hamiltonian at field `w_c + dw`.
pub fn build_full_hamiltonian(
    lattice: &SpinLattice,
    params: &ModelParams,
    basis: &Arc<SectorBasis>,
) -> Result<SectorOperator> {
    heisenberg_operator(
        basis,
        lattice,
        &BondCouplings { rung: 1.0, leg: params.u, diagonal: params.v },
        &FieldProfile::Uniform(params.field()),
    )
}

/// Leg and diagonal bonds plus the detuning field.
pub fn build_perturbation(
    lattice: &SpinLattice,
    params: &ModelParams,
    basis: &Arc<SectorBasis>,
) -> Result<SectorOperator> {
    heisenberg_operator(
        basis,
        lattice,
        &BondCouplings { rung: 0.0, leg: params.u, diagonal: params.v },
        &FieldProfile::Uniform(params.dw),
    )
}

/// Generator of the transfer dynamics selected by `params.transfer_generator`.
pub fn transfer_hamiltonian(
    lattice: &SpinLattice,
    params: &ModelParams,
    basis: &Arc<SectorBasis>,
) -> Result<SectorOperator> {
    match params.transfer_generator {
        TransferGenerator::Full => build_full_hamiltonian(lattice, params, basis),
        TransferGenerator::PerturbationOnly => build_perturbation(lattice, params, basis),
    }
}

/// Matrix of the perturbation (leg + diagonal bonds and the `dw` field)
/// between all products of rung ground-pair states, indexed like an
/// effective configuration (bit `i - 1` set means rung `i` is in `|1>`).
pub fn projected_hamiltonian_oracle(
    lattice: &SpinLattice,
    params: &ModelParams,
) -> Result<DMatrix<Complex64>> {
    let n = lattice.rungs();
    if n > 10 {
        return Err(QstError::DimensionTooLarge(1 << n));
    }
    let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
    let paulis = [Pauli::X, Pauli::Y, Pauli::Z];
    // elems[leg - 1][alpha]
    let elems: Vec<Vec<[[Complex64; 2]; 2]>> = (1..=lattice.legs())
        .map(|j| paulis.iter().map(|&a| pair.pauli_elements(j, a)).collect())
        .collect();

    let dim = 1usize << n;
    let mut m = DMatrix::zeros(dim, dim);
    for (kind, coef) in [(BondKind::Leg, params.u), (BondKind::Diagonal, params.v)] {
        if coef == 0.0 {
            continue;
        }
        for (a, b) in lattice.bonds(kind) {
            let (pa, ja) = lattice.site_coords(a)?;
            let (pb, jb) = lattice.site_coords(b)?;
            let (ma, mb) = (1usize << (pa - 1), 1usize << (pb - 1));
            for col in 0..dim {
                let (ya, yb) = (usize::from(col & ma != 0), usize::from(col & mb != 0));
                for xa in 0..2 {
                    for xb in 0..2 {
                        let row = (col & !ma & !mb) | (xa * ma) | (xb * mb);
                        let mut v = ZERO;
                        for alpha in 0..3 {
                            v += elems[ja - 1][alpha][xa][ya] * elems[jb - 1][alpha][xb][yb];
                        }
                        m[(row, col)] += v * (coef / 4.0);
                    }
                }
            }
        }
    }
    if params.dw != 0.0 {
        for s in 0..lattice.num_sites() {
            let (p, j) = lattice.site_coords(s)?;
            let mp = 1usize << (p - 1);
            for col in 0..dim {
                let y = usize::from(col & mp != 0);
                for x in 0..2 {
                    let row = (col & !mp) | (x * mp);
                    m[(row, col)] += elems[j - 1][2][x][y] * (-params.dw / 2.0);
                }
            }
        }
    }
    Ok(m)
}

/// Couplings read off a projected Hamiltonian by Pauli traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XxzFit {
    /// For a two-site open chain `h` carries the whole end-site field and
    /// `h_boundary` is zero, see `bulk_identifiable`.
    pub couplings: EffectiveCouplings,
    /// Coefficient of `tau^z` on the first site, `h + h_b` for open legs.
    pub end_field: f64,
    /// False when every site is an end site, so `h` and `h_b` cannot be separated.
    pub bulk_identifiable: bool,
    /// Coefficient of the identity.
    pub constant: f64,
    /// `max |M - fitted template|`.
    pub residual: f64,
}

/// Projects `m` onto the XXZ template over `n` effective sites.
pub fn fit_xxz(m: &DMatrix<Complex64>, n: usize, bc_leg: Boundary) -> Result<XxzFit> {
    let dim = 1usize << n;
    if n < 2 || m.nrows() != dim || m.ncols() != dim {
        return Err(QstError::InvalidParameter(format!(
            "{}x{} matrix for {n} effective sites",
            m.nrows(),
            m.ncols()
        )));
    }
    let norm = dim as f64;
    let spin = |l: usize, i: usize| if l >> i & 1 == 0 { 1.0 } else { -1.0 };
    let coef_xx = |a: usize, b: usize| {
        let mask = (1 << a) | (1 << b);
        (0..dim).map(|l| m[(l ^ mask, l)]).sum::<Complex64>().re / norm
    };
    let coef_zz = |a: usize, b: usize| {
        (0..dim).map(|l| spin(l, a) * spin(l, b) * m[(l, l)].re).sum::<f64>() / norm
    };
    let coef_z = |a: usize| (0..dim).map(|l| spin(l, a) * m[(l, l)].re).sum::<f64>() / norm;
    let constant = (0..dim).map(|l| m[(l, l)].re).sum::<f64>() / norm;

    let periodic = bc_leg == Boundary::Periodic && n > 2;
    let end_field = coef_z(0);
    let (h, h_boundary, bulk_identifiable) = if periodic {
        (end_field, 0.0, true)
    } else if n >= 3 {
        let h = coef_z(1);
        (h, end_field - h, true)
    } else {
        (end_field, 0.0, false)
    };
    let couplings = EffectiveCouplings { jxy: coef_xx(0, 1), jzz: coef_zz(0, 1), h, h_boundary };
    let template = effective_terms(n, &couplings, bc_leg).dense_matrix(n)?
        + DMatrix::from_diagonal_element(dim, dim, Complex64::new(constant, 0.0));
    let residual = (m - template).iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(XxzFit { couplings, end_field, bulk_identifiable, constant, residual })
}

/// Closed-form couplings of a lattice next to the fit of its projected perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingCheck {
    pub closed_form: EffectiveCouplings,
    pub fit: XxzFit,
    /// Largest disagreement over the identifiable couplings.
    pub deviation: f64,
}

/// Compares `effective_couplings` with the projection oracle on `lattice`
/// (at most 10 rungs).
pub fn check_couplings(lattice: &SpinLattice, params: &ModelParams) -> Result<CouplingCheck> {
    let closed_form = effective_couplings(lattice.legs(), lattice.bc_rung(), params.u, params.v, params.dw)?
        .for_leg_boundary(lattice.bc_leg());
    let n = lattice.rungs();
    let fit = fit_xxz(&projected_hamiltonian_oracle(lattice, params)?, n, lattice.bc_leg())?;
    let deviation = if fit.bulk_identifiable {
        fit.couplings.max_abs_diff(&closed_form)
    } else {
        [
            fit.couplings.jxy - closed_form.jxy,
            fit.couplings.jzz - closed_form.jzz,
            fit.end_field - closed_form.h - closed_form.h_boundary,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
    };
    Ok(CouplingCheck { closed_form, fit, deviation: deviation.max(fit.residual) })
}
