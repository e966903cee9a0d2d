//! Rung-to-rung transfer on the full lattice and its effective-chain
//! counterpart, with fidelity maxima, Haar averages and the discrepancy
//! between the two pipelines.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::QubitInput;
use crate::error::{QstError, Result};
use crate::lattice::{receiver_index, Boundary, SpinLattice};
use crate::models::{
    build_effective_xxz, couplings_for_lattice, find_critical_field, transfer_hamiltonian,
    EffectiveCouplings, ModelParams, RungGroundPair,
};
use crate::propagation::diagonalize;
use crate::sector::{Config, PartialTracePlan, SectorBasis, SectorOperator, SectorState};
use crate::stats::{haar_samples, NeumaierSum};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const NORM_TOL: f64 = 1e-10;

/// Rung state loaded into the sender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum RungInput {
    /// `a1 |0> + e^{i a2} sqrt(1 - a1^2) |1>` in the rung ground pair.
    #[serde(rename = "low_energy")]
    LowEnergy { a1: f64, a2: f64 },
    /// Two-leg state `a1 |00> + e^{i a2} sqrt(1 - a1^2) (|b| |01> + e^{i theta} sqrt(1 - b^2) |10>)`.
    #[serde(rename = "xi_L2", alias = "xi_l2")]
    XiL2 { a1: f64, a2: f64, b: f64, theta: f64 },
    /// Three-leg W-class state with weights `|b1|, |b2| e^{i theta1}, sqrt(1 - b1^2 - b2^2) e^{i theta2}`
    /// on `|001>, |010>, |100>`.
    #[serde(rename = "w_class_L3", alias = "w_class_l3")]
    WClassL3 { a1: f64, a2: f64, b1: f64, b2: f64, theta1: f64, theta2: f64 },
}

impl RungInput {
    pub fn low_energy(a1: f64, a2: f64) -> Self {
        RungInput::LowEnergy { a1, a2 }
    }

    pub fn a1(&self) -> f64 {
        match *self {
            RungInput::LowEnergy { a1, .. }
            | RungInput::XiL2 { a1, .. }
            | RungInput::WClassL3 { a1, .. } => a1,
        }
    }

    pub fn a2(&self) -> f64 {
        match *self {
            RungInput::LowEnergy { a2, .. }
            | RungInput::XiL2 { a2, .. }
            | RungInput::WClassL3 { a2, .. } => a2,
        }
    }

    /// Same variant with different `(a1, a2)`.
    pub fn with_amplitudes(mut self, new_a1: f64, new_a2: f64) -> Self {
        match &mut self {
            RungInput::LowEnergy { a1, a2 }
            | RungInput::XiL2 { a1, a2, .. }
            | RungInput::WClassL3 { a1, a2, .. } => {
                *a1 = new_a1;
                *a2 = new_a2;
            }
        }
        self
    }
}

fn check_unit(name: &str, x: f64, lo: f64) -> Result<()> {
    if !x.is_finite() || x < lo || x > 1.0 {
        return Err(QstError::InvalidParameter(format!("{name} = {x} outside [{lo}, 1]")));
    }
    Ok(())
}

fn check_phase(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(QstError::InvalidParameter(format!("{name} = {x} is not finite")));
    }
    Ok(())
}

/// Sender rung vector (`2^L` entries, bit `j - 1` = leg `j`).
pub fn prepare_rung_input(pair: &RungGroundPair, input: &RungInput) -> Result<DVector<Complex64>> {
    let a1 = input.a1();
    check_unit("a1", a1, 0.0)?;
    check_phase("a2", input.a2())?;
    let excited = Complex64::from_polar((1.0 - a1 * a1).max(0.0).sqrt(), input.a2());
    let mut v = &pair.ket0 * Complex64::new(a1, 0.0);
    match *input {
        RungInput::LowEnergy { .. } => {
            v += &pair.ket1 * excited;
        }
        RungInput::XiL2 { b, theta, .. } => {
            if pair.legs != 2 {
                return Err(QstError::InvalidParameter(format!(
                    "xi_L2 input on an L = {} rung",
                    pair.legs
                )));
            }
            check_unit("b", b, -1.0)?;
            check_phase("theta", theta)?;
            // |01> flips leg 2, |10> flips leg 1.
            v[0b10] += excited * b.abs();
            v[0b01] += excited * Complex64::from_polar((1.0 - b * b).max(0.0).sqrt(), theta);
        }
        RungInput::WClassL3 { b1, b2, theta1, theta2, .. } => {
            if pair.legs != 3 {
                return Err(QstError::InvalidParameter(format!(
                    "w_class_L3 input on an L = {} rung",
                    pair.legs
                )));
            }
            check_unit("b1", b1, -1.0)?;
            check_unit("b2", b2, -1.0)?;
            check_phase("theta1", theta1)?;
            check_phase("theta2", theta2)?;
            let rest = 1.0 - b1 * b1 - b2 * b2;
            if rest < -1e-12 {
                return Err(QstError::InvalidParameter(format!(
                    "b1^2 + b2^2 = {} exceeds 1",
                    b1 * b1 + b2 * b2
                )));
            }
            v[0b100] += excited * b1.abs();
            v[0b010] += excited * Complex64::from_polar(b2.abs(), theta1);
            v[0b001] += excited * Complex64::from_polar(rest.max(0.0).sqrt(), theta2);
        }
    }
    Ok(v)
}

/// `D = 1 - |<0|psi>|^2 - |<1|psi>|^2` for a normalized rung vector.
pub fn high_energy_overlap(rung_vector: &DVector<Complex64>, pair: &RungGroundPair) -> Result<f64> {
    if rung_vector.len() != pair.dim() {
        return Err(QstError::InvalidParameter(format!(
            "rung vector of length {} for L = {}",
            rung_vector.len(),
            pair.legs
        )));
    }
    let n2 = rung_vector.norm_squared();
    if (n2 - 1.0).abs() > NORM_TOL {
        return Err(QstError::NotNormalized(n2));
    }
    // Weight of the residual after removing the pair components; no cancellation.
    let residual = rung_vector - &pair.ket0 * pair.ket0.dotc(rung_vector) - &pair.ket1 * pair.ket1.dotc(rung_vector);
    Ok(residual.norm_squared().min(1.0))
}

/// Places a rung vector on `rung` with every other rung polarized.
pub fn embed_rung_vector(
    basis: &Arc<SectorBasis>,
    lattice: &SpinLattice,
    rung: usize,
    rung_vector: &DVector<Complex64>,
) -> Result<SectorState> {
    let sites = lattice.rung_sites(rung)?;
    if rung_vector.len() != 1 << sites.len() {
        return Err(QstError::InvalidParameter(format!(
            "rung vector of length {} for L = {}",
            rung_vector.len(),
            sites.len()
        )));
    }
    let mut state = SectorState::zero(basis.clone());
    for (local, &a) in rung_vector.iter().enumerate() {
        if a == ZERO {
            continue;
        }
        let cfg = sites
            .iter()
            .enumerate()
            .filter(|&(m, _)| local >> m & 1 == 1)
            .fold(0 as Config, |acc, (_, &s)| acc | (1 as Config) << s);
        state.add_amplitude(cfg, a)?;
    }
    Ok(state)
}

/// How the low-energy part of a sender state enters the effective chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// Project onto the ground pair and renormalize.
    #[default]
    Normalized,
    /// Keep the sub-normalized projection.
    Unnormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    RungToRung,
    Effective,
    SingleQubit,
    BareBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordInput {
    Rung(RungInput),
    Qubit(QubitInput),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch when the record was produced.
    pub timestamp: Option<f64>,
}

/// A fidelity time series with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub pipeline: Pipeline,
    pub lattice: Option<SpinLattice>,
    pub params: Option<ModelParams>,
    pub couplings: Option<EffectiveCouplings>,
    pub input: RecordInput,
    pub sender: usize,
    pub distance: usize,
    pub target_leg: Option<usize>,
    pub t_grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub f_eff_values: Option<Vec<f64>>,
    pub metadata: RecordMetadata,
}

impl TransferRecord {
    /// Checks grid ordering and the fidelity range.
    pub fn validate(&self) -> Result<()> {
        check_grid(&self.t_grid)?;
        let series = std::iter::once(&self.f_values).chain(self.f_eff_values.as_ref());
        for values in series {
            if values.len() != self.t_grid.len() {
                return Err(QstError::InvalidParameter(format!(
                    "{} values on a grid of {}",
                    values.len(),
                    self.t_grid.len()
                )));
            }
            if let Some(f) = values.iter().find(|f| !(-1e-12..=1.0 + 1e-12).contains(*f)) {
                return Err(QstError::InvalidParameter(format!("fidelity {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `0, dt, 2 dt, ..., t_max` (the endpoint is included when `t_max / dt` is integral).
pub fn uniform_grid(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(QstError::InvalidParameter(format!("grid t_max = {t_max}, dt = {dt}")));
    }
    let steps = (t_max / dt + 1e-9).floor() as usize;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

pub fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(QstError::Empty("time grid".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(QstError::InvalidParameter("time grid must be finite and non-negative".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QstError::InvalidParameter("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `<target| rho_subset(t) |target>` for one state evolving under one Hamiltonian.
#[derive(Debug, Clone)]
pub struct FidelityCurve {
    op: SectorOperator,
    coefficients: DVector<Complex64>,
    plan: PartialTracePlan,
    target: DVector<Complex64>,
}

impl FidelityCurve {
    pub fn new(
        op: SectorOperator,
        initial: &SectorState,
        subset: &[usize],
        target: DVector<Complex64>,
    ) -> Result<Self> {
        if op.basis() != initial.basis() {
            return Err(QstError::BasisMismatch);
        }
        let plan = PartialTracePlan::new(op.basis(), subset)?;
        if target.len() != plan.local_dim() {
            return Err(QstError::InvalidParameter(format!(
                "target of length {} on {} sites",
                target.len(),
                subset.len()
            )));
        }
        let coefficients = diagonalize(&op)?.coefficients(initial.amplitudes());
        Ok(Self { op, coefficients, plan, target })
    }

    pub fn fidelity(&self, t: f64) -> f64 {
        let eigen = diagonalize(&self.op).expect("diagonalized at construction");
        self.plan.fidelity(&eigen.evolve_coefficients(&self.coefficients, t), &self.target)
    }

    pub fn series(&self, t_grid: &[f64]) -> Vec<f64> {
        t_grid.par_iter().map(|&t| self.fidelity(t)).collect()
    }

    /// Refined maximum, see [`max_fidelity`].
    pub fn maximum(&self, t_grid: &[f64]) -> Result<(f64, f64)> {
        let values = self.series(t_grid);
        max_fidelity(t_grid, &values, |t| self.fidelity(t))
    }
}

/// Grid maximum (first maximizer) of a series.
pub fn max_on_grid(t_grid: &[f64], values: &[f64]) -> Result<(f64, f64, usize)> {
    if t_grid.is_empty() || values.len() != t_grid.len() {
        return Err(QstError::Empty("fidelity series".into()));
    }
    let mut k = 0;
    for (i, &f) in values.iter().enumerate() {
        if f > values[k] {
            k = i;
        }
    }
    Ok((values[k], t_grid[k], k))
}

/// Maximum of `f` over the grid span: the grid argmax refined by golden-section
/// search within one grid step on each side, to a time tolerance of `1e-4`.
/// The grid point is kept unless the refinement finds a strictly larger value.
pub fn max_fidelity(t_grid: &[f64], values: &[f64], eval: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let (f_grid, t_best, k) = max_on_grid(t_grid, values)?;
    let lo = t_grid[k.saturating_sub(1)];
    let hi = t_grid[(k + 1).min(t_grid.len() - 1)];
    if hi <= lo {
        return Ok((f_grid, t_best));
    }
    let (mut best_f, mut best_t) = (f_grid, t_best);
    let mut consider = |t: f64, f: f64| {
        if f > best_f {
            best_f = f;
            best_t = t;
        }
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    consider(c, fc);
    consider(d, fd);
    while b - a > 1e-4 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c);
            consider(c, fc);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d);
            consider(d, fd);
        }
    }
    for t in [lo, hi] {
        consider(t, eval(t));
    }
    Ok((best_f, best_t))
}

fn sector_basis(lattice: &SpinLattice) -> Result<Arc<SectorBasis>> {
    SectorBasis::new(lattice.num_sites(), 1)
}

/// Rung-to-rung transfer curve on the full lattice.
pub fn rr_curve(
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &RungInput,
    sender: usize,
    distance: usize,
) -> Result<FidelityCurve> {
    let receiver = lattice.receiver_rung(sender, distance)?;
    let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
    let psi = prepare_rung_input(&pair, input)?;
    let basis = sector_basis(lattice)?;
    let initial = embed_rung_vector(&basis, lattice, sender, &psi)?;
    let op = transfer_hamiltonian(lattice, params, &basis)?;
    FidelityCurve::new(op, &initial, &lattice.rung_sites(receiver)?, psi)
}

/// `f(t) = <psi| rho_{i+r}(t) |psi>` on the full lattice.
pub fn rr_transfer(
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &RungInput,
    sender: usize,
    distance: usize,
    t_grid: &[f64],
) -> Result<TransferRecord> {
    check_grid(t_grid)?;
    let curve = rr_curve(lattice, params, input, sender, distance)?;
    Ok(TransferRecord {
        pipeline: Pipeline::RungToRung,
        lattice: Some(*lattice),
        params: Some(*params),
        couplings: None,
        input: RecordInput::Rung(*input),
        sender,
        distance,
        target_leg: None,
        t_grid: t_grid.to_vec(),
        f_values: curve.series(t_grid),
        f_eff_values: None,
        metadata: RecordMetadata::default(),
    })
}

/// Effective-chain curve for a sender state reduced to its ground-pair part.
pub fn effective_curve(
    n: usize,
    couplings: &EffectiveCouplings,
    bc_leg: Boundary,
    pair: &RungGroundPair,
    input: &RungInput,
    sender: usize,
    distance: usize,
    mode: ProjectionMode,
) -> Result<FidelityCurve> {
    let receiver = receiver_index(n, bc_leg, sender, distance)?;
    let psi = prepare_rung_input(pair, input)?;
    let mut phi = DVector::from_vec(vec![pair.ket0.dotc(&psi), pair.ket1.dotc(&psi)]);
    if mode == ProjectionMode::Normalized {
        let norm = phi.norm();
        if norm < 1e-14 {
            return Err(QstError::InvalidParameter(
                "input has no weight in the rung ground pair".into(),
            ));
        }
        phi.unscale_mut(norm);
    }
    let basis = SectorBasis::new(n, 1)?;
    let mut initial = SectorState::zero(basis.clone());
    initial.add_amplitude(0, phi[0])?;
    initial.add_amplitude((1 as Config) << (sender - 1), phi[1])?;
    let op = build_effective_xxz(n, couplings, bc_leg, &basis)?;
    FidelityCurve::new(op, &initial, &[receiver - 1], phi)
}

/// `f_eff(t) = <phi| rho_{i+r}(t) |phi>` on the effective chain of `n` sites.
#[allow(clippy::too_many_arguments)]
pub fn effective_transfer(
    n: usize,
    couplings: &EffectiveCouplings,
    bc_leg: Boundary,
    pair: &RungGroundPair,
    input: &RungInput,
    sender: usize,
    distance: usize,
    t_grid: &[f64],
    mode: ProjectionMode,
) -> Result<TransferRecord> {
    check_grid(t_grid)?;
    let curve = effective_curve(n, couplings, bc_leg, pair, input, sender, distance, mode)?;
    let values = curve.series(t_grid);
    Ok(TransferRecord {
        pipeline: Pipeline::Effective,
        lattice: None,
        params: None,
        couplings: Some(*couplings),
        input: RecordInput::Rung(*input),
        sender,
        distance,
        target_leg: None,
        t_grid: t_grid.to_vec(),
        f_values: values.clone(),
        f_eff_values: Some(values),
        metadata: RecordMetadata::default(),
    })
}

/// Both pipelines on one grid: `(f, f_eff)`.
pub fn compare_pipelines(
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &RungInput,
    sender: usize,
    distance: usize,
    t_grid: &[f64],
    mode: ProjectionMode,
) -> Result<TransferRecord> {
    let mut record = rr_transfer(lattice, params, input, sender, distance, t_grid)?;
    let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
    let couplings = couplings_for_lattice(lattice, params)?;
    let eff = effective_curve(
        lattice.rungs(),
        &couplings,
        lattice.bc_leg(),
        &pair,
        input,
        sender,
        distance,
        mode,
    )?;
    record.couplings = Some(couplings);
    record.f_eff_values = Some(eff.series(t_grid));
    Ok(record)
}

/// `max_t |f - f_eff|`.
pub fn epsilon_error(
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &RungInput,
    sender: usize,
    distance: usize,
    t_grid: &[f64],
    mode: ProjectionMode,
) -> Result<f64> {
    let record = compare_pipelines(lattice, params, input, sender, distance, t_grid, mode)?;
    let eff = record.f_eff_values.as_ref().expect("filled by compare_pipelines");
    Ok(record.f_values.iter().zip(eff).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Fidelity of every input `x_0 |e_0> + x_1 |e_1>` at each grid time, as a
/// quartic form in `x`.
///
/// Valid for any pipeline that maps the input linearly to the evolved state
/// and compares against `x_0 |T_0> + x_1 |T_1>` on the receiver.
#[derive(Debug, Clone)]
pub struct FidelityKernel {
    t_grid: Vec<f64>,
    /// `K[a b c d] = sum_g A_g[a][b] conj(A_g[c][d])`, flattened as `8a + 4b + 2c + d`.
    k: Vec<[Complex64; 16]>,
}

impl FidelityKernel {
    /// `evolved(t)` returns the two evolved basis inputs at time `t`.
    pub fn build<F>(
        plan: &PartialTracePlan,
        targets: [&DVector<Complex64>; 2],
        t_grid: &[f64],
        evolved: F,
    ) -> Result<Self>
    where
        F: Fn(f64) -> Result<[DVector<Complex64>; 2]> + Sync,
    {
        check_grid(t_grid)?;
        let k = t_grid
            .par_iter()
            .map(|&t| {
                let phis = evolved(t)?;
                // a[a][b][g]
                let a: Vec<Vec<Vec<Complex64>>> = (0..2)
                    .map(|ta| (0..2).map(|pb| plan.group_overlaps(&phis[pb], targets[ta])).collect())
                    .collect();
                let mut out = [ZERO; 16];
                for (idx, slot) in out.iter_mut().enumerate() {
                    let (ia, ib, ic, id) = (idx >> 3 & 1, idx >> 2 & 1, idx >> 1 & 1, idx & 1);
                    *slot = a[ia][ib].iter().zip(&a[ic][id]).map(|(x, y)| x * y.conj()).sum();
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { t_grid: t_grid.to_vec(), k })
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn fidelity(&self, t_index: usize, x: [Complex64; 2]) -> f64 {
        let k = &self.k[t_index];
        let mut acc = ZERO;
        for (idx, kv) in k.iter().enumerate() {
            let (a, b, c, d) = (idx >> 3 & 1, idx >> 2 & 1, idx >> 1 & 1, idx & 1);
            acc += x[a].conj() * x[b] * x[c] * x[d].conj() * kv;
        }
        acc.re
    }

    pub fn series(&self, x: [Complex64; 2]) -> Vec<f64> {
        (0..self.t_grid.len()).map(|i| self.fidelity(i, x)).collect()
    }
}

/// `x = (a1, e^{i a2} sqrt(1 - a1^2))`.
pub fn amplitudes(a1: f64, a2: f64) -> [Complex64; 2] {
    [
        Complex64::new(a1, 0.0),
        Complex64::from_polar((1.0 - a1 * a1).max(0.0).sqrt(), a2),
    ]
}

/// Kernel of the rung-to-rung pipeline for ground-pair inputs.
pub fn rr_kernel(
    lattice: &SpinLattice,
    params: &ModelParams,
    sender: usize,
    distance: usize,
    t_grid: &[f64],
) -> Result<FidelityKernel> {
    let receiver = lattice.receiver_rung(sender, distance)?;
    let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
    let basis = sector_basis(lattice)?;
    let op = transfer_hamiltonian(lattice, params, &basis)?;
    let eigen = diagonalize(&op)?;
    let coeffs = [&pair.ket0, &pair.ket1]
        .map(|k| embed_rung_vector(&basis, lattice, sender, k).map(|s| eigen.coefficients(s.amplitudes())));
    let [c0, c1] = coeffs;
    let (c0, c1) = (c0?, c1?);
    let plan = PartialTracePlan::new(&basis, &lattice.rung_sites(receiver)?)?;
    FidelityKernel::build(&plan, [&pair.ket0, &pair.ket1], t_grid, |t| {
        Ok([eigen.evolve_coefficients(&c0, t), eigen.evolve_coefficients(&c1, t)])
    })
}

/// Kernel of the effective-chain pipeline.
pub fn effective_kernel(
    n: usize,
    couplings: &EffectiveCouplings,
    bc_leg: Boundary,
    sender: usize,
    distance: usize,
    t_grid: &[f64],
) -> Result<FidelityKernel> {
    let receiver = receiver_index(n, bc_leg, sender, distance)?;
    let basis = SectorBasis::new(n, 1)?;
    let op = build_effective_xxz(n, couplings, bc_leg, &basis)?;
    let eigen = diagonalize(&op)?;
    let e0 = SectorState::basis_state(basis.clone(), 0)?;
    let e1 = SectorState::basis_state(basis.clone(), (1 as Config) << (sender - 1))?;
    let (c0, c1) = (eigen.coefficients(e0.amplitudes()), eigen.coefficients(e1.amplitudes()));
    let plan = PartialTracePlan::new(&basis, &[receiver - 1])?;
    let t0 = DVector::from_vec(vec![Complex64::new(1.0, 0.0), ZERO]);
    let t1 = DVector::from_vec(vec![ZERO, Complex64::new(1.0, 0.0)]);
    FidelityKernel::build(&plan, [&t0, &t1], t_grid, |t| {
        Ok([eigen.evolve_coefficients(&c0, t), eigen.evolve_coefficients(&c1, t)])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarAverage {
    pub t_grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// `max_t <f>(t)` over the grid.
    pub max_mean: f64,
    pub t_at_max: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Average fidelity over explicit `(a1, a2)` samples, accumulated in sample order.
pub fn average_over(kernel: &FidelityKernel, samples: &[(f64, f64)], seed: u64) -> Result<HaarAverage> {
    if samples.is_empty() {
        return Err(QstError::Empty("sample set".into()));
    }
    let xs: Vec<[Complex64; 2]> = samples.iter().map(|&(a1, a2)| amplitudes(a1, a2)).collect();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..kernel.t_grid.len())
        .into_par_iter()
        .map(|i| xs.iter().map(|&x| kernel.fidelity(i, x)).collect::<NeumaierSum>().total() / n)
        .collect();
    let (max_mean, t_at_max, _) = max_on_grid(&kernel.t_grid, &mean)?;
    Ok(HaarAverage {
        t_grid: kernel.t_grid.clone(),
        mean,
        max_mean,
        t_at_max,
        samples: samples.len(),
        seed,
    })
}

/// Haar average `<f>(t)` and its grid maximum.
pub fn haar_average(kernel: &FidelityKernel, n_samples: usize, seed: u64) -> Result<HaarAverage> {
    average_over(kernel, &haar_samples(n_samples, seed)?, seed)
}
