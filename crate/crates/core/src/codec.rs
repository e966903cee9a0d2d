//! Single-qubit transfer through the rung ground pair.
//!
//! A qubit `c0 |0> + c1 |1>` on one site of the sender rung is rotated into
//! `c0 |0> + c1 e^{i phi} |1>` of the rung pair by a timed rung evolution and
//! single-site phase gates, carried along the lattice, and rotated back out
//! onto one site of the receiver rung.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QstError, Result};
use crate::lattice::{Boundary, SpinLattice};
use crate::models::{find_critical_field, transfer_hamiltonian, ModelParams, RungGroundPair};
use crate::propagation::{diagonalize, RungEvolution};
use crate::sector::{Config, PartialTracePlan, SectorBasis, SectorState};
use crate::transfer::{
    check_grid, FidelityKernel, Pipeline, RecordInput, RecordMetadata, RungInput, TransferRecord,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const SUPPORT_TOL: f64 = 1e-12;

/// `c0 |0> + c1 |1>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitInput {
    pub c0: Complex64,
    pub c1: Complex64,
}

impl QubitInput {
    pub fn new(c0: Complex64, c1: Complex64) -> Result<Self> {
        let n2 = c0.norm_sqr() + c1.norm_sqr();
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(QstError::NotNormalized(n2));
        }
        Ok(Self { c0, c1 })
    }

    /// `a1 |0> + e^{i a2} sqrt(1 - a1^2) |1>`.
    pub fn from_angles(a1: f64, a2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a1) || !a2.is_finite() {
            return Err(QstError::InvalidParameter(format!("qubit angles a1 = {a1}, a2 = {a2}")));
        }
        let [c0, c1] = crate::transfer::amplitudes(a1, a2);
        Ok(Self { c0, c1 })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.c0, self.c1).map(|_| ())
    }

    pub fn vector(&self) -> DVector<Complex64> {
        DVector::from_vec(vec![self.c0, self.c1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Two legs, sender qubit on rung 1.
    TwoLeg,
    /// Four legs with periodic rungs, sender qubit `(1, 1)`.
    FourLeg,
    /// No three-leg protocol exists; selecting it is an error.
    ThreeLeg,
}

/// Field of the encoding and decoding rung evolutions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RungField {
    #[default]
    Critical,
    Custom(f64),
}

/// Protocol choice for the codec pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecOptions {
    pub protocol: Protocol,
    #[serde(default = "default_leg")]
    pub sender_leg: usize,
    #[serde(default)]
    pub field: RungField,
}

fn default_leg() -> usize {
    1
}

impl CodecOptions {
    pub fn new(protocol: Protocol) -> Self {
        Self { protocol, sender_leg: 1, field: RungField::Critical }
    }

    pub fn with_sender_leg(mut self, leg: usize) -> Self {
        self.sender_leg = leg;
        self
    }

    pub fn with_field(mut self, field: RungField) -> Self {
        self.field = field;
        self
    }
}

/// Encoder bound to one lattice and sector basis; the sender rung is 1.
#[derive(Debug, Clone)]
pub struct Codec {
    lattice: SpinLattice,
    basis: Arc<SectorBasis>,
    options: CodecOptions,
    pair: RungGroundPair,
    w: f64,
    encoder: RungEvolution,
}

impl Codec {
    pub fn new(lattice: &SpinLattice, basis: &Arc<SectorBasis>, options: CodecOptions) -> Result<Self> {
        match options.protocol {
            Protocol::ThreeLeg => {
                return Err(QstError::UnsupportedProtocol(
                    "no single-qubit protocol is defined for three-leg lattices".into(),
                ))
            }
            Protocol::TwoLeg => {
                if lattice.legs() != 2 {
                    return Err(QstError::UnsupportedProtocol(format!(
                        "two-leg protocol on an L = {} lattice",
                        lattice.legs()
                    )));
                }
                if !(1..=2).contains(&options.sender_leg) {
                    return Err(QstError::OutOfRange(format!("sender leg {}", options.sender_leg)));
                }
            }
            Protocol::FourLeg => {
                if lattice.legs() != 4 || lattice.bc_rung() != Boundary::Periodic {
                    return Err(QstError::UnsupportedProtocol(format!(
                        "four-leg protocol needs L = 4 with periodic rungs, got L = {} with {} rungs",
                        lattice.legs(),
                        lattice.bc_rung()
                    )));
                }
                if options.sender_leg != 1 {
                    return Err(QstError::UnsupportedProtocol(
                        "four-leg protocol sends from qubit (1, 1)".into(),
                    ));
                }
            }
        }
        let pair = find_critical_field(lattice.legs(), lattice.bc_rung())?;
        let w = match options.field {
            RungField::Critical => pair.w_c,
            RungField::Custom(w) => w,
        };
        let encoder = RungEvolution::new(lattice, basis, w, 1)?;
        Ok(Self { lattice: *lattice, basis: basis.clone(), options, pair, w, encoder })
    }

    pub fn pair(&self) -> &RungGroundPair {
        &self.pair
    }

    pub fn sender_site(&self) -> usize {
        self.lattice.site_index(1, self.options.sender_leg).expect("validated sender leg")
    }

    /// `c0 |0...0> + c1 |flip on the sender qubit>`.
    pub fn embed(&self, input: &QubitInput) -> Result<SectorState> {
        let mut state = SectorState::zero(self.basis.clone());
        state.add_amplitude(0, input.c0)?;
        state.add_amplitude((1 as Config) << self.sender_site(), input.c1)?;
        Ok(state)
    }

    pub fn encode(&self, state: &SectorState) -> Result<SectorState> {
        let sender = (1 as Config) << self.sender_site();
        let stray: f64 = state
            .basis()
            .configs()
            .iter()
            .zip(state.amplitudes().iter())
            .filter(|(&c, _)| c != 0 && c != sender)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        if stray > SUPPORT_TOL {
            return Err(QstError::InvalidParameter(format!(
                "encoder input has weight {stray:.3e} outside the sender qubit"
            )));
        }
        let mut out = self.encoder.apply(state, FRAC_PI_2)?;
        match self.options.protocol {
            Protocol::TwoLeg => out.apply_phase(self.sender_site(), FRAC_PI_4)?,
            Protocol::FourLeg => {
                out.apply_pauli_z(self.lattice.site_index(1, 1)?)?;
                for leg in [2, 4] {
                    out.apply_phase(self.lattice.site_index(1, leg)?, FRAC_PI_4)?;
                }
            }
            Protocol::ThreeLeg => unreachable!("rejected in Codec::new"),
        }
        Ok(out)
    }

    /// Decoder onto qubit `(receiver_rung, target_leg)`.
    pub fn decoder(&self, receiver_rung: usize, target_leg: usize) -> Result<Decoder> {
        let legs = self.lattice.legs();
        if target_leg == 0 || target_leg > legs {
            return Err(QstError::OutOfRange(format!("target leg {target_leg} on L = {legs}")));
        }
        let site = |leg: usize| self.lattice.site_index(receiver_rung, leg);
        let target = site(target_leg)?;
        let (pre_z, phase_sites, rd_z) = match self.options.protocol {
            Protocol::TwoLeg => (None, vec![target], target_leg != self.options.sender_leg),
            Protocol::FourLeg => {
                let partners = if target_leg % 2 == 1 { [2, 4] } else { [1, 3] };
                (
                    Some(target),
                    vec![site(partners[0])?, site(partners[1])?],
                    target_leg % 2 == 0,
                )
            }
            Protocol::ThreeLeg => unreachable!("rejected in Codec::new"),
        };
        Ok(Decoder {
            evolution: RungEvolution::new(&self.lattice, &self.basis, self.w, receiver_rung)?,
            pre_z,
            phase_sites,
            target,
            rd_z,
            rd_phase: PI * (self.w - self.pair.w_c),
        })
    }

    /// Ground-pair content of the encoded sender rung as a low-energy input,
    /// plus the weight `D` left outside the pair.
    pub fn encoded_rung_input(&self, input: &QubitInput) -> Result<(RungInput, f64)> {
        let encoded = self.encode(&self.embed(input)?)?;
        let alpha0 = encoded.amplitude(0);
        let mut alpha1 = ZERO;
        for leg in 1..=self.lattice.legs() {
            let cfg = (1 as Config) << self.lattice.site_index(1, leg)?;
            alpha1 += self.pair.ket1_leg_amplitude(leg).conj() * encoded.amplitude(cfg);
        }
        let weight = alpha0.norm_sqr() + alpha1.norm_sqr();
        let d = (encoded.norm_sqr() - weight).max(0.0);
        let a1 = (alpha0.norm() / weight.sqrt()).min(1.0);
        let a2 = if alpha0.norm() > 1e-14 { alpha1.arg() - alpha0.arg() } else { alpha1.arg() };
        Ok((RungInput::low_energy(a1, a2.rem_euclid(std::f64::consts::TAU)), d))
    }
}

/// Decoding unitary for one receiver qubit.
#[derive(Debug, Clone)]
pub struct Decoder {
    evolution: RungEvolution,
    pre_z: Option<usize>,
    phase_sites: Vec<usize>,
    target: usize,
    rd_z: bool,
    rd_phase: f64,
}

impl Decoder {
    pub fn target_site(&self) -> usize {
        self.target
    }

    pub fn decode(&self, state: &SectorState) -> Result<SectorState> {
        let mut s = state.clone();
        if let Some(site) = self.pre_z {
            s.apply_pauli_z(site)?;
        }
        for &site in &self.phase_sites {
            s.apply_phase(site, -FRAC_PI_4)?;
        }
        let mut s = self.evolution.apply(&s, 3.0 * FRAC_PI_2)?;
        if self.rd_z {
            s.apply_pauli_z(self.target)?;
        }
        if self.rd_phase != 0.0 {
            s.apply_phase(self.target, self.rd_phase)?;
        }
        Ok(s)
    }
}

fn two_leg_options(sender_leg: usize, field: RungField) -> CodecOptions {
    CodecOptions::new(Protocol::TwoLeg).with_sender_leg(sender_leg).with_field(field)
}

/// Two-leg encoding of the qubit on `(1, sender_leg)`.
pub fn encode_two_leg(
    lattice: &SpinLattice,
    state: &SectorState,
    sender_leg: usize,
    field: RungField,
) -> Result<SectorState> {
    Codec::new(lattice, state.basis(), two_leg_options(sender_leg, field))?.encode(state)
}

/// Two-leg decoding onto `(receiver_rung, target_leg)`.
pub fn decode_two_leg(
    lattice: &SpinLattice,
    state: &SectorState,
    receiver_rung: usize,
    target_leg: usize,
    sender_leg: usize,
    field: RungField,
) -> Result<SectorState> {
    Codec::new(lattice, state.basis(), two_leg_options(sender_leg, field))?
        .decoder(receiver_rung, target_leg)?
        .decode(state)
}

pub fn encode_four_leg(lattice: &SpinLattice, state: &SectorState, field: RungField) -> Result<SectorState> {
    Codec::new(lattice, state.basis(), CodecOptions::new(Protocol::FourLeg).with_field(field))?.encode(state)
}

pub fn decode_four_leg(
    lattice: &SpinLattice,
    state: &SectorState,
    receiver_rung: usize,
    target_leg: usize,
    field: RungField,
) -> Result<SectorState> {
    Codec::new(lattice, state.basis(), CodecOptions::new(Protocol::FourLeg).with_field(field))?
        .decoder(receiver_rung, target_leg)?
        .decode(state)
}

fn qubit_targets() -> [DVector<Complex64>; 2] {
    [DVector::from_vec(vec![ONE, ZERO]), DVector::from_vec(vec![ZERO, ONE])]
}

/// Kernel of encode, transfer over `distance` rungs, decode onto `target_leg`.
pub fn single_qubit_kernel(
    lattice: &SpinLattice,
    params: &ModelParams,
    options: CodecOptions,
    distance: usize,
    target_leg: usize,
    t_grid: &[f64],
) -> Result<FidelityKernel> {
    let receiver = lattice.receiver_rung(1, distance)?;
    let basis = SectorBasis::new(lattice.num_sites(), 1)?;
    let codec = Codec::new(lattice, &basis, options)?;
    let decoder = codec.decoder(receiver, target_leg)?;
    let op = transfer_hamiltonian(lattice, params, &basis)?;
    let eigen = diagonalize(&op)?;
    let mut coeffs = Vec::with_capacity(2);
    for q in [QubitInput { c0: ONE, c1: ZERO }, QubitInput { c0: ZERO, c1: ONE }] {
        let encoded = codec.encode(&codec.embed(&q)?)?;
        coeffs.push(eigen.coefficients(encoded.amplitudes()));
    }
    let plan = PartialTracePlan::new(&basis, &[decoder.target_site()])?;
    let [t0, t1] = qubit_targets();
    FidelityKernel::build(&plan, [&t0, &t1], t_grid, |t| {
        let mut out = [DVector::zeros(0), DVector::zeros(0)];
        for (slot, c) in out.iter_mut().zip(&coeffs) {
            let evolved = SectorState::new(basis.clone(), eigen.evolve_coefficients(c, t))?;
            *slot = decoder.decode(&evolved)?.into_amplitudes();
        }
        Ok(out)
    })
}

/// Kernel of the unencoded qubit evolving under the transfer generator.
pub fn bare_kernel(
    lattice: &SpinLattice,
    params: &ModelParams,
    sender_leg: usize,
    distance: usize,
    target_leg: usize,
    t_grid: &[f64],
) -> Result<FidelityKernel> {
    let receiver = lattice.receiver_rung(1, distance)?;
    let basis = SectorBasis::new(lattice.num_sites(), 1)?;
    let sender = lattice.site_index(1, sender_leg)?;
    let target = lattice.site_index(receiver, target_leg)?;
    let op = transfer_hamiltonian(lattice, params, &basis)?;
    let eigen = diagonalize(&op)?;
    let c0 = eigen.coefficients(SectorState::basis_state(basis.clone(), 0)?.amplitudes());
    let c1 = eigen.coefficients(SectorState::basis_state(basis.clone(), (1 as Config) << sender)?.amplitudes());
    let plan = PartialTracePlan::new(&basis, &[target])?;
    let [t0, t1] = qubit_targets();
    FidelityKernel::build(&plan, [&t0, &t1], t_grid, |t| {
        Ok([eigen.evolve_coefficients(&c0, t), eigen.evolve_coefficients(&c1, t)])
    })
}

fn qubit_record(
    pipeline: Pipeline,
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &QubitInput,
    distance: usize,
    target_leg: usize,
    t_grid: &[f64],
    kernel: &FidelityKernel,
) -> TransferRecord {
    TransferRecord {
        pipeline,
        lattice: Some(*lattice),
        params: Some(*params),
        couplings: None,
        input: RecordInput::Qubit(*input),
        sender: 1,
        distance,
        target_leg: Some(target_leg),
        t_grid: t_grid.to_vec(),
        f_values: kernel.series([input.c0, input.c1]),
        f_eff_values: None,
        metadata: RecordMetadata::default(),
    }
}

/// `f'(t) = <psi| rho_(1+r, j)(t) |psi>` after encode, transfer and decode.
pub fn single_qubit_transfer(
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &QubitInput,
    distance: usize,
    target_leg: usize,
    t_grid: &[f64],
    options: CodecOptions,
) -> Result<TransferRecord> {
    input.validate()?;
    check_grid(t_grid)?;
    let kernel = single_qubit_kernel(lattice, params, options, distance, target_leg, t_grid)?;
    Ok(qubit_record(Pipeline::SingleQubit, lattice, params, input, distance, target_leg, t_grid, &kernel))
}

/// The same fidelity without encoding or decoding.
pub fn bare_transfer_baseline(
    lattice: &SpinLattice,
    params: &ModelParams,
    input: &QubitInput,
    sender_leg: usize,
    distance: usize,
    target_leg: usize,
    t_grid: &[f64],
) -> Result<TransferRecord> {
    input.validate()?;
    check_grid(t_grid)?;
    let kernel = bare_kernel(lattice, params, sender_leg, distance, target_leg, t_grid)?;
    Ok(qubit_record(Pipeline::BareBaseline, lattice, params, input, distance, target_leg, t_grid, &kernel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::{high_energy_overlap, rr_transfer, uniform_grid};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_qubits(n: usize) -> Vec<QubitInput> {
        crate::stats::haar_samples(n, 99)
            .unwrap()
            .into_iter()
            .map(|(a1, a2)| QubitInput::from_angles(a1, a2).unwrap())
            .collect()
    }

    /// `|<q| rho_target |q>|` after decoding on the same rung.
    fn roundtrip_fidelity(lat: &SpinLattice, options: CodecOptions, q: &QubitInput, target_leg: usize) -> f64 {
        let basis = SectorBasis::new(lat.num_sites(), 1).unwrap();
        let codec = Codec::new(lat, &basis, options).unwrap();
        let out = codec.decoder(1, target_leg).unwrap().decode(&codec.encode(&codec.embed(q).unwrap()).unwrap()).unwrap();
        let rho = out.reduced_density_matrix(&[lat.site_index(1, target_leg).unwrap()]).unwrap();
        let v = q.vector();
        v.dotc(&(rho * &v)).re
    }

    #[test]
    fn qubit_input_validation() {
        assert!(QubitInput::new(c(1.0, 0.0), c(0.1, 0.0)).is_err());
        assert!(QubitInput::new(c(0.6, 0.0), c(0.0, 0.8)).is_ok());
        assert!(QubitInput::from_angles(1.1, 0.0).is_err());
    }

    #[test]
    fn protocol_selection() {
        let basis = SectorBasis::new(9, 1).unwrap();
        let l3 = SpinLattice::open(3, 3).unwrap();
        for p in [Protocol::ThreeLeg, Protocol::TwoLeg, Protocol::FourLeg] {
            assert!(matches!(Codec::new(&l3, &basis, CodecOptions::new(p)), Err(QstError::UnsupportedProtocol(_))));
        }
        let open4 = SpinLattice::open(2, 4).unwrap();
        let b8 = SectorBasis::new(8, 1).unwrap();
        assert!(matches!(
            Codec::new(&open4, &b8, CodecOptions::new(Protocol::FourLeg)),
            Err(QstError::UnsupportedProtocol(_))
        ));
    }

    #[test]
    fn two_leg_encoding_of_flip() {
        let lat = SpinLattice::open(3, 2).unwrap();
        let basis = SectorBasis::new(6, 1).unwrap();
        let codec = Codec::new(&lat, &basis, CodecOptions::new(Protocol::TwoLeg)).unwrap();
        let enc = codec.encode(&codec.embed(&QubitInput { c0: ZERO, c1: ONE }).unwrap()).unwrap();
        // e^{5 i pi/4} (|01> - |10>)/sqrt2 up to a global phase.
        let mut want = SectorState::zero(basis.clone());
        let e5 = Complex64::from_polar(FRAC_1_SQRT_2, 5.0 * PI / 4.0);
        want.add_amplitude(1 << lat.site_index(1, 2).unwrap(), e5).unwrap();
        want.add_amplitude(1 << lat.site_index(1, 1).unwrap(), -e5).unwrap();
        assert!((enc.inner(&want).unwrap().norm() - 1.0).abs() < 1e-12);

        // c1 = 0 is left alone up to a phase.
        let vac = codec.embed(&QubitInput { c0: ONE, c1: ZERO }).unwrap();
        let out = codec.encode(&vac).unwrap();
        assert!((out.inner(&vac).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_leg_relative_phase() {
        // c0 |0> + c1 e^{5 i pi/4} |1> up to a global phase.
        let lat = SpinLattice::open(2, 2).unwrap();
        let basis = SectorBasis::new(4, 1).unwrap();
        let codec = Codec::new(&lat, &basis, CodecOptions::new(Protocol::TwoLeg)).unwrap();
        let q = QubitInput::new(c(0.6, 0.0), c(0.0, 0.8)).unwrap();
        let (rin, d) = codec.encoded_rung_input(&q).unwrap();
        assert!(d < 1e-12);
        let want = (q.c1.arg() + 5.0 * PI / 4.0 - q.c0.arg()).rem_euclid(std::f64::consts::TAU);
        let diff = (rin.a2() - want).rem_euclid(std::f64::consts::TAU);
        assert!(diff.min(std::f64::consts::TAU - diff) < 1e-12, "{} vs {want}", rin.a2());
        assert!((rin.a1() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn four_leg_encoding_of_flip() {
        let lat = SpinLattice::new(2, 4, Boundary::Periodic, Boundary::Open).unwrap();
        let basis = SectorBasis::new(8, 1).unwrap();
        let codec = Codec::new(&lat, &basis, CodecOptions::new(Protocol::FourLeg)).unwrap();
        let enc = codec.encode(&codec.embed(&QubitInput { c0: ZERO, c1: ONE }).unwrap()).unwrap();
        // (|0001> - |0010> + |0100> - |1000>)/2: legs 4, 3, 2, 1.
        let mut want = SectorState::zero(basis);
        for (leg, s) in [(4, 0.5), (3, -0.5), (2, 0.5), (1, -0.5)] {
            want.add_amplitude(1 << lat.site_index(1, leg).unwrap(), c(s, 0.0)).unwrap();
        }
        assert!((enc.inner(&want).unwrap().norm() - 1.0).abs() < 1e-12);

        let q = QubitInput::new(c(0.6, 0.0), c(0.0, 0.8)).unwrap();
        let (rin, d) = codec.encoded_rung_input(&q).unwrap();
        assert!(d < 1e-12);
        let want = (q.c1.arg() - FRAC_PI_2 - q.c0.arg()).rem_euclid(std::f64::consts::TAU);
        let diff = (rin.a2() - want).rem_euclid(std::f64::consts::TAU);
        assert!(diff.min(std::f64::consts::TAU - diff) < 1e-12);
    }

    #[test]
    fn encoding_stays_in_ground_pair() {
        let two = SpinLattice::open(2, 2).unwrap();
        let four = SpinLattice::new(2, 4, Boundary::Periodic, Boundary::Open).unwrap();
        for q in random_qubits(20) {
            for (lat, opts) in [
                (two, CodecOptions::new(Protocol::TwoLeg)),
                (two, CodecOptions::new(Protocol::TwoLeg).with_sender_leg(2)),
                (four, CodecOptions::new(Protocol::FourLeg)),
            ] {
                let basis = SectorBasis::new(lat.num_sites(), 1).unwrap();
                let codec = Codec::new(&lat, &basis, opts).unwrap();
                let (_, d) = codec.encoded_rung_input(&q).unwrap();
                assert!(d <= 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn encode_rejects_wrong_support() {
        let lat = SpinLattice::open(2, 2).unwrap();
        let basis = SectorBasis::new(4, 1).unwrap();
        let other = SectorState::basis_state(basis, 1 << lat.site_index(2, 1).unwrap()).unwrap();
        assert!(encode_two_leg(&lat, &other, 1, RungField::Critical).is_err());
    }

    #[test]
    fn decode_of_vacuum() {
        let lat = SpinLattice::open(3, 2).unwrap();
        let basis = SectorBasis::new(6, 1).unwrap();
        let vac = SectorState::basis_state(basis, 0).unwrap();
        let out = decode_two_leg(&lat, &vac, 3, 2, 1, RungField::Critical).unwrap();
        assert!((out.amplitude(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roundtrips() {
        let two = SpinLattice::open(2, 2).unwrap();
        let four = SpinLattice::new(2, 4, Boundary::Periodic, Boundary::Open).unwrap();
        for q in random_qubits(25) {
            for sender in 1..=2 {
                for target in 1..=2 {
                    for field in [RungField::Critical, RungField::Custom(1.07), RungField::Custom(0.8)] {
                        let opts = two_leg_options(sender, field);
                        let f = roundtrip_fidelity(&two, opts, &q, target);
                        assert!(f >= 1.0 - 1e-10, "two-leg s={sender} t={target} {field:?}: {f}");
                    }
                }
            }
            for target in 1..=4 {
                for field in [RungField::Critical, RungField::Custom(2.05)] {
                    let opts = CodecOptions::new(Protocol::FourLeg).with_field(field);
                    let f = roundtrip_fidelity(&four, opts, &q, target);
                    assert!(f >= 1.0 - 1e-10, "four-leg t={target} {field:?}: {f}");
                }
            }
        }
    }

    #[test]
    fn polarized_qubit_is_stationary() {
        let lat = SpinLattice::open(4, 2).unwrap();
        let params = ModelParams::new(0.05, 0.0, 0.0, 1.0);
        let grid = uniform_grid(100.0, 1.0).unwrap();
        let q = QubitInput { c0: ONE, c1: ZERO };
        let f = single_qubit_transfer(&lat, &params, &q, 2, 1, &grid, CodecOptions::new(Protocol::TwoLeg)).unwrap();
        assert!(f.f_values.iter().all(|x| (x - 1.0).abs() < 1e-12));
        let b = bare_transfer_baseline(&lat, &params, &q, 1, 2, 1, &grid).unwrap();
        assert!(b.f_values.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn kernel_matches_explicit_pipeline() {
        let lat = SpinLattice::open(4, 2).unwrap();
        let params = ModelParams::new(0.05, 0.01, 0.0, 1.0);
        let grid = [0.0, 7.0, 33.0];
        let q = QubitInput::new(c(0.6, 0.0), Complex64::from_polar(0.8, 0.4)).unwrap();
        let rec = single_qubit_transfer(&lat, &params, &q, 2, 2, &grid, CodecOptions::new(Protocol::TwoLeg)).unwrap();
        let basis = SectorBasis::new(8, 1).unwrap();
        let codec = Codec::new(&lat, &basis, CodecOptions::new(Protocol::TwoLeg)).unwrap();
        let op = transfer_hamiltonian(&lat, &params, &basis).unwrap();
        let dec = codec.decoder(3, 2).unwrap();
        let enc = codec.encode(&codec.embed(&q).unwrap()).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let out = dec.decode(&crate::propagation::evolve(&op, &enc, t).unwrap()).unwrap();
            let rho = out.reduced_density_matrix(&[lat.site_index(3, 2).unwrap()]).unwrap();
            let f = q.vector().dotc(&(rho * q.vector())).re;
            assert!((f - rec.f_values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_qubit_equals_rung_transfer() {
        let lat = SpinLattice::open(5, 2).unwrap();
        let params = ModelParams::new(0.05, 0.0, 0.0, 1.0);
        let grid = uniform_grid(100.0, 0.5).unwrap();
        let pair = find_critical_field(2, Boundary::Open).unwrap();
        for q in random_qubits(3) {
            let basis = SectorBasis::new(10, 1).unwrap();
            let codec = Codec::new(&lat, &basis, CodecOptions::new(Protocol::TwoLeg)).unwrap();
            let (rin, _) = codec.encoded_rung_input(&q).unwrap();
            let psi = crate::transfer::prepare_rung_input(&pair, &rin).unwrap();
            assert!(high_energy_overlap(&psi, &pair).unwrap() < 1e-12);
            for r in 1..=3 {
                let f = rr_transfer(&lat, &params, &rin, 1, r, &grid).unwrap();
                let f1 = single_qubit_transfer(&lat, &params, &q, r, 1, &grid, CodecOptions::new(Protocol::TwoLeg)).unwrap();
                let f2 = single_qubit_transfer(&lat, &params, &q, r, 2, &grid, CodecOptions::new(Protocol::TwoLeg)).unwrap();
                for i in 0..grid.len() {
                    assert!((f.f_values[i] - f1.f_values[i]).abs() <= 1e-6);
                    assert!((f1.f_values[i] - f2.f_values[i]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn bare_baseline_depends_on_target() {
        let lat = SpinLattice::open(4, 2).unwrap();
        let params = ModelParams::new(0.05, 0.0, 0.0, 1.0);
        let grid = uniform_grid(50.0, 0.5).unwrap();
        let q = QubitInput::from_angles(0.4, 1.0).unwrap();
        let a = bare_transfer_baseline(&lat, &params, &q, 1, 2, 1, &grid).unwrap();
        let b = bare_transfer_baseline(&lat, &params, &q, 1, 2, 2, &grid).unwrap();
        let gap = a.f_values.iter().zip(&b.f_values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-3, "{gap}");
    }
}
