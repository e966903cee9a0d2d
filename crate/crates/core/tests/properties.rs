use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qst_core::codec::{Codec, CodecOptions, Protocol, QubitInput};
use qst_core::lattice::receiver_index;
use qst_core::models::ModelParams;
use qst_core::sector::{heisenberg_operator, BondCouplings, FieldProfile, SectorBasis};
use qst_core::transfer::{rr_curve, RungInput};
use qst_core::{BondKind, Boundary, SpinLattice};

fn boundary() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Open), Just(Boundary::Periodic)]
}

fn supported() -> impl Strategy<Value = (usize, Boundary)> {
    prop_oneof![
        Just((2, Boundary::Open)),
        Just((3, Boundary::Open)),
        Just((4, Boundary::Open)),
        Just((4, Boundary::Periodic)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bond_counts_and_shapes(n in 2usize..9, l in 2usize..6, bc_rung in boundary(), bc_leg in boundary()) {
        let lat = SpinLattice::new(n, l, bc_rung, bc_leg).unwrap();
        let rung_steps = if lat.bc_rung() == Boundary::Periodic { l } else { l - 1 };
        let leg_steps = if lat.bc_leg() == Boundary::Periodic { n } else { n - 1 };
        let rungs = lat.bonds(BondKind::Rung);
        let legs = lat.bonds(BondKind::Leg);
        let diags = lat.bonds(BondKind::Diagonal);
        prop_assert_eq!(rungs.len(), n * rung_steps);
        prop_assert_eq!(legs.len(), leg_steps * l);
        prop_assert_eq!(diags.len(), 2 * leg_steps * rung_steps);
        let mut all: Vec<_> = rungs.iter().chain(&legs).chain(&diags).copied().collect();
        let total = all.len();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), total);
        let ring = |d: usize, m: usize| d.min(m - d);
        for (kind, list) in [(BondKind::Rung, &rungs), (BondKind::Leg, &legs), (BondKind::Diagonal, &diags)] {
            for &(a, b) in list {
                let (ia, ja) = lat.site_coords(a).unwrap();
                let (ib, jb) = lat.site_coords(b).unwrap();
                let di = ring(ia.abs_diff(ib), n);
                let dj = ring(ja.abs_diff(jb), l);
                let shape = match kind {
                    BondKind::Rung => (0, 1),
                    BondKind::Leg => (1, 0),
                    BondKind::Diagonal => (1, 1),
                };
                prop_assert_eq!((di, dj), shape);
            }
        }
    }

    #[test]
    fn operator_preserves_excitation_number(n in 2usize..4, l in 2usize..4, j in -1.0..1.0f64, w in -2.0..2.0f64) {
        let lat = SpinLattice::open(n, l).unwrap();
        let basis = SectorBasis::full(lat.num_sites()).unwrap();
        let couplings = BondCouplings { rung: 1.0, leg: j, diagonal: 0.5 * j };
        let op = heisenberg_operator(&basis, &lat, &couplings, &FieldProfile::Uniform(w)).unwrap();
        for &(row, col, _) in op.entries() {
            prop_assert_eq!(basis.config(row).count_ones(), basis.config(col).count_ones());
        }
    }

    #[test]
    fn fidelity_bounded_and_phase_blind(
        (legs, bc) in supported(),
        n in 2usize..5,
        a1 in 0.0..1.0f64,
        u in 0.0..0.1f64,
        v in 0.0..0.1f64,
        dw in 0.0..0.1f64,
        t in 0.0..100.0f64,
    ) {
        let lat = SpinLattice::new(n, legs, bc, Boundary::Open).unwrap();
        let params = ModelParams::for_lattice(&lat, u, v, dw).unwrap();
        let r = n - 1;
        let f = |a2: f64| rr_curve(&lat, &params, &RungInput::low_energy(a1, a2), 1, r).unwrap().fidelity(t);
        let base = f(0.0);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&base));
        for a2 in [PI / 3.0, PI] {
            prop_assert!((f(a2) - base).abs() <= 1e-10);
        }
    }

    #[test]
    fn encoded_state_in_ground_pair(a1 in 0.0..1.0f64, a2 in -PI..PI, four in any::<bool>(), leg in 1usize..3) {
        let (lat, opts) = if four {
            (SpinLattice::new(2, 4, Boundary::Periodic, Boundary::Open).unwrap(), CodecOptions::new(Protocol::FourLeg))
        } else {
            (SpinLattice::open(2, 2).unwrap(), CodecOptions::new(Protocol::TwoLeg).with_sender_leg(leg))
        };
        let basis = SectorBasis::new(lat.num_sites(), 1).unwrap();
        let codec = Codec::new(&lat, &basis, opts).unwrap();
        let q = QubitInput::from_angles(a1, a2).unwrap();
        let (_, d) = codec.encoded_rung_input(&q).unwrap();
        prop_assert!(d <= 1e-12);
        let encoded = codec.encode(&codec.embed(&q).unwrap()).unwrap();
        prop_assert!((encoded.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn receiver_stays_on_chain(n in 1usize..40, sender in 1usize..40, d in 0usize..40, periodic in any::<bool>()) {
        let bc = if periodic { Boundary::Periodic } else { Boundary::Open };
        match receiver_index(n, bc, sender, d) {
            Ok(r) => prop_assert!((1..=n).contains(&r)),
            Err(_) => {
                let past_end = if periodic { d >= n } else { sender + d > n };
                prop_assert!(sender > n || sender == 0 || past_end);
            }
        }
    }
}

#[test]
fn codec_preserves_magnetization() {
    let lat = SpinLattice::open(3, 2).unwrap();
    let full = SectorBasis::full(6).unwrap();
    let codec = Codec::new(&lat, &full, CodecOptions::new(Protocol::TwoLeg)).unwrap();
    let q = QubitInput::new(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)).unwrap();
    let out = codec.decoder(3, 2).unwrap().decode(&codec.encode(&codec.embed(&q).unwrap()).unwrap()).unwrap();
    let mut weight = [0.0; 7];
    for (cfg, a) in full.configs().iter().zip(out.amplitudes().iter()) {
        weight[cfg.count_ones() as usize] += a.norm_sqr();
    }
    assert!((weight[0] - 0.36).abs() < 1e-12);
    assert!((weight[1] - 0.64).abs() < 1e-12);
    assert!(weight[2..].iter().all(|w| *w < 1e-24));
}
