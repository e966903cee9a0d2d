//! Brute-force reference dynamics in the full `2^M` Hilbert space.
//!
//! Bonds, fields, rung states and the time stepping are written out here
//! directly so the sector engine can be checked against something that
//! shares none of its code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use num_complex::Complex64;

pub type Vector = Vec<Complex64>;

#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub rungs: usize,
    pub legs: usize,
    pub periodic_rungs: bool,
    pub periodic_legs: bool,
}

impl Geometry {
    pub fn sites(&self) -> usize {
        self.rungs * self.legs
    }

    fn site(&self, i: usize, j: usize) -> usize {
        (i % self.rungs) * self.legs + j % self.legs
    }

    /// `(a, b, J)` for every bond, zero-based coordinates.
    pub fn bonds(&self, u: f64, v: f64) -> Vec<(usize, usize, f64)> {
        let rung_steps = if self.periodic_rungs && self.legs >= 3 { self.legs } else { self.legs - 1 };
        let leg_steps = if self.periodic_legs && self.rungs >= 3 { self.rungs } else { self.rungs - 1 };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut add = |a: usize, b: usize, j: f64| {
            if seen.insert((a.min(b), a.max(b))) {
                out.push((a, b, j));
            }
        };
        for i in 0..self.rungs {
            for j in 0..rung_steps {
                add(self.site(i, j), self.site(i, j + 1), 1.0);
            }
        }
        for i in 0..leg_steps {
            for j in 0..self.legs {
                add(self.site(i, j), self.site(i + 1, j), u);
            }
            for j in 0..rung_steps {
                add(self.site(i, j), self.site(i + 1, j + 1), v);
                add(self.site(i, j + 1), self.site(i + 1, j), v);
            }
        }
        out
    }
}

/// `H = sum J/4 sigma.sigma - (w/2) sum sigma^z` applied to a full-space vector.
pub struct FullHamiltonian {
    sites: usize,
    bonds: Vec<(usize, usize, f64)>,
    w: f64,
}

impl FullHamiltonian {
    pub fn new(g: &Geometry, u: f64, v: f64, w: f64) -> Self {
        Self { sites: g.sites(), bonds: g.bonds(u, v), w }
    }

    pub fn apply(&self, psi: &[Complex64]) -> Vector {
        let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
        for (x, &a) in psi.iter().enumerate() {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            let flips = x.count_ones() as f64;
            let sz_total = self.sites as f64 - 2.0 * flips;
            out[x] += a * (-self.w / 2.0 * sz_total);
            for &(p, q, j) in &self.bonds {
                let (bp, bq) = (x >> p & 1, x >> q & 1);
                if bp == bq {
                    out[x] += a * (j / 4.0);
                } else {
                    out[x] -= a * (j / 4.0);
                    out[x ^ (1 << p) ^ (1 << q)] += a * (j / 2.0);
                }
            }
        }
        out
    }

    /// `exp(-i H dt) psi` by a truncated Taylor series.
    pub fn step(&self, psi: &[Complex64], dt: f64) -> Vector {
        let mut out = psi.to_vec();
        let mut term = psi.to_vec();
        for k in 1..80 {
            let h = self.apply(&term);
            let scale = Complex64::new(0.0, -dt / k as f64);
            term = h.into_iter().map(|z| z * scale).collect();
            let size: f64 = term.iter().map(|z| z.norm_sqr()).sum();
            for (o, t) in out.iter_mut().zip(&term) {
                *o += t;
            }
            if size < 1e-36 {
                break;
            }
        }
        out
    }

    /// States at `n + 1` equally spaced times `0, dt, ..., n dt`, each step
    /// split into `sub` Taylor steps.
    pub fn trajectory(&self, psi: &[Complex64], dt: f64, n: usize, sub: usize) -> Vec<Vector> {
        let mut states = vec![psi.to_vec()];
        let mut cur = psi.to_vec();
        for _ in 0..n {
            for _ in 0..sub {
                cur = self.step(&cur, dt / sub as f64);
            }
            states.push(cur.clone());
        }
        states
    }
}

/// Critical field and `|1>` leg amplitudes for the closed-form rung pairs.
pub fn closed_form_pair(legs: usize, periodic: bool) -> (f64, Vec<f64>) {
    match (legs, periodic) {
        (2, _) => (1.0, vec![-1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]),
        (3, false) => (1.5, [1.0, -2.0, 1.0].iter().map(|c| c / 6f64.sqrt()).collect()),
        (4, false) => {
            let a = 1.0 + 2f64.sqrt();
            let n = (2.0 + 2.0 * a * a).sqrt();
            (1.0 + 1.0 / 2f64.sqrt(), [1.0, -a, a, -1.0].iter().map(|c| c / n).collect())
        }
        (4, true) => (2.0, vec![-0.5, 0.5, -0.5, 0.5]),
        _ => panic!("no closed form for L = {legs}"),
    }
}

/// `a1 |0...0> + e^{i a2} sqrt(1 - a1^2) |1>` on one rung, indexed by leg bits.
pub fn rung_state(legs: usize, periodic: bool, a1: f64, a2: f64) -> Vector {
    let (_, c) = closed_form_pair(legs, periodic);
    let mut v = vec![Complex64::new(0.0, 0.0); 1 << legs];
    v[0] = Complex64::new(a1, 0.0);
    let b = Complex64::from_polar((1.0 - a1 * a1).max(0.0).sqrt(), a2);
    for (j, cj) in c.iter().enumerate() {
        v[1 << j] = b * *cj;
    }
    v
}

/// Rung vector placed on zero-based rung `rung`, everything else polarized.
pub fn embed(g: &Geometry, rung: usize, local: &[Complex64]) -> Vector {
    let mut psi = vec![Complex64::new(0.0, 0.0); 1 << g.sites()];
    for (x, &a) in local.iter().enumerate() {
        psi[x << (rung * g.legs)] = a;
    }
    psi
}

/// `<phi| rho_rung |phi>` for a full-space state.
pub fn rung_fidelity(g: &Geometry, psi: &[Complex64], rung: usize, phi: &[Complex64]) -> f64 {
    let shift = rung * g.legs;
    let mask = ((1usize << g.legs) - 1) << shift;
    // Group amplitudes by the configuration outside the rung.
    let mut groups = std::collections::HashMap::<usize, Complex64>::new();
    for (x, &a) in psi.iter().enumerate() {
        let local = (x & mask) >> shift;
        *groups.entry(x & !mask).or_default() += phi[local].conj() * a;
    }
    groups.values().map(|z| z.norm_sqr()).sum()
}
