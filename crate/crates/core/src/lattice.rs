//! Quasi-1D zig-zag lattice geometry.
//!
//! A lattice has `N` rungs (columns along the legs) with `L` sites each.
//! Rung indices `i` run over `1..=N` and leg indices `j` over `1..=L`; the
//! flat site id is row-major by rung, `(i - 1) * L + (j - 1)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QstError, Result};

/// Boundary condition along one lattice direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Open => write!(f, "open"),
            Boundary::Periodic => write!(f, "periodic"),
        }
    }
}

/// The three bond families of the lattice Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondKind {
    Rung,
    Leg,
    Diagonal,
}

/// `N x L` lattice with independent boundary conditions along rungs and legs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinLattice {
    rungs: usize,
    legs: usize,
    bc_rung: Boundary,
    bc_leg: Boundary,
}

impl SpinLattice {
    /// Builds a lattice with `rungs = N >= 2` and `legs = L >= 2`.
    ///
    /// Periodic wrapping that would only duplicate existing bonds (two sites
    /// along the wrapped direction) is normalized to open.
    pub fn new(rungs: usize, legs: usize, bc_rung: Boundary, bc_leg: Boundary) -> Result<Self> {
        if rungs < 2 {
            return Err(QstError::InvalidLattice(format!("N = {rungs}, need N >= 2")));
        }
        if legs < 2 {
            return Err(QstError::InvalidLattice(format!("L = {legs}, need L >= 2")));
        }
        let bc_rung = if legs == 2 { Boundary::Open } else { bc_rung };
        let bc_leg = if rungs == 2 { Boundary::Open } else { bc_leg };
        Ok(Self { rungs, legs, bc_rung, bc_leg })
    }

    pub fn open(rungs: usize, legs: usize) -> Result<Self> {
        Self::new(rungs, legs, Boundary::Open, Boundary::Open)
    }

    pub fn rungs(&self) -> usize {
        self.rungs
    }

    pub fn legs(&self) -> usize {
        self.legs
    }

    pub fn bc_rung(&self) -> Boundary {
        self.bc_rung
    }

    pub fn bc_leg(&self) -> Boundary {
        self.bc_leg
    }

    pub fn num_sites(&self) -> usize {
        self.rungs * self.legs
    }

    /// Flat id of site `(i, j)` with 1-based rung and leg indices.
    pub fn site_index(&self, rung: usize, leg: usize) -> Result<usize> {
        if rung == 0 || rung > self.rungs || leg == 0 || leg > self.legs {
            return Err(QstError::OutOfRange(format!(
                "site ({rung}, {leg}) on a {}x{} lattice",
                self.rungs, self.legs
            )));
        }
        Ok((rung - 1) * self.legs + (leg - 1))
    }

    /// Inverse of [`SpinLattice::site_index`].
    pub fn site_coords(&self, site: usize) -> Result<(usize, usize)> {
        if site >= self.num_sites() {
            return Err(QstError::OutOfRange(format!(
                "site id {site} >= {}",
                self.num_sites()
            )));
        }
        Ok((site / self.legs + 1, site % self.legs + 1))
    }

    /// Flat ids of the sites of rung `i`, ordered by leg index.
    pub fn rung_sites(&self, rung: usize) -> Result<Vec<usize>> {
        (1..=self.legs).map(|j| self.site_index(rung, j)).collect()
    }

    /// Rung reached from `sender` after `distance` steps along the legs.
    pub fn receiver_rung(&self, sender: usize, distance: usize) -> Result<usize> {
        receiver_index(self.rungs, self.bc_leg, sender, distance)
    }

    /// Number of `j -> j+1` steps along a rung.
    fn rung_steps(&self) -> usize {
        match self.bc_rung {
            Boundary::Open => self.legs - 1,
            Boundary::Periodic => self.legs,
        }
    }

    /// Number of `i -> i+1` steps along a leg.
    fn leg_steps(&self) -> usize {
        match self.bc_leg {
            Boundary::Open => self.rungs - 1,
            Boundary::Periodic => self.rungs,
        }
    }

    fn wrap_rung(&self, i: usize) -> usize {
        (i - 1) % self.rungs + 1
    }

    fn wrap_leg(&self, j: usize) -> usize {
        (j - 1) % self.legs + 1
    }

    fn id(&self, i: usize, j: usize) -> usize {
        (self.wrap_rung(i) - 1) * self.legs + (self.wrap_leg(j) - 1)
    }

    /// Unordered site pairs of the given bond family, each as `(low, high)`.
    pub fn bonds(&self, kind: BondKind) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut push = |a: usize, b: usize| out.push((a.min(b), a.max(b)));
        match kind {
            BondKind::Rung => {
                for i in 1..=self.rungs {
                    for j in 1..=self.rung_steps() {
                        push(self.id(i, j), self.id(i, j + 1));
                    }
                }
            }
            BondKind::Leg => {
                for i in 1..=self.leg_steps() {
                    for j in 1..=self.legs {
                        push(self.id(i, j), self.id(i + 1, j));
                    }
                }
            }
            BondKind::Diagonal => {
                for i in 1..=self.leg_steps() {
                    for j in 1..=self.rung_steps() {
                        push(self.id(i, j + 1), self.id(i + 1, j));
                        push(self.id(i, j), self.id(i + 1, j + 1));
                    }
                }
            }
        }
        out
    }
}

/// Site reached from `sender` (1-based) after `distance` steps on a chain
/// of `n` sites.
pub fn receiver_index(n: usize, bc: Boundary, sender: usize, distance: usize) -> Result<usize> {
    if sender == 0 || sender > n {
        return Err(QstError::OutOfRange(format!("sender {sender} on a chain of {n}")));
    }
    match bc {
        Boundary::Open => {
            let target = sender + distance;
            if target > n {
                return Err(QstError::OutOfRange(format!("receiver {target} > N = {n}")));
            }
            Ok(target)
        }
        Boundary::Periodic => {
            if distance >= n {
                return Err(QstError::OutOfRange(format!(
                    "distance {distance} >= N = {n} on periodic legs"
                )));
            }
            Ok((sender - 1 + distance) % n + 1)
        }
    }
}
