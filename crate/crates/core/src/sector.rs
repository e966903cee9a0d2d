//! Magnetization-sector Hilbert spaces.
//!
//! Every Hamiltonian in this crate conserves the total `sum sigma^z`, so a
//! state with at most `k_max` flipped spins never leaves the span of the
//! configurations with `<= k_max` flips. A configuration is a bitmask over
//! the flat site ids: bit `s` set means site `s` is in `|1>` (`sigma^z = -1`).
//!
//! For the transfer protocols `k_max = 1`, which turns an `N x L` lattice
//! into a `1 + N L` dimensional problem without approximation.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{QstError, Result};
use crate::lattice::{BondKind, SpinLattice};
use crate::propagation::Eigensystem;

/// Bitmask over site ids.
pub type Config = u128;

/// Widest lattice representable by [`Config`].
pub const MAX_SITES: usize = Config::BITS as usize;

const MAX_DIMENSION: usize = 1 << 22;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Ordered list of configurations with a bounded number of flipped spins.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    num_sites: usize,
    min_excitations: usize,
    max_excitations: usize,
    configs: Vec<Config>,
    lookup: HashMap<Config, usize>,
}

impl PartialEq for SectorBasis {
    fn eq(&self, other: &Self) -> bool {
        self.num_sites == other.num_sites
            && self.min_excitations == other.min_excitations
            && self.max_excitations == other.max_excitations
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// All `m`-bit masks with exactly `k` bits set, ascending (Gosper's hack).
fn masks_with_popcount(m: usize, k: usize, out: &mut Vec<Config>) {
    if k == 0 {
        out.push(0);
        return;
    }
    let limit = if m == MAX_SITES { None } else { Some((1 as Config) << m) };
    let mut x: Config = if k == MAX_SITES { Config::MAX } else { ((1 as Config) << k) - 1 };
    loop {
        if let Some(limit) = limit {
            if x >= limit {
                break;
            }
        }
        out.push(x);
        let c = x & x.wrapping_neg();
        let (r, overflow) = x.overflowing_add(c);
        if overflow {
            break;
        }
        x = (((r ^ x) >> 2) / c) | r;
    }
}

impl SectorBasis {
    /// Basis of all configurations on `num_sites` sites with at most
    /// `max_excitations` flipped spins.
    pub fn new(num_sites: usize, max_excitations: usize) -> Result<Arc<Self>> {
        Self::with_excitation_range(num_sites, 0, max_excitations)
    }

    /// Complete `2^M` dimensional basis (ordered by flip count, then value).
    pub fn full(num_sites: usize) -> Result<Arc<Self>> {
        Self::new(num_sites, num_sites)
    }

    /// Configurations with a flip count in `min..=max`.
    pub fn with_excitation_range(num_sites: usize, min: usize, max: usize) -> Result<Arc<Self>> {
        if num_sites == 0 {
            return Err(QstError::InvalidParameter("basis needs at least one site".into()));
        }
        if num_sites > MAX_SITES {
            return Err(QstError::ConfigurationOverflow { sites: num_sites, max: MAX_SITES });
        }
        if min > max || max > num_sites {
            return Err(QstError::InvalidParameter(format!(
                "excitation range {min}..={max} on {num_sites} sites"
            )));
        }
        let dim: u128 = (min..=max)
            .map(|k| binomial(num_sites, k))
            .fold(0u128, |a, b| a.saturating_add(b));
        if dim > MAX_DIMENSION as u128 {
            return Err(QstError::DimensionTooLarge(dim.min(usize::MAX as u128) as usize));
        }
        let mut configs = Vec::with_capacity(dim as usize);
        for k in min..=max {
            masks_with_popcount(num_sites, k, &mut configs);
        }
        let lookup = configs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Arc::new(Self {
            num_sites,
            min_excitations: min,
            max_excitations: max,
            configs,
            lookup,
        }))
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn max_excitations(&self) -> usize {
        self.max_excitations
    }

    pub fn min_excitations(&self) -> usize {
        self.min_excitations
    }

    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn config(&self, index: usize) -> Config {
        self.configs[index]
    }

    pub fn index_of(&self, config: Config) -> Option<usize> {
        self.lookup.get(&config).copied()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.num_sites {
            return Err(QstError::OutOfRange(format!(
                "site {site} in a basis over {} sites",
                self.num_sites
            )));
        }
        Ok(())
    }
}

fn same_basis(a: &Arc<SectorBasis>, b: &Arc<SectorBasis>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Complex amplitude vector over a [`SectorBasis`].
#[derive(Debug, Clone)]
pub struct SectorState {
    basis: Arc<SectorBasis>,
    amplitudes: DVector<Complex64>,
}

impl SectorState {
    pub fn new(basis: Arc<SectorBasis>, amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(QstError::InvalidParameter(format!(
                "{} amplitudes for a basis of dimension {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        Ok(Self { basis, amplitudes })
    }

    pub fn zero(basis: Arc<SectorBasis>) -> Self {
        let amplitudes = DVector::zeros(basis.dim());
        Self { basis, amplitudes }
    }

    /// The product state given by one configuration.
    pub fn basis_state(basis: Arc<SectorBasis>, config: Config) -> Result<Self> {
        let idx = basis.index_of(config).ok_or_else(|| {
            QstError::OutOfRange(format!("configuration {config:#b} is not in the basis"))
        })?;
        let mut state = Self::zero(basis);
        state.amplitudes[idx] = Complex64::new(1.0, 0.0);
        Ok(state)
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut DVector<Complex64> {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<Complex64> {
        self.amplitudes
    }

    pub fn amplitude(&self, config: Config) -> Complex64 {
        self.basis.index_of(config).map_or(ZERO, |i| self.amplitudes[i])
    }

    /// Adds `value` to the amplitude of `config`.
    pub fn add_amplitude(&mut self, config: Config, value: Complex64) -> Result<()> {
        let idx = self.basis.index_of(config).ok_or_else(|| {
            QstError::OutOfRange(format!("configuration {config:#b} is not in the basis"))
        })?;
        self.amplitudes[idx] += value;
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.amplitudes.norm();
        if n > 0.0 {
            self.amplitudes.unscale_mut(n);
        }
        n
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &SectorState) -> Result<Complex64> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(QstError::BasisMismatch);
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `|self> + scale |other>`, in place.
    pub fn axpy(&mut self, scale: Complex64, other: &SectorState) -> Result<()> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(QstError::BasisMismatch);
        }
        self.amplitudes.axpy(scale, &other.amplitudes, Complex64::new(1.0, 0.0));
        Ok(())
    }

    /// Applies `exp(-i angle sigma^z)` on one site.
    pub fn apply_phase(&mut self, site: usize, angle: f64) -> Result<()> {
        self.basis.check_site(site)?;
        let up = Complex64::from_polar(1.0, -angle);
        let down = Complex64::from_polar(1.0, angle);
        let mask = (1 as Config) << site;
        for (amp, &c) in self.amplitudes.iter_mut().zip(self.basis.configs.iter()) {
            *amp *= if c & mask == 0 { up } else { down };
        }
        Ok(())
    }

    /// Applies `sigma^z` on one site.
    pub fn apply_pauli_z(&mut self, site: usize) -> Result<()> {
        self.basis.check_site(site)?;
        let mask = (1 as Config) << site;
        for (amp, &c) in self.amplitudes.iter_mut().zip(self.basis.configs.iter()) {
            if c & mask != 0 {
                *amp = -*amp;
            }
        }
        Ok(())
    }

    /// Reduced density matrix on `subset`; local bit `m` is `subset[m]`.
    pub fn reduced_density_matrix(&self, subset: &[usize]) -> Result<DMatrix<Complex64>> {
        PartialTracePlan::new(&self.basis, subset)?.reduce(self)
    }
}

/// Precomputed grouping of basis configurations for repeated partial traces
/// over the same subset.
#[derive(Debug, Clone)]
pub struct PartialTracePlan {
    basis: Arc<SectorBasis>,
    subset: Vec<usize>,
    /// Members sharing the same configuration outside the subset, as
    /// `(basis index, local index)`.
    groups: Vec<Vec<(usize, usize)>>,
}

impl PartialTracePlan {
    pub fn new(basis: &Arc<SectorBasis>, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() {
            return Err(QstError::Empty("partial-trace subset".into()));
        }
        if subset.len() > 16 {
            return Err(QstError::InvalidParameter(format!(
                "subset of {} sites is too large for a dense reduced state",
                subset.len()
            )));
        }
        let mut mask: Config = 0;
        for &s in subset {
            basis.check_site(s)?;
            let bit = (1 as Config) << s;
            if mask & bit != 0 {
                return Err(QstError::InvalidParameter(format!("site {s} repeated in subset")));
            }
            mask |= bit;
        }
        let mut by_rest: HashMap<Config, usize> = HashMap::new();
        let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
        for (idx, &c) in basis.configs.iter().enumerate() {
            let local = subset
                .iter()
                .enumerate()
                .fold(0usize, |acc, (m, &s)| acc | ((((c >> s) & 1) as usize) << m));
            let g = *by_rest.entry(c & !mask).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push((idx, local));
        }
        Ok(Self { basis: basis.clone(), subset: subset.to_vec(), groups })
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn local_dim(&self) -> usize {
        1 << self.subset.len()
    }

    /// `Tr_rest |a><a|`.
    pub fn reduce(&self, state: &SectorState) -> Result<DMatrix<Complex64>> {
        self.reduce_cross(state, state)
    }

    /// `Tr_rest |a><b|`.
    pub fn reduce_cross(&self, a: &SectorState, b: &SectorState) -> Result<DMatrix<Complex64>> {
        if !same_basis(&self.basis, &a.basis) || !same_basis(&self.basis, &b.basis) {
            return Err(QstError::BasisMismatch);
        }
        Ok(self.reduce_amplitudes(&a.amplitudes, &b.amplitudes))
    }

    /// `sum_g conj(target[x]) a[p]` over the members `(p, x)` of each group.
    pub fn group_overlaps(&self, a: &DVector<Complex64>, target: &DVector<Complex64>) -> Vec<Complex64> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&(p, x)| target[x].conj() * a[p]).sum())
            .collect()
    }

    /// `<target| Tr_rest |a><a| |target>` without forming the reduced matrix.
    pub fn fidelity(&self, a: &DVector<Complex64>, target: &DVector<Complex64>) -> f64 {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&(p, x)| target[x].conj() * a[p]).sum::<Complex64>().norm_sqr())
            .sum()
    }

    pub(crate) fn reduce_amplitudes(
        &self,
        a: &DVector<Complex64>,
        b: &DVector<Complex64>,
    ) -> DMatrix<Complex64> {
        let d = self.local_dim();
        let mut rho = DMatrix::zeros(d, d);
        for group in &self.groups {
            for &(p, x) in group {
                let ap = a[p];
                if ap == ZERO {
                    continue;
                }
                for &(q, y) in group {
                    rho[(x, y)] += ap * b[q].conj();
                }
            }
        }
        rho
    }
}

/// `xy (sigma^x sigma^x + sigma^y sigma^y) + zz sigma^z sigma^z` on sites `a`, `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    pub xy: f64,
    pub zz: f64,
}

/// A sum of two-site XXZ couplings and single-site `sigma^z` fields, the
/// operator family shared by the lattice, rung and effective Hamiltonians.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpinTerms {
    pub couplings: Vec<Coupling>,
    /// `(site, h)` meaning `h sigma^z_site`.
    pub fields: Vec<(usize, f64)>,
}

impl SpinTerms {
    pub fn new() -> Self {
        Self::default()
    }

    /// `(j / 4) sigma_a . sigma_b`.
    pub fn heisenberg(&mut self, a: usize, b: usize, j: f64) -> &mut Self {
        self.xxz(a, b, j / 4.0, j / 4.0)
    }

    pub fn xxz(&mut self, a: usize, b: usize, xy: f64, zz: f64) -> &mut Self {
        if xy != 0.0 || zz != 0.0 {
            self.couplings.push(Coupling { a, b, xy, zz });
        }
        self
    }

    /// `h sigma^z_site`.
    pub fn field(&mut self, site: usize, h: f64) -> &mut Self {
        if h != 0.0 {
            self.fields.push((site, h));
        }
        self
    }

    fn max_site(&self) -> Option<usize> {
        self.couplings
            .iter()
            .flat_map(|c| [c.a, c.b])
            .chain(self.fields.iter().map(|&(s, _)| s))
            .max()
    }

    fn check(&self, num_sites: usize) -> Result<()> {
        if let Some(m) = self.max_site() {
            if m >= num_sites {
                return Err(QstError::OutOfRange(format!(
                    "term acts on site {m}, basis has {num_sites} sites"
                )));
            }
        }
        if let Some(c) = self.couplings.iter().find(|c| c.a == c.b) {
            return Err(QstError::InvalidParameter(format!("self coupling on site {}", c.a)));
        }
        Ok(())
    }

    /// Calls `emit(target, value)` for every nonzero `<target|H|config>`.
    fn for_each_element(&self, config: Config, mut emit: impl FnMut(Config, f64)) {
        let spin = |s: usize| if (config >> s) & 1 == 0 { 1.0 } else { -1.0 };
        let mut diag = 0.0;
        for c in &self.couplings {
            let (sa, sb) = (spin(c.a), spin(c.b));
            diag += c.zz * sa * sb;
            if sa != sb && c.xy != 0.0 {
                let flipped = config ^ ((1 as Config) << c.a) ^ ((1 as Config) << c.b);
                emit(flipped, 2.0 * c.xy);
            }
        }
        for &(s, h) in &self.fields {
            diag += h * spin(s);
        }
        if diag != 0.0 {
            emit(config, diag);
        }
    }

    /// Dense matrix in the full `2^M` space indexed by the configuration value.
    pub fn dense_matrix(&self, num_sites: usize) -> Result<DMatrix<Complex64>> {
        if num_sites > 14 {
            return Err(QstError::DimensionTooLarge(1 << num_sites));
        }
        self.check(num_sites)?;
        let d = 1usize << num_sites;
        let mut m = DMatrix::zeros(d, d);
        for x in 0..d {
            self.for_each_element(x as Config, |y, v| m[(y as usize, x)] += Complex64::new(v, 0.0));
        }
        Ok(m)
    }
}

/// Per-family exchange strengths `J` for `(J / 4) sigma . sigma` bonds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BondCouplings {
    pub rung: f64,
    pub leg: f64,
    pub diagonal: f64,
}

/// Magnetic field `w` entering as `-(w / 2) sigma^z`.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldProfile {
    Uniform(f64),
    PerSite(Vec<f64>),
}

/// `sum_bonds (J/4) sigma . sigma - sum_s (w_s / 2) sigma^z_s` over a lattice.
pub fn lattice_terms(
    lattice: &SpinLattice,
    couplings: &BondCouplings,
    field: &FieldProfile,
) -> Result<SpinTerms> {
    let mut terms = SpinTerms::new();
    for (kind, j) in [
        (BondKind::Rung, couplings.rung),
        (BondKind::Leg, couplings.leg),
        (BondKind::Diagonal, couplings.diagonal),
    ] {
        if j != 0.0 {
            for (a, b) in lattice.bonds(kind) {
                terms.heisenberg(a, b, j);
            }
        }
    }
    match field {
        FieldProfile::Uniform(w) => {
            for s in 0..lattice.num_sites() {
                terms.field(s, -w / 2.0);
            }
        }
        FieldProfile::PerSite(ws) => {
            if ws.len() != lattice.num_sites() {
                return Err(QstError::InvalidParameter(format!(
                    "{} field values for {} sites",
                    ws.len(),
                    lattice.num_sites()
                )));
            }
            for (s, w) in ws.iter().enumerate() {
                terms.field(s, -w / 2.0);
            }
        }
    }
    Ok(terms)
}

/// Isotropic Heisenberg operator of a lattice restricted to `basis`.
pub fn heisenberg_operator(
    basis: &Arc<SectorBasis>,
    lattice: &SpinLattice,
    couplings: &BondCouplings,
    field: &FieldProfile,
) -> Result<SectorOperator> {
    if basis.num_sites() != lattice.num_sites() {
        return Err(QstError::InvalidParameter(format!(
            "basis over {} sites for a lattice of {} sites",
            basis.num_sites(),
            lattice.num_sites()
        )));
    }
    SectorOperator::from_terms(basis, &lattice_terms(lattice, couplings, field)?)
}

/// Hermitian operator in a sector basis, stored as sorted sparse triplets.
#[derive(Debug)]
pub struct SectorOperator {
    basis: Arc<SectorBasis>,
    /// `(row, col, value)`, sorted by `(row, col)` with no duplicates.
    entries: Vec<(usize, usize, Complex64)>,
    pub(crate) eigen: OnceLock<Eigensystem>,
}

impl Clone for SectorOperator {
    fn clone(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            entries: self.entries.clone(),
            eigen: self.eigen.clone(),
        }
    }
}

impl SectorOperator {
    pub fn zero(basis: &Arc<SectorBasis>) -> Self {
        Self { basis: basis.clone(), entries: Vec::new(), eigen: OnceLock::new() }
    }

    pub fn from_terms(basis: &Arc<SectorBasis>, terms: &SpinTerms) -> Result<Self> {
        terms.check(basis.num_sites())?;
        let mut triplets = Vec::new();
        for (col, &config) in basis.configs.iter().enumerate() {
            let mut missing = None;
            terms.for_each_element(config, |target, v| match basis.index_of(target) {
                Some(row) => triplets.push((row, col, Complex64::new(v, 0.0))),
                None => missing = Some(target),
            });
            if let Some(target) = missing {
                return Err(QstError::OutOfRange(format!(
                    "operator maps into configuration {target:#b} outside the basis"
                )));
            }
        }
        Self::from_triplets(basis, triplets)
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        basis: &Arc<SectorBasis>,
        mut triplets: Vec<(usize, usize, Complex64)>,
    ) -> Result<Self> {
        let d = basis.dim();
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= d || c >= d) {
            return Err(QstError::OutOfRange(format!("entry ({r}, {c}) in dimension {d}")));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, Complex64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != ZERO);
        let op = Self { basis: basis.clone(), entries, eigen: OnceLock::new() };
        let defect = op.hermiticity_defect();
        if defect > 1e-14 {
            return Err(QstError::NonHermitian(defect));
        }
        Ok(op)
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn entries(&self) -> &[(usize, usize, Complex64)] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries
            .binary_search_by_key(&(row, col), |&(r, c, _)| (r, c))
            .map_or(ZERO, |i| self.entries[i].2)
    }

    /// `max |H_ab - conj(H_ba)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(r, c, v)| (v - self.entry(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|e| e.2.im == 0.0)
    }

    pub fn dense(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn apply(&self, state: &SectorState) -> Result<SectorState> {
        if !same_basis(&self.basis, &state.basis) {
            return Err(QstError::BasisMismatch);
        }
        let mut out = DVector::zeros(self.dim());
        for &(r, c, v) in &self.entries {
            out[r] += v * state.amplitudes[c];
        }
        SectorState::new(state.basis.clone(), out)
    }

    /// `<psi|H|psi>` (real for Hermitian `H`).
    pub fn expectation(&self, state: &SectorState) -> Result<f64> {
        Ok(state.inner(&self.apply(state)?)?.re)
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &SectorOperator, scale: f64) -> Result<SectorOperator> {
        if !same_basis(&self.basis, &other.basis) {
            return Err(QstError::BasisMismatch);
        }
        let triplets = self
            .entries
            .iter()
            .copied()
            .chain(other.entries.iter().map(|&(r, c, v)| (r, c, v * scale)))
            .collect();
        Self::from_triplets(&self.basis, triplets)
    }
}
