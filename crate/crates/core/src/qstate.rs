//! Two-atom Hilbert space: basis bookkeeping, pure states and density matrices.
//!
//! Each atom carries five levels. Two of them are not qubit levels at all:
//! `DarkPresent` collects population that leaked to an F=1 Zeeman sublevel
//! (the push-out cannot tell it from |↓⟩) and `Absent` collects atoms that are
//! physically gone. Keeping both as basis states means loss and depumping are
//! population transfers and the trace stays 1 throughout.
//!
//! The pair space is the 25-dimensional product with atom a as the slow index.

use std::fmt;

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Levels per atom.
pub const LEVELS: usize = 5;
/// Dimension of the two-atom space.
pub const DIM: usize = LEVELS * LEVELS;

pub type CMatrix = SMatrix<Complex64, DIM, DIM>;
pub type CVector = SVector<Complex64, DIM>;

pub const NORM_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomLevel {
    /// |↓⟩ = |F=1, M=1⟩
    Down,
    /// |↑⟩ = |F=2, M=2⟩
    Up,
    /// |r⟩ = |58d3/2, F=3, M=3⟩
    Ryd,
    /// Non-logical F=1 population; reads as present.
    DarkPresent,
    /// Lost atom; reads as absent.
    Absent,
}

impl AtomLevel {
    pub const ALL: [AtomLevel; LEVELS] = [
        AtomLevel::Down,
        AtomLevel::Up,
        AtomLevel::Ryd,
        AtomLevel::DarkPresent,
        AtomLevel::Absent,
    ];

    pub const fn index(self) -> usize {
        match self {
            AtomLevel::Down => 0,
            AtomLevel::Up => 1,
            AtomLevel::Ryd => 2,
            AtomLevel::DarkPresent => 3,
            AtomLevel::Absent => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<AtomLevel> {
        Self::ALL.get(i).copied()
    }

    /// Levels the lasers drive: the two hyperfine ground states and the Rydberg state.
    pub fn is_driven(self) -> bool {
        matches!(self, AtomLevel::Down | AtomLevel::Up | AtomLevel::Ryd)
    }
}

impl fmt::Display for AtomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AtomLevel::Down => "down",
            AtomLevel::Up => "up",
            AtomLevel::Ryd => "ryd",
            AtomLevel::DarkPresent => "dark",
            AtomLevel::Absent => "absent",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atom {
    A,
    B,
}

impl Atom {
    pub const BOTH: [Atom; 2] = [Atom::A, Atom::B];

    pub const fn index(self) -> usize {
        match self {
            Atom::A => 0,
            Atom::B => 1,
        }
    }

    pub const fn other(self) -> Atom {
        match self {
            Atom::A => Atom::B,
            Atom::B => Atom::A,
        }
    }
}

/// A product basis state |level_a, level_b⟩.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub level_a: AtomLevel,
    pub level_b: AtomLevel,
}

impl PairIndex {
    pub const fn new(level_a: AtomLevel, level_b: AtomLevel) -> Self {
        Self { level_a, level_b }
    }

    pub const fn flat(self) -> usize {
        self.level_a.index() * LEVELS + self.level_b.index()
    }

    pub fn from_flat(i: usize) -> Option<PairIndex> {
        if i >= DIM {
            return None;
        }
        Some(PairIndex {
            level_a: AtomLevel::from_index(i / LEVELS)?,
            level_b: AtomLevel::from_index(i % LEVELS)?,
        })
    }

    pub fn level(self, atom: Atom) -> AtomLevel {
        match atom {
            Atom::A => self.level_a,
            Atom::B => self.level_b,
        }
    }

    pub fn with_level(self, atom: Atom, level: AtomLevel) -> PairIndex {
        match atom {
            Atom::A => PairIndex::new(level, self.level_b),
            Atom::B => PairIndex::new(self.level_a, level),
        }
    }

    pub fn swapped(self) -> PairIndex {
        PairIndex::new(self.level_b, self.level_a)
    }

    pub fn all() -> impl Iterator<Item = PairIndex> {
        (0..DIM).map(|i| PairIndex::from_flat(i).expect("index in range"))
    }
}

impl fmt::Display for PairIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{}⟩", self.level_a, self.level_b)
    }
}

/// Normalized state vector on the pair space.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: CVector,
}

impl PureState {
    /// Normalizes `amplitudes`; fails on a zero or non-finite vector.
    pub fn from_amplitudes(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::InvalidState(format!("cannot normalize vector of norm {norm}")));
        }
        Ok(Self { amplitudes: amplitudes / Complex64::from(norm) })
    }

    /// Wraps a vector that must already be normalized.
    pub fn from_normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("norm {norm} differs from 1")));
        }
        Ok(Self { amplitudes })
    }

    pub(crate) fn from_raw(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, idx: PairIndex) -> Complex64 {
        self.amplitudes[idx.flat()]
    }

    pub fn population(&self, idx: PairIndex) -> f64 {
        self.amplitude(idx).norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &PureState) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// Rotates the global phase so the first nonzero amplitude is real and positive.
    pub fn canonical_phase(mut self) -> Self {
        if let Some(first) = self.amplitudes.iter().find(|a| a.norm() > 1e-14) {
            let phase = Complex64::from_polar(1.0, -first.arg());
            self.amplitudes *= phase;
        }
        self
    }

    pub fn exchange_atoms(&self) -> PureState {
        let mut out = CVector::zeros();
        for idx in PairIndex::all() {
            out[idx.swapped().flat()] = self.amplitudes[idx.flat()];
        }
        PureState { amplitudes: out }
    }
}

/// |a, b⟩
pub fn pair_basis_state(a: AtomLevel, b: AtomLevel) -> PureState {
    let mut v = CVector::zeros();
    v[PairIndex::new(a, b).flat()] = Complex64::new(1.0, 0.0);
    PureState { amplitudes: v }
}

/// (|a, b⟩ + e^{iφ}|b, a⟩)/√2, returned in canonical global phase.
pub fn entangled_pair_state(level_a: AtomLevel, level_b: AtomLevel, phase: f64) -> Result<PureState> {
    if level_a == level_b {
        return Err(Error::InvalidArgument(format!(
            "entangled pair needs two distinct levels, got {level_a} twice"
        )));
    }
    if !phase.is_finite() {
        return Err(Error::InvalidArgument(format!("phase {phase} is not finite")));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CVector::zeros();
    v[PairIndex::new(level_a, level_b).flat()] = Complex64::new(h, 0.0);
    v[PairIndex::new(level_b, level_a).flat()] = Complex64::from_polar(h, phase);
    Ok(PureState { amplitudes: v }.canonical_phase())
}

/// |Ψ⁺⟩ = (|↓,↑⟩ + |↑,↓⟩)/√2
pub fn bell_psi_plus() -> PureState {
    entangled_pair_state(AtomLevel::Down, AtomLevel::Up, 0.0).expect("distinct levels")
}

/// Hermitian, unit-trace, positive semidefinite operator on the pair space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    elements: CMatrix,
}

impl DensityMatrix {
    /// Validates `elements` against every density-matrix invariant.
    pub fn from_matrix(elements: CMatrix) -> Result<Self> {
        validate_density(&elements)?;
        Ok(Self { elements })
    }

    pub(crate) fn from_raw(elements: CMatrix) -> Self {
        Self { elements }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        outer_product(psi)
    }

    pub fn basis(idx: PairIndex) -> Self {
        let mut m = CMatrix::zeros();
        m[(idx.flat(), idx.flat())] = Complex64::new(1.0, 0.0);
        Self { elements: m }
    }

    /// Incoherent mixture Σ wᵢ ρᵢ. Weights must be nonnegative and sum to 1.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights must be ≥ 0 and sum to 1 (sum {total})")));
        }
        let mut m = CMatrix::zeros();
        for (w, rho) in parts {
            m += rho.elements * Complex64::from(*w);
        }
        Self::from_matrix(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.elements
    }

    pub fn into_matrix(self) -> CMatrix {
        self.elements
    }

    pub fn validate(&self) -> Result<()> {
        validate_density(&self.elements)
    }

    pub fn trace(&self) -> f64 {
        self.elements.trace().re
    }

    pub fn population(&self, idx: PairIndex) -> f64 {
        self.elements[(idx.flat(), idx.flat())].re
    }

    pub fn populations(&self) -> [f64; DIM] {
        std::array::from_fn(|i| self.elements[(i, i)].re)
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.elements.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.elements)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest singular value of ρ − σ (both Hermitian, so the largest |eigenvalue|).
    pub fn operator_distance(&self, other: &DensityMatrix) -> f64 {
        let diff = self.elements - other.elements;
        SymmetricEigen::new(diff)
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, e| acc.max(e.abs()))
    }

    /// Swap the roles of atoms a and b.
    pub fn exchange_atoms(&self) -> DensityMatrix {
        let mut out = CMatrix::zeros();
        for i in PairIndex::all() {
            for j in PairIndex::all() {
                out[(i.swapped().flat(), j.swapped().flat())] = self.elements[(i.flat(), j.flat())];
            }
        }
        DensityMatrix { elements: out }
    }

    /// Replace `atom` by a lost atom: ρ → Tr_atom(ρ) ⊗ |Absent⟩⟨Absent|.
    pub fn with_atom_lost(&self, atom: Atom) -> DensityMatrix {
        let mut out = CMatrix::zeros();
        let absent = AtomLevel::Absent;
        for x in AtomLevel::ALL {
            for y in AtomLevel::ALL {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in AtomLevel::ALL {
                    let (i, j) = match atom {
                        Atom::A => (PairIndex::new(l, x), PairIndex::new(l, y)),
                        Atom::B => (PairIndex::new(x, l), PairIndex::new(y, l)),
                    };
                    acc += self.elements[(i.flat(), j.flat())];
                }
                let (i, j) = match atom {
                    Atom::A => (PairIndex::new(absent, x), PairIndex::new(absent, y)),
                    Atom::B => (PairIndex::new(x, absent), PairIndex::new(y, absent)),
                };
                out[(i.flat(), j.flat())] = acc;
            }
        }
        DensityMatrix { elements: out }
    }
}

/// |ψ⟩⟨ψ|
pub fn outer_product(psi: &PureState) -> DensityMatrix {
    let a = psi.amplitudes();
    DensityMatrix { elements: a * a.adjoint() }
}

/// ⟨target|ρ|target⟩, clamped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, target: &PureState) -> Result<f64> {
    rho.validate()?;
    let norm = target.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidState(format!("target norm {norm} differs from 1")));
    }
    let t = target.amplitudes();
    let value = t.dotc(&(rho.matrix() * t));
    if value.im.abs() > 1e-10 {
        return Err(Error::InvalidState(format!("overlap has imaginary part {:.3e}", value.im)));
    }
    Ok(value.re.clamp(0.0, 1.0))
}

/// Shared validator for every density matrix produced in the crate.
pub fn validate_density(m: &CMatrix) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidState("non-finite matrix element".into()));
    }
    let mut herm = 0.0_f64;
    for i in 0..DIM {
        for j in i..DIM {
            herm = herm.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    if herm > HERMITIAN_TOL {
        return Err(Error::InvalidState(format!("not Hermitian (max deviation {herm:.3e})")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL {
        return Err(Error::InvalidState(format!("trace {} differs from 1", tr.re)));
    }
    // λ_min(ρ) > −ε  ⇔  ρ + ε·I is positive definite
    if !cholesky_succeeds(&(m + CMatrix::identity() * Complex64::from(POSITIVITY_TOL))) {
        let lmin = SymmetricEigen::new(*m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::InvalidState(format!("not positive semidefinite (λ_min = {lmin:.3e})")));
    }
    Ok(())
}

/// In-place Cholesky attempt on a Hermitian matrix; false as soon as a pivot is not positive.
fn cholesky_succeeds(m: &CMatrix) -> bool {
    let mut l = *m;
    for j in 0..DIM {
        let mut d = l[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..DIM {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    true
}
