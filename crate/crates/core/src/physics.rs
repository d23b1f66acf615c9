//! Pulse sequences, the rotating-frame Hamiltonian, collapse operators and
//! the shot-to-shot noise model.
//!
//! The two-photon transitions are treated as direct two-level couplings with
//! the intermediate 5p level adiabatically eliminated; its only remnant is an
//! effective photon-scattering rate while a pulse is on. Fast noise becomes
//! Lindblad operators, slow noise is drawn once per shot as [`ShotParams`].

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::qstate::{Atom, AtomLevel, CMatrix, PairIndex};

/// Which transition a pulse drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseKind {
    /// |↓⟩ ↔ |↑⟩ two-photon Raman coupling.
    RamanRotation,
    /// |↑⟩ ↔ |r⟩ Rydberg excitation.
    RydExcite,
    /// |↓⟩ ↔ |r⟩ mapping of the Rydberg coherence onto the other ground state.
    RydMap,
}

impl PulseKind {
    /// (lower, upper) levels of the driven transition.
    pub const fn levels(self) -> (AtomLevel, AtomLevel) {
        match self {
            PulseKind::RamanRotation => (AtomLevel::Down, AtomLevel::Up),
            PulseKind::RydExcite => (AtomLevel::Up, AtomLevel::Ryd),
            PulseKind::RydMap => (AtomLevel::Down, AtomLevel::Ryd),
        }
    }

    pub const fn is_rydberg(self) -> bool {
        matches!(self, PulseKind::RydExcite | PulseKind::RydMap)
    }
}

/// Atoms illuminated by a pulse. Never empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Targets {
    A,
    B,
    Both,
}

impl Targets {
    pub fn contains(self, atom: Atom) -> bool {
        matches!(
            (self, atom),
            (Targets::Both, _) | (Targets::A, Atom::A) | (Targets::B, Atom::B)
        )
    }

    pub fn atoms(self) -> impl Iterator<Item = Atom> {
        Atom::BOTH.into_iter().filter(move |a| self.contains(*a))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSpec {
    pub kind: PulseKind,
    /// Angular Rabi frequency Ω (rad/s).
    pub rabi_rad_per_s: f64,
    /// Rotating-frame detuning δ (rad/s).
    pub detuning_rad_per_s: f64,
    pub duration_s: f64,
    /// Common laser phase.
    pub phase_rad: f64,
    /// Position-dependent phase k·r seen by each atom, indexed by [`Atom::index`].
    pub atom_phase_rad: [f64; 2],
    pub targets: Targets,
}

impl PulseSpec {
    pub fn new(kind: PulseKind, rabi_rad_per_s: f64, duration_s: f64, targets: Targets) -> Self {
        Self {
            kind,
            rabi_rad_per_s,
            detuning_rad_per_s: 0.0,
            duration_s,
            phase_rad: 0.0,
            atom_phase_rad: [0.0; 2],
            targets,
        }
    }

    pub fn with_detuning(mut self, detuning_rad_per_s: f64) -> Self {
        self.detuning_rad_per_s = detuning_rad_per_s;
        self
    }

    pub fn with_atom_phases(mut self, phases: [f64; 2]) -> Self {
        self.atom_phase_rad = phases;
        self
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.rabi_rad_per_s,
            self.detuning_rad_per_s,
            self.duration_s,
            self.phase_rad,
            self.atom_phase_rad[0],
            self.atom_phase_rad[1],
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSequence("pulse parameters must be finite".into()));
        }
        if self.duration_s <= 0.0 {
            return Err(Error::InvalidSequence(format!("pulse duration {} s must be > 0", self.duration_s)));
        }
        if self.rabi_rad_per_s < 0.0 {
            return Err(Error::InvalidSequence(format!("Rabi frequency {} must be ≥ 0", self.rabi_rad_per_s)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedPulse {
    pub start_s: f64,
    pub pulse: PulseSpec,
}

impl TimedPulse {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.pulse.duration_s
    }

    /// Half-open activity window [start, end).
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s()
    }
}

/// A validated, timed list of pulses acting on a pair prepared in a basis state.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pulses: Vec<TimedPulse>,
    /// Interaction shift ΔE/ħ of |r,r⟩ (rad/s).
    pub blockade_shift_rad_per_s: f64,
    pub initial_state: PairIndex,
}

impl SequenceSpec {
    pub fn new(pulses: Vec<TimedPulse>, blockade_shift_rad_per_s: f64, initial_state: PairIndex) -> Result<Self> {
        if !blockade_shift_rad_per_s.is_finite() {
            return Err(Error::InvalidSequence("blockade shift must be finite".into()));
        }
        for p in &pulses {
            p.pulse.validate()?;
            if !(p.start_s >= 0.0) || !p.start_s.is_finite() {
                return Err(Error::InvalidSequence(format!("pulse start {} s must be ≥ 0", p.start_s)));
            }
        }
        for (i, p) in pulses.iter().enumerate() {
            for q in &pulses[i + 1..] {
                let shares_atom = Atom::BOTH.iter().any(|a| p.pulse.targets.contains(*a) && q.pulse.targets.contains(*a));
                let overlaps = p.start_s < q.end_s() && q.start_s < p.end_s();
                if shares_atom && overlaps {
                    return Err(Error::InvalidSequence(format!(
                        "pulses starting at {:.3e} s and {:.3e} s overlap on the same atom",
                        p.start_s, q.start_s
                    )));
                }
            }
        }
        let mut pulses = pulses;
        pulses.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        Ok(Self { pulses, blockade_shift_rad_per_s, initial_state })
    }

    /// Pulses placed back to back starting at t = 0.
    pub fn back_to_back(pulses: Vec<PulseSpec>, blockade_shift_rad_per_s: f64, initial_state: PairIndex) -> Result<Self> {
        let mut t = 0.0;
        let timed = pulses
            .into_iter()
            .map(|pulse| {
                let start_s = t;
                t += pulse.duration_s;
                TimedPulse { start_s, pulse }
            })
            .collect();
        Self::new(timed, blockade_shift_rad_per_s, initial_state)
    }

    pub fn pulses(&self) -> &[TimedPulse] {
        &self.pulses
    }

    pub fn end_time(&self) -> f64 {
        self.pulses.iter().map(TimedPulse::end_s).fold(0.0, f64::max)
    }

    pub fn shortest_pulse(&self) -> Option<f64> {
        self.pulses.iter().map(|p| p.pulse.duration_s).reduce(f64::min)
    }

    pub fn active_pulses(&self, t: f64) -> impl Iterator<Item = &TimedPulse> {
        self.pulses.iter().filter(move |p| p.is_active(t))
    }

    /// Sorted pulse edges including 0 and the end time; the drive is constant between them.
    pub fn segment_edges(&self) -> Vec<f64> {
        let mut edges = vec![0.0, self.end_time()];
        for p in &self.pulses {
            edges.push(p.start_s);
            edges.push(p.end_s());
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-18);
        edges
    }

    /// Same sequence with a different initial basis state.
    pub fn with_initial_state(mut self, initial_state: PairIndex) -> Self {
        self.initial_state = initial_state;
        self
    }
}

/// Stochastic noise model of one experimental run.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Effective scattering rate from the intermediate state while a pulse is on.
    pub scatter_rate_rad_per_s: f64,
    /// Branching of scattered population into (Up, Down, DarkPresent).
    pub scatter_branching: [f64; 3],
    /// Dephasing of |r⟩ during Rydberg pulses.
    pub ryd_dephasing_rad_per_s: f64,
    /// Radiative decay |r⟩ → |↑⟩, active at all times. Zero by default.
    pub ryd_decay_rad_per_s: f64,
    /// Fractional shot-to-shot Rabi-frequency jitter.
    pub intensity_sigma: f64,
    pub detuning_sigma_rad_per_s: f64,
    /// Spread of the mapping phase from atomic motion between pulses.
    pub map_phase_sigma_rad: f64,
    /// Probability per atom per sequence of ending up lost.
    pub extra_loss_prob: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub const fn none() -> Self {
        Self {
            scatter_rate_rad_per_s: 0.0,
            scatter_branching: [1.0, 0.0, 0.0],
            ryd_dephasing_rad_per_s: 0.0,
            ryd_decay_rad_per_s: 0.0,
            intensity_sigma: 0.0,
            detuning_sigma_rad_per_s: 0.0,
            map_phase_sigma_rad: 0.0,
            extra_loss_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("scatter_rate", self.scatter_rate_rad_per_s),
            ("ryd_dephasing", self.ryd_dephasing_rad_per_s),
            ("ryd_decay", self.ryd_decay_rad_per_s),
            ("intensity_sigma", self.intensity_sigma),
            ("detuning_sigma", self.detuning_sigma_rad_per_s),
            ("map_phase_sigma", self.map_phase_sigma_rad),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if self.scatter_branching.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidArgument("scatter branching entries must lie in [0, 1]".into()));
        }
        let sum: f64 = self.scatter_branching.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("scatter branching sums to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.extra_loss_prob) {
            return Err(Error::InvalidArgument(format!("extra_loss_prob {} outside [0, 1]", self.extra_loss_prob)));
        }
        Ok(())
    }

    /// True when every shot sees the same Hamiltonian.
    pub fn is_quasi_static_free(&self) -> bool {
        self.intensity_sigma == 0.0 && self.detuning_sigma_rad_per_s == 0.0 && self.map_phase_sigma_rad == 0.0
    }

    /// Largest single collapse rate this model can emit.
    pub fn max_collapse_rate(&self) -> f64 {
        let scatter = self.scatter_branching.iter().fold(0.0_f64, |m, b| m.max(self.scatter_rate_rad_per_s * b));
        scatter.max(self.ryd_dephasing_rad_per_s).max(self.ryd_decay_rad_per_s)
    }
}

/// One realization of the slow noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotParams {
    pub rabi_scale: f64,
    pub detuning_offset_rad_per_s: f64,
    pub map_phase_rad: f64,
    /// Whether each atom (indexed by [`Atom::index`]) is lost at the end of the sequence.
    pub loss_draws: [bool; 2],
}

impl ShotParams {
    pub const fn ideal() -> Self {
        Self { rabi_scale: 1.0, detuning_offset_rad_per_s: 0.0, map_phase_rad: 0.0, loss_draws: [false; 2] }
    }

    pub fn any_loss(&self) -> bool {
        self.loss_draws.iter().any(|&l| l)
    }
}

impl Default for ShotParams {
    fn default() -> Self {
        Self::ideal()
    }
}

const RABI_SCALE_FLOOR: f64 = 0.01;

/// Draws one [`ShotParams`]. Consumes the same number of variates per call
/// regardless of which sigmas vanish (apart from truncation retries).
pub fn sample_shot_params<R: Rng + ?Sized>(noise: &NoiseSpec, rng: &mut R) -> Result<ShotParams> {
    noise.validate()?;
    let bad = |e: rand_distr::NormalError| Error::InvalidArgument(e.to_string());
    let intensity = Normal::new(1.0, noise.intensity_sigma).map_err(bad)?;
    let detuning = Normal::new(0.0, noise.detuning_sigma_rad_per_s).map_err(bad)?;
    let phase = Normal::new(0.0, noise.map_phase_sigma_rad).map_err(bad)?;

    // truncated normal by rejection
    let rabi_scale = loop {
        let x = intensity.sample(rng);
        if x >= RABI_SCALE_FLOOR {
            break x;
        }
    };
    let detuning_offset_rad_per_s = detuning.sample(rng);
    let map_phase_rad = phase.sample(rng);
    let loss_draws = [rng.random_bool(noise.extra_loss_prob), rng.random_bool(noise.extra_loss_prob)];
    Ok(ShotParams { rabi_scale, detuning_offset_rad_per_s, map_phase_rad, loss_draws })
}

/// Adds `value` to element (x, y) of the single-atom operator on `atom`,
/// tensored with the identity on the other atom.
fn add_single_atom(m: &mut CMatrix, atom: Atom, x: AtomLevel, y: AtomLevel, value: Complex64) {
    for spectator in AtomLevel::ALL {
        let row = PairIndex::new(spectator, spectator).with_level(atom, x).flat();
        let col = PairIndex::new(spectator, spectator).with_level(atom, y).flat();
        m[(row, col)] += value;
    }
}

/// Single-atom operator |x⟩⟨y| on `atom`, as a pair-space matrix.
pub fn single_atom_operator(atom: Atom, x: AtomLevel, y: AtomLevel) -> CMatrix {
    let mut m = CMatrix::zeros();
    add_single_atom(&mut m, atom, x, y, Complex64::new(1.0, 0.0));
    m
}

/// Phase of the coupling for `atom`, including the shot's motional phase on atom b's mapping pulse.
fn coupling_phase(p: &PulseSpec, atom: Atom, shot: &ShotParams) -> f64 {
    let mut phase = p.phase_rad + p.atom_phase_rad[atom.index()];
    if p.kind == PulseKind::RydMap && atom == Atom::B {
        phase += shot.map_phase_rad;
    }
    phase
}

pub(crate) fn hamiltonian_from_pulses<'a>(
    pulses: impl Iterator<Item = &'a TimedPulse>,
    blockade_shift: f64,
    shot: &ShotParams,
) -> CMatrix {
    let mut h = CMatrix::zeros();
    for tp in pulses {
        let p = &tp.pulse;
        let (lower, upper) = p.kind.levels();
        let half_rabi = 0.5 * p.rabi_rad_per_s * shot.rabi_scale;
        let detuning = p.detuning_rad_per_s + shot.detuning_offset_rad_per_s;
        for atom in p.targets.atoms() {
            let coupling = Complex64::from_polar(half_rabi, coupling_phase(p, atom, shot));
            add_single_atom(&mut h, atom, upper, lower, coupling);
            add_single_atom(&mut h, atom, lower, upper, coupling.conj());
            if detuning != 0.0 {
                add_single_atom(&mut h, atom, upper, upper, Complex64::new(-detuning, 0.0));
            }
        }
    }
    if blockade_shift != 0.0 {
        let rr = PairIndex::new(AtomLevel::Ryd, AtomLevel::Ryd).flat();
        h[(rr, rr)] += Complex64::new(blockade_shift, 0.0);
    }
    h
}

fn check_time(seq: &SequenceSpec, t: f64) -> Result<()> {
    let end = seq.end_time();
    if !(t >= 0.0) || t > end * (1.0 + 1e-12) + 1e-18 {
        return Err(Error::InvalidArgument(format!("time {t:.3e} s outside sequence [0, {end:.3e}] s")));
    }
    Ok(())
}

/// H(t)/ħ in rad/s for the pulses active at `t`.
pub fn build_hamiltonian(seq: &SequenceSpec, t: f64, shot: &ShotParams) -> Result<CMatrix> {
    check_time(seq, t)?;
    Ok(hamiltonian_from_pulses(seq.active_pulses(t), seq.blockade_shift_rad_per_s, shot))
}

/// A Lindblad jump operator √rate · `operator`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseOperator {
    pub rate: f64,
    pub operator: CMatrix,
    pub label: String,
}

pub(crate) fn collapse_from_pulses<'a>(
    pulses: impl Iterator<Item = &'a TimedPulse>,
    noise: &NoiseSpec,
) -> Vec<CollapseOperator> {
    let mut ops = Vec::new();
    let destinations = [AtomLevel::Up, AtomLevel::Down, AtomLevel::DarkPresent];
    for tp in pulses {
        let kind = tp.pulse.kind;
        let (source, _) = kind.levels();
        for atom in tp.pulse.targets.atoms() {
            for (dest, branch) in destinations.iter().zip(noise.scatter_branching) {
                let rate = noise.scatter_rate_rad_per_s * branch;
                if rate > 0.0 {
                    ops.push(CollapseOperator {
                        rate,
                        operator: single_atom_operator(atom, *dest, source),
                        label: format!("scatter {source}->{dest} atom {atom:?}"),
                    });
                }
            }
            if kind.is_rydberg() && noise.ryd_dephasing_rad_per_s > 0.0 {
                ops.push(CollapseOperator {
                    rate: noise.ryd_dephasing_rad_per_s,
                    operator: single_atom_operator(atom, AtomLevel::Ryd, AtomLevel::Ryd),
                    label: format!("ryd dephasing atom {atom:?}"),
                });
            }
        }
    }
    if noise.ryd_decay_rad_per_s > 0.0 {
        for atom in Atom::BOTH {
            ops.push(CollapseOperator {
                rate: noise.ryd_decay_rad_per_s,
                operator: single_atom_operator(atom, AtomLevel::Up, AtomLevel::Ryd),
                label: format!("ryd decay atom {atom:?}"),
            });
        }
    }
    ops
}

/// Jump operators active at `t`: scattering out of each driven pulse's lower
/// level, Rydberg dephasing during Rydberg pulses and (if enabled) Rydberg decay.
pub fn build_collapse_operators(seq: &SequenceSpec, t: f64, noise: &NoiseSpec) -> Result<Vec<CollapseOperator>> {
    check_time(seq, t)?;
    noise.validate()?;
    Ok(collapse_from_pulses(seq.active_pulses(t), noise))
}

/// Laser phases k·r seen by each atom during the two entangling pulses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EntanglePhases {
    pub excite: [f64; 2],
    pub map: [f64; 2],
}

impl EntanglePhases {
    /// Phases that produce (|↓,↑⟩ + e^{iφ}|↑,↓⟩)/√2, where
    /// φ = (φ_exc,b − φ_map,b) − (φ_exc,a − φ_map,a).
    pub fn with_bell_phase(phi: f64) -> Self {
        Self { excite: [0.0; 2], map: [0.0, -phi] }
    }

    pub fn bell_phase(&self) -> f64 {
        (self.excite[1] - self.map[1]) - (self.excite[0] - self.map[0])
    }
}

/// π/(√2Ω) collective excitation of both atoms followed by a π/Ω mapping pulse.
pub fn build_entangle_sequence(
    omega_ryd: f64,
    omega_map: f64,
    delta_e: f64,
    phases: EntanglePhases,
) -> Result<SequenceSpec> {
    if !(omega_ryd > 0.0) || !(omega_map > 0.0) || !omega_ryd.is_finite() || !omega_map.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Rabi frequencies must be positive, got {omega_ryd} and {omega_map}"
        )));
    }
    let excite = PulseSpec::new(PulseKind::RydExcite, omega_ryd, PI / (SQRT_2 * omega_ryd), Targets::Both)
        .with_atom_phases(phases.excite);
    let map = PulseSpec::new(PulseKind::RydMap, omega_map, PI / omega_map, Targets::Both).with_atom_phases(phases.map);
    SequenceSpec::back_to_back(vec![excite, map], delta_e, PairIndex::new(AtomLevel::Up, AtomLevel::Up))
}

/// Global Raman rotation of both atoms by θ = Ω·t. θ = 0 yields an empty sequence.
pub fn build_rotation_sequence(omega_raman: f64, theta: f64, initial_state: PairIndex) -> Result<SequenceSpec> {
    if !(omega_raman > 0.0) || !(theta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rotation needs Ω > 0 and θ ≥ 0, got Ω = {omega_raman}, θ = {theta}"
        )));
    }
    let pulses = if theta == 0.0 {
        vec![]
    } else {
        vec![PulseSpec::new(PulseKind::RamanRotation, omega_raman, theta / omega_raman, Targets::Both)]
    };
    SequenceSpec::back_to_back(pulses, 0.0, initial_state)
}
